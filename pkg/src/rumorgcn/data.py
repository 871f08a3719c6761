"""Dataset schema, JSONL I/O, splitting protocol, metrics and a synthetic generator."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .encoders import UserProfile
from .graphs import PropagationTree

logger = logging.getLogger(__name__)

LABELS = ("N", "F", "T", "U")
LABEL_INDEX = {lab: i for i, lab in enumerate(LABELS)}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Comment:
    id: str
    parent: str
    text: str
    delay_min: float = 0.0


@dataclass(frozen=True)
class Interaction:
    id: str
    action: str = "retweet"
    comment: str | None = None  # set when the interaction is authoring a comment


@dataclass(frozen=True)
class Instance:
    tweet_id: str
    label: str
    text: str
    comments: tuple[Comment, ...] = ()
    users: tuple[Interaction, ...] = ()

    def __post_init__(self):
        if self.label not in LABEL_INDEX:
            raise DatasetError(f"{self.tweet_id}: unknown label {self.label!r}")
        delay = {self.tweet_id: 0.0}
        for c in self.comments:
            if c.parent not in delay:
                raise DatasetError(
                    f"{self.tweet_id}: comment {c.id} has orphan parent {c.parent!r}"
                )
            if c.id in delay:
                raise DatasetError(f"{self.tweet_id}: duplicate node id {c.id!r}")
            if not (c.delay_min >= 0 and math.isfinite(c.delay_min)):
                raise DatasetError(f"{self.tweet_id}: comment {c.id} has invalid delay")
            if c.delay_min < delay[c.parent]:
                raise DatasetError(
                    f"{self.tweet_id}: comment {c.id} posted before its parent {c.parent}"
                )
            delay[c.id] = c.delay_min
        for u in self.users:
            if u.comment is not None and u.comment not in delay:
                raise DatasetError(f"{self.tweet_id}: user {u.id} linked to unknown comment")

    @property
    def y(self) -> int:
        return LABEL_INDEX[self.label]

    def tree(self) -> PropagationTree:
        index = {self.tweet_id: 0}
        parent: list[int | None] = [None]
        for i, c in enumerate(self.comments, start=1):
            index[c.id] = i
            parent.append(index[c.parent])
        texts = (self.text,) + tuple(c.text for c in self.comments)
        return PropagationTree(tuple(parent), texts, 0)

    def to_json(self) -> dict:
        return {
            "tweet_id": self.tweet_id,
            "label": self.label,
            "text": self.text,
            "comments": [
                {"id": c.id, "parent": c.parent, "text": c.text, "delay_min": c.delay_min}
                for c in self.comments
            ],
            "users": [
                {"id": u.id, "action": u.action, **({"comment": u.comment} if u.comment else {})}
                for u in self.users
            ],
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "Instance":
        try:
            comments = tuple(
                Comment(str(c["id"]), str(c["parent"]), str(c["text"]), float(c["delay_min"]))
                for c in d.get("comments", [])
            )
            users = tuple(
                Interaction(str(u["id"]), str(u.get("action", "retweet")), u.get("comment"))
                for u in d.get("users", [])
            )
            return cls(str(d["tweet_id"]), str(d["label"]), str(d["text"]), comments, users)
        except KeyError as exc:
            raise DatasetError(f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DatasetError):
                raise
            raise DatasetError(str(exc)) from None


@dataclass(frozen=True)
class Dataset:
    instances: tuple[Instance, ...] = ()
    users: Mapping[str, UserProfile] = field(default_factory=dict)
    provenance: str = "synthetic"
    meta: Mapping = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def labels(self) -> np.ndarray:
        return np.array([inst.y for inst in self.instances], dtype=np.int64)

    def interactions(self) -> list[tuple[str, str, str]]:
        return [(u.id, inst.tweet_id, u.action) for inst in self.instances for u in inst.users]

    def flagged(self) -> list[str]:
        """Tweets with no interacting users (they get a zero user-correlation vector)."""
        return [inst.tweet_id for inst in self.instances if not inst.users]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return self.replace(instances=tuple(self.instances[i] for i in indices))

    def replace(self, **changes) -> "Dataset":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "Dataset":
        seen = set()
        for inst in self.instances:
            if inst.tweet_id in seen:
                raise DatasetError(f"duplicate tweet id {inst.tweet_id!r}")
            seen.add(inst.tweet_id)
            for u in inst.users:
                if u.id not in self.users:
                    raise DatasetError(f"{inst.tweet_id}: user {u.id!r} has no profile")
        return self


def merge_datasets(*parts: Dataset) -> Dataset:
    """Union of instances (first occurrence of a tweet id wins) and user tables."""
    seen: set[str] = set()
    instances = []
    users: dict[str, UserProfile] = {}
    for part in parts:
        users.update(part.users)
        for inst in part.instances:
            if inst.tweet_id not in seen:
                seen.add(inst.tweet_id)
                instances.append(inst)
    return Dataset(tuple(instances), users, parts[0].provenance if parts else "synthetic",
                   parts[0].meta if parts else {})


# --------------------------------------------------------------------------
# files

def companion_paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.name[: -len(".jsonl")] if path.name.endswith(".jsonl") else path.name
    return path.with_name(stem + ".users.jsonl"), path.with_name(stem + ".truth.json")


def save_dataset(dataset: Dataset, path) -> None:
    users_path, truth_path = companion_paths(path)
    with open(path, "w", encoding="utf-8") as fh:
        for inst in dataset.instances:
            fh.write(json.dumps(inst.to_json(), ensure_ascii=False) + "\n")
    with open(users_path, "w", encoding="utf-8") as fh:
        for uid in sorted(dataset.users):
            fh.write(json.dumps({"id": uid, **dataset.users[uid].to_dict()}) + "\n")
    if dataset.meta:
        truth = {"provenance": dataset.provenance, **dataset.meta}
        truth_path.write_text(json.dumps(truth, indent=1, sort_keys=True), encoding="utf-8")


def load_dataset(path, users_path=None, provenance: str | None = None) -> Dataset:
    """Load the canonical JSONL dataset plus its ``.users.jsonl`` companion."""
    default_users, truth_path = companion_paths(path)
    users_path = Path(users_path) if users_path else default_users
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                instances.append(Instance.from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
    users: dict[str, UserProfile] = {}
    if users_path.exists():
        with open(users_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    users[str(rec["id"])] = UserProfile.from_dict(rec)
                except (KeyError, ValueError, TypeError) as exc:
                    raise DatasetError(f"{users_path}:{lineno}: bad user record ({exc})") from None
    meta = {}
    if truth_path.exists():
        meta = json.loads(truth_path.read_text(encoding="utf-8"))
    prov = provenance or meta.pop("provenance", None) or "synthetic"
    return Dataset(tuple(instances), users, prov, meta).validate()


# --------------------------------------------------------------------------
# protocol

def filter_connected_users(dataset: Dataset, min_tweets: int = 2) -> Dataset:
    """Drop users who interact with fewer than ``min_tweets`` distinct source tweets."""
    touched: dict[str, set[str]] = defaultdict(set)
    for uid, tid, _ in dataset.interactions():
        touched[uid].add(tid)
    keep = {u for u, ts in touched.items() if len(ts) >= min_tweets}
    instances = tuple(
        dataclasses.replace(inst, users=tuple(u for u in inst.users if u.id in keep))
        for inst in dataset.instances
    )
    users = {u: p for u, p in dataset.users.items() if u in keep}
    out = dataset.replace(instances=instances, users=users)
    if out.flagged():
        logger.info("%d instances left without users after filtering", len(out.flagged()))
    return out


def _stratified_order(labels: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    groups = []
    for lab in range(len(LABELS)):
        idx = np.flatnonzero(labels == lab)
        groups.append(idx[rng.permutation(len(idx))])
    return groups


def split(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified train/test split with ``round(ratio * n_label)`` per label in train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for idx in _stratified_order(dataset.labels, rng):
        cut = int(round(ratio * len(idx)))
        train.extend(idx[:cut].tolist())
        test.extend(idx[cut:].tolist())
    return dataset.subset(sorted(train)), dataset.subset(sorted(test))


def kfold_split(dataset: Dataset, k: int = 5, seed: int = 0) -> list[Dataset]:
    """Stratified folds: shuffled members of each label are dealt round-robin.

    The dealing position carries over between labels, so fold sizes differ by
    at most one as well.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(dataset) < k:
        raise ValueError(f"cannot make {k} folds from {len(dataset)} instances")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    pos = 0
    for lab, idx in enumerate(_stratified_order(dataset.labels, rng)):
        if 0 < len(idx) < k:
            warnings.warn(
                f"label {LABELS[lab]} has {len(idx)} < {k} members; folds cannot all hold one",
                stacklevel=2,
            )
        for i in idx:
            folds[pos % k].append(int(i))
            pos += 1
    return [dataset.subset(sorted(f)) for f in folds]


def fold_train_test(folds: Sequence[Dataset], i: int) -> tuple[Dataset, Dataset]:
    train = merge_datasets(*[f for j, f in enumerate(folds) if j != i])
    return train, folds[i]


def early_cutoff(dataset: Dataset, deadline_minutes: float) -> Dataset:
    """Keep only comments posted within the deadline (and their authors' interactions)."""
    if deadline_minutes < 0:
        raise ValueError("deadline must be >= 0")
    instances = []
    for inst in dataset.instances:
        kept = tuple(c for c in inst.comments if c.delay_min <= deadline_minutes)
        kept_ids = {c.id for c in kept}
        users = tuple(u for u in inst.users if u.comment is None or u.comment in kept_ids)
        instances.append(dataclasses.replace(inst, comments=kept, users=users))
    return dataset.replace(instances=tuple(instances))


# --------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: tuple[float, ...]
    confusion: tuple[tuple[int, ...], ...]
    n_eval: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "f1": dict(zip(LABELS, self.f1)),
            "confusion": [list(r) for r in self.confusion],
            "n_eval": self.n_eval,
        }

    def to_table(self) -> str:
        head = f"{'Accuracy':>9}" + "".join(f"{lab + ' (F1)':>9}" for lab in LABELS)
        row = f"{self.accuracy:9.3f}" + "".join(f"{v:9.3f}" for v in self.f1)
        return head + "\n" + row


def compute_metrics(predictions, labels, n_classes: int = len(LABELS)) -> MetricsReport:
    """Accuracy and per-class F1; a 0/0 precision, recall or F1 counts as 0."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("no predictions to score")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    tp = np.diag(conf).astype(float)
    pred_pos = conf.sum(axis=0)
    true_pos = conf.sum(axis=1)
    f1 = []
    for c in range(n_classes):
        p = tp[c] / pred_pos[c] if pred_pos[c] else 0.0
        r = tp[c] / true_pos[c] if true_pos[c] else 0.0
        f1.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    acc = float(tp.sum() / pred.size)
    return MetricsReport(acc, tuple(float(v) for v in f1), tuple(map(tuple, conf.tolist())), int(pred.size))


# --------------------------------------------------------------------------
# synthetic data

@dataclass
class SynthConfig:
    n_instances: int = 80
    n_users: int = 60
    class_priors: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    coordination: float = 0.5
    campaign_classes: tuple[str, ...] = ("F", "U")
    campaign_size: int = 10
    retweets_per_tweet: float = 3.0
    comments_per_tweet: float = 6.0
    text_signal: str = "source"  # none | source | comments | both
    keyword_rate: float = 0.5
    min_tokens: int = 6
    max_tokens: int = 12
    n_neutral_words: int = 300
    keywords_per_class: int = 8
    delay_mean: float = 30.0

    def validate(self) -> "SynthConfig":
        pri = self.class_priors
        if len(pri) != len(LABELS) or min(pri) < 0 or abs(sum(pri) - 1.0) > 1e-9:
            raise ValueError("class_priors must be 4 non-negative numbers summing to 1")
        if not 0.0 <= self.coordination <= 1.0:
            raise ValueError("coordination must lie in [0, 1]")
        if not 0.0 <= self.keyword_rate <= 1.0:
            raise ValueError("keyword_rate must lie in [0, 1]")
        if any(c not in LABEL_INDEX for c in self.campaign_classes):
            raise ValueError(f"campaign_classes must be drawn from {LABELS}")
        if self.text_signal not in ("none", "source", "comments", "both"):
            raise ValueError(f"unknown text_signal {self.text_signal!r}")
        if self.n_instances < 1 or self.n_users < 1:
            raise ValueError("n_instances and n_users must be positive")
        if self.campaign_classes and self.campaign_size < 1:
            raise ValueError("campaign_size must be positive when campaigns exist")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValueError("need 1 <= min_tokens <= max_tokens")
        if self.delay_mean <= 0:
            raise ValueError("delay_mean must be positive")
        return self

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        for key in ("class_priors", "campaign_classes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _label_counts(n: int, priors: Sequence[float]) -> list[int]:
    raw = [p * n for p in priors]
    counts = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _organic_profile(rng: np.random.Generator) -> UserProfile:
    return UserProfile(
        follower_count=int(rng.lognormal(5.5, 1.5)),
        friend_count=int(rng.lognormal(5.0, 1.0)),
        account_age_days=round(float(rng.lognormal(math.log(1500.0), 0.5)), 3),
        tweet_count=int(rng.lognormal(7.0, 1.2)),
        verified=int(rng.random() < 0.05),
        has_description=int(rng.random() < 0.8),
    )


def _campaign_profile(rng: np.random.Generator, burst: int) -> UserProfile:
    # accounts of one campaign are registered in the same short burst
    return UserProfile(
        follower_count=int(rng.poisson(15)),
        friend_count=int(rng.poisson(200)),
        account_age_days=round(10.0 + 45.0 * burst + float(rng.uniform(0.0, 5.0)), 3),
        tweet_count=int(rng.poisson(40)),
        verified=0,
        has_description=int(rng.random() < 0.2),
    )


def generate_synthetic(config: SynthConfig | None = None, seed: int = 0) -> Dataset:
    """Four-class rumor data with controllable text and user-coordination signal.

    Each label listed in ``campaign_classes`` owns a pool of coordinated
    accounts; every interaction on a tweet of that label is drawn from the pool
    with probability ``coordination`` and from the organic population otherwise.
    Reply trees are random recursive trees whose comment delays are sorted
    exponential draws. Generator internals go to ``Dataset.meta``.
    """
    cfg = (config or SynthConfig()).validate()
    rng = np.random.default_rng(seed)

    neutral = [f"w{i:03d}" for i in range(cfg.n_neutral_words)]
    keywords = {lab: [f"{lab.lower()}kw{j}" for j in range(cfg.keywords_per_class)] for lab in LABELS}

    users: dict[str, UserProfile] = {}
    pool: dict[str, str] = {}
    organic = [f"u{i:04d}" for i in range(cfg.n_users)]
    for uid in organic:
        users[uid] = _organic_profile(rng)
        pool[uid] = "organic"
    campaigns: dict[str, list[str]] = {}
    for burst, lab in enumerate(cfg.campaign_classes):
        ids = [f"c{lab}{j:03d}" for j in range(cfg.campaign_size)]
        campaigns[lab] = ids
        for uid in ids:
            users[uid] = _campaign_profile(rng, burst)
            pool[uid] = lab

    labels = [lab for lab, c in zip(LABELS, _label_counts(cfg.n_instances, cfg.class_priors)) for _ in range(c)]
    labels = [labels[i] for i in rng.permutation(len(labels))]

    def text(label: str, informative: bool) -> str:
        n = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        toks = []
        for _ in range(n):
            if informative and rng.random() < cfg.keyword_rate:
                toks.append(keywords[label][int(rng.integers(len(keywords[label])))])
            else:
                toks.append(neutral[int(rng.integers(len(neutral)))])
        return " ".join(toks)

    def pick_user(label: str) -> str:
        if label in campaigns and rng.random() < cfg.coordination:
            ids = campaigns[label]
        else:
            ids = organic
        return ids[int(rng.integers(len(ids)))]

    src_signal = cfg.text_signal in ("source", "both")
    com_signal = cfg.text_signal in ("comments", "both")
    instances = []
    for i, lab in enumerate(labels):
        tid = f"t{i:05d}"
        m = int(rng.poisson(cfg.comments_per_tweet))
        delays = np.sort(rng.exponential(cfg.delay_mean, m))
        comments = []
        interactions = [Interaction(pick_user(lab), "post")]
        for j in range(m):
            cid = f"{tid}c{j:03d}"
            parent = tid if j == 0 else ([tid] + [c.id for c in comments])[int(rng.integers(j + 1))]
            comments.append(Comment(cid, parent, text(lab, com_signal), round(float(delays[j]), 3)))
            interactions.append(Interaction(pick_user(lab), "comment", cid))
        for _ in range(int(rng.poisson(cfg.retweets_per_tweet))):
            interactions.append(Interaction(pick_user(lab), "retweet"))
        instances.append(Instance(tid, lab, text(lab, src_signal), tuple(comments), tuple(interactions)))

    meta = {
        "seed": seed,
        "config": dataclasses.asdict(cfg),
        "keywords": keywords,
        "pool": pool,
    }
    return Dataset(tuple(instances), users, "synthetic", meta)


def pool_label_mutual_information(dataset: Dataset) -> float:
    """MI (nats) between an interaction's user pool and the tweet label."""
    from sklearn.metrics import mutual_info_score

    pool = dataset.meta.get("pool", {})
    pools, labs = [], []
    for inst in dataset.instances:
        for u in inst.users:
            pools.append(pool.get(u.id, "organic"))
            labs.append(inst.label)
    if not pools:
        return 0.0
    return float(mutual_info_score(labs, pools))


def pool_vote_predictions(dataset: Dataset) -> np.ndarray:
    """Generator-aware reference classifier: majority pool among a tweet's users.

    Tweets whose majority is organic get the first label that owns no campaign.
    """
    pool = dataset.meta.get("pool", {})
    campaign_labels = set(dataset.meta.get("config", {}).get("campaign_classes", ()))
    fallback = next((lab for lab in LABELS if lab not in campaign_labels), LABELS[0])
    preds = []
    for inst in dataset.instances:
        votes = Counter(pool.get(u.id, "organic") for u in inst.users)
        best = max(sorted(votes), key=lambda k: votes[k]) if votes else "organic"
        preds.append(LABEL_INDEX[fallback if best == "organic" else best])
    return np.array(preds, dtype=np.int64)
