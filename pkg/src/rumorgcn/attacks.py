"""Greedy white-box attacks: fake user-tweet edges, fake comments, or both.

Every candidate perturbation has a unit cost. At each step the attacker
evaluates all remaining candidates and applies the one that raises the
target's true-class loss the most per unit cost, until the prediction
flips, the budget runs out, or nothing helps any more.
"""
from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import LABELS, Comment, Dataset, Instance, Interaction
from .encoders import UserProfile, tokenize
from .graphs import k_hop_nodes
from .model import GraphContext, ModelState, predict_proba

FAKE_PREFIX = "fake"
MODES = ("graph", "comment", "joint")


@dataclass(frozen=True)
class Perturbation:
    kind: str  # "add_edge" or "add_comment"
    user_id: str | None = None
    parent: str | None = None
    template: int | None = None
    unit_cost: float = 1.0

    def to_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Perturbation":
        return cls(**d)


@dataclass
class AttackResult:
    tweet_id: str
    true_label: int
    mode: str
    budget: float
    succeeded: bool
    steps: list[Perturbation]
    total_cost: float
    probs_before: np.ndarray
    probs_after: np.ndarray
    stalled: bool = False
    # true-class loss after each applied step
    loss_trace: list[float] = field(default_factory=list)

    @property
    def cost_to_flip(self) -> float | None:
        return self.total_cost if self.succeeded else None

    def to_dict(self) -> dict:
        return {
            "tweet_id": self.tweet_id,
            "true_label": LABELS[self.true_label],
            "mode": self.mode,
            "budget": self.budget,
            "succeeded": self.succeeded,
            "stalled": self.stalled,
            "total_cost": self.total_cost,
            "steps": [s.to_dict() for s in self.steps],
            "probs_before": self.probs_before.tolist(),
            "probs_after": self.probs_after.tolist(),
        }


def median_profile(profiles: Sequence[UserProfile]) -> UserProfile:
    """Field-wise median; what a fake account mimicking ordinary users looks like."""
    if not profiles:
        return UserProfile()
    cols = {f.name: [getattr(p, f.name) for p in profiles] for f in dataclasses.fields(UserProfile)}
    med = {k: float(np.median(v)) for k, v in cols.items()}
    return UserProfile(
        follower_count=int(round(med["follower_count"])),
        friend_count=int(round(med["friend_count"])),
        account_age_days=med["account_age_days"],
        tweet_count=int(round(med["tweet_count"])),
        verified=int(med["verified"] >= 0.5),
        has_description=int(med["has_description"] >= 0.5),
    )


def default_template_bank(dataset: Dataset, per_class: int = 4, length: int = 8, seed: int = 0) -> list[str]:
    """Class-stereotyped comment texts.

    Uses the generator's keyword lists when the dataset carries them, else
    the tokens most over-represented in each class.
    """
    rng = np.random.default_rng(seed)
    keywords = dataset.meta.get("keywords")
    if not keywords:
        counts = {lab: Counter() for lab in LABELS}
        for inst in dataset:
            for t in (inst.text, *(c.text for c in inst.comments)):
                counts[inst.label].update(tokenize(t))
        total = sum(counts.values(), Counter())
        keywords = {}
        for lab in LABELS:
            scored = sorted(counts[lab], key=lambda t: (-(counts[lab][t] / total[t]), -counts[lab][t], t))
            keywords[lab] = scored[:8]
    bank = []
    for lab in LABELS:
        words = list(keywords.get(lab, []))
        if not words:
            continue
        for _ in range(per_class):
            bank.append(" ".join(words[int(i)] for i in rng.integers(len(words), size=length)))
    return bank


class AttackEnvironment:
    """A trained model plus the dataset the attacked tweets live in."""

    def __init__(
        self,
        state: ModelState,
        dataset: Dataset,
        fake_profile: UserProfile | None = None,
        template_bank: Sequence[str] | None = None,
        pool_size: int = 20,
        include_existing: bool = True,
    ):
        self.state = state
        self.dataset = dataset
        self.fake_profile = fake_profile or median_profile(list(dataset.users.values()))
        self.template_bank = list(template_bank) if template_bank is not None else default_template_bank(dataset)
        self.pool_size = pool_size
        self.include_existing = include_existing
        self._base_ctx = GraphContext(dataset, state)
        self._token_cache = self._base_ctx._tok

    def instance(self, tweet_id: str) -> Instance:
        return self._base_ctx.instances[tweet_id]

    # -- candidates -----------------------------------------------------

    def graph_candidates(self, inst: Instance) -> list[Perturbation]:
        attached = {u.id for u in inst.users}
        fresh = [f"{FAKE_PREFIX}{i:04d}" for i in range(self.pool_size)]
        ctx = self._base_ctx
        existing: list[str] = []
        if self.include_existing and inst.tweet_id in ctx.tweet_index:
            start = [ctx.graph.n_users + ctx.tweet_index[inst.tweet_id]]
            # users reachable through the tweets in the target's neighbourhood
            keep = k_hop_nodes(ctx.neighbors, start, self.state.config.k_hop + 1)
            existing = [ctx.graph.user_ids[i] for i in keep if i < ctx.graph.n_users]
        users = fresh + sorted(u for u in existing if u not in attached)
        return [Perturbation("add_edge", user_id=u) for u in users if u not in attached]

    def comment_candidates(self, inst: Instance) -> list[Perturbation]:
        if not self.template_bank:
            raise ValueError("empty template bank")
        depth1 = [c.id for c in inst.comments if c.parent == inst.tweet_id]
        return [
            Perturbation("add_comment", parent=node, template=k)
            for node in [inst.tweet_id, *depth1]
            for k in range(len(self.template_bank))
        ]

    def candidates(self, inst: Instance, mode: str) -> list[Perturbation]:
        if mode == "graph":
            return self.graph_candidates(inst)
        if mode == "comment":
            return self.comment_candidates(inst)
        if mode == "joint":
            return self.graph_candidates(inst) + self.comment_candidates(inst)
        raise ValueError(f"mode must be one of {MODES}")

    # -- application ----------------------------------------------------

    def apply(self, dataset: Dataset, tweet_id: str, steps: Sequence[Perturbation]) -> Dataset:
        """Return a new dataset with ``steps`` applied to one tweet."""
        if not steps:
            return dataset
        inst = next(i for i in dataset.instances if i.tweet_id == tweet_id)
        users = dict(dataset.users)
        comments = list(inst.comments)
        interactions = list(inst.users)
        delays = {inst.tweet_id: 0.0, **{c.id: c.delay_min for c in comments}}
        n_adv = 0
        for p in steps:
            if p.kind == "add_edge":
                if p.user_id.startswith(FAKE_PREFIX):
                    users[p.user_id] = self.fake_profile
                elif p.user_id not in users:
                    raise KeyError(f"unknown user {p.user_id!r}")
                interactions.append(Interaction(p.user_id, "retweet"))
            elif p.kind == "add_comment":
                if p.parent not in delays:
                    raise KeyError(f"comment parent {p.parent!r} not in tree")
                cid = f"{tweet_id}#adv{n_adv}"
                n_adv += 1
                comments.append(Comment(cid, p.parent, self.template_bank[p.template], delays[p.parent]))
                delays[cid] = delays[p.parent]
            else:
                raise ValueError(f"unknown perturbation kind {p.kind!r}")
        new = dataclasses.replace(inst, comments=tuple(comments), users=tuple(interactions))
        instances = tuple(new if i.tweet_id == tweet_id else i for i in dataset.instances)
        return dataset.replace(instances=instances, users=users)

    def probs(self, tweet_id: str, steps: Sequence[Perturbation] = ()) -> np.ndarray:
        if not steps:
            ctx = self._base_ctx
        else:
            ctx = GraphContext(self.apply(self.dataset, tweet_id, steps), self.state)
            ctx._tok = self._token_cache
        return predict_proba(self.state, ctx, [ctx.instances[tweet_id]])[0]


def _true_loss(probs: np.ndarray, label: int) -> float:
    return -math.log(max(float(probs[label]), 1e-300))


def _is_fresh(p: Perturbation) -> bool:
    return p.kind == "add_edge" and p.user_id.startswith(FAKE_PREFIX)


def greedy_attack(env: AttackEnvironment, tweet_id: str, mode: str, budget: float) -> AttackResult:
    inst = env.instance(tweet_id)
    label = inst.y
    before = env.probs(tweet_id)
    steps: list[Perturbation] = []
    probs = before
    spent = 0.0
    stalled = False
    losses: list[float] = []
    if int(np.argmax(before)) != label:
        return AttackResult(tweet_id, label, mode, budget, True, [], 0.0, before, before)
    remaining = env.candidates(inst, mode)
    while remaining:
        current = _true_loss(probs, label)
        best_score, best_i, best_probs = -math.inf, None, None
        fresh_probs = None  # unused fake accounts are interchangeable
        for i, cand in enumerate(remaining):
            if spent + cand.unit_cost > budget + 1e-12:
                continue
            if _is_fresh(cand):
                if fresh_probs is None:
                    fresh_probs = env.probs(tweet_id, steps + [cand])
                p = fresh_probs
            else:
                p = env.probs(tweet_id, steps + [cand])
            score = (_true_loss(p, label) - current) / cand.unit_cost
            if score > best_score:
                best_score, best_i, best_probs = score, i, p
        if best_i is None:
            break
        if best_score <= 0:
            stalled = True
            break
        cand = remaining.pop(best_i)
        steps.append(cand)
        spent += cand.unit_cost
        probs = best_probs
        losses.append(_true_loss(probs, label))
        if int(np.argmax(probs)) != label:
            break
    succeeded = int(np.argmax(probs)) != label
    return AttackResult(tweet_id, label, mode, budget, succeeded, steps, spent, before, probs, stalled, losses)


def brute_force_cost_to_flip(env: AttackEnvironment, tweet_id: str, mode: str, max_steps: int = 2) -> float | None:
    """Cheapest candidate set of at most ``max_steps`` that flips the prediction."""
    from itertools import combinations

    inst = env.instance(tweet_id)
    cands = env.candidates(inst, mode)
    best = None
    for r in range(0, max_steps + 1):
        for combo in combinations(cands, r):
            cost = sum(c.unit_cost for c in combo)
            if best is not None and cost >= best:
                continue
            if int(np.argmax(env.probs(tweet_id, list(combo)))) != inst.y:
                best = cost
    return best


def attack_cost_curve(
    env: AttackEnvironment,
    tweet_ids: Sequence[str],
    mode: str,
    budgets: Sequence[float],
) -> tuple[list[dict], list[AttackResult]]:
    """Success rate and mean cost-to-flip per budget.

    Only tweets the model classifies correctly are attacked. With unit costs
    the greedy path does not depend on the budget, so one run at the largest
    budget yields every smaller budget's result as a prefix.
    """
    budgets = list(budgets)
    if budgets != sorted(budgets):
        raise ValueError("budgets must be sorted ascending")
    targets = [t for t in tweet_ids if int(np.argmax(env.probs(t))) == env.instance(t).y]
    top = budgets[-1] if budgets else 0.0
    results = [greedy_attack(env, t, mode, top) for t in targets]
    rows = []
    for b in budgets:
        costs = [r.total_cost for r in results if r.succeeded and r.total_cost <= b + 1e-12]
        rows.append(
            {
                "budget": b,
                "n_targets": len(targets),
                "success_rate": len(costs) / len(targets) if targets else 0.0,
                "mean_cost_of_successes": float(np.mean(costs)) if costs else None,
            }
        )
    for a, b in zip(rows, rows[1:]):
        assert a["success_rate"] <= b["success_rate"], "success rate must not drop with budget"
    return rows, results


def attack_report(mode: str, rows: list[dict], results: list[AttackResult], config: Mapping | None = None) -> dict:
    return {
        "mode": mode,
        "budgets": [r["budget"] for r in rows],
        "curve": rows,
        "results": [r.to_dict() for r in results],
        "config": dict(config or {}),
    }


def format_curve(rows: Sequence[Mapping], title: str = "") -> str:
    lines = [title] if title else []
    lines.append(f"{'budget':>8}{'success':>10}{'mean cost':>11}")
    for r in rows:
        mc = r["mean_cost_of_successes"]
        lines.append(f"{r['budget']:8g}{r['success_rate']:10.3f}{('-' if mc is None else f'{mc:.2f}'):>11}")
    return "\n".join(lines)


def dumps_report(report: Mapping) -> str:
    return json.dumps(report, indent=1, sort_keys=True)
