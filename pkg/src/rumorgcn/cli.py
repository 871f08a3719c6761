"""Command-line entry point: ``rumorgcn {synth,train,eval,early,attack}``.

Every JSON artifact carries the config that produced it, its hash and the
seed. ``--replay`` takes such an artifact as ``--config``, recomputes the
result in memory and exits 1 if it differs.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .attacks import (
    AttackEnvironment,
    attack_cost_curve,
    attack_report,
    default_template_bank,
    format_curve,
    median_profile,
)
from .config import ConfigError, RunConfig, load_config
from .data import (
    LABELS,
    Dataset,
    DatasetError,
    compute_metrics,
    early_cutoff,
    filter_connected_users,
    fold_train_test,
    generate_synthetic,
    kfold_split,
    load_dataset,
    merge_datasets,
    save_dataset,
    split,
)
from .estimator import ReportClassifier
from .model import CheckpointError

logger = logging.getLogger("rumorgcn")


# --------------------------------------------------------------------------
# helpers

def _estimator(cfg: RunConfig, seed: int) -> ReportClassifier:
    return ReportClassifier(**dataclasses.asdict(cfg.model), random_state=seed)


def _dataset_digest(ds: Dataset) -> str:
    h = hashlib.sha256()
    for inst in ds.instances:
        h.update(json.dumps(inst.to_json(), sort_keys=True).encode())
    for uid in sorted(ds.users):
        h.update(json.dumps({uid: ds.users[uid].to_dict()}, sort_keys=True).encode())
    return h.hexdigest()[:16]


def _params_digest(clf: ReportClassifier) -> str:
    h = hashlib.sha256()
    for k in sorted(clf.state_.params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(clf.state_.params[k]).tobytes())
    return h.hexdigest()[:16]


def _load(cfg: RunConfig) -> Dataset:
    path = cfg.dataset_path
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found (run `rumorgcn synth` first)")
    ds = load_dataset(path, cfg.data.users)
    return filter_connected_users(ds) if cfg.data.filter_users else ds


def _split(cfg: RunConfig, ds: Dataset) -> tuple[Dataset, Dataset]:
    return split(ds, cfg.eval.ratio, cfg.seed)


def _folds(cfg: RunConfig, ds: Dataset) -> list[tuple[int, Dataset, Dataset]]:
    """(fold seed, train, test) per evaluation unit."""
    if cfg.eval.protocol == "split":
        tr, te = _split(cfg, ds)
        return [(cfg.seed, tr, te)]
    folds = kfold_split(ds, cfg.eval.k, cfg.seed)
    return [(cfg.seed + i, *fold_train_test(folds, i)) for i in range(len(folds))]


def _fit_or_load(cfg: RunConfig, train_part: Dataset) -> ReportClassifier:
    """Reuse the split checkpoint when it came from this exact config."""
    path = cfg.checkpoint_path
    if path.exists():
        clf = ReportClassifier.load(path, train_part)
        if clf.checkpoint_extra_.get("config_hash") == cfg.hash():
            logger.info("using checkpoint %s", path)
            return clf
        logger.info("checkpoint %s was made by another config; retraining", path)
    return _estimator(cfg, cfg.seed).fit(train_part)


def _summary(reports: list[dict]) -> dict:
    acc = np.array([r["accuracy"] for r in reports])
    f1 = np.array([[r["f1"][lab] for lab in LABELS] for r in reports])
    return {
        "accuracy_mean": float(acc.mean()),
        "accuracy_std": float(acc.std()),
        "f1_mean": dict(zip(LABELS, map(float, f1.mean(axis=0)))),
        "f1_std": dict(zip(LABELS, map(float, f1.std(axis=0)))),
    }


def _deadline_key(d: float):
    return None if math.isinf(d) else d


# --------------------------------------------------------------------------
# commands: each returns (result, human text) and writes nothing

def run_synth(cfg: RunConfig) -> tuple[dict, str, Dataset]:
    ds = generate_synthetic(cfg.synth_config(), cfg.seed)
    counts = np.bincount(ds.labels, minlength=4).tolist()
    result = {
        "n_instances": len(ds),
        "n_users": len(ds.users),
        "label_counts": counts,
        "digest": _dataset_digest(ds),
    }
    return result, f"{len(ds)} instances, {len(ds.users)} users, labels N/F/T/U = {counts}", ds


def run_train(cfg: RunConfig) -> tuple[dict, str, ReportClassifier]:
    tr, _ = _split(cfg, _load(cfg))
    clf = _estimator(cfg, cfg.seed).fit(tr)
    last = clf.history_[-1]
    result = {
        "n_train": len(tr),
        "epochs": len(clf.history_),
        "history": clf.history_,
        "params_digest": _params_digest(clf),
    }
    text = f"trained on {len(tr)} instances for {len(clf.history_)} epochs; final train acc {last['train_acc']:.3f}"
    return result, text, clf


def run_eval(cfg: RunConfig) -> tuple[dict, str]:
    ds = _load(cfg)
    folds = []
    lines = []
    for i, (seed, tr, te) in enumerate(_folds(cfg, ds)):
        if cfg.eval.protocol == "split":
            clf = _fit_or_load(cfg, tr)
        else:
            clf = _estimator(cfg, seed).fit(tr)
        rep = compute_metrics(clf.predict(te), te.labels)
        folds.append(rep.to_dict())
        lines.append(f"fold {i}  acc {rep.accuracy:.4f}  n={rep.n_eval}")
        lines.append(rep.to_table())
    summary = _summary(folds)
    lines.append(f"accuracy {summary['accuracy_mean']:.4f} ± {summary['accuracy_std']:.4f}")
    return {"protocol": cfg.eval.protocol, "folds": folds, **summary}, "\n".join(lines)


def run_early(cfg: RunConfig) -> tuple[dict, str]:
    ds = _load(cfg)
    deadlines = cfg.deadlines()
    per_deadline: list[list[dict]] = [[] for _ in deadlines]
    for seed, tr, te in _folds(cfg, ds):
        clf = _estimator(cfg, seed).fit(tr)
        for j, d in enumerate(deadlines):
            cut = early_cutoff(te, d)
            per_deadline[j].append(compute_metrics(clf.predict(cut), cut.labels).to_dict())
    curve = [{"deadline": _deadline_key(d), "folds": reps, **_summary(reps)} for d, reps in zip(deadlines, per_deadline)]
    lines = [f"{'deadline':>10}{'accuracy':>10}{'std':>8}"]
    for row in curve:
        label = "inf" if row["deadline"] is None else f"{row['deadline']:g}"
        lines.append(f"{label:>10}{row['accuracy_mean']:10.4f}{row['accuracy_std']:8.4f}")
    return {"protocol": cfg.eval.protocol, "curve": curve}, "\n".join(lines)


def run_attack(cfg: RunConfig) -> tuple[dict, str]:
    tr, te = _split(cfg, _load(cfg))
    clf = _fit_or_load(cfg, tr)
    world = merge_datasets(tr, te)
    train_profiles = [tr.users[u] for u in sorted({i.id for inst in tr for i in inst.users})]
    env = AttackEnvironment(
        clf.state_,
        world,
        fake_profile=median_profile(train_profiles),
        template_bank=default_template_bank(tr, per_class=cfg.attack.templates_per_class, seed=cfg.seed),
        pool_size=cfg.attack.pool_size,
    )
    targets = [inst.tweet_id for inst in te.instances][: cfg.attack.max_targets]
    reports = {}
    lines = []
    for mode in cfg.attack.modes:
        rows, results = attack_cost_curve(env, targets, mode, cfg.attack.budgets)
        reports[mode] = attack_report(mode, rows, results)
        reports[mode].pop("config")
        lines.append(format_curve(rows, f"[{mode}]"))
    return {"templates": env.template_bank, "reports": reports}, "\n\n".join(lines)


# --------------------------------------------------------------------------
# artifacts

def envelope(cfg: RunConfig, command: str, result: dict) -> dict:
    return {
        "command": command,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "result": result,
    }


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


ARTIFACTS = {
    "synth": "synth.json",
    "train": "history.json",
    "eval": "metrics.json",
    "early": "early.json",
    "attack": "attack.json",
}


def execute(command: str, cfg: RunConfig, write: bool = True) -> tuple[dict, str]:
    out = Path(cfg.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    if command == "synth":
        result, text, ds = run_synth(cfg)
        if write:
            cfg.dataset_path.parent.mkdir(parents=True, exist_ok=True)
            save_dataset(ds, cfg.dataset_path)
    elif command == "train":
        result, text, clf = run_train(cfg)
        if write:
            clf.save(cfg.checkpoint_path, {"config": cfg.to_dict(), "config_hash": cfg.hash(), "history": clf.history_})
    else:
        runner: Callable[[RunConfig], tuple[dict, str]] = {
            "eval": run_eval,
            "early": run_early,
            "attack": run_attack,
        }[command]
        result, text = runner(cfg)
    art = envelope(cfg, command, result)
    if write:
        (out / ARTIFACTS[command]).write_text(dumps(art), encoding="utf-8")
    return art, text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rumorgcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("synth", "generate a synthetic dataset"),
        ("train", "train on the training split and write a checkpoint"),
        ("eval", "evaluate on a single split or k folds"),
        ("early", "accuracy as a function of the comment deadline"),
        ("attack", "greedy graph/comment/joint attacks on test tweets"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run config (or an artifact with --replay)")
        p.add_argument("--seed", type=int, help="override config.seed")
        p.add_argument("--out", help="output directory (overrides config.out_dir)")
        p.add_argument("--replay", action="store_true", help="recompute an artifact and compare")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.out_dir = args.out
        elif args.replay:
            cfg.out_dir = str(Path(args.config).parent)
        if args.replay:
            recorded = json.loads(Path(args.config).read_text(encoding="utf-8"))
            if recorded.get("command") != args.command:
                print(f"error: {args.config} is a {recorded.get('command')!r} artifact", file=sys.stderr)
                return 2
            art, _ = execute(args.command, cfg, write=False)
            if dumps(art["result"]) == dumps(recorded["result"]):
                print(f"replay matches ({art['config_hash']})")
                return 0
            print("replay MISMATCH", file=sys.stderr)
            return 1
        art, text = execute(args.command, cfg)
    except (ConfigError, DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(text)
    print(f"wrote {Path(cfg.out_dir) / ARTIFACTS[args.command]} (config {art['config_hash']}, seed {cfg.seed})")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
