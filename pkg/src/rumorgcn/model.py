"""Joint user-correlation / propagation GCN with hand-written backpropagation.

Pipeline per batch of source tweets:

1. GRU over every text the batch touches (subgraph tweets, reply nodes).
2. User branch: MLP over user profiles, per-role projections, two GCN layers
   over the k-hop user-tweet subgraph; read out the seed tweet rows.
3. Propagation branch: GCN over each reply tree, root features appended
   after the first layer, second GCN layer, mean pooling.
4. Concatenate both, one hidden FC layer, linear to class logits.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import __version__
from .data import Dataset, Instance, merge_datasets
from .encoders import (
    GRU_KEYS,
    PAD,
    UNK,
    UserFeatureScaler,
    Vocabulary,
    encode_users,
    encode_users_backward,
    gru_backward,
    gru_forward,
    init_gru,
    load_embeddings,
    tokenize_and_pad,
)
from .graphs import (
    BipartiteGraph,
    NormalizedAdjacency,
    PropagationTree,
    build_bipartite,
    k_hop_nodes,
    normalize_adjacency,
    tree_adjacency,
)
from .numerics import (
    OptimizerState,
    ShapeError,
    adam_step,
    affine_backward,
    affine_forward,
    dropout_mask,
    relu,
    relu_backward,
    softmax_cross_entropy,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
BRANCHES = ("full", "propagation", "user")


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    embed_dim: int = 100
    gru_hidden: int = 64
    user_hidden: int = 64
    gcn_hidden: int = 64
    fc_hidden: int = 64
    n_classes: int = 4
    max_len: int = 40
    min_count: int = 1
    dropout: float = 0.2
    k_hop: int = 2
    lr: float = 5e-3
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 10
    branch: str = "full"
    embeddings_path: str | None = None

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {self.branch!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.k_hop < 0:
            raise ValueError("batch_size and max_epochs must be positive, k_hop >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray]
    vocab: Vocabulary
    scaler: UserFeatureScaler
    optimizer: OptimizerState = field(default_factory=OptimizerState)
    seed: int = 0

    def gru_params(self) -> dict[str, np.ndarray]:
        return {k: self.params["gru_" + k] for k in GRU_KEYS}

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def init_state(config: ModelConfig, vocab: Vocabulary, scaler: UserFeatureScaler, seed: int = 0) -> ModelState:
    rng = np.random.default_rng(seed)
    c = config
    g = c.gcn_hidden
    p: dict[str, np.ndarray] = {}
    p["user_w1"] = _glorot(rng, 6, c.user_hidden)
    p["user_b1"] = np.zeros(c.user_hidden)
    p["user_w2"] = _glorot(rng, c.user_hidden, c.user_hidden)
    p["user_b2"] = np.zeros(c.user_hidden)
    if c.embeddings_path:
        emb = load_embeddings(c.embeddings_path, vocab, c.embed_dim)
    else:
        emb = rng.normal(0.0, 0.1, (len(vocab), c.embed_dim))
    emb[[PAD, UNK]] = 0.0
    p["emb"] = emb
    for k, v in init_gru(c.embed_dim, c.gru_hidden, rng).items():
        p["gru_" + k] = v
    p["proj_user_w"] = _glorot(rng, c.user_hidden, g)
    p["proj_user_b"] = np.zeros(g)
    p["proj_tweet_w"] = _glorot(rng, c.gru_hidden, g)
    p["proj_tweet_b"] = np.zeros(g)
    p["gcn_g1"] = _glorot(rng, g, g)
    p["gcn_g2"] = _glorot(rng, g, g)
    p["gcn_t1"] = _glorot(rng, c.gru_hidden, g)
    p["gcn_t2"] = _glorot(rng, 2 * g, g)
    p["fc1_w"] = _glorot(rng, 2 * g, c.fc_hidden)
    p["fc1_b"] = np.zeros(c.fc_hidden)
    p["fc2_w"] = _glorot(rng, c.fc_hidden, c.n_classes)
    p["fc2_b"] = np.zeros(c.n_classes)
    return ModelState(config, p, vocab, scaler, OptimizerState(), seed)


# --------------------------------------------------------------------------
# layers

def _adj_matrix(adj) -> sp.csr_matrix:
    return adj.matrix if isinstance(adj, NormalizedAdjacency) else adj


def gcn_forward(adj, h: np.ndarray, w: np.ndarray, activate: bool = True):
    """``sigma(A_hat @ H @ W)``; returns ``(out, cache)``."""
    a = _adj_matrix(adj)
    if a.shape[0] != h.shape[0] or h.shape[1] != w.shape[0]:
        raise ShapeError(f"gcn: adjacency {a.shape}, features {h.shape}, weight {w.shape}")
    ah = np.asarray(a @ h)
    pre = ah @ w
    return (relu(pre) if activate else pre), (ah, pre, activate)


def gcn_layer(adj, h: np.ndarray, w: np.ndarray, activate: bool = True) -> np.ndarray:
    return gcn_forward(adj, h, w, activate)[0]


def gcn_backward(dout: np.ndarray, adj, w: np.ndarray, cache):
    """Return ``(dh, dw)``."""
    ah, pre, activate = cache
    dpre = relu_backward(dout, pre) if activate else dout
    return np.asarray(_adj_matrix(adj).T @ (dpre @ w.T)), ah.T @ dpre


def user_correlation_forward(adj, n_users: int, h_users, s_tweets, seed_rows, params, mask=None):
    """Two GCN layers over ``[project(H_u) ; project(S_t)]``.

    ``seed_rows`` indexes the tweet block; entries of -1 produce zero rows
    (source tweets with no interacting users). ``mask`` is an optional
    dropout mask applied after the first layer.
    """
    a = _adj_matrix(adj)
    if a.shape[0] != n_users + s_tweets.shape[0] or h_users.shape[0] != n_users:
        raise ShapeError("graph node count does not match user/tweet feature rows")
    xu = affine_forward(h_users, params["proj_user_w"], params["proj_user_b"])
    xt = affine_forward(s_tweets, params["proj_tweet_w"], params["proj_tweet_b"])
    x0 = np.vstack([xu, xt])
    h1, c1 = gcn_forward(a, x0, params["gcn_g1"], activate=True)
    h1d = h1 * mask if mask is not None else h1
    h2, c2 = gcn_forward(a, h1d, params["gcn_g2"], activate=False)
    seed_rows = np.asarray(seed_rows, dtype=np.int64)
    present = seed_rows >= 0
    hg = np.zeros((len(seed_rows), h2.shape[1]))
    hg[present] = h2[n_users + seed_rows[present]]
    cache = (a, n_users, h_users, s_tweets, seed_rows, present, mask, c1, c2, h1d.shape)
    return hg, cache


def user_correlation_backward(dhg: np.ndarray, cache, params):
    """Return ``(d_h_users, d_s_tweets, grads)``."""
    a, nu, h_users, s_tweets, seed_rows, present, mask, c1, c2, h_shape = cache
    dh2 = np.zeros((h_shape[0], dhg.shape[1]))
    np.add.at(dh2, nu + seed_rows[present], dhg[present])
    dh1d, dg2 = gcn_backward(dh2, a, params["gcn_g2"], c2)
    dh1 = dh1d * mask if mask is not None else dh1d
    dx0, dg1 = gcn_backward(dh1, a, params["gcn_g1"], c1)
    dhu, dpuw, dpub = affine_backward(dx0[:nu], h_users, params["proj_user_w"])
    dst, dptw, dptb = affine_backward(dx0[nu:], s_tweets, params["proj_tweet_w"])
    grads = {
        "gcn_g1": dg1,
        "gcn_g2": dg2,
        "proj_user_w": dpuw,
        "proj_user_b": dpub,
        "proj_tweet_w": dptw,
        "proj_tweet_b": dptb,
    }
    return dhu, dst, grads


@dataclass
class TreeBatch:
    """Several reply trees stacked block-diagonally."""

    adj: sp.csr_matrix
    root_of: np.ndarray  # global row of each node's root
    pool: sp.csr_matrix  # (n_trees, n_nodes) mean pooling
    sizes: tuple[int, ...]

    @classmethod
    def from_normalized(cls, norms: Sequence[NormalizedAdjacency], roots: Sequence[int]) -> "TreeBatch":
        sizes = tuple(n.n for n in norms)
        adj = sp.block_diag([n.matrix for n in norms], format="csr")
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        root_of = np.concatenate([np.full(s, o + r) for s, o, r in zip(sizes, offsets, roots)])
        rows = np.repeat(np.arange(len(sizes)), sizes)
        vals = np.repeat([1.0 / s for s in sizes], sizes)
        pool = sp.csr_matrix((vals, (rows, np.arange(sum(sizes)))), shape=(len(sizes), sum(sizes)))
        return cls(adj, root_of.astype(np.int64), pool, sizes)

    @classmethod
    def from_trees(cls, trees: Sequence[PropagationTree]) -> "TreeBatch":
        norms = [normalize_adjacency(tree_adjacency(t)) for t in trees]
        return cls.from_normalized(norms, [t.root for t in trees])


def propagation_forward(trees, node_embs: np.ndarray, params):
    """Top-down tree GCN with root-feature enhancement and mean pooling.

    ``trees`` is a :class:`TreeBatch`, a list of trees, or a single tree.
    Returns ``(H_t, cache)`` with one pooled row per tree.
    """
    if isinstance(trees, PropagationTree):
        trees = [trees]
    tb = trees if isinstance(trees, TreeBatch) else TreeBatch.from_trees(trees)
    if node_embs.shape[0] != tb.adj.shape[0]:
        raise ShapeError(f"{node_embs.shape[0]} node embeddings for {tb.adj.shape[0]} tree nodes")
    h1, c1 = gcn_forward(tb.adj, node_embs, params["gcn_t1"], activate=True)
    enhanced = np.hstack([h1, h1[tb.root_of]])
    h2, c2 = gcn_forward(tb.adj, enhanced, params["gcn_t2"], activate=False)
    return np.asarray(tb.pool @ h2), (tb, c1, c2, h1.shape[1])


def propagation_backward(dht: np.ndarray, cache, params):
    """Return ``(d_node_embs, grads)``."""
    tb, c1, c2, width = cache
    dh2 = np.asarray(tb.pool.T @ dht)
    denh, dt2 = gcn_backward(dh2, tb.adj, params["gcn_t2"], c2)
    dh1 = denh[:, :width].copy()
    np.add.at(dh1, tb.root_of, denh[:, width:])
    dx, dt1 = gcn_backward(dh1, tb.adj, params["gcn_t1"], c1)
    return dx, {"gcn_t1": dt1, "gcn_t2": dt2}


def fuse_and_classify(hg: np.ndarray, ht: np.ndarray, params):
    """Concatenate, FC + ReLU, linear logits. Returns ``(logits, cache)``."""
    hg = np.atleast_2d(hg)
    ht = np.atleast_2d(ht)
    h = np.hstack([hg, ht])
    a1 = affine_forward(h, params["fc1_w"], params["fc1_b"])
    z1 = relu(a1)
    logits = affine_forward(z1, params["fc2_w"], params["fc2_b"])
    return logits, (h, a1, z1, hg.shape[1])


def fuse_backward(dlogits: np.ndarray, cache, params):
    """Return ``(d_hg, d_ht, grads)``."""
    h, a1, z1, width = cache
    dz1, dw2, db2 = affine_backward(dlogits, z1, params["fc2_w"])
    da1 = relu_backward(dz1, a1)
    dh, dw1, db1 = affine_backward(da1, h, params["fc1_w"])
    grads = {"fc1_w": dw1, "fc1_b": db1, "fc2_w": dw2, "fc2_b": db2}
    return dh[:, :width], dh[:, width:], grads


# --------------------------------------------------------------------------
# batching

class GraphContext:
    """Bipartite graph, normalization and per-tweet caches for one dataset."""

    def __init__(self, dataset: Dataset, state: ModelState):
        self.dataset = dataset
        self.instances = {inst.tweet_id: inst for inst in dataset.instances}
        self.graph: BipartiteGraph = build_bipartite(dataset.interactions())
        self.tweet_index = {t: i for i, t in enumerate(self.graph.tweet_ids)}
        self.norm = normalize_adjacency(self.graph.adjacency) if self.graph.adjacency.n else None
        self.neighbors = self.graph.neighbors()
        profiles = [dataset.users[u] for u in self.graph.user_ids]
        self.user_feats = state.scaler.transform(profiles)
        self._vocab = state.vocab
        self._max_len = state.config.max_len
        self._tok: dict[str, tuple[np.ndarray, int]] = {}
        self._trees: dict[str, NormalizedAdjacency] = {}

    def tokens(self, text: str):
        hit = self._tok.get(text)
        if hit is None:
            hit = self._tok[text] = tokenize_and_pad(text, self._vocab, self._max_len)
        return hit

    def tree_norm(self, inst: Instance) -> NormalizedAdjacency:
        hit = self._trees.get(inst.tweet_id)
        if hit is None:
            hit = self._trees[inst.tweet_id] = normalize_adjacency(tree_adjacency(inst.tree()))
        return hit


@dataclass
class Batch:
    instances: list[Instance]
    labels: np.ndarray
    tokens: np.ndarray
    lengths: np.ndarray
    adj: sp.csr_matrix | None
    n_users: int
    user_feats: np.ndarray
    tweet_slots: np.ndarray
    seed_rows: np.ndarray
    trees: TreeBatch | None
    tree_slots: np.ndarray


def prepare_batch(state: ModelState, ctx: GraphContext, instances: Sequence[Instance]) -> Batch:
    if not instances:
        raise ValueError("empty batch")
    branch = state.config.branch
    texts: list[str] = []
    seed_rows = np.full(len(instances), -1, dtype=np.int64)
    adj, nu = None, 0
    user_feats = np.zeros((0, 6))
    tweet_slots = np.zeros(0, dtype=np.int64)
    slot_of_tweet: dict[str, int] = {}
    if branch != "propagation" and ctx.norm is not None:
        seeds = [ctx.tweet_index[i.tweet_id] for i in instances if i.tweet_id in ctx.tweet_index]
        if seeds:
            nu_all = ctx.graph.n_users
            start = [nu_all + s for s in seeds]
            keep = k_hop_nodes(ctx.neighbors, start, state.config.k_hop)
            adj = ctx.norm.matrix[keep][:, keep]
            nu = int(np.searchsorted(keep, nu_all))
            user_feats = ctx.user_feats[keep[:nu]]
            sub_tweets = [ctx.graph.tweet_ids[i - nu_all] for i in keep[nu:]]
            row_of = {t: r for r, t in enumerate(sub_tweets)}
            for t in sub_tweets:
                slot_of_tweet[t] = len(texts)
                texts.append(ctx.instances[t].text)
            tweet_slots = np.array([slot_of_tweet[t] for t in sub_tweets], dtype=np.int64)
            for b, inst in enumerate(instances):
                seed_rows[b] = row_of.get(inst.tweet_id, -1)
    trees, tree_slots = None, np.zeros(0, dtype=np.int64)
    if branch != "user":
        slots = []
        for inst in instances:
            root_slot = slot_of_tweet.get(inst.tweet_id)
            if root_slot is None:
                root_slot = len(texts)
                texts.append(inst.text)
            slots.append(root_slot)
            for c in inst.comments:
                slots.append(len(texts))
                texts.append(c.text)
        tree_slots = np.array(slots, dtype=np.int64)
        trees = TreeBatch.from_normalized([ctx.tree_norm(i) for i in instances], [0] * len(instances))
    toks = [ctx.tokens(t) for t in texts]
    lengths = np.array([n for _, n in toks], dtype=np.int64)
    width = max(1, int(lengths.max()) if len(toks) else 1)
    tokens = np.array([ids[:width] for ids, _ in toks], dtype=np.int64).reshape(len(toks), width)
    labels = np.array([i.y for i in instances], dtype=np.int64)
    return Batch(list(instances), labels, tokens, lengths, adj, nu, user_feats,
                 tweet_slots, seed_rows, trees, tree_slots)


# --------------------------------------------------------------------------
# full forward / backward

@dataclass
class ForwardTrace:
    loss: float
    probs: np.ndarray
    logits: np.ndarray
    hg: np.ndarray
    ht: np.ndarray
    s: np.ndarray
    caches: dict = field(repr=False, default_factory=dict)
    dlogits: np.ndarray | None = field(repr=False, default=None)


def forward(state: ModelState, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> ForwardTrace:
    p = state.params
    cfg = state.config
    g = cfg.gcn_hidden
    b = len(batch.instances)
    caches: dict = {}
    if len(batch.tokens):
        s, caches["gru"] = gru_forward(batch.tokens, batch.lengths, p["emb"], state.gru_params())
    else:
        s = np.zeros((0, cfg.gru_hidden))

    hg = np.zeros((b, g))
    if cfg.branch != "propagation" and batch.adj is not None:
        hu, caches["users"] = encode_users(batch.user_feats, p)
        mask = None
        if training and cfg.dropout > 0:
            if rng is None:
                raise ValueError("training forward needs an rng for dropout")
            mask = dropout_mask((batch.adj.shape[0], g), cfg.dropout, rng)
        hg, caches["corr"] = user_correlation_forward(
            batch.adj, batch.n_users, hu, s[batch.tweet_slots], batch.seed_rows, p, mask
        )
    ht = np.zeros((b, g))
    if cfg.branch != "user" and batch.trees is not None:
        ht, caches["prop"] = propagation_forward(batch.trees, s[batch.tree_slots], p)
    logits, caches["fuse"] = fuse_and_classify(hg, ht, p)
    loss, probs, dlogits = softmax_cross_entropy(logits, batch.labels)
    return ForwardTrace(loss, probs, logits, hg, ht, s, caches, dlogits)


def backward(state: ModelState, batch: Batch, trace: ForwardTrace) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss for every parameter."""
    p = state.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dhg, dht, gf = fuse_backward(trace.dlogits, trace.caches["fuse"], p)
    grads.update(gf)
    ds = np.zeros_like(trace.s)
    if "prop" in trace.caches:
        dx, gp = propagation_backward(dht, trace.caches["prop"], p)
        grads.update(gp)
        np.add.at(ds, batch.tree_slots, dx)
    if "corr" in trace.caches:
        dhu, dst, gc = user_correlation_backward(dhg, trace.caches["corr"], p)
        grads.update(gc)
        np.add.at(ds, batch.tweet_slots, dst)
        _, gu = encode_users_backward(dhu, trace.caches["users"], p)
        grads.update(gu)
    if "gru" in trace.caches:
        gg, demb = gru_backward(ds, trace.caches["gru"], state.gru_params(), len(state.vocab))
        for k, v in gg.items():
            grads["gru_" + k] = v
        demb[[PAD, UNK]] = 0.0
        grads["emb"] = demb
    return grads


def loss_and_grads(state: ModelState, batch: Batch, training: bool = False, rng=None):
    trace = forward(state, batch, training, rng)
    return trace.loss, backward(state, batch, trace), trace


# --------------------------------------------------------------------------
# training and inference

def _batches(n: int, size: int, order: np.ndarray):
    for start in range(0, n, size):
        yield order[start : start + size]


def predict_proba(state: ModelState, context: Dataset | GraphContext, instances: Sequence[Instance]) -> np.ndarray:
    ctx = context if isinstance(context, GraphContext) else GraphContext(context, state)
    out = []
    n = len(instances)
    for idx in _batches(n, state.config.batch_size, np.arange(n)):
        batch = prepare_batch(state, ctx, [instances[i] for i in idx])
        out.append(forward(state, batch, training=False).probs)
    return np.vstack(out) if out else np.zeros((0, state.config.n_classes))


def evaluate_loss(state: ModelState, ctx: GraphContext, instances: Sequence[Instance]) -> tuple[float, float]:
    total, correct = 0.0, 0
    n = len(instances)
    for idx in _batches(n, state.config.batch_size, np.arange(n)):
        batch = prepare_batch(state, ctx, [instances[i] for i in idx])
        tr = forward(state, batch, training=False)
        total += tr.loss * len(idx)
        correct += int((tr.probs.argmax(axis=1) == batch.labels).sum())
    return total / n, correct / n


def train(state: ModelState, train_set: Dataset, val_set: Dataset | None = None, verbose: bool = False) -> list[dict]:
    """Mini-batch Adam with early stopping; restores the best checkpoint.

    The monitored quantity is the validation loss when ``val_set`` is given,
    else the training loss evaluated without dropout. Dropout masks are drawn from generators seeded by
    ``(seed, epoch, batch)`` so runs are reproducible.
    """
    if len(train_set) == 0:
        raise ValueError("empty training split")
    if val_set is not None:
        if len(val_set) == 0:
            raise ValueError("empty validation split")
        overlap = {i.tweet_id for i in train_set} & {i.tweet_id for i in val_set}
        if overlap:
            raise ValueError(f"train and validation splits share tweets: {sorted(overlap)[:3]}")
    cfg = state.config
    ctx = GraphContext(train_set, state)
    val_ctx = GraphContext(merge_datasets(train_set, val_set), state) if val_set is not None else None
    instances = list(train_set.instances)
    n = len(instances)
    history: list[dict] = []
    best_loss, best_params, wait = math.inf, state.copy_params(), 0
    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng([state.seed, epoch]).permutation(n)
        loss_sum, correct = 0.0, 0
        for bi, idx in enumerate(_batches(n, cfg.batch_size, order)):
            batch = prepare_batch(state, ctx, [instances[i] for i in idx])
            rng = np.random.default_rng([state.seed, epoch, bi])
            loss, grads, trace = loss_and_grads(state, batch, training=True, rng=rng)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite loss/gradient at epoch {epoch}, batch {bi}: loss={loss}")
            adam_step(state.params, grads, state.optimizer, cfg.lr)
            loss_sum += loss * len(idx)
            correct += int((trace.probs.argmax(axis=1) == batch.labels).sum())
        rec = {"epoch": epoch, "train_loss": loss_sum / n, "train_acc": correct / n}
        if val_ctx is not None:
            rec["val_loss"], rec["val_acc"] = evaluate_loss(state, val_ctx, list(val_set.instances))
            monitor = rec["val_loss"]
        else:
            # without a validation split, watch the dropout-free training loss
            rec["fit_loss"], rec["fit_acc"] = evaluate_loss(state, ctx, instances)
            monitor = rec["fit_loss"]
        history.append(rec)
        if verbose:
            logger.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in rec.items()})
        if monitor < best_loss:
            best_loss, best_params, wait = monitor, state.copy_params(), 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    state.params = best_params
    return history


# --------------------------------------------------------------------------
# checkpoints

def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: ModelState, path, extra: Mapping | None = None) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "package_version": __version__,
        "config": state.config.to_dict(),
        "seed": state.seed,
        "vocab": state.vocab.itos,
        "step_count": state.optimizer.step_count,
        "extra": dict(extra or {}),
    }
    arrays = {f"param/{k}": v for k, v in state.params.items()}
    arrays.update({f"adam_m/{k}": v for k, v in state.optimizer.first_moment.items()})
    arrays.update({f"adam_v/{k}": v for k, v in state.optimizer.second_moment.items()})
    arrays["scaler/mean"] = state.scaler.mean_
    arrays["scaler/scale"] = state.scaler.scale_
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelState, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(
                f"checkpoint format {meta.get('format')} is not supported (expected {CHECKPOINT_FORMAT})"
            )
        arrays = {k: z[k] for k in z.files if k != "meta"}
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    opt = OptimizerState(
        {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_m/")},
        {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("adam_v/")},
        int(meta["step_count"]),
    )
    scaler = UserFeatureScaler()
    scaler.mean_ = arrays["scaler/mean"]
    scaler.scale_ = arrays["scaler/scale"]
    vocab = Vocabulary(meta["vocab"][2:])
    state = ModelState(ModelConfig(**meta["config"]), params, vocab, scaler, opt, int(meta["seed"]))
    return state, meta.get("extra", {})
