"""User-profile and text encoders.

The text path is: tokenize -> vocabulary indices -> word vectors -> GRU,
where the GRU runs over a whole batch of padded sequences at once and
simply carries the hidden state through PAD positions.
"""
from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .numerics import ShapeError, affine_backward, affine_forward, relu, relu_backward, sigmoid

logger = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
URL_TOKEN, USER_TOKEN = "<url>", "<user>"
N_USER_FEATURES = 6

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")


# --------------------------------------------------------------------------
# users

@dataclass(frozen=True)
class UserProfile:
    follower_count: int = 0
    friend_count: int = 0
    account_age_days: float = 0.0
    tweet_count: int = 0
    verified: int = 0
    has_description: int = 0

    def __post_init__(self):
        for name in ("follower_count", "friend_count", "account_age_days", "tweet_count"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {v!r}")
        for name in ("verified", "has_description"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"{name} must be 0 or 1")

    def to_dict(self) -> dict:
        return {
            "followers": self.follower_count,
            "friends": self.friend_count,
            "age_days": self.account_age_days,
            "tweets": self.tweet_count,
            "verified": self.verified,
            "has_description": self.has_description,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "UserProfile":
        return cls(
            follower_count=int(d.get("followers", 0)),
            friend_count=int(d.get("friends", 0)),
            account_age_days=float(d.get("age_days", 0.0)),
            tweet_count=int(d.get("tweets", 0)),
            verified=int(d.get("verified", 0)),
            has_description=int(d.get("has_description", 0)),
        )


def extract_user_features(profile: UserProfile) -> np.ndarray:
    """Raw 6-d feature vector, counts on a log(1 + x) scale."""
    return np.array(
        [
            math.log1p(profile.follower_count),
            math.log1p(profile.friend_count),
            math.log1p(profile.account_age_days),
            math.log1p(profile.tweet_count),
            float(profile.verified),
            float(profile.has_description),
        ]
    )


class UserFeatureScaler(TransformerMixin, BaseEstimator):
    """Log-transform user profiles, then z-score with statistics from ``fit``."""

    def fit(self, profiles: Sequence[UserProfile], y=None):
        x = np.array([extract_user_features(p) for p in profiles]).reshape(-1, N_USER_FEATURES)
        if len(x):
            self.mean_ = x.mean(axis=0)
            std = x.std(axis=0)
        else:
            self.mean_ = np.zeros(N_USER_FEATURES)
            std = np.ones(N_USER_FEATURES)
        # constant columns pass through centred but unscaled
        self.scale_ = np.where(std > 1e-12, std, 1.0)
        return self

    def transform(self, profiles: Sequence[UserProfile]) -> np.ndarray:
        check_is_fitted(self, "mean_")
        x = np.array([extract_user_features(p) for p in profiles]).reshape(-1, N_USER_FEATURES)
        return (x - self.mean_) / self.scale_


def encode_users(features: np.ndarray, params: Mapping[str, np.ndarray]):
    """Two affine+ReLU layers. Returns ``(H_u, cache)``."""
    if features.shape[1] != params["user_w1"].shape[0]:
        raise ShapeError(f"user features {features.shape} vs user_w1 {params['user_w1'].shape}")
    a1 = affine_forward(features, params["user_w1"], params["user_b1"])
    h1 = relu(a1)
    a2 = affine_forward(h1, params["user_w2"], params["user_b2"])
    return relu(a2), (features, a1, h1, a2)


def encode_users_backward(grad: np.ndarray, cache, params) -> tuple[np.ndarray, dict]:
    x, a1, h1, a2 = cache
    d2 = relu_backward(grad, a2)
    dh1, dw2, db2 = affine_backward(d2, h1, params["user_w2"])
    d1 = relu_backward(dh1, a1)
    dx, dw1, db1 = affine_backward(d1, x, params["user_w1"])
    return dx, {"user_w1": dw1, "user_b1": db1, "user_w2": dw2, "user_b2": db2}


# --------------------------------------------------------------------------
# text

def tokenize(text: str) -> list[str]:
    text = _URL_RE.sub(f" {URL_TOKEN} ", text)
    text = _MENTION_RE.sub(f" {USER_TOKEN} ", text)
    return text.lower().split()


class Vocabulary:
    """Token to index mapping with PAD=0 and UNK=1 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD_TOKEN, UNK_TOKEN]
        self.stoi = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            if tok not in self.stoi:
                self.stoi[tok] = len(self.itos)
                self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def __getitem__(self, tok: str) -> int:
        return self.stoi.get(tok, UNK)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def to_json(self) -> str:
        return json.dumps(self.stoi, ensure_ascii=False)

    @classmethod
    def from_json(cls, s: str) -> "Vocabulary":
        mapping = json.loads(s)
        ordered = sorted(mapping.items(), key=lambda kv: kv[1])
        if [i for _, i in ordered] != list(range(len(ordered))) or ordered[:2] != [
            (PAD_TOKEN, PAD),
            (UNK_TOKEN, UNK),
        ]:
            raise ValueError("vocabulary indices must be dense with PAD=0, UNK=1")
        return cls(tok for tok, _ in ordered[2:])


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Order tokens by descending count, ties broken lexicographically."""
    counts = Counter(tok for doc in corpus for tok in doc)
    for special in (PAD_TOKEN, UNK_TOKEN):
        counts.pop(special, None)
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


def tokenize_and_pad(text: str, vocab: Vocabulary, max_len: int = 40) -> tuple[np.ndarray, int]:
    """Post-padded index array of length ``max_len`` and the true length."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = [vocab[t] for t in tokenize(text)][:max_len]
    out = np.full(max_len, PAD, dtype=np.int64)
    out[: len(ids)] = ids
    return out, len(ids)


class TextVectorizer(TransformerMixin, BaseEstimator):
    """Fit a vocabulary on raw texts; transform texts to padded index arrays."""

    def __init__(self, max_len: int = 40, min_count: int = 1):
        self.max_len = max_len
        self.min_count = min_count

    def fit(self, texts: Sequence[str], y=None):
        self.vocab_ = build_vocab((tokenize(t) for t in texts), self.min_count)
        return self

    def transform(self, texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        check_is_fitted(self, "vocab_")
        ids = np.zeros((len(texts), self.max_len), dtype=np.int64)
        lengths = np.zeros(len(texts), dtype=np.int64)
        for i, t in enumerate(texts):
            ids[i], lengths[i] = tokenize_and_pad(t, self.vocab_, self.max_len)
        return ids, lengths


class EmbeddingFormatError(ValueError):
    pass


def load_embeddings(path, vocab: Vocabulary, dim: int = 100) -> np.ndarray:
    """Read GloVe text-format vectors for the tokens in ``vocab``.

    Tokens absent from the file (and PAD/UNK) get zero rows. On duplicate
    lines the first occurrence wins.
    """
    emb = np.zeros((len(vocab), dim))
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            tok, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values, found {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: malformed number") from None
            if tok in seen:
                logger.warning("%s:%d: duplicate token %r ignored", path, lineno, tok)
                continue
            seen.add(tok)
            if tok in vocab and vocab[tok] > UNK:
                emb[vocab[tok]] = vec
    return emb


# --------------------------------------------------------------------------
# GRU

GRU_KEYS = ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")


def init_gru(embed_dim: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = {}
    for gate in "zrh":
        p["w" + gate] = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, hidden))
        p["u" + gate] = rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, hidden))
        p["b" + gate] = np.zeros(hidden)
    return p


@dataclass
class GruTrace:
    tokens: np.ndarray
    mask: np.ndarray  # (T, N, 1)
    xs: list
    hs: list  # h_0 .. h_T
    zs: list
    rs: list
    hcs: list


def gru_forward(tokens: np.ndarray, lengths: np.ndarray, emb: np.ndarray, p: Mapping[str, np.ndarray]):
    """Encode a batch of post-padded sequences.

    ``tokens`` is ``(N, L)``; positions at or beyond ``lengths`` leave the
    hidden state unchanged. Returns the final hidden states ``(N, h)`` and a
    trace for :func:`gru_backward`.
    """
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    lengths = np.atleast_1d(np.asarray(lengths, dtype=np.int64))
    n = tokens.shape[0]
    hidden = p["uz"].shape[0]
    if emb.shape[1] != p["wz"].shape[0]:
        raise ShapeError(f"embedding dim {emb.shape[1]} vs GRU input {p['wz'].shape[0]}")
    steps = int(lengths.max()) if n else 0
    h = np.zeros((n, hidden))
    trace = GruTrace(tokens, np.zeros((steps, n, 1)), [], [h], [], [], [])
    for t in range(steps):
        m = (lengths > t).astype(np.float64)[:, None]
        x = emb[tokens[:, t]]
        z = sigmoid(x @ p["wz"] + h @ p["uz"] + p["bz"])
        r = sigmoid(x @ p["wr"] + h @ p["ur"] + p["br"])
        hc = np.tanh(x @ p["wh"] + (r * h) @ p["uh"] + p["bh"])
        h_new = (1.0 - z) * h + z * hc
        h = m * h_new + (1.0 - m) * h
        trace.mask[t] = m
        trace.xs.append(x)
        trace.zs.append(z)
        trace.rs.append(r)
        trace.hcs.append(hc)
        trace.hs.append(h)
    return h, trace


def gru_backward(grad_out: np.ndarray, trace: GruTrace, p: Mapping[str, np.ndarray], vocab_size: int):
    """Backpropagation through time over the non-PAD steps.

    Returns ``(param_grads, emb_grad)`` where ``emb_grad`` has ``vocab_size`` rows.
    """
    if grad_out.shape != trace.hs[-1].shape:
        raise ShapeError(f"grad {grad_out.shape} does not match GRU output {trace.hs[-1].shape}")
    grads = {k: np.zeros_like(p[k]) for k in GRU_KEYS}
    demb = np.zeros((vocab_size, p["wz"].shape[0]))
    dh = grad_out.copy()
    for t in range(len(trace.xs) - 1, -1, -1):
        m = trace.mask[t]
        x, h_prev = trace.xs[t], trace.hs[t]
        z, r, hc = trace.zs[t], trace.rs[t], trace.hcs[t]
        dh_new = m * dh
        dh_prev = (1.0 - m) * dh + dh_new * (1.0 - z)
        dz = dh_new * (hc - h_prev) * z * (1.0 - z)
        dhc = dh_new * z * (1.0 - hc * hc)
        rh = r * h_prev
        grads["wh"] += x.T @ dhc
        grads["uh"] += rh.T @ dhc
        grads["bh"] += dhc.sum(axis=0)
        drh = dhc @ p["uh"].T
        dr = drh * h_prev * r * (1.0 - r)
        dh_prev += drh * r
        grads["wz"] += x.T @ dz
        grads["uz"] += h_prev.T @ dz
        grads["bz"] += dz.sum(axis=0)
        grads["wr"] += x.T @ dr
        grads["ur"] += h_prev.T @ dr
        grads["br"] += dr.sum(axis=0)
        dh_prev += dz @ p["uz"].T + dr @ p["ur"].T
        dx = dz @ p["wz"].T + dr @ p["wr"].T + dhc @ p["wh"].T
        np.add.at(demb, trace.tokens[:, t], dx)
        dh = dh_prev
    return grads, demb
