import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rumorgcn.encoders import (
    PAD,
    UNK,
    EmbeddingFormatError,
    TextVectorizer,
    UserFeatureScaler,
    UserProfile,
    Vocabulary,
    build_vocab,
    encode_users,
    encode_users_backward,
    extract_user_features,
    gru_backward,
    gru_forward,
    init_gru,
    load_embeddings,
    tokenize,
    tokenize_and_pad,
)
from rumorgcn.numerics import finite_difference_check


def user_params(rng, d_in=6, h=5):
    return {
        "user_w1": rng.normal(size=(d_in, h)),
        "user_b1": rng.normal(size=h),
        "user_w2": rng.normal(size=(h, h)),
        "user_b2": rng.normal(size=h),
    }


# -- users ----------------------------------------------------------------

def test_zero_profile_features():
    assert extract_user_features(UserProfile()).tolist() == [0.0] * 6


def test_log_identity():
    assert extract_user_features(UserProfile(follower_count=0))[0] == 0.0
    p = UserProfile(account_age_days=math.e - 1)
    assert extract_user_features(p)[2] == pytest.approx(1.0, abs=1e-15)


def test_profile_validation():
    with pytest.raises(ValueError):
        UserProfile(follower_count=-1)
    with pytest.raises(ValueError):
        UserProfile(verified=2)
    with pytest.raises(ValueError):
        UserProfile(account_age_days=float("nan"))


def test_profile_dict_round_trip():
    p = UserProfile(10, 20, 33.5, 40, 1, 0)
    assert UserProfile.from_dict(p.to_dict()) == p


def test_scaler_zero_mean(rng):
    profiles = [UserProfile(int(a), int(b), float(c), int(d), int(e), 1) for a, b, c, d, e in
                rng.integers(0, 1000, size=(30, 5)) % [1000, 1000, 1000, 1000, 2]]
    scaler = UserFeatureScaler().fit(profiles)
    z = scaler.transform(profiles)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-9)
    # constant has_description column: centred, not divided by zero
    assert np.all(z[:, 5] == 0.0)


def test_zero_weights_give_relu_bias(rng):
    p = {k: np.zeros_like(v) for k, v in user_params(rng).items()}
    p["user_b2"] = np.array([1.0, -1.0, 0.5, 0.0, 2.0])
    h, _ = encode_users(rng.normal(size=(4, 6)), p)
    assert np.all(h == np.maximum(p["user_b2"], 0))


def test_user_encoder_gradient(rng):
    p = user_params(rng)
    x = rng.normal(size=(4, 6))
    up = rng.normal(size=(4, 5))
    h, cache = encode_users(x, p)
    dx, grads = encode_users_backward(up, cache, p)
    loss = lambda: float((encode_users(x, p)[0] * up).sum())
    assert finite_difference_check(loss, {**p, "x": x}, {**grads, "x": dx}) < 1e-4


def test_user_rows_independent(rng):
    p = user_params(rng)
    x = rng.normal(size=(5, 6))
    assert np.array_equal(encode_users(x[:1], p)[0][0], encode_users(x, p)[0][0])


# -- vocabulary -----------------------------------------------------------

def test_empty_corpus_vocab():
    assert Vocabulary().itos == ["<pad>", "<unk>"]
    assert len(build_vocab([])) == 2


def test_vocab_frequency_then_lexicographic():
    assert build_vocab([["a", "a", "b"]]).itos[2:] == ["a", "b"]
    assert build_vocab([["b", "a"]]).itos[2:] == ["a", "b"]


def test_vocab_min_count():
    assert build_vocab([["a", "a", "b"]], min_count=2).itos[2:] == ["a"]


def test_vocab_json_round_trip():
    v = build_vocab([["x", "y", "x"]])
    assert Vocabulary.from_json(v.to_json()) == v


def test_unknown_maps_to_unk():
    assert Vocabulary(["a"])["zzz"] == UNK


def test_pad_empty_text():
    ids, n = tokenize_and_pad("", Vocabulary(["a"]), 5)
    assert n == 0 and np.all(ids == PAD)


def test_truncation():
    words = [f"w{i}" for i in range(50)]
    v = Vocabulary(words)
    ids, n = tokenize_and_pad(" ".join(words), v, 40)
    assert n == 40 and ids.tolist() == [v[w] for w in words[:40]]


def test_lowercasing():
    v = Vocabulary(["hello", "world"])
    assert np.array_equal(tokenize_and_pad("Hello WORLD", v)[0], tokenize_and_pad("hello world", v)[0])


def test_tokenize_urls_and_mentions():
    assert tokenize("see https://x.co/abc @bob now") == ["see", "<url>", "<user>", "now"]


def test_vectorizer_transform_shapes():
    vec = TextVectorizer(max_len=4).fit(["a b c", "a"])
    ids, lengths = vec.transform(["a b c d e", ""])
    assert ids.shape == (2, 4) and lengths.tolist() == [4, 0]


# -- embeddings -----------------------------------------------------------

def test_embedding_file(tmp_path, caplog):
    path = tmp_path / "vec.txt"
    path.write_text("cat 0.1 0.2\ndog 1 2\ncat 9 9\n")
    v = Vocabulary(["cat", "bird"])
    with caplog.at_level(logging.WARNING):
        e = load_embeddings(path, v, dim=2)
    assert e[v["cat"]].tolist() == [0.1, 0.2]
    assert e[v["bird"]].tolist() == [0.0, 0.0]
    assert not e[PAD].any() and not e[UNK].any()
    assert any("duplicate" in r.message for r in caplog.records)


def test_embedding_dimension_mismatch(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("cat 0.1 0.2\ndog 0.3\n")
    with pytest.raises(EmbeddingFormatError, match=":2:"):
        load_embeddings(path, Vocabulary(["cat"]), dim=2)


def test_embedding_bad_number(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("cat 0.1 abc\n")
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(path, Vocabulary(["cat"]), dim=2)


# -- GRU ------------------------------------------------------------------

def test_gru_zero_weights_fixed_point(rng):
    p = {k: np.zeros_like(v) for k, v in init_gru(3, 4, rng).items()}
    emb = rng.normal(size=(6, 3))
    h, trace = gru_forward(np.array([[2, 3, 4]]), np.array([3]), emb, p)
    assert not h.any()


def test_gru_empty_sequence_is_zero(rng):
    p = init_gru(3, 4, rng)
    emb = rng.normal(size=(6, 3))
    h, _ = gru_forward(np.array([[0, 0, 0], [2, 3, 0]]), np.array([0, 2]), emb, p)
    assert not h[0].any() and h[1].any()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 5), st.integers(0, 10_000))
def test_gru_padding_invariance(extra, seed):
    rng = np.random.default_rng(seed)
    p = init_gru(3, 4, rng)
    emb = rng.normal(size=(8, 3))
    seq = rng.integers(2, 8, size=3)
    short, _ = gru_forward(seq[None, :], np.array([3]), emb, p)
    padded = np.concatenate([seq, np.zeros(extra, dtype=np.int64)])
    long, _ = gru_forward(padded[None, :], np.array([3]), emb, p)
    assert np.array_equal(short, long)


def test_gru_gradient_three_steps(rng):
    p = init_gru(4, 5, rng)
    emb = rng.normal(size=(7, 4))
    tokens = np.array([[2, 3, 4], [5, 6, 0], [3, 0, 0]])
    lengths = np.array([3, 2, 1])
    up = rng.normal(size=(3, 5))
    h, trace = gru_forward(tokens, lengths, emb, p)
    grads, demb = gru_backward(up, trace, p, len(emb))
    loss = lambda: float((gru_forward(tokens, lengths, emb, p)[0] * up).sum())
    assert finite_difference_check(loss, {**p, "emb": emb}, {**grads, "emb": demb}) < 1e-4
