import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinegrade.classifier import (AttentionParams, ClassifierParams, FocalLossConfig, LossKind, ModelBundle,
                                   TrainConfig, attend, attention_weights, batch_loss, cross_entropy, dropout,
                                   focal_loss, forward, init_attention, init_classifier, loss_and_grads, predict,
                                   train)
from spinegrade.errors import ShapeMismatch, VersionMismatch
from spinegrade.rng import SeededRng


def softmax_rows(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attend_oracle(f, W_Q, W_K, n_tokens):
    """Step-by-step evaluation with explicit loops over token pairs."""
    t, d_k = W_Q.shape
    padded = np.zeros(n_tokens * t)
    padded[:len(f)] = f
    X = padded.reshape(n_tokens, t)
    Q, K = X @ W_Q, X @ W_K
    out = np.zeros_like(X)
    for i in range(n_tokens):
        logits = np.array([Q[i] @ K[j] / math.sqrt(d_k) for j in range(n_tokens)])
        a = np.exp(logits - logits.max())
        a /= a.sum()
        for j in range(n_tokens):
            out[i] += a[j] * X[j]
    return out.ravel()[:len(f)] + f


def separable(seed, n, d=12, margin=3.0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    centres = np.zeros((3, d))
    centres[0, 0] = centres[1, 1] = centres[2, 2] = margin
    return centres[y] + 0.5 * rng.normal(size=(n, d)), y


def test_single_token_doubles_input():
    f = np.array([1.0, -2.0, 0.5])
    params = AttentionParams(np.random.default_rng(0).normal(size=(3, 2)),
                             np.random.default_rng(1).normal(size=(3, 2)), 1, 3)
    assert np.array_equal(attend(f, params), 2 * f)


def test_identical_tokens_split_attention():
    f = np.array([1.0, 2.0, 1.0, 2.0])
    params = init_attention(4, n_tokens=2, d_k=3, seed=5)
    assert np.allclose(attention_weights(f, params), 0.5, atol=1e-15)


def test_attend_matches_loop_oracle():
    f = np.random.default_rng(2).normal(size=10)
    params = init_attention(10, n_tokens=4, d_k=8, seed=3)
    assert params.token_dim == 3 and params.n_tokens == 4
    assert np.allclose(attend(f, params), attend_oracle(f, params.W_Q, params.W_K, 4), atol=1e-12)


def test_attention_rows_and_shift_invariance():
    F = np.random.default_rng(4).normal(size=(5, 12))
    params = init_attention(12, seed=1)
    P = attention_weights(F, params)
    assert np.all(P >= 0) and np.allclose(P.sum(axis=-1), 1, atol=1e-9)
    z = np.random.default_rng(0).normal(size=(4, 4))
    assert np.allclose(softmax_rows(z), softmax_rows(z + 7.5), atol=1e-12)


def test_attend_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        attend(np.ones(9), init_attention(12))


def test_dropout_cases():
    f = np.arange(5.0)
    assert np.array_equal(dropout(f, 0.0, SeededRng(0)), f)
    assert np.array_equal(dropout(f, 0.9, SeededRng(0), training=False), f)
    out = dropout(np.ones(10_000), 0.5, SeededRng(7))
    assert abs(np.mean(out != 0) - 0.5) <= 0.05
    assert set(np.unique(out)) <= {0.0, 2.0}


def test_forward_uniform_and_saturated():
    att = init_attention(6, seed=0)
    f = np.random.default_rng(0).normal(size=6)
    p = forward(f, att, ClassifierParams(np.zeros((6, 3)), np.zeros(3)))
    assert np.allclose(p, 1 / 3, atol=1e-15)
    p = forward(f, att, ClassifierParams(np.zeros((6, 3)), np.array([1000.0, 0.0, 0.0])))
    assert abs(p[0] - 1.0) <= 1e-9
    P = forward(np.random.default_rng(1).normal(size=(20, 6)), att, init_classifier(6, seed=2))
    assert np.allclose(P.sum(axis=1), 1, atol=1e-9) and np.all((P > 0) & (P < 1))
    with pytest.raises(ShapeMismatch):
        forward(f, att, ClassifierParams(np.zeros((5, 3)), np.zeros(3)))


def test_cross_entropy_values():
    assert cross_entropy([0.0, 1.0, 0.0], 1) == 0.0
    assert cross_entropy([1 / 3] * 3, 2) == pytest.approx(math.log(3), abs=1e-15)
    assert cross_entropy([0.5, 0.25, 0.25], 1) == -math.log(0.25)
    assert cross_entropy([1.0, 0.0, 0.0], 1) == pytest.approx(-math.log(1e-12))


def test_focal_values():
    cfg = FocalLossConfig(gamma=2.0, alpha=[1.0, 1.0, 1.0])
    assert focal_loss([0.5, 0.3, 0.2], 0, cfg) == pytest.approx(0.25 * math.log(2), abs=1e-15)
    assert focal_loss([0.0, 1.0, 0.0], 1, cfg) == 0.0
    assert focal_loss([0.5, 0.3, 0.2], 0, FocalLossConfig(2.0, [2.0, 1.0, 1.0])) == pytest.approx(0.5 * math.log(2))


@given(st.lists(st.floats(1e-6, 1.0), min_size=3, max_size=3), st.integers(0, 2), st.floats(0.01, 5.0))
def test_focal_bounded_by_cross_entropy(raw, label, gamma):
    p = np.array(raw) / sum(raw)
    assert focal_loss(p, label, FocalLossConfig(0.0, [1.0] * 3)) == cross_entropy(p, label)
    assert focal_loss(p, label, FocalLossConfig(gamma, [1.0] * 3)) <= cross_entropy(p, label) + 1e-15


def test_inverse_frequency_alpha():
    alpha = FocalLossConfig().resolved_alpha([0, 0, 0, 0, 1, 1, 2])
    inv = np.array([1 / 4, 1 / 2, 1.0])
    assert np.allclose(alpha, inv / inv.mean(), atol=1e-15)
    assert alpha.mean() == pytest.approx(1.0)


@pytest.mark.parametrize("kind", [LossKind.CrossEntropy, LossKind.Focal])
def test_batch_loss_gradient_in_logits(kind):
    rng = np.random.default_rng(3)
    Z, y = rng.normal(size=(4, 3)), np.array([0, 1, 2, 1])
    alpha = [0.5, 1.0, 1.5]

    def f(Zv):
        return batch_loss(softmax_rows(Zv), y, kind, 2.0, alpha)[0]

    _, dz = batch_loss(softmax_rows(Z), y, kind, 2.0, alpha)
    h = 1e-6
    fd = np.zeros_like(Z)
    for idx in np.ndindex(Z.shape):
        e = np.zeros_like(Z)
        e[idx] = h
        fd[idx] = (f(Z + e) - f(Z - e)) / (2 * h)
    assert np.allclose(dz, fd, atol=1e-8)


def head_fd_error(seed, kind, with_mask):
    rng = np.random.default_rng(seed)
    F, y = rng.normal(size=(3, 12)), np.array([0, 1, 2])
    att, clf = init_attention(12, 4, 8, seed), init_classifier(12, seed)
    clf.bias[:] = rng.normal(size=3)
    mask = (rng.uniform(size=(3, 12)) >= 0.3) / 0.7 if with_mask else None
    alpha = [0.7, 1.1, 1.2]
    _, g = loss_and_grads(F, y, att, clf, kind, 2.0, alpha, mask)
    params = {"W_Q": att.W_Q, "W_K": att.W_K, "W": clf.weights, "b": clf.bias}
    worst = 0.0
    h = 1e-5
    for name, arr in params.items():
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            lp = loss_and_grads(F, y, att, clf, kind, 2.0, alpha, mask)[0]
            arr[idx] = old - h
            lm = loss_and_grads(F, y, att, clf, kind, 2.0, alpha, mask)[0]
            arr[idx] = old
            fd[idx] = (lp - lm) / (2 * h)
        worst = max(worst, np.linalg.norm(g[name] - fd) / np.linalg.norm(fd))
    return worst


@pytest.mark.parametrize("kind", [LossKind.CrossEntropy, LossKind.Focal])
@pytest.mark.parametrize("with_mask", [False, True])
def test_head_gradients_match_finite_differences(kind, with_mask):
    assert max(head_fd_error(s, kind, with_mask) for s in range(3)) <= 1e-4


def test_training_learns_separable_data():
    X, y = separable(0, 300)
    Xv, yv = separable(1, 90)
    _, hist = train(X, y, Xv, yv, TrainConfig(learning_rate=0.01, epochs=30, seed=0))
    assert hist[-1].val_accuracy >= 0.95
    assert hist[-1].train_loss < hist[0].train_loss


def test_zero_learning_rate_is_frozen():
    X, y = separable(0, 60)
    cfg = TrainConfig(learning_rate=0.0, epochs=4)
    bundle, hist = train(X, y, X, y, cfg)
    init = init_attention(12, cfg.n_tokens, cfg.d_k, cfg.seed)
    assert np.array_equal(bundle.attention.W_Q, init.W_Q)
    assert np.array_equal(bundle.classifier.weights, init_classifier(12, cfg.seed).weights)
    assert len({h.train_loss for h in hist}) == 1 and len({h.val_loss for h in hist}) == 1


def test_training_is_deterministic():
    X, y = separable(2, 60)
    cfg = TrainConfig(learning_rate=0.01, epochs=3, seed=4)
    a, b = train(X, y, X, y, cfg)[1], train(X, y, X, y, cfg)[1]
    assert a == b
    assert a != train(X, y, X, y, TrainConfig(learning_rate=0.01, epochs=3, seed=5))[1]


def test_training_needs_all_classes():
    X, y = separable(0, 30)
    with pytest.raises(ValueError):
        train(X[y != 2], y[y != 2], X, y)


def _bundle(bias):
    att = init_attention(3, n_tokens=1, d_k=2)
    return ModelBundle(att, ClassifierParams(np.zeros((3, 3)), np.asarray(bias, float)), TrainConfig())


def test_predict_argmax_and_tie_break():
    label, probs = predict(_bundle(np.log([0.6, 0.3, 0.1])), np.ones(3))
    assert label == 0 and np.allclose(probs, [0.6, 0.3, 0.1])
    assert predict(_bundle(np.log([0.1, 0.6, 0.3])), np.ones(3))[0] == 1
    b = _bundle(np.zeros(3))
    assert predict(b, np.ones(3))[0] == 0
    assert np.array_equal(predict(b, np.ones(3))[1], predict(b, np.ones(3))[1])


def test_bundle_round_trip(tmp_path):
    X, y = separable(0, 30)
    bundle, _ = train(X, y, X, y, TrainConfig(epochs=1))
    bundle.save(tmp_path / "b.json")
    again = ModelBundle.load(tmp_path / "b.json")
    assert np.array_equal(again.probabilities(X), bundle.probabilities(X))
    again.save(tmp_path / "c.json")
    assert (tmp_path / "b.json").read_bytes() == (tmp_path / "c.json").read_bytes()


def test_bundle_version_mismatch():
    obj = _bundle(np.zeros(3)).to_json()
    obj["version"] = 99
    with pytest.raises(VersionMismatch):
        ModelBundle.from_json(obj)
