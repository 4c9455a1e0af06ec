"""Attention head, losses, training loop and grid search.

The refined feature vector is cut into ``n_tokens`` equal segments
(zero-padded), self-attention mixes the segments with values equal to the
raw tokens, the result is added back to the input, and a linear softmax
layer produces the three severity probabilities.
"""
from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch, SpineGradeError, VersionMismatch
from .evaluation import class_metrics, confusion
from .refine import RefineConfig, refine, softmax, sparse_transform
from .rng import SeededRng, derive_seed

N_CLASSES = 3
LOG_CLAMP = 1e-12
BUNDLE_VERSION = 1


class LossKind(str, enum.Enum):
    Focal = "Focal"
    CrossEntropy = "CrossEntropy"


@dataclass
class AttentionParams:
    W_Q: np.ndarray  # (token_dim, d_k)
    W_K: np.ndarray
    n_tokens: int
    feature_dim: int

    @property
    def d_k(self):
        return self.W_Q.shape[1]

    @property
    def token_dim(self):
        return self.W_Q.shape[0]

    def __post_init__(self):
        if self.W_Q.shape != self.W_K.shape or self.d_k < 1:
            raise ShapeMismatch(f"W_Q {self.W_Q.shape} vs W_K {self.W_K.shape}")
        if self.n_tokens * self.token_dim < self.feature_dim or (self.n_tokens - 1) * self.token_dim >= self.feature_dim:
            raise ShapeMismatch(f"{self.n_tokens} tokens of {self.token_dim} do not tile {self.feature_dim} features")


@dataclass
class ClassifierParams:
    weights: np.ndarray  # (feature_dim, 3)
    bias: np.ndarray


@dataclass
class FocalLossConfig:
    gamma: float = 2.0
    # per-class weights; None means inverse training frequency, mean 1
    alpha: Optional[list] = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.alpha is not None and min(self.alpha) <= 0:
            raise ValueError("alpha entries must be positive")

    def resolved_alpha(self, labels):
        if self.alpha is not None:
            return np.asarray(self.alpha, dtype=np.float64)
        counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=N_CLASSES).astype(float)
        inv = 1.0 / np.maximum(counts, 1.0)
        return inv / inv.mean()


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    dropout_rate: float = 0.3
    epochs: int = 100
    loss: LossKind = LossKind.Focal
    seed: int = 0
    n_tokens: int = 4
    d_k: int = 8

    def __post_init__(self):
        self.loss = LossKind(self.loss)
        if self.learning_rate < 0 or not 0 <= self.dropout_rate < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training config {self}")

    def to_json(self):
        d = asdict(self)
        d["loss"] = self.loss.value
        return d


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_precision: float
    val_recall: float
    val_f1: float


# -- layers ------------------------------------------------------------------

def init_attention(feature_dim, n_tokens=4, d_k=8, seed=0) -> AttentionParams:
    n_tokens = max(1, min(n_tokens, feature_dim))
    t = math.ceil(feature_dim / n_tokens)
    n_tokens = math.ceil(feature_dim / t)
    limit = math.sqrt(6.0 / (t + d_k))
    rng = SeededRng(derive_seed(seed, 0))
    W_Q = ((2.0 * rng.uniforms(t * d_k) - 1.0) * limit).reshape(t, d_k)
    W_K = ((2.0 * rng.uniforms(t * d_k) - 1.0) * limit).reshape(t, d_k)
    return AttentionParams(W_Q, W_K, n_tokens, feature_dim)


def init_classifier(feature_dim, seed=0) -> ClassifierParams:
    limit = math.sqrt(6.0 / (feature_dim + N_CLASSES))
    rng = SeededRng(derive_seed(seed, 1))
    W = ((2.0 * rng.uniforms(feature_dim * N_CLASSES) - 1.0) * limit).reshape(feature_dim, N_CLASSES)
    return ClassifierParams(W, np.zeros(N_CLASSES))


def _tokens(F, params: AttentionParams):
    B, D = F.shape
    if D != params.feature_dim:
        raise ShapeMismatch(f"feature dim {D} != attention dim {params.feature_dim}")
    padded = np.zeros((B, params.n_tokens * params.token_dim))
    padded[:, :D] = F
    return padded.reshape(B, params.n_tokens, params.token_dim)


def attention_weights(F, params: AttentionParams):
    """Row-stochastic (B, n, n) weights softmax(Q K^T / sqrt(d_k))."""
    X = _tokens(np.atleast_2d(F), params)
    Q, K = X @ params.W_Q, X @ params.W_K
    return softmax(Q @ K.transpose(0, 2, 1) / math.sqrt(params.d_k))


def _attend(F, params: AttentionParams):
    X = _tokens(F, params)
    Q, K = X @ params.W_Q, X @ params.W_K
    P = softmax(Q @ K.transpose(0, 2, 1) / math.sqrt(params.d_k))
    A = P @ X
    out = A.reshape(F.shape[0], -1)[:, :F.shape[1]] + F
    return out, (X, Q, K, P)


def attend(f, params: AttentionParams):
    """Residual self-attention over feature segments; V is the tokens themselves."""
    f = np.asarray(f, dtype=np.float64)
    out, _ = _attend(np.atleast_2d(f), params)
    return out[0] if f.ndim == 1 else out


def dropout(f, rate, rng: SeededRng, training=True):
    """Inverted dropout; identity at inference or rate 0."""
    f = np.asarray(f, dtype=np.float64)
    if not training or rate == 0:
        return f
    keep = rng.uniforms(f.size).reshape(f.shape) >= rate
    return np.where(keep, f / (1.0 - rate), 0.0)


def forward(f, attention: AttentionParams, classifier: ClassifierParams, rate=0.0, rng=None, training=False):
    """Class probabilities for one vector or an (n, d) batch."""
    f = np.asarray(f, dtype=np.float64)
    F = np.atleast_2d(f)
    if classifier.weights.shape[0] != F.shape[1]:
        raise ShapeMismatch(f"feature dim {F.shape[1]} != classifier dim {classifier.weights.shape[0]}")
    a, _ = _attend(F, attention)
    if training:
        a = dropout(a, rate, rng, training=True)
    p = softmax(a @ classifier.weights + classifier.bias)
    return p[0] if f.ndim == 1 else p


# -- losses ------------------------------------------------------------------

def cross_entropy(probs, label) -> float:
    return float(-math.log(max(float(probs[label]), LOG_CLAMP)))


def focal_loss(probs, label, cfg: FocalLossConfig = None) -> float:
    cfg = cfg or FocalLossConfig(alpha=[1.0] * N_CLASSES)
    alpha = np.ones(N_CLASSES) if cfg.alpha is None else np.asarray(cfg.alpha, float)
    p = float(probs[label])
    return float(-alpha[label] * (1.0 - p) ** cfg.gamma * math.log(max(p, LOG_CLAMP)))


def batch_loss(P, y, kind: LossKind, gamma=2.0, alpha=None):
    """Mean loss over a batch and its gradient with respect to the logits."""
    B = len(y)
    rows = np.arange(B)
    py = P[rows, y]
    logp = np.log(np.maximum(py, LOG_CLAMP))
    onehot = np.zeros_like(P)
    onehot[rows, y] = 1.0
    if kind is LossKind.CrossEntropy:
        return float(-logp.mean()), (P - onehot) / B
    a = np.ones(N_CLASSES) if alpha is None else np.asarray(alpha, float)
    ay = a[y]
    q = 1.0 - py
    losses = -ay * q ** gamma * logp
    if gamma == 0:
        dterm = np.zeros(B)
    else:
        # gamma * q^(gamma-1) * p * log p, written to stay finite as q -> 0
        safe_q = np.where(q > 0, q, 1.0)
        dterm = np.where(q > 0, gamma * q ** gamma / safe_q * py * logp, 0.0)
    coef = ay * (dterm - q ** gamma)
    dz = coef[:, None] * (onehot - P) / B
    return float(losses.mean()), dz


def loss_and_grads(F, y, attention, classifier, kind, gamma=2.0, alpha=None, mask=None):
    """Loss and analytic gradients for all head parameters.

    ``mask`` is an already-scaled dropout multiplier (or None).
    Returns ``(loss, {"W_Q", "W_K", "W", "b"})``.
    """
    a, (X, Q, K, P) = _attend(F, attention)
    h = a if mask is None else a * mask
    probs = softmax(h @ classifier.weights + classifier.bias)
    loss, dz = batch_loss(probs, y, kind, gamma, alpha)
    dW = h.T @ dz
    db = dz.sum(axis=0)
    da = dz @ classifier.weights.T
    if mask is not None:
        da = da * mask
    B, D = F.shape
    dA = np.zeros((B, attention.n_tokens * attention.token_dim))
    dA[:, :D] = da
    dA = dA.reshape(X.shape)
    dP = dA @ X.transpose(0, 2, 1)
    dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
    scale = 1.0 / math.sqrt(attention.d_k)
    dQ = dS @ K * scale
    dK = dS.transpose(0, 2, 1) @ Q * scale
    grads = {
        "W_Q": np.einsum("bnt,bnk->tk", X, dQ),
        "W_K": np.einsum("bnt,bnk->tk", X, dK),
        "W": dW,
        "b": db,
    }
    return loss, grads


# -- model bundle --------------------------------------------------------------

def _floats(a):
    return np.asarray(a, dtype=np.float64).tolist()


@dataclass
class ModelBundle:
    """Everything needed for inference.

    Bundles produced by :func:`train` alone hold only the head and expect
    refined vectors.  Pipeline bundles also carry feature statistics and
    refinement gates, and then :func:`predict` takes raw combined vectors.
    """

    attention: AttentionParams
    classifier: ClassifierParams
    train_config: TrainConfig
    focal: FocalLossConfig = field(default_factory=FocalLossConfig)
    feature_stats: Optional[object] = None
    refine_w: Optional[np.ndarray] = None
    surviving_indices: Optional[np.ndarray] = None
    tau: float = 1e-6
    extras: dict = field(default_factory=dict)
    version: int = BUNDLE_VERSION

    def to_json(self):
        obj = {
            "version": self.version,
            "feature_stats": None if self.feature_stats is None else self.feature_stats.to_json(),
            "refine": None if self.refine_w is None else {
                "w": _floats(self.refine_w),
                "surviving_indices": [int(i) for i in self.surviving_indices],
                "tau": self.tau,
            },
            "attention": {
                "W_Q": _floats(self.attention.W_Q),
                "W_K": _floats(self.attention.W_K),
                "d_k": self.attention.d_k,
                "n_tokens": self.attention.n_tokens,
                "feature_dim": self.attention.feature_dim,
            },
            "classifier": {"weights": _floats(self.classifier.weights), "bias": _floats(self.classifier.bias)},
            "train_config": self.train_config.to_json(),
            "focal": {"gamma": self.focal.gamma, "alpha": None if self.focal.alpha is None else _floats(self.focal.alpha)},
        }
        obj.update(self.extras)
        return obj

    @classmethod
    def from_json(cls, obj):
        from .features import FeatureNormStats

        if obj.get("version") != BUNDLE_VERSION:
            raise VersionMismatch(f"bundle version {obj.get('version')!r}, expected {BUNDLE_VERSION}")
        att = obj["attention"]
        attention = AttentionParams(np.asarray(att["W_Q"], float), np.asarray(att["W_K"], float),
                                    int(att["n_tokens"]), int(att["feature_dim"]))
        clf = obj["classifier"]
        classifier = ClassifierParams(np.asarray(clf["weights"], float), np.asarray(clf["bias"], float))
        ref = obj.get("refine")
        known = {"version", "feature_stats", "refine", "attention", "classifier", "train_config", "focal"}
        return cls(
            attention, classifier, TrainConfig(**obj["train_config"]), FocalLossConfig(**obj["focal"]),
            None if obj.get("feature_stats") is None else FeatureNormStats.from_json(obj["feature_stats"]),
            None if ref is None else np.asarray(ref["w"], float),
            None if ref is None else np.asarray(ref["surviving_indices"], np.int64),
            1e-6 if ref is None else float(ref["tau"]),
            {k: v for k, v in obj.items() if k not in known},
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def refined(self, F):
        """Map raw combined vectors to the head's input space."""
        F = np.asarray(F, dtype=np.float64)
        if self.feature_stats is None:
            return F
        from .features import apply_feature_norm

        if F.shape[-1] != self.feature_stats.mean.shape[0]:
            raise ShapeMismatch(f"feature dim {F.shape[-1]} != bundle dim {self.feature_stats.mean.shape[0]}")
        Z = apply_feature_norm(F, self.feature_stats)
        return (Z * self.refine_w)[..., self.surviving_indices]

    def probabilities(self, F):
        return forward(self.refined(F), self.attention, self.classifier)


def predict(model: ModelBundle, f):
    """``(label, probs)``; ties go to the lower class index."""
    probs = model.probabilities(f)
    return int(np.argmax(probs)), probs


# -- training ----------------------------------------------------------------

def _macro(preds, truths):
    cm = confusion(preds, truths)
    p, r, f = np.mean([class_metrics(cm, c)[:3] for c in range(N_CLASSES)], axis=0)
    return float(np.trace(cm) / cm.sum()), float(p), float(r), float(f)


def evaluate_loss(F, y, attention, classifier, kind, gamma, alpha):
    P = forward(F, attention, classifier)
    loss, _ = batch_loss(P, np.asarray(y), kind, gamma, alpha)
    return loss, P


def train(train_X, train_y, val_X, val_y, cfg: TrainConfig = None, focal: FocalLossConfig = None,
          init_seed=None):
    """Mini-batch gradient descent on the attention and classifier parameters.

    ``train_loss`` and ``val_loss`` in each :class:`EpochStats` are
    inference-mode losses measured after the epoch.  ``init_seed`` defaults
    to ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    focal = focal or FocalLossConfig()
    X = np.asarray(train_X, dtype=np.float64)
    y = np.asarray(train_y, dtype=np.int64)
    Xv = np.asarray(val_X, dtype=np.float64)
    yv = np.asarray(val_y, dtype=np.int64)
    if len(y) == 0 or len(yv) == 0:
        raise ValueError("training and validation splits must be nonempty")
    if np.unique(y).size < N_CLASSES:
        raise ValueError("all three classes must appear in the training split")
    init_seed = cfg.seed if init_seed is None else init_seed
    D = X.shape[1]
    attention = init_attention(D, cfg.n_tokens, cfg.d_k, init_seed)
    classifier = init_classifier(D, init_seed)
    alpha = focal.resolved_alpha(y)
    gamma = focal.gamma
    kind = cfg.loss

    rng = SeededRng(derive_seed(cfg.seed, 2))
    lr, rate = cfg.learning_rate, cfg.dropout_rate
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            mask = None
            if rate > 0:
                mask = (rng.uniforms(len(idx) * D).reshape(len(idx), D) >= rate) / (1.0 - rate)
            loss, g = loss_and_grads(X[idx], y[idx], attention, classifier, kind, gamma, alpha, mask)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"training loss diverged in epoch {epoch + 1}")
            if lr:
                attention.W_Q -= lr * g["W_Q"]
                attention.W_K -= lr * g["W_K"]
                classifier.weights -= lr * g["W"]
                classifier.bias -= lr * g["b"]
        train_loss, _ = evaluate_loss(X, y, attention, classifier, kind, gamma, alpha)
        val_loss, Pv = evaluate_loss(Xv, yv, attention, classifier, kind, gamma, alpha)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise NonFiniteLoss(f"non-finite loss after epoch {epoch + 1}")
        acc, prec, rec, f1 = _macro(np.argmax(Pv, axis=1), yv)
        history.append(EpochStats(epoch + 1, train_loss, val_loss, acc, prec, rec, f1))

    focal_used = FocalLossConfig(gamma, [float(a) for a in alpha])
    return ModelBundle(attention, classifier, cfg, focal_used), history


def save_epoch_csv(path, history):
    cols = ["epoch", "train_loss", "val_loss", "val_accuracy", "val_precision", "val_recall", "val_f1"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in history:
            w.writerow([s.epoch] + [repr(float(getattr(s, c))) for c in cols[1:]])


# -- grid search ---------------------------------------------------------------

# hyperparameter table row order; ties in validation loss are broken by
# comparing values along these axes in this order, ascending
AXIS_ORDER = ("learning_rate", "batch_size", "lam", "eta", "dropout_rate", "epochs")
DEFAULT_AXES = {
    "learning_rate": [0.0001, 0.0005, 0.001, 0.005],
    "batch_size": [16, 32, 64],
    "lam": [1e-5, 1e-4, 1e-3],
    "eta": [0.01, 0.05, 0.1, 0.2],
    "dropout_rate": [0.2, 0.3, 0.5],
    "epochs": [50, 75, 100, 150],
}
FINAL_VALUES = {"learning_rate": 0.001, "batch_size": 32, "lam": 1e-4, "eta": 0.1,
                "dropout_rate": 0.3, "epochs": 100}


@dataclass
class GridSpec:
    axes: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_AXES.items()})

    def __post_init__(self):
        unknown = set(self.axes) - set(AXIS_ORDER)
        if unknown:
            raise ValueError(f"unknown grid axes {sorted(unknown)}")
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ValueError("grid axes must be nonempty")

    @classmethod
    def smoke(cls):
        return cls({k: [v] for k, v in FINAL_VALUES.items()})

    def names(self):
        return [a for a in AXIS_ORDER if a in self.axes]

    def points(self):
        names = self.names()
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]

    def __len__(self):
        return int(np.prod([len(v) for v in self.axes.values()]))


@dataclass
class GridResult:
    best: dict
    leaderboard: list
    best_bundle: ModelBundle
    best_history: list
    best_refine: object


def grid_search(grid: GridSpec, train_F, train_y, val_F, val_y, base_refine: RefineConfig = None,
                base_train: TrainConfig = None, focal: FocalLossConfig = None, refine_seed=0):
    """Train one model per grid point and return the lowest final validation loss.

    ``train_F``/``val_F`` are standardised combined features.  Refinement is
    re-run only when ``lam`` or ``eta`` change.  A failing point is recorded
    with ``status = "failed: ..."`` and skipped.
    """
    base_refine = base_refine or RefineConfig()
    base_train = base_train or TrainConfig()
    refine_cache = {}
    rows, models = [], {}
    for i, point in enumerate(grid.points()):
        row = {name: point[name] for name in grid.names()}
        try:
            key = (point.get("lam", base_refine.lam), point.get("eta", base_refine.eta))
            if key not in refine_cache:
                rcfg = RefineConfig(**{**base_refine.to_json(), "lam": key[0], "eta": key[1]})
                refine_cache[key] = refine(train_F, train_y, rcfg, seed=refine_seed)
            w, report = refine_cache[key]
            Rt, keep = sparse_transform(train_F, w, report.config.drop_threshold)
            Rv, _ = sparse_transform(val_F, w, report.config.drop_threshold)
            tcfg = TrainConfig(**{**base_train.to_json(),
                                  **{k: v for k, v in point.items() if k in ("learning_rate", "batch_size",
                                                                            "dropout_rate", "epochs")}})
            bundle, history = train(Rt, train_y, Rv, val_y, tcfg, focal)
            last = history[-1] if history else None
            if last is None:
                v_loss, _ = evaluate_loss(Rv, val_y, bundle.attention, bundle.classifier, tcfg.loss,
                                          bundle.focal.gamma, bundle.focal.alpha)
                v_acc = float("nan")
            else:
                v_loss, v_acc = last.val_loss, last.val_accuracy
            row.update(val_loss=v_loss, val_accuracy=v_acc, status="ok")
            models[i] = (bundle, history, report)
        except (SpineGradeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            row.update(val_loss=float("nan"), val_accuracy=float("nan"), status=f"failed: {exc}")
        rows.append(row)

    ok = [i for i, r in enumerate(rows) if r["status"] == "ok"]
    if not ok:
        raise NonFiniteLoss("every grid point failed")
    names = grid.names()
    best_i = min(ok, key=lambda i: (rows[i]["val_loss"], tuple(rows[i][n] for n in names)))
    bundle, history, report = models[best_i]
    best = {n: rows[best_i][n] for n in names}
    return GridResult(best, rows, bundle, history, report)


def save_leaderboard(path, rows, names):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + ["val_loss", "val_accuracy", "status"])
        for r in rows:
            w.writerow([r[n] for n in names] + [repr(float(r["val_loss"])), repr(float(r["val_accuracy"])),
                                                r["status"]])
