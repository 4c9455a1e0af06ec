"""Pseudo-Newton feature refinement with L1 shrinkage.

A gate vector ``w`` (one entry per feature dimension) is optimised with
damped Newton steps on the loss of a linear softmax probe fitted to the
gated features ``w * x``.  After every Newton step the gates are passed
through the L1 proximal operator, and dimensions whose final gate is
(numerically) zero are dropped by :func:`sparse_transform`.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .errors import (AllDimensionsDropped, DampingExhausted, DimMismatch, DimTooLarge,
                     NonFiniteEntries, NonFiniteLoss)
from .rng import SeededRng

N_CLASSES = 3
LOG_CLAMP = 1e-12
FD_DIM_CAP = 256
MAX_DOUBLINGS = 60
PROBE_STEPS = 32
PROBE_LR = 0.05


class HessianMode(str, enum.Enum):
    Analytic = "Analytic"
    FiniteDifference = "FiniteDifference"
    Diagonal = "Diagonal"


@dataclass
class RefineConfig:
    eta: float = 0.1
    lam: float = 1e-4
    T: int = 100
    hessian_mode: HessianMode = HessianMode.Analytic
    damping_floor: float = 1e-4
    drop_threshold: float = 1e-6
    init_sigma: float = 0.1

    def __post_init__(self):
        self.hessian_mode = HessianMode(self.hessian_mode)
        if self.eta <= 0 or self.lam < 0 or self.T < 1 or self.damping_floor <= 0 or self.drop_threshold < 0:
            raise ValueError(f"invalid refinement config {self}")

    def to_json(self):
        d = asdict(self)
        d["hessian_mode"] = self.hessian_mode.value
        return d


@dataclass
class ProbeModel:
    weights: np.ndarray  # (d, 3)
    bias: np.ndarray  # (3,)

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros((d, N_CLASSES)), np.zeros(N_CLASSES))

    def normalize_rows(self):
        """Rescale each nonzero weight row to unit length.

        Gate and probe row are only identified up to a shared scale; pinning
        the rows makes ``|w_i|`` the magnitude of dimension i's contribution.
        """
        norms = np.linalg.norm(self.weights, axis=1)
        live = norms > 0
        self.weights[live] /= norms[live, None]
        return self


@dataclass
class HessianMatrix:
    entries: np.ndarray
    damping_applied: float = 0.0


@dataclass
class RefinementState:
    w: np.ndarray
    t: int = 0
    loss_history: list = field(default_factory=list)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check(w, probe, X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64).ravel()
    w = np.asarray(w, dtype=np.float64)
    if X.shape[1] != w.shape[0] or probe.weights.shape[0] != w.shape[0] or X.shape[0] != y.shape[0]:
        raise DimMismatch(f"gate dim {w.shape[0]}, features {X.shape}, probe {probe.weights.shape}, labels {y.shape}")
    return w, X, y


def _probs(w, probe, X):
    return softmax((X * w) @ probe.weights + probe.bias)


def probe_loss(w, probe: ProbeModel, X, y) -> float:
    """Mean softmax cross-entropy of the probe on gated features."""
    w, X, y = _check(w, probe, X, y)
    P = _probs(w, probe, X)
    return float(-np.mean(np.log(np.maximum(P[np.arange(len(y)), y], LOG_CLAMP))))


def probe_grad(w, probe: ProbeModel, X, y) -> np.ndarray:
    w, X, y = _check(w, probe, X, y)
    R = _probs(w, probe, X)
    R[np.arange(len(y)), y] -= 1.0
    return np.mean(X * (R @ probe.weights.T), axis=0)


def analytic_hessian(w, probe: ProbeModel, X, y) -> np.ndarray:
    """Exact curvature of the probe loss in ``w``.

    The logits are linear in ``w``, so the Gauss-Newton form
    ``mean_n D_n W (diag p_n - p_n p_n^T) W^T D_n`` with ``D_n = diag(x_n)``
    is the full Hessian.
    """
    w, X, y = _check(w, probe, X, y)
    P = _probs(w, probe, X)
    n = X.shape[0]
    W = probe.weights
    H = np.zeros((X.shape[1], X.shape[1]))
    for k in range(W.shape[1]):
        U = X * W[:, k] * np.sqrt(P[:, k:k + 1])
        H += U.T @ U
    V = X * (P @ W.T)
    H -= V.T @ V
    H /= n
    return 0.5 * (H + H.T)


def finite_difference_hessian(grad_fn, w, h=1e-5) -> np.ndarray:
    """Central differences of ``grad_fn``, symmetrised."""
    w = np.asarray(w, dtype=np.float64)
    d = w.shape[0]
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (grad_fn(w + e) - grad_fn(w - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def probe_hessian(w, probe: ProbeModel, X, y, mode=HessianMode.Analytic, dim_cap=FD_DIM_CAP) -> HessianMatrix:
    mode = HessianMode(mode)
    if mode is HessianMode.FiniteDifference:
        if len(w) > dim_cap:
            raise DimTooLarge(f"finite-difference Hessian capped at d={dim_cap}, got {len(w)}")
        H = finite_difference_hessian(lambda v: probe_grad(v, probe, X, y), w)
    else:
        H = analytic_hessian(w, probe, X, y)
        if mode is HessianMode.Diagonal:
            H = np.diag(np.diag(H))
    if not np.all(np.isfinite(H)):
        raise NonFiniteEntries("Hessian has non-finite entries")
    return HessianMatrix(H)


def newton_step(w, g, H, eta, damping_floor):
    """Damped Newton update ``w - eta * (H + mu I)^-1 g``.

    ``mu`` starts at ``damping_floor`` and doubles until a Cholesky
    factorisation succeeds.  A zero floor first tries the undamped matrix.
    Returns ``(w_new, mu)``.
    """
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    entries = H.entries if isinstance(H, HessianMatrix) else np.asarray(H, dtype=np.float64)
    if entries.shape != (w.shape[0], w.shape[0]) or g.shape != w.shape:
        raise DimMismatch(f"w {w.shape}, g {g.shape}, H {entries.shape}")
    d = w.shape[0]
    mu = float(damping_floor)
    scale = max(1e-12, float(np.abs(np.diag(entries)).max(initial=0.0)) * 1e-12)
    for _ in range(MAX_DOUBLINGS + 1):
        try:
            factor = scipy.linalg.cho_factor(entries + mu * np.eye(d), lower=True)
        except (np.linalg.LinAlgError, ValueError):
            mu = 2.0 * mu if mu > 0 else scale
            continue
        delta = scipy.linalg.cho_solve(factor, g)
        if isinstance(H, HessianMatrix):
            H.damping_applied = mu
        return w - eta * delta, mu
    raise DampingExhausted(f"no positive-definite shift found up to mu={mu:g}")


def l1_penalty(w, lam) -> float:
    return float(lam * np.sum(np.abs(w)))


def soft_threshold(w, kappa):
    """Proximal operator of ``kappa * ||.||_1``."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    w = np.asarray(w, dtype=np.float64)
    return np.sign(w) * np.maximum(np.abs(w) - kappa, 0.0)


def fit_probe(probe: ProbeModel, w, X, y, steps=PROBE_STEPS, lr=PROBE_LR):
    """Warm-started gradient descent on the probe parameters, in place."""
    Xg = X * w
    Y = np.zeros((len(y), N_CLASSES))
    Y[np.arange(len(y)), y] = 1.0
    n = len(y)
    for _ in range(steps):
        R = softmax(Xg @ probe.weights + probe.bias) - Y
        probe.weights -= lr * (Xg.T @ R) / n
        probe.bias -= lr * R.mean(axis=0)
    return probe


@dataclass
class RefineReport:
    w: np.ndarray
    surviving_indices: np.ndarray
    loss_history: list
    damping_history: list
    nnz_history: list
    objective_nonincreasing: bool
    config: RefineConfig
    probe: ProbeModel = None

    def to_json(self):
        return {
            "w": [float(v) for v in self.w],
            "surviving_indices": [int(i) for i in self.surviving_indices],
            "loss_history": [float(v) for v in self.loss_history],
            "damping_history": [float(v) for v in self.damping_history],
            "nnz_history": [int(v) for v in self.nnz_history],
            "objective_nonincreasing": bool(self.objective_nonincreasing),
            "config": self.config.to_json(),
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def from_json(cls, obj):
        cfg = RefineConfig(**obj["config"])
        return cls(np.asarray(obj["w"], float), np.asarray(obj["surviving_indices"], np.int64),
                   list(obj["loss_history"]), list(obj["damping_history"]),
                   list(obj.get("nnz_history", [])), bool(obj.get("objective_nonincreasing", False)), cfg)


def refine(features, labels, cfg: RefineConfig = None, seed=0):
    """Run the gate optimisation; returns ``(w_T, RefineReport)``.

    Each outer iteration refits the probe (rows renormalised), takes one damped Newton step on
    the gates and applies soft-thresholding with ``kappa = eta * lam``.
    ``loss_history`` holds the composite objective ``L + lam * ||w||_1``
    after each iteration; monotonicity is reported, not enforced.
    """
    cfg = cfg or RefineConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        raise ValueError("refinement needs at least two classes in the labels")
    d = X.shape[1]
    w = SeededRng(seed).normals(d, cfg.init_sigma)
    probe = ProbeModel.zeros(d)
    kappa = cfg.eta * cfg.lam
    history, damping, nnz = [], [], []
    for _ in range(cfg.T):
        fit_probe(probe, w, X, y).normalize_rows()
        g = probe_grad(w, probe, X, y)
        H = probe_hessian(w, probe, X, y, cfg.hessian_mode)
        w, mu = newton_step(w, g, H, cfg.eta, cfg.damping_floor)
        w = soft_threshold(w, kappa)
        obj = probe_loss(w, probe, X, y) + l1_penalty(w, cfg.lam)
        if not np.isfinite(obj) or not np.all(np.isfinite(w)):
            raise NonFiniteLoss(f"refinement diverged at iteration {len(history) + 1}")
        history.append(obj)
        damping.append(mu)
        nnz.append(int(np.count_nonzero(w)))
    monotone = all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    keep = np.flatnonzero(np.abs(w) >= cfg.drop_threshold) if cfg.drop_threshold > 0 else np.arange(d)
    return w, RefineReport(w, keep, history, damping, nnz, monotone, cfg, probe)


def surviving(w, tau):
    w = np.asarray(w, dtype=np.float64)
    return np.flatnonzero(np.abs(w) >= tau) if tau > 0 else np.arange(w.shape[0])


def sparse_transform(f, w, tau=1e-6):
    """Gate features by ``w`` and drop dimensions with ``|w_i| < tau``.

    Works on one vector or an (n, d) matrix; returns ``(reduced, kept_indices)``.
    """
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if f.shape[-1] != w.shape[0]:
        raise DimMismatch(f"feature dim {f.shape[-1]} != gate dim {w.shape[0]}")
    keep = surviving(w, tau)
    if keep.size == 0:
        raise AllDimensionsDropped("every gate fell below the drop threshold")
    return (f * w)[..., keep], keep
