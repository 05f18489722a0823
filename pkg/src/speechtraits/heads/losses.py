"""Training losses and their analytic gradients.

All moments are population moments (divide by N, no Bessel correction) and
losses are computed at batch level.  Each loss ships its gradient with respect
to the predictions; the gradients are validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError

KL_EPS = 1e-8
SIMPLEX_TOL = 1e-6


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def scale_dimensional(raw: float) -> float:
    """Map a raw head output onto the (0, 1) arousal/valence scale."""
    return float(sigmoid(np.asarray(raw, dtype=float)))


def softmax(x):
    x = np.asarray(x, dtype=float)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_pair(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DomainError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise DomainError("need at least 2 values")
    return x, y


def ccc(x, y) -> float:
    """Concordance correlation: 2*cov / (var_x + var_y + (mean_x - mean_y)^2).

    When both inputs are constant the formula is 0/0; by convention the value
    is 1 for identical constants (x == y elementwise) and 0 otherwise.
    """
    x, y = _as_pair(x, y)
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    cov = ((x - mx) * (y - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return 1.0 if np.array_equal(x, y) else 0.0
    return float(2.0 * cov / denom)


def ccc_grad(x, y) -> np.ndarray:
    """d ccc(x, y) / d x.  Zero in the degenerate constant-inputs case."""
    x, y = _as_pair(x, y)
    n = x.size
    mx, my = x.mean(), y.mean()
    dx = x - mx
    dy = y - my
    vx = (dx**2).mean()
    vy = (dy**2).mean()
    cov = (dx * dy).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        return np.zeros_like(x)
    # quotient rule over denom with d cov = dy/n, d vx = 2 dx/n, d (mx-my)^2 = 2 (mx-my)/n
    return (2.0 / (n * denom**2)) * (dy * denom - 2.0 * cov * (dx + (mx - my)))


def ccc_loss(pred, target) -> float:
    """1 - ccc; lies in [0, 2]."""
    return 1.0 - ccc(pred, target)


def ccc_loss_grad(pred, target) -> np.ndarray:
    return -ccc_grad(pred, target)


def _check_simplex(name: str, p: np.ndarray):
    if (p < 0).any():
        raise DomainError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError(f"{name} is not on the simplex (sum={p.sum()!r})")


def kl_loss(pred_dist, target_dist) -> float:
    """KL(target || pred) with pred clamped at 1e-8 before the log; 0*log 0 := 0."""
    p = np.asarray(pred_dist, dtype=float).ravel()
    t = np.asarray(target_dist, dtype=float).ravel()
    if p.shape != t.shape:
        raise DomainError(f"distribution length mismatch: {p.shape} vs {t.shape}")
    _check_simplex("pred_dist", p)
    _check_simplex("target_dist", t)
    p = np.maximum(p, KL_EPS)
    mask = t > 0
    return float(np.sum(t[mask] * (np.log(t[mask]) - np.log(p[mask]))))


def kl_loss_grad(pred_dist, target_dist) -> np.ndarray:
    """d kl_loss / d pred.  Zero where the clamp is active (pred <= 1e-8)."""
    p = np.asarray(pred_dist, dtype=float).ravel()
    t = np.asarray(target_dist, dtype=float).ravel()
    grad = np.zeros_like(p)
    free = p > KL_EPS
    grad[free] = -t[free] / p[free]
    return grad


def multilabel_loss(scores, targets) -> float:
    """Mean over labels of binary cross-entropy on sigmoid(scores)."""
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if s.shape != t.shape:
        raise DomainError(f"length mismatch: {s.shape} vs {t.shape}")
    if not np.isin(t, (0.0, 1.0)).all():
        raise DomainError("multilabel targets must be 0/1")
    # stable BCE-with-logits: max(s,0) - s*t + log(1 + exp(-|s|))
    per_label = np.maximum(s, 0.0) - s * t + np.log1p(np.exp(-np.abs(s)))
    return float(per_label.mean())


def multilabel_loss_grad(scores, targets) -> np.ndarray:
    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    return (sigmoid(s) - t) / s.size
