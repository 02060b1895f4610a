"""Dense vector math, activation functions, loss primitives, and streaming statistics.

Everything operates on float64 numpy arrays. Vector arguments are 1-D arrays;
most functions also broadcast over a leading batch axis so callers can process
a whole chunk of samples in one call.
"""

from __future__ import annotations

import math

import numpy as np

# Predictions are clamped away from {0, 1} before logs so saturated sigmoid
# outputs cannot produce infinite cross-entropy.
BCE_EPS = 1e-7


def as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def relu(x):
    """Elementwise max(0, x)."""
    return np.maximum(as_f64(x), 0.0)


def relu_grad(pre):
    """Derivative of relu at the pre-activation; defined as 0 at exactly 0."""
    return np.where(as_f64(pre) > 0.0, 1.0, 0.0)


def sigmoid(x):
    """Elementwise logistic function, stable for large |x|."""
    x = as_f64(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    """Max-shifted softmax; rows sum to 1 even for inputs of magnitude ~1e6."""
    x = as_f64(x)
    if x.size == 0:
        raise ValueError("softmax of empty input")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def l2_distance(x, y) -> float:
    """Euclidean distance between two equal-length vectors."""
    x, y = as_f64(x), as_f64(y)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.sqrt(np.sum(d * d)))


def mse(x, xhat) -> float:
    """Mean squared difference."""
    x, xhat = as_f64(x), as_f64(xhat)
    if x.shape != xhat.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {xhat.shape}")
    d = x - xhat
    return float(np.mean(d * d))


def _check_unit_interval(v, name):
    if np.any(v < 0.0) or np.any(v > 1.0):
        raise ValueError(f"{name} entries must lie in [0, 1]")


def bce(target, pred) -> float:
    """Binary cross-entropy, mean over components, with predictions clamped
    to [BCE_EPS, 1 - BCE_EPS]."""
    target, pred = as_f64(target), as_f64(pred)
    if target.shape != pred.shape:
        raise ValueError(f"length mismatch: {target.shape} vs {pred.shape}")
    _check_unit_interval(target, "target")
    _check_unit_interval(pred, "pred")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def bce_grad_pred(target, pred) -> np.ndarray:
    """Gradient of bce(target, pred) with respect to pred.

    Components where the clamp is active get zero gradient, matching what a
    finite difference of the clamped loss sees.
    """
    target, pred = as_f64(target), as_f64(pred)
    if target.shape != pred.shape:
        raise ValueError(f"length mismatch: {target.shape} vs {pred.shape}")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    n = pred.shape[-1]
    g = (p - target) / (p * (1.0 - p)) / n
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    return np.where(inside, g, 0.0)


class RunningStat:
    """Welford running mean/std of a scalar signal with minimum trackers.

    ``min_mean``/``min_std`` record the smallest running mean and running std
    seen since the last reset. The std observed while count == 1 is always 0
    and is ignored by the min tracker so downstream thresholds built from
    ``min_std`` do not degenerate.
    """

    __slots__ = ("count", "mean", "m2", "min_mean", "min_std")

    def __init__(self):
        self.reset()

    def reset(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.reset_min()

    def reset_min(self):
        self.min_mean = math.inf
        self.min_std = math.inf

    def update(self, x: float):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError("RunningStat.update requires a finite value")
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        if self.mean < self.min_mean:
            self.min_mean = self.mean
        if self.count > 1:
            s = self.std
            if s < self.min_std:
                self.min_std = s
        return self

    @property
    def variance(self) -> float:
        if self.count == 0:
            return 0.0
        return max(self.m2, 0.0) / self.count

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def __repr__(self):
        return (f"RunningStat(count={self.count}, mean={self.mean:.6g}, "
                f"std={self.std:.6g})")


class EwmaMoments:
    """Exponentially weighted first and second moments of a vector signal.

    Coordinates start uninitialised (NaN) and adopt the first observed value,
    so the very first update makes the mean equal the observation and the
    implied variance zero. New coordinates appended by structural edits are
    initialised lazily the same way.
    """

    __slots__ = ("decay", "mean", "sq")

    def __init__(self, decay: float = 0.999):
        if not 0.0 < decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        self.decay = decay
        self.mean = None
        self.sq = None

    @property
    def initialized(self) -> bool:
        return self.mean is not None

    def update(self, x):
        x = as_f64(x)
        if self.mean is None:
            self.mean = x.copy()
            self.sq = x * x
            return self
        if x.shape != self.mean.shape:
            raise ValueError(
                f"dimension mismatch: {x.shape} vs {self.mean.shape}")
        fresh = np.isnan(self.mean)
        d = self.decay
        self.mean = d * self.mean + (1.0 - d) * x
        self.sq = d * self.sq + (1.0 - d) * (x * x)
        if fresh.any():
            self.mean[fresh] = x[fresh]
            self.sq[fresh] = x[fresh] * x[fresh]
        return self

    def grow_coord(self):
        if self.mean is not None:
            self.mean = np.append(self.mean, np.nan)
            self.sq = np.append(self.sq, np.nan)

    def drop_coord(self, index: int):
        if self.mean is not None:
            self.mean = np.delete(self.mean, index)
            self.sq = np.delete(self.sq, index)

    def variance(self) -> np.ndarray:
        """Per-coordinate E[x^2] - E[x]^2, clamped at zero."""
        if self.mean is None:
            raise ValueError("no observations yet")
        return np.maximum(self.sq - self.mean * self.mean, 0.0)
