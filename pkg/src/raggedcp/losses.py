"""Pairwise loss families f(m, x) with model-gradients.

All losses use the model-first convention: ``value(spec, m, x)`` is the
loss of predicting ``m`` for an observed ``x``, and ``dmodel`` is its
derivative in ``m``. Families:

* ``gaussian``:   (m - x)^2
* ``bernoulli``:  log(1 + e^m) - x m   (logit link, overflow-safe)
* ``poisson``:    (m + delta) - x log(m + delta)
* ``beta``:       shifted beta divergence with exponent beta != 0, 1

The nonnegative families (poisson, beta) carry a small shift delta and
require m >= 0, x >= 0; a negative m there signals a projection bug
upstream, not a data problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_NAMES = ("gaussian", "bernoulli", "poisson", "beta")

DEFAULT_POISSON_DELTA = 1e-10
DEFAULT_BETA_DELTA = 1e-6


@dataclass(frozen=True)
class LossSpec:
    """Loss family plus feasibility metadata for the generalized solvers.

    ``nonneg`` marks whether the feasible set clamps factors at zero,
    ``norm_bound`` / ``clip`` are optional defaults for the solvers'
    product-norm bound and gradient-clip bound.
    """

    kind: str
    delta: float = 0.0
    beta: float = 0.0
    nonneg: bool = False
    norm_bound: float | None = None
    clip: float | None = None

    def __post_init__(self):
        if self.kind not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSS_NAMES}")
        if self.kind in ("poisson", "beta") and not self.delta > 0.0:
            raise ValueError(f"{self.kind} loss requires delta > 0")
        if self.kind == "beta" and self.beta in (0.0, 1.0):
            raise ValueError("beta exponent must avoid {0, 1}")


def gaussian_loss(norm_bound=None, clip=None) -> LossSpec:
    return LossSpec("gaussian", norm_bound=norm_bound, clip=clip)


def bernoulli_loss(norm_bound=None, clip=None) -> LossSpec:
    return LossSpec("bernoulli", norm_bound=norm_bound, clip=clip)


def poisson_loss(delta=DEFAULT_POISSON_DELTA, norm_bound=None, clip=None) -> LossSpec:
    return LossSpec("poisson", delta=delta, nonneg=True, norm_bound=norm_bound, clip=clip)


def beta_loss(beta, delta=DEFAULT_BETA_DELTA, norm_bound=None, clip=None) -> LossSpec:
    return LossSpec(
        "beta", delta=delta, beta=beta, nonneg=True, norm_bound=norm_bound, clip=clip
    )


def loss_from_name(kind, delta=None, beta=None, norm_bound=None, clip=None) -> LossSpec:
    """Build a LossSpec from config names, filling family defaults."""
    if kind == "gaussian":
        return gaussian_loss(norm_bound, clip)
    if kind == "bernoulli":
        return bernoulli_loss(norm_bound, clip)
    if kind == "poisson":
        return poisson_loss(DEFAULT_POISSON_DELTA if delta is None else delta, norm_bound, clip)
    if kind == "beta":
        if beta is None:
            raise ValueError("beta loss requires a beta exponent")
        return beta_loss(beta, DEFAULT_BETA_DELTA if delta is None else delta, norm_bound, clip)
    raise ValueError(f"unknown loss {kind!r}; expected one of {LOSS_NAMES}")


def value(spec: LossSpec, m, x):
    """Elementwise loss f(m, x); works on scalars or arrays."""
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    if spec.kind == "gaussian":
        out = (m - x) ** 2
    elif spec.kind == "bernoulli":
        # log(1 + e^m) = max(m, 0) + log1p(e^{-|m|})
        out = np.logaddexp(0.0, m) - x * m
    elif spec.kind == "poisson":
        _check_nonneg(spec, m)
        out = (m + spec.delta) - x * np.log(m + spec.delta)
    else:
        _check_nonneg(spec, m)
        b = spec.beta
        xs = x + spec.delta
        ms = m + spec.delta
        out = (xs**b + (b - 1.0) * ms**b - b * xs * ms ** (b - 1.0)) / (b * (b - 1.0))
    if out.ndim == 0:
        return float(out)
    return out


def dmodel(spec: LossSpec, m, x):
    """Elementwise derivative of :func:`value` in the model argument."""
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    if spec.kind == "gaussian":
        out = 2.0 * (m - x)
    elif spec.kind == "bernoulli":
        out = _sigmoid(m) - x
    elif spec.kind == "poisson":
        _check_nonneg(spec, m)
        out = 1.0 - x / (m + spec.delta)
    else:
        _check_nonneg(spec, m)
        ms = m + spec.delta
        out = ms ** (spec.beta - 2.0) * (ms - (x + spec.delta))
    if out.ndim == 0:
        return float(out)
    return out


def analytic_minimizer(spec: LossSpec, x):
    """Model value minimizing the loss at observation x (for tests)."""
    x = np.asarray(x, dtype=float)
    if spec.kind == "gaussian" or spec.kind == "beta":
        return x
    if spec.kind == "poisson":
        return np.maximum(x - spec.delta, 0.0)
    return np.log(x) - np.log1p(-x)  # logit, x in (0, 1)


def clip_gradient(g: np.ndarray, c: float) -> np.ndarray:
    """Rescale g to norm c when ||g|| exceeds c; otherwise return g."""
    if not c > 0.0:
        raise ValueError("clip bound must be positive")
    g = np.asarray(g, dtype=float)
    norm = float(np.sqrt(np.sum(g * g)))
    if norm <= c:
        return g
    return g * (c / norm)


def _sigmoid(m):
    # 1/(1+e^{-m}) = exp(-log(1+e^{-m})), stable for large |m|
    return np.exp(-np.logaddexp(0.0, -m))


def _check_nonneg(spec, m):
    if np.any(m < 0.0):
        raise ValueError(
            f"negative model value under {spec.kind} loss: projection bug upstream"
        )
