"""Reproducing kernels on [0, 1] and Gram-matrix evaluation.

Two parameter-free kernels are supported:

* ``radial``: exp(-(x - y)^2), positive everywhere, 1 iff x == y.
* ``bernoulli``: the Bernoulli-polynomial kernel
  1 + k1(x) k1(y) + k2(x) k2(y) - k4(|x - y|), the reproducing kernel of
  the second-order Sobolev space on [0, 1]. Only defined for arguments
  inside [0, 1].

Both kernels are symmetric and produce (numerically) positive
semidefinite Gram matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL_NAMES = ("radial", "bernoulli")


def _k1(x):
    return x - 0.5


def _k2(x):
    k1 = _k1(x)
    return (k1 * k1 - 1.0 / 12.0) / 2.0


def _k4(x):
    k1 = _k1(x)
    k1sq = k1 * k1
    return (k1sq * k1sq - k1sq / 2.0 + 7.0 / 240.0) / 24.0


@dataclass(frozen=True)
class KernelSpec:
    """Kernel selector. ``kind`` is one of ``radial`` or ``bernoulli``."""

    kind: str

    def __post_init__(self):
        if self.kind not in KERNEL_NAMES:
            raise ValueError(
                f"unknown kernel {self.kind!r}; expected one of {KERNEL_NAMES}"
            )

    def eval(self, x, y):
        """Evaluate K(x, y) elementwise on scalars or broadcastable arrays."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "radial":
            d = x - y
            out = np.exp(-d * d)
        else:
            if np.any(x < 0.0) or np.any(x > 1.0) or np.any(y < 0.0) or np.any(y > 1.0):
                raise ValueError("bernoulli kernel arguments must lie in [0, 1]")
            out = 1.0 + _k1(x) * _k1(y) + _k2(x) * _k2(y) - _k4(np.abs(x - y))
        if out.ndim == 0:
            return float(out)
        return out

    def gram(self, s, u):
        """Gram matrix with entry (a, b) = K(s[a], u[b]).

        Parameters
        ----------
        s, u:
            1-d arrays of points in [0, 1].

        Returns
        -------
        (len(s), len(u)) ndarray.
        """
        s = np.asarray(s, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.eval(s[:, None], u[None, :])


def kernel(kind: str) -> KernelSpec:
    """Construct a :class:`KernelSpec` from its config name."""
    return KernelSpec(kind)
