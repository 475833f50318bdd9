"""Preprocessing transforms for count-valued tensors."""

from __future__ import annotations

import numpy as np

from .tensor import TensorError, UnalignedTensor


def clr_transform(y: UnalignedTensor) -> UnalignedTensor:
    """Centered log-ratio with a +0.5 pseudo-count.

    X_ij(t) = log((Y_ij(t) + 0.5) / sum_j' (Y_ij'(t) + 0.5)); counts must
    be nonnegative.
    """
    values = []
    for v in y.values:
        if np.any(v < 0.0):
            raise TensorError("clr transform requires nonnegative counts")
        shifted = v + 0.5
        values.append(np.log(shifted / shifted.sum(axis=1, keepdims=True)))
    return UnalignedTensor(y.times, tuple(values))


def relative_abundance(y: UnalignedTensor) -> UnalignedTensor:
    """Per-time-slice proportions Y_ij(t) / sum_j' Y_ij'(t).

    Every time slice must have a positive total.
    """
    values = []
    for i, v in enumerate(y.values):
        if np.any(v < 0.0):
            raise TensorError("relative abundance requires nonnegative counts")
        totals = v.sum(axis=1, keepdims=True)
        if np.any(totals == 0.0):
            raise TensorError(f"subject {i}: all-zero time slice")
        values.append(v / totals)
    return UnalignedTensor(y.times, tuple(values))
