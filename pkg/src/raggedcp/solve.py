"""Jittered Cholesky solves for the normal-equation updates."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

log = logging.getLogger(__name__)

# Escalation ladder for the relative diagonal jitter.
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
JITTER_WARN = 1e-10


class SolveError(RuntimeError):
    """Normal-equation solve failed after maximum jitter escalation."""


def solve_psd(mat: np.ndarray, rhs: np.ndarray, base_jitter: float = 0.0):
    """Solve mat @ x = rhs for symmetric PSD mat via Cholesky.

    Rank-deficient systems are handled by escalating a relative diagonal
    jitter through ``JITTER_LADDER`` (scaled by the mean diagonal);
    escalation beyond ``JITTER_WARN`` is logged. ``rhs`` may be a vector
    or a matrix of stacked right-hand sides.
    """
    mat = np.asarray(mat, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    scale = float(np.mean(np.abs(np.diag(mat))))
    if scale == 0.0:
        scale = 1.0
    rhs_norm = float(np.linalg.norm(rhs))
    best = None
    for eps in JITTER_LADDER:
        eps = max(eps, base_jitter)
        try:
            if eps == 0.0:
                fac = cho_factor(mat, lower=True, check_finite=False)
            else:
                jittered = mat + (eps * scale) * np.eye(mat.shape[0])
                fac = cho_factor(jittered, lower=True, check_finite=False)
        except LinAlgError:
            continue
        x = cho_solve(fac, rhs, check_finite=False)
        if not np.all(np.isfinite(x)):
            continue
        # iterative refinement against the unjittered system; kills both
        # cancellation error and the jitter-induced bias
        for _ in range(2):
            resid = rhs - mat @ x
            if np.linalg.norm(resid) <= 1e-13 * max(rhs_norm, 1e-300):
                break
            corr = cho_solve(fac, resid, check_finite=False)
            if not np.all(np.isfinite(corr)):
                break
            x = x + corr
        resid = float(np.linalg.norm(rhs - mat @ x))
        if resid <= 1e-9 * max(rhs_norm, 1e-300):
            if eps > JITTER_WARN:
                log.warning("normal-equation solve needed jitter %.0e", eps)
            return x
        if best is None or resid < best[0]:
            best = (resid, x)
    if best is not None:
        log.warning(
            "normal-equation solve left relative residual %.2e after escalation",
            best[0] / max(rhs_norm, 1e-300),
        )
        return best[1]
    raise SolveError("Cholesky failed after maximum jitter escalation")
