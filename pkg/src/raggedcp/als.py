"""Alternating least squares with kernel-ridge functional updates.

Each sweep updates A row-by-row (one small least-squares problem per
subject), B as one stacked matrix least-squares problem, and the kernel
coefficients Theta through the penalized normal equations

    (D^T D + lambda' K_blk) theta = D^T x,

where D is the full design matrix and K_blk the R-block diagonal of the
grid Gram matrix. A and B are column-normalized after their updates (the
next unconstrained solve absorbs the scales) and sign-fixed so the
largest-magnitude entry of each column is positive.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .kernels import KernelSpec
from .result import FitResult, stop_triggered
from .solve import solve_psd
from .tensor import (
    FactorModel,
    GlobalGrid,
    UnalignedTensor,
    build_design,
    relative_loss_from_vectors,
    vectorize,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AlsConfig:
    """Settings for :func:`rkhs_td` (and its sketched variant).

    ``penalty`` is the ridge coefficient lambda' on the squared RKHS
    norms; ``stop_eps < 0`` disables the improvement stop criterion,
    otherwise the run stops once the relative loss improved by less than
    ``stop_eps`` over each of the last ``stop_window`` iterations and the
    model from before that window is returned.
    """

    rank: int
    penalty: float = 0.0
    max_iters: int = 10
    jitter: float = 0.0
    stop_eps: float = 1e-6
    stop_window: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.stop_window < 1:
            raise ValueError("stop_window must be >= 1")
        if self.penalty < 0 or self.jitter < 0:
            raise ValueError("penalty and jitter must be nonnegative")


def default_init(
    x: UnalignedTensor, grid: GlobalGrid, kern: KernelSpec, rank: int, rng
) -> FactorModel:
    """Uniform(0,1) factors with unit columns; Theta starts at zero."""
    a = rng.uniform(size=(x.n, rank))
    b = rng.uniform(size=(x.p, rank))
    a /= np.linalg.norm(a, axis=0)
    b /= np.linalg.norm(b, axis=0)
    return FactorModel(a, b, np.zeros((rank, grid.size)), grid, kern)


def subject_row_solve(values_i, b_table, xi_i, feat_idx, time_idx, base_jitter=0.0):
    """Least-squares coefficients for one subject over given (feature, time) rows.

    Row l of the design is b_table[feat_idx[l], :] * xi_i[time_idx[l], :]
    against the observation values_i[time_idx[l], feat_idx[l]].
    """
    m = b_table[feat_idx] * xi_i[time_idx]
    y = values_i[time_idx, feat_idx]
    return solve_psd(m.T @ m, m.T @ y, base_jitter)


def update_A(
    x: UnalignedTensor,
    b_table: np.ndarray,
    theta: np.ndarray,
    grid: GlobalGrid,
    kern: KernelSpec,
    base_jitter: float = 0.0,
    xi=None,
) -> np.ndarray:
    """Row-wise least-squares update of the subject factor table."""
    if xi is None:
        xi = kern.gram(grid.points, grid.points) @ np.asarray(theta).T
    rank = b_table.shape[1]
    p = x.p
    a_new = np.empty((x.n, rank))
    for i in range(x.n):
        m_i = x.times[i].size
        feat_idx = np.repeat(np.arange(p), m_i)
        time_idx = np.tile(np.arange(m_i), p)
        xi_i = xi[_grid_rows(x, grid, i)]
        a_new[i] = subject_row_solve(
            x.values[i], b_table, xi_i, feat_idx, time_idx, base_jitter
        )
    return a_new


def _grid_rows(x: UnalignedTensor, grid: GlobalGrid, i: int) -> np.ndarray:
    return grid.index(x.times[i])


def update_B(
    x: UnalignedTensor,
    a_table: np.ndarray,
    theta: np.ndarray,
    grid: GlobalGrid,
    kern: KernelSpec,
    base_jitter: float = 0.0,
    xi=None,
) -> np.ndarray:
    """Stacked matrix least-squares update of the feature factor table."""
    if xi is None:
        xi = kern.gram(grid.points, grid.points) @ np.asarray(theta).T
    design = np.concatenate(
        [a_table[i] * xi[_grid_rows(x, grid, i)] for i in range(x.n)]
    )
    resp = np.concatenate([v for v in x.values])  # (sum |T_i|, p)
    sol = solve_psd(design.T @ design, design.T @ resp, base_jitter)
    return sol.T


def penalized_theta_solve(design, x_vec, gram, lam, base_jitter=0.0) -> np.ndarray:
    """Solve (D^T D + lam * K_blk) theta = D^T x; returns Theta (R, |T|)."""
    nt = gram.shape[0]
    rank = design.shape[1] // nt
    normal = design.T @ design
    if lam != 0.0:
        for r in range(rank):
            normal[r * nt : (r + 1) * nt, r * nt : (r + 1) * nt] += lam * gram
    theta = solve_psd(normal, design.T @ x_vec, base_jitter)
    return theta.reshape(rank, nt)


def update_theta(
    x: UnalignedTensor,
    a_table: np.ndarray,
    b_table: np.ndarray,
    grid: GlobalGrid,
    kern: KernelSpec,
    lam: float,
    base_jitter: float = 0.0,
    x_vec=None,
    vmap=None,
) -> np.ndarray:
    """Penalized functional-mode update over the full design matrix."""
    if x_vec is None or vmap is None:
        x_vec, vmap = vectorize(x)
    design = build_design(a_table, b_table, grid, kern, vmap)
    gram = kern.gram(grid.points, grid.points)
    return penalized_theta_solve(design, x_vec, gram, lam, base_jitter)


def normalize_columns(mat: np.ndarray, rng=None):
    """Rescale columns to unit norm; returns (normalized, scales).

    A zero column cannot be normalized: it is replaced by a fresh random
    unit vector (restart heuristic, logged) and its scale reported as 0.
    """
    mat = np.array(mat, dtype=float)
    scales = np.linalg.norm(mat, axis=0)
    for r in np.flatnonzero(scales == 0.0):
        if rng is None:
            raise ValueError(f"zero column {r} and no rng for the restart heuristic")
        log.info("zero factor column %d restarted with a random unit vector", r)
        col = rng.uniform(size=mat.shape[0])
        mat[:, r] = col / np.linalg.norm(col)
    nonzero = scales != 0.0
    mat[:, nonzero] /= scales[nonzero]
    return mat, scales


def canonical_signs(mat: np.ndarray):
    """Flip columns so each largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(mat), axis=0)
    signs = np.sign(mat[idx, np.arange(mat.shape[1])])
    signs[signs == 0.0] = 1.0
    return mat * signs, signs


def model_predictions(a_table, b_table, xi, vmap) -> np.ndarray:
    """x_hat on the stacked index set given a precomputed xi table."""
    prod = a_table[vmap.subjects] * b_table[vmap.features] * xi[vmap.grid_idx]
    return prod.sum(axis=1)


def rkhs_td(
    x: UnalignedTensor,
    config: AlsConfig,
    init: FactorModel | None = None,
    kern: KernelSpec = KernelSpec("bernoulli"),
) -> FitResult:
    """Alternating decomposition of a ragged tensor under the l2 loss.

    Parameters
    ----------
    x:
        Observed ragged tensor.
    config:
        Rank, ridge penalty, iteration budget, stop criterion, seed.
    init:
        Optional starting model; defaults to seeded uniform factors with
        zero kernel coefficients.
    kern:
        Reproducing kernel; the Bernoulli polynomial kernel by default.

    Returns
    -------
    FitResult
        Final model and the per-iteration relative-loss trajectory
        (entry 0 is the initialization).
    """
    rng = np.random.default_rng(config.seed)
    x_vec, vmap = vectorize(x)
    grid = vmap.grid
    if init is None:
        init = default_init(x, grid, kern, config.rank, rng)
    elif init.rank != config.rank:
        raise ValueError("init rank does not match config.rank")
    gram = kern.gram(grid.points, grid.points)

    a, b, theta = init.A.copy(), init.B.copy(), init.Theta.copy()
    xi = gram @ theta.T
    losses = [relative_loss_from_vectors(x_vec, model_predictions(a, b, xi, vmap))]
    times = [0.0]
    window = deque([(a.copy(), b.copy(), theta.copy())], maxlen=config.stop_window + 1)
    t0 = time.perf_counter()
    stopped = False
    iterations = 0

    for _ in range(config.max_iters):
        a = update_A(x, b, theta, grid, kern, config.jitter, xi=xi)
        a, scales = normalize_columns(a, rng)
        a, flips = canonical_signs(a)
        # rebalances preserve the model: scales/signs fold into the factor
        # that is not being re-solved next, so normalization never changes
        # the end-of-cycle objective (the theta solve is penalized, hence
        # not scale-invariant on its own)
        b = b * (flips * np.where(scales == 0.0, 1.0, scales))
        b = update_B(x, a, theta, grid, kern, config.jitter, xi=xi)
        b, scales = normalize_columns(b, rng)
        b, flips = canonical_signs(b)
        a = a * np.where(scales == 0.0, 1.0, scales)
        theta = theta * flips[:, None]
        design = build_design(a, b, grid, kern, vmap)
        theta = penalized_theta_solve(design, x_vec, gram, config.penalty, config.jitter)
        xi = gram @ theta.T

        iterations += 1
        losses.append(
            relative_loss_from_vectors(x_vec, model_predictions(a, b, xi, vmap))
        )
        times.append(time.perf_counter() - t0)
        window.append((a.copy(), b.copy(), theta.copy()))
        if stop_triggered(losses, config.stop_eps, config.stop_window):
            a, b, theta = window[0]
            stopped = True
            break

    model = FactorModel(a, b, theta, grid, kern)
    return FitResult(
        model=model,
        losses=np.array(losses),
        wall_times=np.array(times),
        stopped_early=stopped,
        iterations=iterations,
    )
