"""Structured row-sampling sketches for the alternating updates.

A sketch plan draws s1 subject indices, s2 feature indices, and, for
each subject draw, s3 time positions, all i.i.d. uniform with
replacement (duplicates are kept and weight their rows). The sketched
design matrix over those triples equals S @ D for the implicit
row-sampling matrix S; rows are built unscaled (a uniform scaling of
both the design and response cancels in the least-squares solution).
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .als import (
    AlsConfig,
    canonical_signs,
    default_init,
    model_predictions,
    normalize_columns,
    penalized_theta_solve,
    subject_row_solve,
    update_A,
    update_B,
)
from .kernels import KernelSpec
from .result import FitResult, stop_triggered
from .solve import solve_psd
from .tensor import (
    FactorModel,
    GlobalGrid,
    UnalignedTensor,
    design_rows,
    relative_loss_from_vectors,
    vectorize,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SketchPlan:
    """Sampled index multisets: subject draws, feature draws, and one
    time-position multiset per subject draw (indices into that
    subject's time set)."""

    subjects: np.ndarray
    features: np.ndarray
    time_indices: tuple
    seed: int | None = None

    @property
    def s1(self) -> int:
        return self.subjects.size

    @property
    def s2(self) -> int:
        return self.features.size

    def n_rows(self) -> int:
        return self.s2 * sum(t.size for t in self.time_indices)


def sample_plan(x: UnalignedTensor, s1: int, s2: int, s3: int, rng) -> SketchPlan:
    """Draw a plan of s1 subjects, s2 features, s3 times per subject draw.

    All draws are i.i.d. uniform with replacement, so s3 may exceed
    |T_i|. Deterministic for a fixed generator state.
    """
    if min(s1, s2, s3) < 1:
        raise ValueError("sketch sizes must be >= 1")
    subjects = rng.integers(0, x.n, size=s1)
    features = rng.integers(0, x.p, size=s2)
    times = tuple(
        rng.integers(0, x.times[i].size, size=s3) for i in subjects
    )
    return SketchPlan(subjects, features, times)


def full_plan(x: UnalignedTensor) -> SketchPlan:
    """The identity plan selecting every index exactly once, in order."""
    return SketchPlan(
        np.arange(x.n),
        np.arange(x.p),
        tuple(np.arange(t.size) for t in x.times),
    )


def plan_triples(plan: SketchPlan, x: UnalignedTensor, grid: GlobalGrid):
    """Row triples (subjects, features, grid indices, values) in plan order.

    Enumeration is draw-major, then feature, then time, mirroring the
    stacked-vector layout; duplicates in the plan yield duplicate rows.
    """
    subs, feats, gidx, vals = [], [], [], []
    grid_rows = {int(i): grid.index(x.times[i]) for i in np.unique(plan.subjects)}
    for k, i in enumerate(plan.subjects):
        i = int(i)
        tp = plan.time_indices[k]
        nrow = plan.s2 * tp.size
        f = np.repeat(plan.features, tp.size)
        t = np.tile(tp, plan.s2)
        subs.append(np.full(nrow, i, dtype=np.int64))
        feats.append(f)
        gidx.append(grid_rows[i][t])
        vals.append(x.values[i][t, f])
    return (
        np.concatenate(subs),
        np.concatenate(feats),
        np.concatenate(gidx),
        np.concatenate(vals),
    )


def build_sketched_design(
    a_table, b_table, grid: GlobalGrid, kern: KernelSpec, plan: SketchPlan,
    x: UnalignedTensor,
):
    """Sketched design D_hat = S @ D and sketched response S @ x.

    Equals the full design restricted to the sampled sub-tensor with
    duplicates repeated; the identity plan reproduces the full design
    exactly.
    """
    subs, feats, gidx, vals = plan_triples(plan, x, grid)
    dhat = design_rows(a_table, b_table, grid, kern, subs, feats, gidx)
    return dhat, vals


def sketched_update_theta(sx, dhat, gram, lam, base_jitter=0.0) -> np.ndarray:
    """Penalized solve (D_hat^T D_hat + lam K_blk) theta = D_hat^T Sx."""
    return penalized_theta_solve(dhat, sx, gram, lam, base_jitter)


def sketched_update_A(
    x: UnalignedTensor,
    plan: SketchPlan,
    b_table: np.ndarray,
    theta: np.ndarray,
    grid: GlobalGrid,
    kern: KernelSpec,
    a_prev: np.ndarray,
    base_jitter: float = 0.0,
    xi=None,
):
    """Per-subject solves restricted to the sampled (feature, time) rows.

    Subjects absent from the plan keep their previous rows; a sampled
    subject with fewer rows than the rank is skipped (returned in the
    skip list).
    """
    if xi is None:
        xi = kern.gram(grid.points, grid.points) @ np.asarray(theta).T
    rank = b_table.shape[1]
    a_new = a_prev.copy()
    skipped = []
    for i in np.unique(plan.subjects):
        i = int(i)
        feat_parts, time_parts = [], []
        for k, ik in enumerate(plan.subjects):
            if int(ik) != i:
                continue
            tp = plan.time_indices[k]
            feat_parts.append(np.repeat(plan.features, tp.size))
            time_parts.append(np.tile(tp, plan.s2))
        feat_idx = np.concatenate(feat_parts)
        time_idx = np.concatenate(time_parts)
        if feat_idx.size < rank:
            skipped.append(i)
            continue
        xi_i = xi[grid.index(x.times[i])]
        a_new[i] = subject_row_solve(
            x.values[i], b_table, xi_i, feat_idx, time_idx, base_jitter
        )
    if skipped:
        log.debug("sketched A update skipped underdetermined rows %s", skipped)
    return a_new, skipped


def sketched_update_B(
    x: UnalignedTensor,
    plan: SketchPlan,
    a_table: np.ndarray,
    theta: np.ndarray,
    grid: GlobalGrid,
    kern: KernelSpec,
    b_prev: np.ndarray,
    base_jitter: float = 0.0,
    xi=None,
):
    """Matrix least squares over sampled (subject, time) rows for the
    sampled features; unsampled features keep their previous rows."""
    if xi is None:
        xi = kern.gram(grid.points, grid.points) @ np.asarray(theta).T
    rank = a_table.shape[1]
    design_parts, resp_parts = [], []
    for k, i in enumerate(plan.subjects):
        i = int(i)
        tp = plan.time_indices[k]
        gi = grid.index(x.times[i])[tp]
        design_parts.append(a_table[i] * xi[gi])
        resp_parts.append(x.values[i][tp])
    design = np.concatenate(design_parts)
    resp = np.concatenate(resp_parts)  # (rows, p)
    feats = np.unique(plan.features)
    b_new = b_prev.copy()
    if design.shape[0] < rank:
        log.debug("sketched B update skipped: %d rows < rank", design.shape[0])
        return b_new, list(feats)
    sol = solve_psd(design.T @ design, design.T @ resp[:, feats], base_jitter)
    b_new[feats] = sol.T
    return b_new, []


def s_rkhs_td(
    x: UnalignedTensor,
    config: AlsConfig,
    s1: int,
    s2: int,
    s3: int,
    init: FactorModel | None = None,
    kern: KernelSpec = KernelSpec("bernoulli"),
    sketch_ab: bool = True,
    plan_fn=None,
) -> FitResult:
    """Sketched alternating decomposition under the l2 loss.

    Each iteration draws a fresh plan, runs the sketched A, B, and theta
    updates (full A/B updates when ``sketch_ab`` is False), and records
    the full-data relative loss. ``plan_fn(x, s1, s2, s3, rng)`` may be
    supplied to override plan sampling (used by the reduction tests).

    Returns a :class:`FitResult` whose ``plan_seeds`` lists the
    per-iteration plan seeds.
    """
    rng = np.random.default_rng(config.seed)
    plan_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,))
    )
    draw_plan = plan_fn or sample_plan
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
    plan_seeds = []
    skipped_rows = 0
    window = deque([(a.copy(), b.copy(), theta.copy())], maxlen=config.stop_window + 1)
    t0 = time.perf_counter()
    stopped = False
    iterations = 0

    for _ in range(config.max_iters):
        plan_seed = int(plan_rng.integers(2**63))
        plan = draw_plan(x, s1, s2, s3, np.random.default_rng(plan_seed))
        plan_seeds.append(plan_seed)

        if sketch_ab:
            a, skipped = sketched_update_A(
                x, plan, b, theta, grid, kern, a, config.jitter, xi=xi
            )
            skipped_rows += len(skipped)
        else:
            a = update_A(x, b, theta, grid, kern, config.jitter, xi=xi)
        a, scales = normalize_columns(a, rng)
        a, flips = canonical_signs(a)
        # model-preserving rebalances, as in the unsketched loop
        b = b * (flips * np.where(scales == 0.0, 1.0, scales))
        if sketch_ab:
            b, skipped = sketched_update_B(
                x, plan, a, theta, grid, kern, b, config.jitter, xi=xi
            )
            skipped_rows += len(skipped)
        else:
            b = update_B(x, a, theta, grid, kern, config.jitter, xi=xi)
        b, scales = normalize_columns(b, rng)
        b, flips = canonical_signs(b)
        a = a * np.where(scales == 0.0, 1.0, scales)
        theta = theta * flips[:, None]
        dhat, sx = build_sketched_design(a, b, grid, kern, plan, x)
        theta = sketched_update_theta(sx, dhat, gram, config.penalty, config.jitter)
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
        plan_seeds=plan_seeds,
        diagnostics={"skipped_rows": skipped_rows},
    )
