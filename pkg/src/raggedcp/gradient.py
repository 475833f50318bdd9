"""Full-gradient descent on the generalized objective.

Minimizes (1/|Omega|) sum f(x_hat_ij(t), x_ij(t)) by simultaneous
gradient steps on A, B, and Theta, followed by a joint rescale of any
component whose product norm ||a_r|| ||b_r|| ||xi_r||_H exceeds the bound
(each factor is mapped to norm bound^(1/3)) and a clamp to the
nonnegative orthant when the loss requires it.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import losses as loss_mod
from .als import default_init
from .kernels import KernelSpec
from .losses import LossSpec, clip_gradient
from .result import FitResult, stop_triggered
from .tensor import FactorModel, GlobalGrid, UnalignedTensor, vectorize

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Loss exploded past the divergence threshold."""


@dataclass(frozen=True)
class GdConfig:
    """Settings for :func:`grkhs_td` and the stochastic variant.

    ``norm_bound`` is the cap on max_r ||a_r|| ||b_r|| ||xi_r||_H;
    ``epoch_len`` sets how many iterations run between full-data loss
    evaluations (trajectory entries, stop checks). ``stop_eps < 0``
    disables the stop criterion; when it triggers, the snapshot from
    ``stop_window`` epochs earlier is returned.
    """

    rank: int
    alpha: float
    norm_bound: float
    max_iters: int = 100
    epoch_len: int = 10
    clip: float | None = None
    stop_eps: float = -1.0
    stop_window: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.alpha >= 0.0:
            raise ValueError("alpha must be >= 0")
        if not self.norm_bound > 0.0:
            raise ValueError("norm_bound must be > 0")
        if self.max_iters < 0 or self.epoch_len < 1 or self.stop_window < 1:
            raise ValueError("bad iteration/epoch/window settings")
        if self.clip is not None and not self.clip > 0.0:
            raise ValueError("clip must be positive when set")


def gradient_init(
    x: UnalignedTensor, grid: GlobalGrid, kern: KernelSpec, rank: int, rng
) -> FactorModel:
    """Feasible start: unit uniform columns, Theta rows at unit RKHS norm."""
    base = default_init(x, grid, kern, rank, rng)
    gram = kern.gram(grid.points, grid.points)
    theta = rng.uniform(size=(rank, grid.size))
    for r in range(rank):
        h = np.sqrt(max(theta[r] @ gram @ theta[r], 1e-300))
        theta[r] /= h
    return base.with_factors(Theta=theta)


def predictions_at(a, b, xi, subs, feats, gidx) -> np.ndarray:
    return (a[subs] * b[feats] * xi[gidx]).sum(axis=1)


def loss_values_mean(spec: LossSpec, xhat, xvals) -> float:
    return float(np.sum(loss_mod.value(spec, xhat, xvals))) / xhat.size


def generalized_loss(x: UnalignedTensor, model: FactorModel, spec: LossSpec) -> float:
    """(1/|Omega|) sum of the pairwise loss over all observed triples."""
    x_vec, vmap = vectorize(x)
    xi = model.xi_on_grid()
    xhat = predictions_at(model.A, model.B, xi, vmap.subjects, vmap.features, vmap.grid_idx)
    return loss_values_mean(spec, xhat, x_vec)


def gradient_blocks(a, b, xi, subs, feats, gidx, grows, dvals, weights, n, p):
    """Accumulate (gA, gB, gTheta) from weighted dmodel values on triples.

    ``grows`` holds the grid-Gram rows for the triples (row l is
    K(t_l, T)); gTheta is returned in (R, |T|) table form. The same
    accumulation path serves both the full and the sampled gradients, so
    a full-coverage sample reproduces the full gradient exactly.
    """
    rank = a.shape[1]
    wv = dvals * weights
    ga = np.zeros((n, rank))
    np.add.at(ga, subs, (b[feats] * xi[gidx]) * wv[:, None])
    gb = np.zeros((p, rank))
    np.add.at(gb, feats, (a[subs] * xi[gidx]) * wv[:, None])
    z = (a[subs] * b[feats]) * wv[:, None]
    gtheta = (grows.T @ z).T
    return ga, gb, gtheta


def _full_context(x: UnalignedTensor, kern: KernelSpec):
    x_vec, vmap = vectorize(x)
    gram = kern.gram(vmap.grid.points, vmap.grid.points)
    grows = gram[vmap.grid_idx]
    return x_vec, vmap, gram, grows


def full_gradients(x: UnalignedTensor, model: FactorModel, spec: LossSpec):
    """(gA, gB, gTheta) of the generalized objective at the model."""
    x_vec, vmap, gram, grows = _full_context(x, model.kernel)
    xi = gram @ model.Theta.T
    xhat = predictions_at(model.A, model.B, xi, vmap.subjects, vmap.features, vmap.grid_idx)
    dvals = loss_mod.dmodel(spec, xhat, x_vec)
    return gradient_blocks(
        model.A, model.B, xi, vmap.subjects, vmap.features, vmap.grid_idx,
        grows, dvals, 1.0 / x_vec.size, vmap.n, vmap.p,
    )


def grad_A(x, model, spec) -> np.ndarray:
    return full_gradients(x, model, spec)[0]


def grad_B(x, model, spec) -> np.ndarray:
    return full_gradients(x, model, spec)[1]


def grad_theta(x, model, spec) -> np.ndarray:
    """Gradient w.r.t. the row-major stacked theta vector (length R|T|)."""
    return full_gradients(x, model, spec)[2].ravel()


def scale_and_project(
    model: FactorModel,
    norm_bound: float,
    nonneg: bool,
    rng=None,
    gram=None,
) -> FactorModel:
    """Joint rescale of norm-violating components, then feasibility clamp.

    Components with ||a_r|| ||b_r|| ||xi_r||_H > norm_bound have each
    factor rescaled to norm bound^(1/3). When the clamp to the
    nonnegative orthant re-inflates a component past the bound (zeroing
    mixed-sign theta entries can increase the RKHS norm), the rescale is
    applied once more, which preserves nonnegativity. Components with a
    vanishing factor norm cannot be rescaled and are skipped (logged);
    a component whose RKHS norm collapses below 1e-14 is restarted with
    small random coefficients when an rng is supplied.
    """
    if not norm_bound > 0.0:
        raise ValueError("norm_bound must be positive")
    if gram is None:
        gram = model.kernel.gram(model.grid.points, model.grid.points)
    a = model.A.copy()
    b = model.B.copy()
    theta = model.Theta.copy()
    cbrt = norm_bound ** (1.0 / 3.0)

    def rescale_pass():
        for r in range(model.rank):
            na = np.linalg.norm(a[:, r])
            nb = np.linalg.norm(b[:, r])
            nh = np.sqrt(max(0.0, theta[r] @ gram @ theta[r]))
            if na * nb * nh <= norm_bound:
                continue
            if min(na, nb, nh) == 0.0:
                log.warning("component %d: zero factor norm, rescale skipped", r)
                continue
            a[:, r] *= cbrt / na
            b[:, r] *= cbrt / nb
            theta[r] *= cbrt / nh

    rescale_pass()
    if nonneg:
        np.clip(a, 0.0, None, out=a)
        np.clip(b, 0.0, None, out=b)
        np.clip(theta, 0.0, None, out=theta)
        rescale_pass()
    for r in range(model.rank):
        nh = np.sqrt(max(0.0, theta[r] @ gram @ theta[r]))
        if nh < 1e-14 and rng is not None:
            log.warning("component %d: degenerate functional factor restarted", r)
            theta[r] = 1e-3 * rng.uniform(size=theta.shape[1])
    return model.with_factors(A=a, B=b, Theta=theta)


def descend(x, spec, config, kern, init, grad_source, record_plans=False):
    """Shared driver for the full and stochastic descent loops.

    ``grad_source(a, b, theta, xi) -> (gA, gB, gTheta, plan_seed)``
    supplies the step direction; everything else (clipping, step,
    projection, epoch bookkeeping, stop and divergence checks) is
    identical between the two solvers.
    """
    rng = np.random.default_rng(config.seed)
    x_vec, vmap, gram, _ = _full_context(x, kern)
    grid = vmap.grid
    if init is None:
        init = gradient_init(x, grid, kern, config.rank, rng)
    elif init.rank != config.rank:
        raise ValueError("init rank does not match config.rank")

    a, b, theta = init.A.copy(), init.B.copy(), init.Theta.copy()
    xi = gram @ theta.T
    loss0 = loss_values_mean(
        spec, predictions_at(a, b, xi, vmap.subjects, vmap.features, vmap.grid_idx), x_vec
    )
    blowup = 1e3 * max(abs(loss0), 1.0)
    losses = [loss0]
    times = [0.0]
    plan_seeds = []
    window = deque([(a.copy(), b.copy(), theta.copy())], maxlen=config.stop_window + 1)
    t0 = time.perf_counter()
    stopped = False
    iterations = 0

    for it in range(1, config.max_iters + 1):
        ga, gb, gtheta, plan_seed = grad_source(a, b, theta, xi)
        if plan_seed is not None:
            plan_seeds.append(plan_seed)
        if config.clip is not None:
            ga = clip_gradient(ga, config.clip)
            gb = clip_gradient(gb, config.clip)
            gtheta = clip_gradient(gtheta, config.clip)
        a = a - config.alpha * ga
        b = b - config.alpha * gb
        theta = theta - config.alpha * gtheta
        model = scale_and_project(
            FactorModel(a, b, theta, grid, kern),
            config.norm_bound,
            spec.nonneg,
            rng=rng,
            gram=gram,
        )
        a, b, theta = model.A.copy(), model.B.copy(), model.Theta.copy()
        xi = gram @ theta.T
        iterations = it

        if it % config.epoch_len == 0 or it == config.max_iters:
            cur = loss_values_mean(
                spec,
                predictions_at(a, b, xi, vmap.subjects, vmap.features, vmap.grid_idx),
                x_vec,
            )
            losses.append(cur)
            times.append(time.perf_counter() - t0)
            window.append((a.copy(), b.copy(), theta.copy()))
            if cur > blowup:
                raise DivergenceError(
                    f"loss {cur:.6g} exceeded 1e3 x initial loss {loss0:.6g} "
                    f"at iteration {it}"
                )
            if stop_triggered(losses, config.stop_eps, config.stop_window):
                a, b, theta = window[0]
                stopped = True
                break

    return FitResult(
        model=FactorModel(a, b, theta, grid, kern),
        losses=np.array(losses),
        wall_times=np.array(times),
        stopped_early=stopped,
        iterations=iterations,
        plan_seeds=plan_seeds if record_plans else [],
    )


def grkhs_td(
    x: UnalignedTensor,
    spec: LossSpec,
    config: GdConfig,
    init: FactorModel | None = None,
    kern: KernelSpec = KernelSpec("radial"),
) -> FitResult:
    """Generalized decomposition by full-gradient descent.

    Parameters
    ----------
    x:
        Observed ragged tensor.
    spec:
        Pairwise loss family with feasibility metadata; nonnegative
        families trigger the orthant clamp in the projection step.
    config:
        Step size, norm bound, iteration/epoch budget, optional gradient
        clipping, stop criterion, seed.
    init:
        Optional feasible starting model.
    kern:
        Reproducing kernel; radial by default (the nonnegative losses
        rely on its positivity).

    Returns
    -------
    FitResult
        Model plus the per-epoch loss trajectory (entry 0 is the
        initialization).
    """
    x_vec, vmap, gram, grows = _full_context(x, kern)
    w = 1.0 / x_vec.size

    def grad_source(a, b, theta, xi):
        xhat = predictions_at(a, b, xi, vmap.subjects, vmap.features, vmap.grid_idx)
        dvals = loss_mod.dmodel(spec, xhat, x_vec)
        ga, gb, gtheta = gradient_blocks(
            a, b, xi, vmap.subjects, vmap.features, vmap.grid_idx,
            grows, dvals, w, vmap.n, vmap.p,
        )
        return ga, gb, gtheta, None

    return descend(x, spec, config, kern, init, grad_source)
