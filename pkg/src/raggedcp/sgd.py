"""Stochastic gradient descent over sampled sub-tensors.

Each iteration draws a fresh sketch plan, evaluates the pairwise-loss
derivatives only at the sampled triples, and assembles the three
gradient blocks through the same accumulation path as the full-gradient
solver, so full-coverage sampling reproduces it exactly.

Normalization: all three stochastic gradients are divided by the sample
count s1*s2*s3 (exactly unbiased when all |T_i| are equal). With
``importance_weighting`` each sampled term is weighted by
n*p*|T_{i_k}| / |Omega|, which makes the estimator exactly unbiased for
ragged time sets. ``paper_step_factor`` additionally multiplies the
theta step by |Omega| / (s1*s2*s3), reproducing the literal step rule of
the stochastic algorithm (which double-corrects that block; the A and B
steps come out identical either way).
"""

from __future__ import annotations

import numpy as np

from . import losses as loss_mod
from .gradient import GdConfig, descend, gradient_blocks, predictions_at
from .kernels import KernelSpec
from .losses import LossSpec
from .result import FitResult
from .sketch import SketchPlan, plan_triples, sample_plan
from .tensor import FactorModel, UnalignedTensor, vectorize


def stochastic_grads(
    x: UnalignedTensor,
    model: FactorModel,
    spec: LossSpec,
    plan: SketchPlan,
    importance_weighting: bool = False,
):
    """(gA, gB, gTheta) estimated from the sampled triples of ``plan``.

    dmodel is evaluated only at sampled triples (zero elsewhere); rows of
    subjects or features the plan never touches receive zero gradient.
    gTheta is returned in (R, |T|) table form.
    """
    if plan.n_rows() == 0:
        raise ValueError("empty sketch plan")
    xi = model.xi_on_grid()
    gram = model.kernel.gram(model.grid.points, model.grid.points)
    subs, feats, gidx, vals = plan_triples(plan, x, model.grid)
    xhat = predictions_at(model.A, model.B, xi, subs, feats, gidx)
    dvals = loss_mod.dmodel(spec, xhat, vals)
    weights = sample_weights(x, plan, subs, importance_weighting)
    return gradient_blocks(
        model.A, model.B, xi, subs, feats, gidx, gram[gidx],
        dvals, weights, x.n, x.p,
    )


def sample_weights(x: UnalignedTensor, plan: SketchPlan, subs, importance_weighting):
    """Per-term averaging weights: 1/|sampled|, or the exactly unbiased
    n*p*|T_i|/|Omega| correction divided by the sample count."""
    count = plan.n_rows()
    if not importance_weighting:
        return 1.0 / count
    sizes = x.block_sizes()
    return (x.n * x.p / x.omega) * sizes[subs] / count


def s_grkhs_td(
    x: UnalignedTensor,
    spec: LossSpec,
    config: GdConfig,
    s1: int,
    s2: int,
    s3: int,
    init: FactorModel | None = None,
    kern: KernelSpec = KernelSpec("radial"),
    importance_weighting: bool = False,
    paper_step_factor: bool = False,
    plan_fn=None,
) -> FitResult:
    """Generalized decomposition by stochastic gradient descent.

    Per iteration: draw a plan of s1 subjects, s2 features, s3 times per
    subject draw; form the stochastic gradients; clip, step, rescale and
    project as in the full-gradient solver. The full-data loss is
    evaluated at epoch ends only. ``plan_fn(x, s1, s2, s3, rng)``
    overrides plan sampling (reduction tests).

    Returns a :class:`FitResult` with per-iteration ``plan_seeds``.
    """
    plan_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(1,))
    )
    draw_plan = plan_fn or sample_plan
    _, vmap = vectorize(x)
    grid = vmap.grid
    gram = kern.gram(grid.points, grid.points)
    omega = x.omega
    sizes = x.block_sizes()

    def grad_source(a, b, theta, xi):
        plan_seed = int(plan_rng.integers(2**63))
        plan = draw_plan(x, s1, s2, s3, np.random.default_rng(plan_seed))
        subs, feats, gidx, vals = plan_triples(plan, x, grid)
        xhat = predictions_at(a, b, xi, subs, feats, gidx)
        dvals = loss_mod.dmodel(spec, xhat, vals)
        count = plan.n_rows()
        if importance_weighting:
            weights = (x.n * x.p / omega) * sizes[subs] / count
        else:
            weights = 1.0 / count
        ga, gb, gtheta = gradient_blocks(
            a, b, xi, subs, feats, gidx, gram[gidx], dvals, weights, x.n, x.p
        )
        if paper_step_factor:
            gtheta = gtheta * (omega / count)
        return ga, gb, gtheta, plan_seed

    return descend(x, spec, config, kern, init, grad_source, record_plans=True)
