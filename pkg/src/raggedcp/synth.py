"""Seeded generators for the benchmark simulation protocols.

Ground-truth rank-R signals are built from uniform tabular factors and
smooth functional factors expanded in the first ten cosine basis
functions, observed on ragged per-subject subsets of a common fine grid,
with Gaussian or Poisson observation noise:

    signal_ij(t) = sum_r 10 sqrt(r) a_ri b_rj xi_r(t)

The Poisson variant shifts the functional factors by +1 to keep rates
positive and adds a small delta to the rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import UnalignedTensor

FINE_GRID_DENOM = 739
N_BASIS = 10


@dataclass(frozen=True)
class SynthConfig:
    """Simulation sizes: grid_size points are drawn from the fine grid
    {1/739, ..., 1}, each subject observes between obs_min and obs_max of
    them, and the signal has rank_true components scaled by 10 sqrt(r)."""

    n: int = 60
    p: int = 51
    grid_size: int = 251
    obs_min: int = 8
    obs_max: int = 20
    rank_true: int = 5
    noise_var: float = 1.0
    delta: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.obs_min <= self.obs_max <= self.grid_size:
            raise ValueError("need 1 <= obs_min <= obs_max <= grid_size")
        if self.grid_size > FINE_GRID_DENOM:
            raise ValueError(f"grid_size cannot exceed {FINE_GRID_DENOM}")
        if min(self.n, self.p, self.rank_true) < 1 or self.noise_var < 0:
            raise ValueError("bad synthetic sizes")


def cosine_basis(i: int, s):
    """Orthonormal cosine basis on [0, 1]: u_1 = 1, u_i = sqrt(2) cos((i-1) pi s).

    ``i`` is 1-based and limited to the first ten functions.
    """
    if not 1 <= i <= N_BASIS:
        raise ValueError(f"basis index must be in 1..{N_BASIS}")
    s = np.asarray(s, dtype=float)
    if i == 1:
        out = np.ones_like(s)
    else:
        out = np.sqrt(2.0) * np.cos((i - 1) * np.pi * s)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class GroundTruth:
    """True factors behind a simulated tensor.

    ``xi_coeffs[r]`` are the ten cosine coefficients of xi_r (the +1
    shift of the Poisson protocol is recorded in ``xi_shift``);
    ``signal`` holds the noise-free values on the observed triples, laid
    out like the observed tensor.
    """

    a: np.ndarray  # (n, R)
    b: np.ndarray  # (p, R)
    xi_coeffs: np.ndarray  # (R, 10)
    xi_shift: float
    grid: np.ndarray  # the size-D time grid the subjects draw from
    signal: UnalignedTensor

    def xi(self, r: int, s):
        """True functional factor r (0-based) at time(s) s."""
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s) + self.xi_shift
        for i in range(N_BASIS):
            out = out + self.xi_coeffs[r, i] * cosine_basis(i + 1, s)
        if out.ndim == 0:
            return float(out)
        return out

    @property
    def rank(self) -> int:
        return self.xi_coeffs.shape[0]


def _draw_structure(cfg: SynthConfig, rng, xi_shift: float):
    """Shared draw order: factors, grid, xi coefficients, subject time sets."""
    r_true = cfg.rank_true
    a = rng.uniform(size=(cfg.n, r_true))
    b = rng.uniform(size=(cfg.p, r_true))
    fine = np.arange(1, FINE_GRID_DENOM + 1) / FINE_GRID_DENOM
    grid = np.sort(rng.choice(fine, size=cfg.grid_size, replace=False))
    coeffs = np.empty((r_true, N_BASIS))
    for i in range(N_BASIS):
        coeffs[:, i] = rng.uniform(-1.0 / (i + 1), 1.0 / (i + 1), size=r_true)
    counts = rng.integers(cfg.obs_min, cfg.obs_max + 1, size=cfg.n)
    times = tuple(
        np.sort(rng.choice(grid, size=int(d), replace=False)) for d in counts
    )

    scale = 10.0 * np.sqrt(np.arange(1, r_true + 1))
    signal_vals = []
    for i in range(cfg.n):
        xi_t = np.empty((times[i].size, r_true))
        for r in range(r_true):
            xi_t[:, r] = xi_shift + sum(
                coeffs[r, k] * cosine_basis(k + 1, times[i]) for k in range(N_BASIS)
            )
        signal_vals.append(np.einsum("tr,jr->tj", xi_t * (scale * a[i]), b))
    signal = UnalignedTensor(times, tuple(signal_vals))
    truth = GroundTruth(
        a=a, b=b, xi_coeffs=coeffs, xi_shift=xi_shift, grid=grid, signal=signal
    )
    return truth


def gen_gaussian(cfg: SynthConfig, rng=None):
    """Gaussian protocol: observations Normal(signal, noise_var).

    Returns (observed tensor, GroundTruth). Pure function of (cfg, seed):
    when ``rng`` is omitted it is seeded from cfg.seed.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    truth = _draw_structure(cfg, rng, xi_shift=0.0)
    sd = np.sqrt(cfg.noise_var)
    values = tuple(
        v + rng.normal(scale=sd, size=v.shape) if sd > 0 else v.copy()
        for v in truth.signal.values
    )
    return UnalignedTensor(truth.signal.times, values), truth


def gen_poisson(cfg: SynthConfig, rng=None):
    """Poisson protocol: xi_r shifted by +1, observations Poisson(signal + delta).

    Aborts if any rate is negative, which would indicate a generator bug
    (the +1 shift keeps typical draws positive but is checked, not
    assumed).
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    truth = _draw_structure(cfg, rng, xi_shift=1.0)
    values = []
    for v in truth.signal.values:
        rate = v + cfg.delta
        if np.any(rate < 0.0):
            raise RuntimeError("negative Poisson rate: generator bug")
        values.append(rng.poisson(rate).astype(float))
    return UnalignedTensor(truth.signal.times, tuple(values)), truth
