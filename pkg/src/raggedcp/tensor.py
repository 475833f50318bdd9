"""Ragged-tensor data model shared by all solvers.

An order-3 tensor with two tabular modes (subjects, features) and one
functional mode observed at per-subject time sets T_i in [0, 1]. The
stacked observation vector x of length |Omega| = p * sum_i |T_i| is laid
out subject-major, then feature, then time:

    x = (X_11(T_1), ..., X_1p(T_1), X_21(T_2), ..., X_np(T_n))

Factor models carry tabular factors A (n x R), B (p x R) and a kernel
coefficient table Theta (R x |T|) over the global grid T = union_i T_i,
realizing the functional factors as

    xi_r(t) = sum_s Theta[r, s] * K(t, t_s).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec

# Timestamps closer than this after rescaling are considered equal when
# building the global grid.
GRID_MERGE_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


class TensorError(ValueError):
    """Invalid ragged-tensor construction or use."""


@dataclass(frozen=True)
class UnalignedTensor:
    """Ragged observations X_ij(t) for i in [n], j in [p], t in T_i.

    ``times[i]`` is the sorted array T_i; ``values[i]`` has shape
    (len(T_i), p), row s holding the p feature observations at T_i[s].
    Every stored time point carries all p features.
    """

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) == 0:
            raise TensorError("tensor needs at least one subject")
        if len(self.times) != len(self.values):
            raise TensorError("times/values subject counts differ")
        first = np.asarray(self.values[0], dtype=float)
        if first.ndim != 2:
            raise TensorError("per-subject values must be (|T_i|, p) arrays")
        p = first.shape[1]
        times = []
        values = []
        for i, (t, v) in enumerate(zip(self.times, self.values)):
            t = np.asarray(t, dtype=float)
            v = np.asarray(v, dtype=float)
            if t.ndim != 1 or t.size == 0:
                raise TensorError(f"subject {i}: empty or non-1d time set")
            if v.shape != (t.size, p):
                raise TensorError(
                    f"subject {i}: values shape {v.shape} != ({t.size}, {p})"
                )
            if np.any(t < 0.0) or np.any(t > 1.0):
                raise TensorError(f"subject {i}: timestamps outside [0, 1]")
            if np.any(np.diff(t) <= GRID_MERGE_TOL):
                raise TensorError(f"subject {i}: unsorted or duplicate timestamps")
            times.append(_readonly(t))
            values.append(_readonly(v))
        object.__setattr__(self, "times", tuple(times))
        object.__setattr__(self, "values", tuple(values))

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def p(self) -> int:
        return self.values[0].shape[1]

    @property
    def omega(self) -> int:
        return self.p * sum(t.size for t in self.times)

    def block_sizes(self) -> np.ndarray:
        """Per-subject |T_i|."""
        return np.array([t.size for t in self.times])


@dataclass(frozen=True)
class GlobalGrid:
    """Sorted, deduplicated union T of all per-subject time sets."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise TensorError("grid must be a nonempty 1-d array")
        if np.any(np.diff(pts) <= GRID_MERGE_TOL):
            raise TensorError("grid points must be strictly increasing")
        object.__setattr__(self, "points", _readonly(pts))

    @classmethod
    def from_tensor(cls, x: "UnalignedTensor") -> "GlobalGrid":
        merged = np.sort(np.concatenate([t for t in x.times]))
        keep = np.empty(merged.size, dtype=bool)
        keep[0] = True
        keep[1:] = np.diff(merged) > GRID_MERGE_TOL
        return cls(merged[keep])

    @property
    def size(self) -> int:
        return self.points.size

    def index(self, t):
        """Grid position of timestamp(s) ``t`` (must be on the grid)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.points, t - GRID_MERGE_TOL)
        idx = np.minimum(idx, self.size - 1)
        if np.any(np.abs(self.points[idx] - t) > GRID_MERGE_TOL):
            raise TensorError("timestamp not on the global grid")
        if t.ndim == 0:
            return int(idx)
        return idx


@dataclass(frozen=True)
class VectorizationMap:
    """Bijection k <-> (i_k, j_k, t_k) fixing the stacked-vector order.

    Rows are subject-major, feature-then-time, exactly the layout of the
    stacked observation vector. ``grid_idx[k]`` is the global-grid
    position of t_k.
    """

    subjects: np.ndarray
    features: np.ndarray
    time_pos: np.ndarray
    grid_idx: np.ndarray
    offsets: np.ndarray  # (n + 1,) block starts, block i spans p*|T_i| rows
    block_sizes: np.ndarray  # per-subject |T_i|
    n: int
    p: int
    grid: GlobalGrid

    @classmethod
    def build(cls, x: "UnalignedTensor", grid: GlobalGrid | None = None):
        grid = grid or GlobalGrid.from_tensor(x)
        n, p = x.n, x.p
        sizes = x.block_sizes()
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(p * sizes, out=offsets[1:])
        subs, feats, tpos, gidx = [], [], [], []
        for i in range(n):
            m = sizes[i]
            gi = grid.index(x.times[i])
            subs.append(np.full(p * m, i, dtype=np.int64))
            feats.append(np.repeat(np.arange(p, dtype=np.int64), m))
            tpos.append(np.tile(np.arange(m, dtype=np.int64), p))
            gidx.append(np.tile(gi, p))
        return cls(
            subjects=np.concatenate(subs),
            features=np.concatenate(feats),
            time_pos=np.concatenate(tpos),
            grid_idx=np.concatenate(gidx),
            offsets=offsets,
            block_sizes=sizes,
            n=n,
            p=p,
            grid=grid,
        )

    @property
    def omega(self) -> int:
        return self.subjects.size

    def index(self, i: int, j: int, time_pos: int) -> int:
        """Stacked-vector position of (subject, feature, time slot)."""
        return int(self.offsets[i] + j * self.block_sizes[i] + time_pos)

    def entry(self, k: int):
        """Inverse lookup: (i_k, j_k, time slot, grid index)."""
        return (
            int(self.subjects[k]),
            int(self.features[k]),
            int(self.time_pos[k]),
            int(self.grid_idx[k]),
        )


def vectorize(x: UnalignedTensor):
    """Stack the ragged tensor into (x_vec, VectorizationMap)."""
    vmap = VectorizationMap.build(x)
    # values[i] is (|T_i|, p); the block for subject i is feature-major.
    vec = np.concatenate([v.T.ravel() for v in x.values])
    return vec, vmap


def devectorize(vec: np.ndarray, vmap: VectorizationMap) -> UnalignedTensor:
    """Inverse of :func:`vectorize` given the same map."""
    times, values = [], []
    for i in range(vmap.n):
        m = int(vmap.block_sizes[i])
        block = vec[vmap.offsets[i] : vmap.offsets[i + 1]].reshape(vmap.p, m)
        gi = vmap.grid_idx[vmap.offsets[i] : vmap.offsets[i] + m]
        times.append(vmap.grid.points[gi])
        values.append(block.T.copy())
    return UnalignedTensor(tuple(times), tuple(values))


def build_tensor(records, rescale: bool = False) -> UnalignedTensor:
    """Assemble a validated tensor from (subject, feature, time, value) rows.

    Subject and feature ids may be arbitrary hashables; they are relabeled
    to dense 0-based indices by sorted label order (numeric when every
    label parses as a number). With ``rescale`` set, timestamps are
    min-max rescaled to [0, 1] before validation.

    Raises
    ------
    TensorError
        On duplicate (subject, feature, time) triples, incomplete feature
        vectors at a time point, or out-of-range timestamps when
        rescaling is disabled.
    """
    records = list(records)
    if not records:
        raise TensorError("no records")
    subj_labels = relabel([r[0] for r in records])
    feat_labels = relabel([r[1] for r in records])
    subj_of = {lab: i for i, lab in enumerate(subj_labels)}
    feat_of = {lab: j for j, lab in enumerate(feat_labels)}
    n, p = len(subj_labels), len(feat_labels)

    raw_times = np.array([float(r[2]) for r in records])
    if rescale:
        lo, hi = raw_times.min(), raw_times.max()
        span = hi - lo
        raw_times = (raw_times - lo) / span if span > 0 else np.zeros_like(raw_times)
    elif np.any(raw_times < 0.0) or np.any(raw_times > 1.0):
        raise TensorError(
            "timestamps outside [0, 1]; pass rescale=True to min-max rescale"
        )

    per_subject: list[dict] = [dict() for _ in range(n)]
    for rec, t in zip(records, raw_times):
        i, j, v = subj_of[rec[0]], feat_of[rec[1]], float(rec[3])
        slot = per_subject[i].setdefault(round(t / GRID_MERGE_TOL), [t, {}])
        if j in slot[1]:
            raise TensorError(
                f"duplicate (subject={rec[0]!r}, feature={rec[1]!r}, time={rec[2]!r})"
            )
        slot[1][j] = v

    times, values = [], []
    for i in range(n):
        slots = sorted(per_subject[i].values(), key=lambda s: s[0])
        if not slots:
            raise TensorError(f"subject {subj_labels[i]!r} has no observations")
        ti = np.array([s[0] for s in slots])
        vi = np.empty((len(slots), p))
        for s, (_, feats) in enumerate(slots):
            if len(feats) != p:
                missing = sorted(set(range(p)) - set(feats))
                raise TensorError(
                    f"subject {subj_labels[i]!r}, time {ti[s]!r}: missing features "
                    f"{[feat_labels[j] for j in missing]}"
                )
            for j, v in feats.items():
                vi[s, j] = v
        times.append(ti)
        values.append(vi)
    return UnalignedTensor(tuple(times), tuple(values))


def relabel(labels) -> list:
    """Sorted unique labels (numeric order when all parse as numbers)."""
    uniq = sorted(set(labels), key=str)
    try:
        return sorted(uniq, key=float)
    except (TypeError, ValueError):
        return uniq


@dataclass(frozen=True)
class FactorModel:
    """Rank-R model: tabular factors plus kernel-coefficient table.

    Realizes xi_r(t) = sum_s Theta[r, s] * K(t, grid.points[s]).
    """

    A: np.ndarray  # (n, R)
    B: np.ndarray  # (p, R)
    Theta: np.ndarray  # (R, |T|)
    grid: GlobalGrid
    kernel: KernelSpec

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        Theta = np.asarray(self.Theta, dtype=float)
        if A.ndim != 2 or B.ndim != 2 or Theta.ndim != 2:
            raise TensorError("A, B (n|p x R) and Theta (R x |T|) must be 2-d")
        if not (A.shape[1] == B.shape[1] == Theta.shape[0]):
            raise TensorError(
                f"rank mismatch: A {A.shape}, B {B.shape}, Theta {Theta.shape}"
            )
        if Theta.shape[1] != self.grid.size:
            raise TensorError("Theta column count must equal the grid size")
        for name, a in (("A", A), ("B", B), ("Theta", Theta)):
            if not np.all(np.isfinite(a)):
                raise TensorError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "Theta", _readonly(Theta))

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    def with_factors(self, A=None, B=None, Theta=None) -> "FactorModel":
        return FactorModel(
            A if A is not None else self.A,
            B if B is not None else self.B,
            Theta if Theta is not None else self.Theta,
            self.grid,
            self.kernel,
        )

    def xi_on_grid(self) -> np.ndarray:
        """(|T|, R) table of xi_r evaluated at every grid point."""
        g = self.kernel.gram(self.grid.points, self.grid.points)
        return g @ self.Theta.T


def evaluate_xi(model: FactorModel, r: int, t) -> float:
    """xi_r(t) = sum_s Theta[r, s] K(t, t_s) for any t in [0, 1].

    Out-of-sample t (not on the grid) is allowed; component indices are
    0-based.
    """
    if not 0 <= r < model.rank:
        raise IndexError(f"component {r} out of range for rank {model.rank}")
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        row = model.kernel.eval(t, model.grid.points)
        return float(row @ model.Theta[r])
    rows = model.kernel.eval(t[..., None], model.grid.points)
    return rows @ model.Theta[r]


def reconstruct(model: FactorModel, vmap: VectorizationMap) -> np.ndarray:
    """Model predictions x_hat in stacked-vector order."""
    if model.A.shape[0] != vmap.n or model.B.shape[0] != vmap.p:
        raise TensorError("model dimensions do not match the vectorization map")
    if model.grid.size != vmap.grid.size or not np.array_equal(
        model.grid.points, vmap.grid.points
    ):
        raise TensorError("model grid does not match the vectorization map")
    xi = model.xi_on_grid()
    prod = model.A[vmap.subjects] * model.B[vmap.features] * xi[vmap.grid_idx]
    return prod.sum(axis=1)


def design_rows(A, B, grid, kern, subjects, features, grid_idx) -> np.ndarray:
    """Design block rows for arbitrary (subject, feature, grid-point) triples.

    Row l of block r is A[subjects[l], r] * B[features[l], r] * K(t_l, T);
    blocks are stacked column-wise into an (L, R*|T|) matrix so that
    multiplying by the row-major stacking of Theta reproduces the model.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    g = kern.gram(grid.points, grid.points)
    rows = g[np.asarray(grid_idx)]
    coef = A[np.asarray(subjects)] * B[np.asarray(features)]
    nt = grid.size
    rank = A.shape[1]
    out = np.empty((rows.shape[0], rank * nt))
    for r in range(rank):
        np.multiply(rows, coef[:, r : r + 1], out=out[:, r * nt : (r + 1) * nt])
    return out


def build_design(A, B, grid: GlobalGrid, kern: KernelSpec, vmap: VectorizationMap):
    """Full |Omega| x (R |T|) design matrix D = [D_1, ..., D_R].

    D @ theta_vec equals :func:`reconstruct` for theta_vec the row-major
    stacking (Theta[0, 0], ..., Theta[0, |T|-1], Theta[1, 0], ...).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2:
        raise TensorError("A and B must be 2-d factor tables")
    if A.shape[0] != vmap.n or B.shape[0] != vmap.p or A.shape[1] != B.shape[1]:
        raise TensorError("factor dimensions do not match the vectorization map")
    return design_rows(A, B, grid, kern, vmap.subjects, vmap.features, vmap.grid_idx)


def residual_norms(x_vec: np.ndarray, xhat_vec: np.ndarray):
    """(sum (x - xhat)^2, sum x^2) over the stacked vectors."""
    d = x_vec - xhat_vec
    return float(d @ d), float(x_vec @ x_vec)


def relative_loss_from_vectors(x_vec: np.ndarray, xhat_vec: np.ndarray) -> float:
    num, den = residual_norms(x_vec, xhat_vec)
    if den == 0.0:
        raise TensorError("relative loss undefined: all observations are zero")
    return num / den


def relative_loss(x: UnalignedTensor, model: FactorModel) -> float:
    """sum (X - X_hat)^2 / sum X^2 over all observed triples."""
    vec, vmap = vectorize(x)
    return relative_loss_from_vectors(vec, reconstruct(model, vmap))


def rkhs_norm_sq(model: FactorModel, r: int) -> float:
    """Squared RKHS norm theta_r^T K(T, T) theta_r, clamped at 0."""
    if not 0 <= r < model.rank:
        raise IndexError(f"component {r} out of range for rank {model.rank}")
    g = model.kernel.gram(model.grid.points, model.grid.points)
    th = model.Theta[r]
    return max(0.0, float(th @ g @ th))
