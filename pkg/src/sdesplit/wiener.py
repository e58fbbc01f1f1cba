"""Seeded Wiener increments, path coarsening and Levy-area helpers.

Every random number in the package is drawn from a stream keyed by the
path seed plus a tuple of tags, so results are pure functions of
``(seed, shape arguments)``, whatever the number of worker processes.

Draw order for :func:`generate_path` is fixed: one standard-normal block
of shape ``(n_steps, 2, dims)``, i.e. step-major, main increment row
before auxiliary row, dimension fastest.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import RejectedInputError
from .linalg import as_matrix, mat_exp

__all__ = [
    "AUX_SCALE",
    "PathBlock",
    "StepContext",
    "WienerPath",
    "coarsen",
    "dump_path_csv",
    "generate_path",
    "iterated_integral",
    "keyed_generator",
    "levy_difference",
    "levy_pair",
    "levy_pair_values",
    "midpoint_exponentials",
    "null_path",
    "sample_seed",
    "stratonovich_matrix_integral",
    "stratonovich_sum",
]

# aux increment = AUX_SCALE * sqrt(dt) * N(0, 1), i.e. sqrt(dt / (2 pi^2)) * N(0, 1)
AUX_SCALE = 1.0 / (math.sqrt(2.0) * math.pi)

_MASK64 = (1 << 64) - 1


def _tag_int(tag):
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    tag = int(tag)
    if tag < 0:
        raise RejectedInputError(f"stream tags must be non-negative, got {tag}")
    return tag


def keyed_generator(seed, *tags):
    """numpy Generator for the stream keyed by ``(seed, *tags)``."""
    s = int(seed) & _MASK64
    entropy = [s & 0xFFFFFFFF, s >> 32, *(_tag_int(t) for t in tags)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sample_seed(master_seed, index):
    """64-bit seed of ensemble member ``index``; depends only on its arguments."""
    s = int(master_seed) & _MASK64
    seq = np.random.SeedSequence([s & 0xFFFFFFFF, s >> 32, zlib.crc32(b"sample"), int(index)])
    return int(seq.generate_state(1, np.uint64)[0])


def _positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        raise RejectedInputError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def _positive_real(value, name):
    value = float(value)
    if not (math.isfinite(value) and value > 0.0):
        raise RejectedInputError(f"{name} must be a positive finite real, got {value!r}")
    return value


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class StepContext:
    """Noise seen by one step: main and auxiliary increments, optional sub-grids.

    ``dW`` and ``dW_aux`` have shape ``(dims,)`` for a single path or
    ``(n_paths, dims)`` for a block. ``sub_dW`` holds a Brownian-bridge
    refinement of ``dW`` with shape ``(..., n_sub, dims)``; ``summative_dW``
    holds independent sub-increments for the summative splitting.

    ``null`` marks a driver that is identically zero (not merely a zero
    draw): its iterated integrals vanish too, so Ito correction terms such
    as ``(dW^2 - dt)/2`` are dropped and the steps reduce to their
    deterministic flows.
    """

    step_index: int
    dt: float
    dW: np.ndarray
    dW_aux: np.ndarray
    sub_dW: np.ndarray | None = None
    summative_dW: np.ndarray | None = None
    null: bool = False

    @property
    def dims(self):
        return self.dW.shape[-1]

    @classmethod
    def from_values(cls, dt, dW, dW_aux=None, *, step_index=0, sub_dW=None, summative_dW=None, null=False):
        """Build a context from explicit numbers (handy in tests and notebooks)."""
        dW = np.atleast_1d(np.asarray(dW, dtype=np.float64))
        aux = np.zeros_like(dW) if dW_aux is None else np.atleast_1d(np.asarray(dW_aux, dtype=np.float64))
        if aux.shape != dW.shape:
            raise RejectedInputError(f"dW_aux shape {aux.shape} != dW shape {dW.shape}")
        sub = None if sub_dW is None else np.asarray(sub_dW, dtype=np.float64)
        summ = None if summative_dW is None else np.asarray(summative_dW, dtype=np.float64)
        return cls(step_index, _positive_real(dt, "dt"), dW, aux, sub, summ, bool(null))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Increments of a ``dims``-dimensional Wiener process on a uniform grid."""

    dims: int
    n_steps: int
    dt: float
    increments: np.ndarray
    aux_increments: np.ndarray
    seed: int
    null: bool = False
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        _positive_int(self.dims, "dims")
        _positive_int(self.n_steps, "n_steps")
        _positive_real(self.dt, "dt")
        shape = (self.n_steps, self.dims)
        for name in ("increments", "aux_increments"):
            arr = _frozen(getattr(self, name))
            if arr.shape != shape:
                raise RejectedInputError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, arr)

    @property
    def t_end(self):
        return self.n_steps * self.dt

    def refined(self, n_sub):
        """Brownian-bridge refinement of every step into ``n_sub`` sub-increments.

        Shape ``(n_steps, n_sub, dims)``; each row sums to the step's main
        increment (up to rounding).
        """
        n_sub = _positive_int(n_sub, "n_sub")
        key = ("refine", n_sub)
        if key not in self._cache:
            if self.null:
                sub = np.zeros((self.n_steps, n_sub, self.dims))
            else:
                gen = keyed_generator(self.seed, "refine", self.n_steps, n_sub)
                z = gen.standard_normal((self.n_steps, n_sub, self.dims))
                z *= math.sqrt(self.dt / n_sub)
                sub = z - z.mean(axis=1, keepdims=True) + self.increments[:, None, :] / n_sub
            self._cache[key] = _frozen(sub)
        return self._cache[key]

    def summative(self, n_sub):
        """Independent sub-increments ``sqrt(dt/n_sub) N(0,1)``, shape ``(n_steps, n_sub, dims)``."""
        n_sub = _positive_int(n_sub, "n_sub")
        key = ("summative", n_sub)
        if key not in self._cache:
            if self.null:
                sub = np.zeros((self.n_steps, n_sub, self.dims))
            else:
                gen = keyed_generator(self.seed, "summative", self.n_steps, n_sub)
                sub = gen.standard_normal((self.n_steps, n_sub, self.dims)) * math.sqrt(self.dt / n_sub)
            self._cache[key] = _frozen(sub)
        return self._cache[key]

    def step(self, n, *, sub_steps=None, summative_steps=None):
        """StepContext for step ``n``, optionally with sub-grid noise attached."""
        if not 0 <= n < self.n_steps:
            raise RejectedInputError(f"step {n} out of range [0, {self.n_steps})")
        return StepContext(
            n,
            self.dt,
            self.increments[n],
            self.aux_increments[n],
            None if sub_steps is None else self.refined(sub_steps)[n],
            None if summative_steps is None else self.summative(summative_steps)[n],
            self.null,
        )


def generate_path(dims, n_steps, dt, seed):
    """Draw a Wiener path; the same arguments always give a bitwise-identical path."""
    dims = _positive_int(dims, "dims")
    n_steps = _positive_int(n_steps, "n_steps")
    dt = _positive_real(dt, "dt")
    z = keyed_generator(seed).standard_normal((n_steps, 2, dims))
    root = math.sqrt(dt)
    return WienerPath(dims, n_steps, dt, z[:, 0, :] * root, z[:, 1, :] * (AUX_SCALE * root), int(seed))


def null_path(dims, n_steps, dt, seed=0):
    """A path whose increments, auxiliary and sub-grid draws are all zero."""
    zeros = np.zeros((_positive_int(n_steps, "n_steps"), _positive_int(dims, "dims")))
    return WienerPath(dims, n_steps, dt, zeros, zeros, int(seed), null=True)


def coarsen(path, factor):
    """Merge every ``factor`` consecutive steps into one.

    Main increments are summed; auxiliary increments are redrawn from the
    stream keyed by ``(seed, "coarse", factor)``.
    """
    factor = _positive_int(factor, "factor")
    if path.n_steps % factor:
        raise RejectedInputError(f"factor {factor} does not divide n_steps={path.n_steps}")
    if factor == 1:
        return path
    n = path.n_steps // factor
    dt = path.dt * factor
    incr = path.increments.reshape(n, factor, path.dims).sum(axis=1)
    if path.null:
        aux = np.zeros_like(incr)
    else:
        gen = keyed_generator(path.seed, "coarse", factor, path.n_steps)
        aux = gen.standard_normal((n, path.dims)) * (AUX_SCALE * math.sqrt(dt))
    return WienerPath(path.dims, n, dt, incr, aux, path.seed, null=path.null)


def iterated_integral(jk, jl, ak0, al0):
    """Approximate double integral int dW_l int dW_k from one Fourier term."""
    return 0.5 * (jk * jl) - 0.5 * (al0 * jk - ak0 * jl)


def levy_pair_values(ji, jj, ai0, aj0):
    """Return ``(J_ji, J_ij)`` from increments and auxiliary coefficients.

    ``J_ji`` is snapped to the grid of ``ulp(J_i J_j)`` (a change of at
    most half an ulp of the product) and ``J_ij = J_i J_j - J_ji``, which
    makes ``J_ji + J_ij == J_i * J_j`` bit-exact whenever ``J_ij`` is
    representable. Under heavy cancellation (``|J_ij| > 2 |J_i J_j|``) no
    pair of doubles can satisfy the identity; there the sum is off by at
    most one ulp of ``max(|J_ji|, |J_ij|)``.
    """
    ji = np.asarray(ji, dtype=np.float64)
    jj = np.asarray(jj, dtype=np.float64)
    prod = ji * jj
    j_ji = 0.5 * prod - 0.5 * (ai0 * jj - aj0 * ji)
    unit = np.spacing(np.abs(prod))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        snapped = np.round(j_ji / unit) * unit
    j_ji = np.where((np.abs(j_ji) < np.abs(prod)) & (prod != 0.0), snapped, j_ji)
    j_ij = prod - j_ji
    return j_ji, j_ij


def levy_difference(ji, jj, ai0, aj0):
    """``J_ji - J_ij`` (the antisymmetric Levy term), computed directly."""
    return aj0 * ji - ai0 * jj


def levy_pair(path, step, i, j):
    """``(J_ji, J_ij)`` for dimensions ``i != j`` at the given step of ``path``."""
    if not 0 <= step < path.n_steps:
        raise RejectedInputError(f"step {step} out of range")
    for idx in (i, j):
        if not 0 <= idx < path.dims:
            raise RejectedInputError(f"dimension index {idx} out of range [0, {path.dims})")
    if i == j:
        raise RejectedInputError("levy_pair needs i != j; the diagonal is (dW_i^2 - dt)/2")
    dw = path.increments[step]
    aux = path.aux_increments[step]
    j_ji, j_ij = levy_pair_values(dw[i], dw[j], aux[i], aux[j])
    return float(j_ji), float(j_ij)


def midpoint_exponentials(a, dt, k):
    """Stack ``exp(a * (j + 1/2) * dt)`` for ``j = 0..k-1``."""
    a = as_matrix(a, "a")
    mids = (np.arange(k) + 0.5) * dt
    return mat_exp(a[None, :, :] * mids[:, None, None])


def stratonovich_sum(a, dt, increments, *, exps=None):
    """Midpoint-exponential sum ``sum_j exp(a t_{j+1/2}) dW_j``.

    ``increments`` has shape ``(..., k)``; the result has shape ``(..., m, m)``.
    Pass ``exps`` (from :func:`midpoint_exponentials`) to reuse exponentials.
    """
    incr = np.asarray(increments, dtype=np.float64)
    k = incr.shape[-1]
    if exps is None:
        exps = midpoint_exponentials(a, dt, k)
    return np.einsum("...j,jmn->...mn", incr, exps[:k])


def stratonovich_matrix_integral(a, path, dim, upto):
    """``C1(upto) = sum_j exp(a (t_j + t_{j+1})/2) dW_j`` over the first ``upto/dt`` steps."""
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise RejectedInputError("a must be square")
    if not 0 <= dim < path.dims:
        raise RejectedInputError(f"dimension index {dim} out of range")
    ratio = float(upto) / path.dt
    k = int(round(ratio))
    if upto < 0 or abs(ratio - k) > 1e-9 * max(1.0, ratio) or k > path.n_steps:
        raise RejectedInputError(f"upto={upto} is not a grid time of this path")
    if k == 0:
        return np.zeros_like(a)
    return stratonovich_sum(a, path.dt, path.increments[:k, dim])


class PathBlock:
    """A fixed group of equally shaped paths integrated together.

    Arrays are stacked with the sample axis first: ``increments`` has shape
    ``(n_paths, n_steps, dims)``.
    """

    def __init__(self, paths):
        paths = tuple(paths)
        if not paths:
            raise RejectedInputError("a PathBlock needs at least one path")
        first = paths[0]
        for p in paths[1:]:
            if (p.dims, p.n_steps) != (first.dims, first.n_steps) or p.dt != first.dt:
                raise RejectedInputError("all paths in a block must share dims, n_steps and dt")
        self.paths = paths
        self.dims = first.dims
        self.n_steps = first.n_steps
        self.dt = first.dt
        self.increments = np.stack([p.increments for p in paths])
        self.aux_increments = np.stack([p.aux_increments for p in paths])
        self.null = all(p.null for p in paths)
        self._cache = {}

    def __len__(self):
        return len(self.paths)

    def coarsen(self, factor):
        return PathBlock(coarsen(p, factor) for p in self.paths)

    def refined(self, n_sub):
        if ("refine", n_sub) not in self._cache:
            self._cache["refine", n_sub] = np.stack([p.refined(n_sub) for p in self.paths])
        return self._cache["refine", n_sub]

    def summative(self, n_sub):
        if ("summative", n_sub) not in self._cache:
            self._cache["summative", n_sub] = np.stack([p.summative(n_sub) for p in self.paths])
        return self._cache["summative", n_sub]

    def step(self, n, *, sub_steps=None, summative_steps=None):
        return StepContext(
            n,
            self.dt,
            self.increments[:, n],
            self.aux_increments[:, n],
            None if sub_steps is None else self.refined(sub_steps)[:, n],
            None if summative_steps is None else self.summative(summative_steps)[:, n],
            self.null,
        )


def dump_path_csv(path, target):
    """Write ``step,dim,dW,dW_aux`` rows (17 significant digits)."""
    with open(target, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "dim", "dW", "dW_aux"])
        for n in range(path.n_steps):
            for d in range(path.dims):
                writer.writerow(
                    [n, d, f"{path.increments[n, d]:.17g}", f"{path.aux_increments[n, d]:.17g}"]
                )
