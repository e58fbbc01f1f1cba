"""Error statistics for Monte-Carlo convergence studies.

Per-path errors are norms of end-time differences against a reference; the
aggregates below reduce them in path-index order so that results are
bitwise reproducible.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import RejectedInputError

__all__ = [
    "REPORT_FIELDS",
    "ConvergenceReport",
    "ErrorSample",
    "OrderFit",
    "error_norms",
    "error_variance",
    "estimate_order",
    "mean_bias",
    "strong_error",
    "time_avg_mse",
    "weak_error",
]


@dataclass(frozen=True)
class ErrorSample:
    """End-time error of one path; for linear problems only ``err_v`` is used (Euclidean norm)."""

    scheme: str
    dt: float
    path_index: int
    err_v: float
    err_mu: float = 0.0
    err_phi: float = 0.0

    def __post_init__(self):
        for name in ("err_v", "err_mu", "err_phi"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise RejectedInputError(f"{name} must be finite and >= 0, got {value!r}")

    @property
    def error(self):
        return self.err_v


def _errors(samples, component="err_v"):
    """Error values sorted by path index; plain numbers are accepted as well."""
    samples = list(samples)
    if not samples:
        raise RejectedInputError("need at least one error sample")
    if isinstance(samples[0], ErrorSample):
        samples = sorted(samples, key=lambda s: s.path_index)
        return np.array([getattr(s, component) for s in samples], dtype=np.float64)
    arr = np.asarray(samples, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise RejectedInputError("errors must be finite and non-negative")
    return arr


def strong_error(samples, component="err_v"):
    """Root-mean-square of per-path errors."""
    e = _errors(samples, component)
    return math.sqrt(float(np.mean(e * e)))


def weak_error(samples, component="err_v"):
    """Arithmetic mean of per-path errors."""
    return float(np.mean(_errors(samples, component)))


def error_variance(samples, component="err_v"):
    """Unbiased sample variance of per-path errors."""
    e = _errors(samples, component)
    if e.size < 2:
        raise RejectedInputError("variance needs at least two samples")
    return float(np.var(e, ddof=1))


def error_norms(values, reference):
    """Per-path Euclidean norms of ``values - reference`` (last axis is the state)."""
    diff = np.asarray(values, dtype=np.float64) - np.asarray(reference, dtype=np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def mean_bias(values, reference):
    """``|E[reference] - E[values]|`` (Euclidean over the state axis)."""
    values = np.asarray(values, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if values.shape != reference.shape or values.shape[0] < 1:
        raise RejectedInputError(f"shape mismatch {values.shape} vs {reference.shape}")
    d = reference.mean(axis=0) - values.mean(axis=0)
    return math.sqrt(float(np.sum(np.atleast_1d(d * d))))


def time_avg_mse(coarse_traj, ref_traj, dt, t_end):
    """``(1/T) sum_{i=1}^{N} dt (x(i dt) - x_ref(i dt))^2`` per component.

    ``coarse_traj`` has ``N + 1`` rows (``t = 0 .. T``); ``ref_traj`` is
    sampled on a grid that refines it by an integer factor. Returns an
    array with one entry per component (a float for 1-D trajectories).
    """
    coarse = np.asarray(coarse_traj, dtype=np.float64)
    ref = np.asarray(ref_traj, dtype=np.float64)
    n = coarse.shape[0] - 1
    if n < 1 or not math.isclose(n * dt, t_end, rel_tol=1e-9):
        raise RejectedInputError(f"coarse trajectory with {n} steps of {dt} does not span T={t_end}")
    if (ref.shape[0] - 1) % n or ref.shape[1:] != coarse.shape[1:]:
        raise RejectedInputError(
            f"reference grid ({ref.shape[0] - 1} steps) does not contain the coarse grid ({n} steps)"
        )
    factor = (ref.shape[0] - 1) // n
    diff = coarse[1:] - ref[factor::factor]
    out = np.sum(dt * diff * diff, axis=0) / t_end
    return float(out) if out.ndim == 0 else out


class OrderFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def estimate_order(points):
    """Least-squares fit of ``log(error)`` against ``log(dt)``."""
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise RejectedInputError("estimate_order needs at least three (dt, error) pairs")
    if np.any(~(pts > 0)) or np.any(~np.isfinite(pts)):
        raise RejectedInputError("dt and error values must be positive and finite")
    x = np.log(pts[:, 0])
    y = np.log(pts[:, 1])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise RejectedInputError("all dt values are equal")
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    syy = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if syy == 0.0 else 1.0 - float(np.sum(resid * resid)) / syy
    return OrderFit(slope, intercept, r2)


@dataclass
class ConvergenceReport:
    """Aggregated statistics for one (scheme, dt) pair."""

    scheme: str
    dt: float
    n_paths: int
    strong_error: float
    weak_error: float
    mean_bias: float
    variance: float
    time_avg_mse: float
    runtime_seconds: float
    clamp_events: int
    excluded_paths: int
    per_path_errors: tuple = ()
    component_errors: dict | None = None

    def row(self):
        """Values of the tabular columns, in column order."""
        return [getattr(self, name) for name in REPORT_FIELDS]

    def to_dict(self, full=True):
        d = asdict(self)
        if not full:
            d = {k: d[k] for k in REPORT_FIELDS}
        else:
            d["per_path_errors"] = list(self.per_path_errors)
        return d


REPORT_FIELDS = tuple(
    f.name for f in fields(ConvergenceReport) if f.name not in ("per_path_errors", "component_errors")
)
