"""Common-noise convergence experiments.

Each Monte-Carlo sample owns one fine Wiener path at the reference
resolution (seeded from the master seed and the sample index). The
reference is integrated on that path; every scheme and step size runs on
the path coarsened to its grid, so all runs share the same main noise.
Samples are processed in fixed-size blocks; blocks may run in worker
processes and are always reduced in sample order, so output does not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import statistics
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigurationError, RejectedInputError
from .iterative import C3_VARIANTS, QUAD_RULES, IterConfig, coulomb_taylor_step, iter_scalar_step
from .linalg import commutator, mat_exp
from .metrics import REPORT_FIELDS, ConvergenceReport, error_variance, strong_error, weak_error
from .problems import CoulombProblem, resolve_problem
from .wiener import PathBlock, dump_path_csv, generate_path, levy_difference, null_path, sample_seed

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "RuntimeOrderingWarning",
    "SchemeSpec",
    "check_compatibility",
    "emit_plot_data",
    "emit_report",
    "format_report",
    "parse_report",
    "parse_scheme",
    "run_experiment",
    "split_scheme_list",
]

SCHEME_KINDS = (
    "em", "milstein", "milstein_full", "ab_split", "summative", "iter", "coulomb_relax", "coulomb_taylor",
)
COULOMB_SCHEMES = ("em", "milstein", "coulomb_relax", "coulomb_taylor")
# expected per-step cost order for the soft runtime check
COST_RANK = {
    "em": 0, "milstein": 1, "milstein_full": 2, "iter": 3, "coulomb_relax": 3, "coulomb_taylor": 3,
}
MAX_BLOCK = 64
BLOCK_BUDGET = 1 << 21  # floats of fine trajectory held per block
DEFAULT_COULOMB_FINE_DT = 1e-5


class RuntimeOrderingWarning(UserWarning):
    """Measured per-step cost does not follow em <= milstein <= milstein_full <= iterative."""


@dataclass(frozen=True)
class SchemeSpec:
    kind: str
    n_sub: int = 0
    iterations: int = 0
    sweeps: int = 0
    quad_rule: str = ""

    @property
    def label(self):
        if self.kind == "summative":
            return f"summative:{self.n_sub}"
        if self.kind == "iter":
            return f"iter:{self.iterations}"
        if self.kind.startswith("coulomb_"):
            return f"{self.kind}:{self.sweeps},{self.quad_rule}"
        return self.kind


def _positive_int_text(text, what):
    try:
        value = int(text)
    except ValueError:
        raise ConfigurationError(f"{what} must be an integer, got {text!r}") from None
    if value < 1:
        raise ConfigurationError(f"{what} must be positive, got {value}")
    return value


def parse_scheme(text, *, sweeps=2, quad_rule="trapezoid"):
    """Parse ``em``, ``summative:8``, ``iter:2``, ``coulomb_relax:3,simpson`` and friends."""
    name, _, arg = text.strip().partition(":")
    if name not in SCHEME_KINDS:
        raise ConfigurationError(f"unknown scheme {text!r}; choose from {', '.join(SCHEME_KINDS)}")
    if name == "summative":
        return SchemeSpec(name, n_sub=_positive_int_text(arg, "summative sub-step count"))
    if name == "iter":
        k = _positive_int_text(arg, "iteration count")
        if k > 3:
            raise ConfigurationError(f"iteration count must be 1, 2 or 3, got {k}")
        return SchemeSpec(name, iterations=k)
    if name.startswith("coulomb_"):
        s, rule = sweeps, quad_rule
        for part in filter(None, re.split(r"[,:/]", arg)):
            if part in QUAD_RULES:
                rule = part
            else:
                s = _positive_int_text(part, "sweep count")
        if rule not in QUAD_RULES:
            raise ConfigurationError(f"quadrature rule must be one of {QUAD_RULES}, got {rule!r}")
        return SchemeSpec(name, sweeps=s, quad_rule=rule)
    if arg:
        raise ConfigurationError(f"scheme {name!r} takes no parameter (got {text!r})")
    return SchemeSpec(name)


def split_scheme_list(text):
    """Split a comma list, keeping ``coulomb_relax:3,simpson`` together."""
    items = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        attaches = token in QUAD_RULES or token.isdigit()
        if attaches and items and items[-1].startswith("coulomb_"):
            items[-1] += "," + token
        else:
            items.append(token)
    return items


def check_compatibility(problem, spec):
    """Raise ConfigurationError when ``spec`` cannot run on ``problem``."""
    label = spec.label
    if isinstance(problem, CoulombProblem):
        if spec.kind not in COULOMB_SCHEMES:
            raise ConfigurationError(
                f"scheme {label!r} is not available for problem {problem.name!r} "
                f"(Coulomb schemes: {', '.join(COULOMB_SCHEMES)})"
            )
        return
    if spec.kind.startswith("coulomb_"):
        raise ConfigurationError(f"scheme {label!r} needs the coulomb problem, not {problem.name!r}")
    single_only = spec.kind in ("ab_split", "summative") or (spec.kind == "iter" and spec.iterations == 3)
    if single_only and problem.n_noise != 1:
        raise ConfigurationError(
            f"scheme {label!r} needs a single noise operator; problem {problem.name!r} has {problem.n_noise}"
        )


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "scalar10"
    schemes: tuple = ("em", "milstein")
    dt_list: tuple = (0.1, 0.05, 0.025)
    n_paths: int = 1000
    t_end: float = 1.0
    master_seed: int = 0
    reference: str | None = None
    output: str | None = None
    format: str = "csv"
    zero_noise: bool = False
    v0: float | None = None
    mu0: float | None = None
    phi0: float | None = None
    sweeps: int = 2
    quad_rule: str = "trapezoid"
    iter_substeps: int = 10
    c3_variant: str = "riemann"
    workers: int = 1
    max_failures: float = 0.1
    record_timing: bool = True
    timing_repeats: int = 3
    dump_noise: str | None = None
    plot_dir: str | None = None

    def __post_init__(self):
        schemes = self.schemes
        if isinstance(schemes, str):
            schemes = split_scheme_list(schemes)
        object.__setattr__(self, "schemes", tuple(schemes))
        dts = self.dt_list
        if isinstance(dts, str):
            dts = [float(x) for x in dts.split(",") if x.strip()]
        object.__setattr__(self, "dt_list", tuple(float(x) for x in np.atleast_1d(dts)))
        if not self.schemes:
            raise ConfigurationError("no schemes selected")
        if not self.dt_list or any(not (math.isfinite(d) and d > 0) for d in self.dt_list):
            raise ConfigurationError(f"dt values must be positive, got {self.dt_list}")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigurationError(f"n_paths must be a positive integer, got {self.n_paths}")
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")
        if self.format not in ("csv", "json"):
            raise ConfigurationError(f"format must be csv or json, got {self.format!r}")
        if self.quad_rule not in QUAD_RULES:
            raise ConfigurationError(f"quad_rule must be one of {QUAD_RULES}, got {self.quad_rule!r}")
        if self.c3_variant not in C3_VARIANTS:
            raise ConfigurationError(f"c3_variant must be one of {C3_VARIANTS}, got {self.c3_variant!r}")
        for name in ("sweeps", "iter_substeps", "workers", "timing_repeats"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0.0 <= self.max_failures <= 1.0:
            raise ConfigurationError("max_failures is a fraction in [0, 1]")

    def build_problem(self):
        return resolve_problem(self.problem, t_end=self.t_end, v0=self.v0, mu0=self.mu0, phi0=self.phi0)

    def scheme_specs(self):
        return [parse_scheme(s, sweeps=self.sweeps, quad_rule=self.quad_rule) for s in self.schemes]

    def iter_config(self, spec):
        try:
            if spec.kind == "iter":
                return IterConfig(spec.iterations, self.iter_substeps, "trapezoid", self.sweeps, self.c3_variant)
            return IterConfig(2, self.iter_substeps, spec.quad_rule or self.quad_rule, spec.sweeps or self.sweeps)
        except RejectedInputError as exc:
            raise ConfigurationError(f"scheme {spec.label!r}: {exc}") from None


@dataclass(frozen=True)
class _Plan:
    dt_fine: float
    n_fine: int
    factors: tuple
    n_steps: tuple
    reference: str  # "exact_linear" or "fine_milstein"
    block_size: int
    dims: int
    state_dim: int


def _grid_count(span, step, what):
    ratio = span / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise ConfigurationError(f"{what}: {step} does not divide {span}")
    return n


def _make_plan(cfg, problem):
    is_coulomb = isinstance(problem, CoulombProblem)
    ref = cfg.reference or ("fine_milstein" if is_coulomb else "exact_linear")
    kind, _, arg = ref.partition(":")
    if kind not in ("exact_linear", "fine_milstein"):
        raise ConfigurationError(f"unknown reference {ref!r} (exact_linear[:dt] or fine_milstein[:dt])")
    if kind == "exact_linear" and is_coulomb:
        raise ConfigurationError("the exact_linear reference needs a linear problem, not 'coulomb'")
    if arg:
        try:
            dt_fine = float(arg)
        except ValueError:
            raise ConfigurationError(f"bad reference step in {ref!r}") from None
    elif is_coulomb:
        dt_fine = min(DEFAULT_COULOMB_FINE_DT, min(cfg.dt_list))
    else:
        dt_fine = min(cfg.dt_list) / 8.0
    if not dt_fine > 0:
        raise ConfigurationError(f"reference step must be positive, got {dt_fine}")
    n_fine = _grid_count(cfg.t_end, dt_fine, "reference grid")
    steps = tuple(_grid_count(cfg.t_end, dt, f"dt={dt}") for dt in cfg.dt_list)
    factors = []
    for dt, n in zip(cfg.dt_list, steps):
        if n_fine % n:
            raise ConfigurationError(f"dt={dt} is not a multiple of the reference step {dt_fine}")
        factors.append(n_fine // n)
    state_dim = 3 if is_coulomb else problem.dim
    block = max(1, min(MAX_BLOCK, BLOCK_BUDGET // (n_fine * state_dim)))
    dims = 3 if is_coulomb else problem.n_noise
    return _Plan(dt_fine, n_fine, tuple(factors), steps, kind, block, dims, state_dim)


def _linear_affine(problem, spec, block, cfg):
    """``(d0, mats, coef)`` such that each step is ``y <- (d0 + sum_k coef_k mats_k) y``; None if not affine."""
    dt = block.dt
    m = problem.dim
    eye = np.eye(m)
    incr = block.increments
    aux = block.aux_increments
    correction = np.zeros((m, m)) if block.null else 0.5 * problem.ppt_stack.sum(axis=0) * dt
    if spec.kind == "iter" and problem.n_noise == 1:
        icfg = cfg.iter_config(spec)
        e_step = mat_exp(problem.a * dt)
        if spec.iterations == 1:
            return e_step, np.zeros((0, m, m)), np.zeros(incr.shape[:2] + (0,))
        if spec.iterations == 3 and icfg.c3_variant == "increment_weighted":
            return None
        n_sub = icfg.quadrature_substeps
        delta = dt / n_sub
        exps = mat_exp(problem.a[None] * ((np.arange(n_sub) + 0.5) * delta)[:, None, None])
        q = commutator(problem.noise_ops[0], exps)
        mats = q.copy()
        if spec.iterations == 3:
            weight = delta if icfg.c3_variant == "riemann" else 1.0
            for i in range(n_sub):
                acc = 0.5 * (q[i] @ q[i])
                for j in range(i + 1, n_sub):
                    acc = acc + q[j] @ q[i]
                mats[i] = mats[i] + weight * acc
        mats = mats @ e_step
        coef = block.refined(n_sub)[..., 0]
        return e_step, mats, coef
    if spec.kind == "em":
        return eye + problem.a * dt, problem.noise_stack, incr
    d0 = eye + problem.a * dt - correction
    mats = [problem.noise_stack, problem.ppt_stack]
    coefs = [incr, 0.5 * incr * incr]
    if spec.kind == "iter":
        d0 = mat_exp(problem.a * dt) - correction
    if spec.kind in ("milstein_full", "iter") and problem.pairs:
        mats.append(np.stack([c for _, _, c in problem.pairs]))
        coefs.append(
            np.stack(
                [0.5 * levy_difference(incr[..., i], incr[..., j], aux[..., i], aux[..., j]) for i, j, _ in problem.pairs],
                axis=-1,
            )
        )
    if spec.kind == "iter" and spec.iterations == 2:
        mats.append(problem.triple_stack)
        coefs.append(0.5 * (incr * incr / 3.0 - dt) * incr)
    return d0, np.concatenate(mats), np.concatenate(coefs, axis=-1)


def _integrate_linear(problem, spec, block, y0, cfg):
    dt = block.dt
    drift = problem.a if block.null else problem.exponent_drift
    if spec.kind in ("ab_split", "summative"):
        coef = block.increments
        if spec.kind == "summative":
            coef = block.summative(spec.n_sub).sum(axis=-2) / math.sqrt(spec.n_sub)
        m0 = np.zeros_like(problem.a)
        traj = kernels.expm_sequence(m0, problem.noise_stack, coef, y0, mat_exp(drift * dt))
    elif spec.kind == "exact":
        traj = kernels.expm_sequence(drift * dt, problem.noise_stack, block.increments, y0)
    else:
        affine = _linear_affine(problem, spec, block, cfg)
        if affine is None:
            icfg = cfg.iter_config(spec)
            contexts = [block.step(n, sub_steps=icfg.quadrature_substeps) for n in range(block.n_steps)]
            traj, _, failed = kernels.step_loop(
                lambda y, ctx: iter_scalar_step(y, problem, ctx, icfg), y0, contexts
            )
            return traj, np.zeros(len(y0), dtype=np.int64), failed
        traj = kernels.affine_sequence(*affine, y0)
    failed = ~np.all(np.isfinite(traj), axis=(1, 2))
    return traj, np.zeros(len(y0), dtype=np.int64), failed


_COULOMB_KIND = {"em": 0, "milstein": 1, "coulomb_relax": 2}


def _integrate_coulomb(problem, spec, block, y0, cfg):
    if spec.kind in _COULOMB_KIND:
        icfg = cfg.iter_config(spec) if spec.kind == "coulomb_relax" else IterConfig()
        return kernels.coulomb_sequence(
            _COULOMB_KIND[spec.kind], y0, block.increments, block.aux_increments, block.dt,
            problem.epsilon_mu, icfg.sweeps, icfg.quad_rule == "simpson", block.null,
        )
    icfg = cfg.iter_config(spec)
    contexts = [block.step(n) for n in range(block.n_steps)]
    return kernels.step_loop(
        lambda s, ctx: coulomb_taylor_step(s, problem, ctx, icfg), y0, contexts, problem.epsilon_mu
    )


def integrate_block(problem, spec, block, y0, cfg):
    """Trajectories ``(P, N+1, dim)``, clamp counts and failure mask for one block."""
    if isinstance(problem, CoulombProblem):
        return _integrate_coulomb(problem, spec, block, y0, cfg)
    return _integrate_linear(problem, spec, block, y0, cfg)


def _reference_spec(plan, problem):
    if plan.reference == "exact_linear":
        return SchemeSpec("exact")
    return SchemeSpec("milstein" if isinstance(problem, CoulombProblem) else "milstein_full")


def _sample_paths(cfg, plan, indices):
    if cfg.zero_noise:
        return [null_path(plan.dims, plan.n_fine, plan.dt_fine) for _ in indices]
    return [generate_path(plan.dims, plan.n_fine, plan.dt_fine, sample_seed(cfg.master_seed, i)) for i in indices]


def _run_block(cfg, block_index):
    problem = cfg.build_problem()
    plan = _make_plan(cfg, problem)
    specs = cfg.scheme_specs()
    start = block_index * plan.block_size
    indices = range(start, min(start + plan.block_size, cfg.n_paths))
    fine = PathBlock(_sample_paths(cfg, plan, indices))
    y0 = np.tile(problem.initial_state if isinstance(problem, CoulombProblem) else problem.y0, (len(indices), 1))
    ref_traj, _, ref_failed = integrate_block(problem, _reference_spec(plan, problem), fine, y0, cfg)
    result = {"ref_failed": ref_failed, "ref_end": ref_traj[:, -1], "runs": {}}
    if block_index == 0:
        result["ref_traj0"] = ref_traj[0]
    repeats = cfg.timing_repeats if cfg.record_timing else 1
    for dt, factor in zip(cfg.dt_list, plan.factors):
        coarse = fine.coarsen(factor)
        ref_grid = ref_traj[:, ::factor]
        for spec in specs:
            times = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                traj, clamps, failed = integrate_block(problem, spec, coarse, y0, cfg)
                times.append(time.perf_counter() - t0)
            diff = traj - ref_grid
            run = {
                "end": traj[:, -1],
                "abs_err": np.abs(diff[:, -1]),
                "sq_tavg": np.sum(dt * diff[:, 1:] ** 2, axis=1) / cfg.t_end,
                "clamps": clamps,
                "failed": failed,
                "runtime": statistics.median(times) if cfg.record_timing else 0.0,
            }
            if block_index == 0:
                run["traj0"] = traj[0]
            result["runs"][spec.label, dt] = run
    return result


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem_name: str
    state_labels: tuple
    reports: list
    trajectories: dict = field(default_factory=dict)
    reference_trajectory: np.ndarray | None = None
    reference_dt: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def failure_exceeded(self):
        limit = self.config.max_failures
        return any(r.excluded_paths > limit * self.config.n_paths for r in self.reports)

    def __iter__(self):
        return iter(self.reports)

    def __len__(self):
        return len(self.reports)


def _stats(errors, sq_tavg, end, ref_end):
    n = errors.size
    nan = float("nan")
    return {
        "strong_error": strong_error(errors) if n else nan,
        "weak_error": weak_error(errors) if n else nan,
        "variance": error_variance(errors) if n >= 2 else nan,
        "time_avg_mse": float(np.mean(sq_tavg)) if n else nan,
        "mean_bias": float(np.sqrt(np.sum((ref_end.mean(axis=0) - end.mean(axis=0)) ** 2))) if n else nan,
    }


def _aggregate(cfg, problem, plan, blocks):
    is_coulomb = isinstance(problem, CoulombProblem)
    ref_failed = np.concatenate([b["ref_failed"] for b in blocks])
    ref_end = np.concatenate([b["ref_end"] for b in blocks])
    reports = []
    for spec in cfg.scheme_specs():
        for dt, n_steps in zip(cfg.dt_list, plan.n_steps):
            runs = [b["runs"][spec.label, dt] for b in blocks]

            def cat(key):
                return np.concatenate([r[key] for r in runs])

            keep = ~(cat("failed") | ref_failed)
            abs_err, sq_tavg, end = cat("abs_err")[keep], cat("sq_tavg")[keep], cat("end")[keep]
            ref_kept = ref_end[keep]
            if is_coulomb:
                comps = {
                    name: _stats(abs_err[:, k], sq_tavg[:, k], end[:, k : k + 1], ref_kept[:, k : k + 1])
                    for k, name in enumerate(("v", "mu", "phi"))
                }
                main = comps["v"]
                per_path = abs_err[:, 0]
            else:
                comps = None
                per_path = np.sqrt(np.sum(abs_err * abs_err, axis=1))
                main = _stats(per_path, np.sum(sq_tavg, axis=1), end, ref_kept)
            all_errors = np.full(keep.size, np.nan)
            all_errors[keep] = per_path
            reports.append(
                ConvergenceReport(
                    scheme=spec.label,
                    dt=dt,
                    n_paths=int(keep.sum()),
                    strong_error=main["strong_error"],
                    weak_error=main["weak_error"],
                    mean_bias=main["mean_bias"],
                    variance=main["variance"],
                    time_avg_mse=main["time_avg_mse"],
                    runtime_seconds=float(sum(r["runtime"] for r in runs)),
                    clamp_events=int(cat("clamps").sum()),
                    excluded_paths=int((~keep).sum()),
                    per_path_errors=tuple(None if math.isnan(e) else float(e) for e in all_errors),
                    component_errors=comps,
                )
            )
    return reports


def _ordering_warnings(reports, cfg, plan):
    if not cfg.record_timing:
        return []
    out = []
    steps = dict(zip(cfg.dt_list, plan.n_steps))
    for dt in cfg.dt_list:
        rows = [r for r in reports if r.dt == dt]
        cost = {}
        for r in rows:
            kind = r.scheme.split(":")[0]
            if kind in COST_RANK:
                cost[r.scheme] = (COST_RANK[kind], r.runtime_seconds / (steps[dt] * cfg.n_paths))
        for a, (ra, ca) in cost.items():
            for b, (rb, cb) in cost.items():
                if ra < rb and ca > cb:
                    msg = f"dt={dt}: per-step cost of {a} ({ca:.3g} s) exceeds {b} ({cb:.3g} s)"
                    out.append(msg)
                    warnings.warn(msg, RuntimeOrderingWarning, stacklevel=3)
    return out


def run_experiment(cfg):
    """Run every (scheme, dt) pair of ``cfg`` against the reference; returns an :class:`ExperimentResult`."""
    problem = cfg.build_problem()
    specs = cfg.scheme_specs()
    for spec in specs:
        check_compatibility(problem, spec)
        if spec.kind in ("iter", "coulomb_relax", "coulomb_taylor"):
            cfg.iter_config(spec)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"duplicate schemes in {labels}")
    plan = _make_plan(cfg, problem)
    if cfg.dump_noise:
        dump_path_csv(_sample_paths(cfg, plan, [0])[0], cfg.dump_noise)
    n_blocks = -(-cfg.n_paths // plan.block_size)
    if cfg.workers > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, n_blocks)) as pool:
            blocks = list(pool.map(_run_block, [cfg] * n_blocks, range(n_blocks)))
    else:
        blocks = [_run_block(cfg, b) for b in range(n_blocks)]
    reports = _aggregate(cfg, problem, plan, blocks)
    is_coulomb = isinstance(problem, CoulombProblem)
    result = ExperimentResult(
        config=cfg,
        problem_name=problem.name,
        state_labels=("v", "mu", "phi") if is_coulomb else tuple(f"y{i}" for i in range(problem.dim)),
        reports=reports,
        trajectories={key: run["traj0"] for key, run in blocks[0]["runs"].items()},
        reference_trajectory=blocks[0]["ref_traj0"],
        reference_dt=plan.dt_fine,
    )
    result.warnings = _ordering_warnings(reports, cfg, plan)
    return result


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _json_value(x):
    if x is None:
        return "null"
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}" if math.isfinite(x) else "null"
    if isinstance(x, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_json_value(v)}" for k, v in x.items()) + "}"
    return "[" + ", ".join(_json_value(v) for v in x) + "]"


def _report_list(reports):
    reports = list(reports.reports if isinstance(reports, ExperimentResult) else reports)
    if not reports:
        raise RejectedInputError("no reports to emit")
    return reports


def format_report(reports, fmt="csv"):
    """Report text: CSV with the fixed column set, or a JSON array mirroring it."""
    reports = _report_list(reports)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for r in reports:
            writer.writerow([_fmt(v) for v in r.row()])
        return buf.getvalue()
    if fmt == "json":
        rows = []
        for r in reports:
            d = r.to_dict()
            if d["component_errors"] is None:
                del d["component_errors"]
            rows.append("  " + _json_value(d))
        return "[\n" + ",\n".join(rows) + "\n]\n"
    raise RejectedInputError(f"unknown report format {fmt!r}")


def emit_report(reports, fmt, path):
    """Write the report to ``path``; I/O failures propagate as OSError."""
    text = format_report(reports, fmt)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return Path(path)


_INT_FIELDS = ("n_paths", "clamp_events", "excluded_paths")


def parse_report(text, fmt="csv"):
    """Inverse of :func:`format_report`."""
    reports = []
    if fmt == "csv":
        for row in csv.DictReader(io.StringIO(text)):
            kwargs = {k: (int(v) if k in _INT_FIELDS else v if k == "scheme" else float(v)) for k, v in row.items()}
            reports.append(ConvergenceReport(**kwargs))
        return reports
    for d in json.loads(text):
        kwargs = {}
        for k in REPORT_FIELDS:
            v = d[k]
            kwargs[k] = v if k == "scheme" or k in _INT_FIELDS else (float("nan") if v is None else float(v))
        kwargs["per_path_errors"] = tuple(d.get("per_path_errors", ()))
        kwargs["component_errors"] = d.get("component_errors")
        reports.append(ConvergenceReport(**kwargs))
    return reports


def _slug(label):
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


PLOT_SCRIPT = '''"""Plot the CSV files in this directory (needs matplotlib)."""
import csv
import glob
import os
from collections import defaultdict

import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read(name):
    with open(os.path.join(HERE, name)) as fh:
        return list(csv.DictReader(fh))


def loglog(name, column, out):
    series = defaultdict(list)
    for row in read(name):
        series[row["scheme"]].append((float(row["dt"]), float(row[column])))
    fig, ax = plt.subplots()
    for scheme, pts in sorted(series.items()):
        pts.sort()
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=scheme)
    ax.set_xlabel("dt")
    ax.set_ylabel(column)
    ax.legend()
    fig.savefig(os.path.join(HERE, out))


loglog("error_vs_dt.csv", "strong_error", "strong_error.png")
loglog("error_vs_dt.csv", "weak_error", "weak_error.png")
loglog("variance_vs_dt.csv", "variance", "variance.png")

for path in sorted(glob.glob(os.path.join(HERE, "trajectory_*.csv"))):
    rows = read(os.path.basename(path))
    cols = [c for c in rows[0] if c != "t"]
    fig, ax = plt.subplots()
    t = [float(r["t"]) for r in rows]
    for c in cols:
        ax.plot(t, [float(r[c]) for r in rows], label=c)
    ax.set_xlabel("t")
    ax.legend()
    fig.savefig(path[:-4] + ".png")
'''


def emit_plot_data(result, directory):
    """Write plot-ready CSV files and a matplotlib script into ``directory``."""
    if not result.reports:
        raise RejectedInputError("no reports to plot")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    reports = result.reports
    _write_csv(
        out / "error_vs_dt.csv",
        ["scheme", "dt", "strong_error", "weak_error", "mean_bias", "time_avg_mse"],
        [[r.scheme, r.dt, r.strong_error, r.weak_error, r.mean_bias, r.time_avg_mse] for r in reports],
    )
    _write_csv(out / "variance_vs_dt.csv", ["scheme", "dt", "variance"], [[r.scheme, r.dt, r.variance] for r in reports])
    t_end = result.config.t_end
    timing = []
    for r in reports:
        n_steps = int(round(t_end / r.dt))
        timing.append([r.scheme, r.dt, n_steps, result.config.n_paths, r.runtime_seconds,
                       r.runtime_seconds / (n_steps * result.config.n_paths)])
    _write_csv(out / "timing.csv", ["scheme", "dt", "n_steps", "n_paths", "runtime_seconds", "seconds_per_step"], timing)
    header = ["t", *result.state_labels]
    written = []
    for (label, dt), traj in result.trajectories.items():
        name = out / f"trajectory_{_slug(label)}_dt{_fmt(dt)}.csv"
        _write_csv(name, header, [[i * dt, *row] for i, row in enumerate(traj)])
        written.append(name)
    if result.reference_trajectory is not None:
        dt = result.reference_dt
        _write_csv(out / "trajectory_reference.csv", header,
                   [[i * dt, *row] for i, row in enumerate(result.reference_trajectory)])
    (out / "plot_results.py").write_text(PLOT_SCRIPT)
    return out
