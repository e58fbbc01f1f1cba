"""Iterative splitting steps for linear and Coulomb problems.

The scalar-noise iteration builds successive corrections from commutators
of the noise operator with midpoint-exponential Stratonovich sums computed
on a sub-grid of the current step. The vectorial version is an exponential
Milstein step with an optional third-order diagonal term. The Coulomb
versions linearise the drift (diagonal relaxation or Jacobian) and
re-evaluate the diffusion in a few fixpoint sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .direct import _apply, _col, _coulomb_prepare, _coulomb_result, _ito_square, _prepare
from .errors import (
    DivergenceError,
    DomainError,
    RejectedInputError,
    SingularityError,
    UnsupportedConfigurationError,
)
from .linalg import commutator, mat_exp
from .problems import (
    clamp_state,
    coulomb_coefficients,
    coulomb_diffusion_diag,
    coulomb_drift,
    coulomb_jacobian,
)
from .wiener import levy_difference, midpoint_exponentials

__all__ = [
    "C3_VARIANTS",
    "QUAD_RULES",
    "IterConfig",
    "coulomb_relax_step",
    "coulomb_taylor_step",
    "iter_scalar_step",
    "iter_vectorial_step",
    "stochastic_convolution",
]

QUAD_RULES = ("trapezoid", "simpson")
# riemann: sub-step-length weighted midpoint sum of the ds-integral (default)
# unweighted: the same sum without any weight
# increment_weighted: the second commutator term multiplied by the sub-increment
C3_VARIANTS = ("riemann", "unweighted", "increment_weighted")


@dataclass(frozen=True)
class IterConfig:
    iterations: int = 2
    quadrature_substeps: int = 10
    quad_rule: str = "trapezoid"
    sweeps: int = 2
    c3_variant: str = "riemann"

    def __post_init__(self):
        if self.iterations not in (1, 2, 3):
            raise RejectedInputError(f"iterations must be 1, 2 or 3, got {self.iterations!r}")
        for name in ("quadrature_substeps", "sweeps"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise RejectedInputError(f"{name} must be a positive integer, got {value!r}")
        if self.quad_rule not in QUAD_RULES:
            raise RejectedInputError(f"quad_rule must be one of {QUAD_RULES}, got {self.quad_rule!r}")
        if self.quad_rule == "simpson" and self.quadrature_substeps % 2:
            raise RejectedInputError("simpson needs an even number of quadrature sub-steps")
        if self.c3_variant not in C3_VARIANTS:
            raise RejectedInputError(f"c3_variant must be one of {C3_VARIANTS}, got {self.c3_variant!r}")


@lru_cache(maxsize=128)
def _step_exponentials(p, dt):
    return mat_exp(p.a * dt)


@lru_cache(maxsize=128)
def _sub_exponentials(p, dt, n_sub):
    # E_j = exp(A t_{j+1/2}) and [P, E_j] on the sub-grid of one step
    exps = midpoint_exponentials(p.a, dt / n_sub, n_sub)
    return exps, commutator(p.noise_ops[0], exps)


def _scalar_corrections(p, dt, sub, cfg):
    """C2 and (if requested) C3 for sub-increments ``sub`` of shape ``(..., n_sub)``."""
    n_sub = sub.shape[-1]
    exps, comm_pe = _sub_exponentials(p, dt, n_sub)
    pmat = p.noise_ops[0]
    terms = exps * sub[..., :, None, None]  # E_j dW_j, shape (..., n_sub, m, m)
    c1 = terms.sum(axis=-3)
    c2 = pmat @ c1 - c1 @ pmat
    if cfg.iterations < 3:
        return c2, None
    # C1 at each midpoint: full terms before j, half of term j
    c1_mid = np.cumsum(terms, axis=-3) - 0.5 * terms
    c2_mid = pmat @ c1_mid - c1_mid @ pmat
    delta = dt / n_sub
    if cfg.c3_variant == "riemann":
        c3 = (comm_pe @ c2_mid).sum(axis=-3) * delta
    elif cfg.c3_variant == "unweighted":
        c3 = (comm_pe @ c2_mid).sum(axis=-3)
    else:
        first = pmat @ exps @ c2_mid
        second = exps @ pmat @ c2_mid * sub[..., :, None, None]
        c3 = (first - second).sum(axis=-3)
    return c2, c3


def iter_scalar_step(y, p, ctx, cfg=IterConfig()):
    """Iterative splitting step for a single noise operator.

    ``k = 1`` is the deterministic flow ``X1 = exp(A dt) y``; ``k = 2`` adds
    ``C2 X1`` with ``C2 = [P, C1]``; ``k = 3`` adds ``C3 X1``. The sums use
    ``ctx.sub_dW`` (``cfg.quadrature_substeps`` bridge sub-increments).
    """
    y, _ = _prepare(y, p, ctx)
    if p.n_noise != 1:
        raise RejectedInputError(
            f"iter_scalar_step needs a single noise operator (problem has {p.n_noise}); use iter_vectorial_step"
        )
    x1 = _apply(_step_exponentials(p, ctx.dt), y)
    if cfg.iterations == 1:
        return x1
    sub = ctx.sub_dW
    if sub is None:
        raise RejectedInputError("iterations >= 2 need sub-grid increments in ctx.sub_dW")
    sub = np.asarray(sub, dtype=np.float64)
    if sub.shape[-2:] != (cfg.quadrature_substeps, 1):
        raise RejectedInputError(
            f"sub_dW has shape {sub.shape}, expected (..., {cfg.quadrature_substeps}, 1)"
        )
    c2, c3 = _scalar_corrections(p, ctx.dt, sub[..., 0], cfg)
    x2 = x1 + _apply(c2, x1)
    if c3 is None:
        return x2
    return x2 + _apply(c3, x1)


def iter_vectorial_step(y, p, ctx, cfg=IterConfig(iterations=1)):
    """Exponential Milstein step with Levy terms; ``k = 2`` adds the diagonal triple term.

    ``k = 1``: ``exp(A dt) y + sum_j P_j y dW_j + sum_i 1/2 P_i P_i^T y (dW_i^2 - dt)
    + sum_{i<j} 1/2 [P_i, P_j] (J_ji - J_ij) y``.
    ``k = 2`` adds ``sum_i 1/2 P_i P_i^T P_i y (dW_i^2/3 - dt) dW_i``.
    """
    y, dw = _prepare(y, p, ctx)
    if cfg.iterations == 3:
        raise UnsupportedConfigurationError("three iterations are not available for vectorial noise")
    dt = ctx.dt
    out = _apply(_step_exponentials(p, dt), y)
    for j, pj in enumerate(p.noise_ops):
        out = out + (y @ pj.T) * _col(dw[..., j])
    for i, ppt in enumerate(p.ppt_stack):
        out = out + 0.5 * (y @ ppt.T) * _col(_ito_square(dw[..., i], dt, ctx))
    aux = np.asarray(ctx.dW_aux, dtype=np.float64)
    for i, j, comm in p.pairs:
        diff = levy_difference(dw[..., i], dw[..., j], aux[..., i], aux[..., j])
        out = out + 0.5 * (y @ comm.T) * _col(diff)
    if cfg.iterations == 2:
        for i, triple in enumerate(p.triple_stack):
            w = dw[..., i]
            out = out + 0.5 * (y @ triple.T) * _col((w * w / 3.0 - dt) * w)
    return out


def stochastic_convolution(a_hat, b_start, b_mid, b_end, dW, dt, rule="trapezoid"):
    """Quadrature of ``int exp(a_hat (t_end - s)) B(s) dW(s)`` over one step.

    trapezoid: ``1/2 (B_end + exp(a_hat dt) B_start) dW``;
    simpson: ``1/6 (B_end + 4 exp(a_hat dt / 2) B_mid + exp(a_hat dt) B_start) dW``.
    ``b_mid`` is ignored by the trapezoid rule. Leading axes broadcast.
    """
    if rule not in QUAD_RULES:
        raise RejectedInputError(f"rule must be one of {QUAD_RULES}, got {rule!r}")
    a_hat = np.asarray(a_hat, dtype=np.float64)
    m = a_hat.shape[-1]
    if a_hat.ndim < 2 or a_hat.shape[-2] != m:
        raise RejectedInputError(f"a_hat must be square, got shape {a_hat.shape}")
    mats = [np.asarray(b, dtype=np.float64) for b in (b_start, b_end)]
    if rule == "simpson":
        mats.append(np.asarray(b_mid, dtype=np.float64))
    dW = np.asarray(dW, dtype=np.float64)
    for b in mats:
        if b.ndim < 2 or b.shape[-2] != m or b.shape[-1] != dW.shape[-1]:
            raise RejectedInputError(f"B of shape {b.shape} does not match a_hat {a_hat.shape} and dW {dW.shape}")
    full = mat_exp(a_hat * dt)
    if rule == "trapezoid":
        kernel = 0.5 * (mats[1] + full @ mats[0])
    else:
        half = mat_exp(a_hat * (0.5 * dt))
        kernel = (mats[1] + 4.0 * (half @ mats[2]) + full @ mats[0]) / 6.0
    return np.einsum("...ij,...j->...i", kernel, dW)


def _diag_convolution(exp_full, exp_half, b_start, b_mid, b_end, dW, rule):
    # diagonal a_hat and B: the same quadrature, component-wise
    if rule == "trapezoid":
        return 0.5 * (b_end + exp_full * b_start) * dW
    return (b_end + 4.0 * exp_half * b_mid + exp_full * b_start) * dW / 6.0


def _diffusion(state, eps):
    try:
        return coulomb_diffusion_diag(state, eps)
    except DomainError as exc:
        raise SingularityError(f"diffusion left its domain: {exc}", state=state) from None


def _check_finite(new, sweep):
    if not np.all(np.isfinite(new)):
        raise DivergenceError(f"non-finite iterate in sweep {sweep}", sweep=sweep, state=new)


def _relax_diag(state):
    v = state[..., 0]
    if np.any(v == 0.0):
        raise SingularityError("relaxation matrix F_d(v)/v is singular at v = 0", state=state)
    try:
        c = coulomb_coefficients(v)
    except DomainError as exc:
        raise SingularityError(str(exc), state=state) from None
    return np.stack([c.F_d / v, -2.0 * c.D_a, np.zeros_like(v)], axis=-1)


def coulomb_relax_step(s, p, ctx, cfg=IterConfig()):
    """Fixpoint relaxation step: ``exp(A(v_i) dt) s + convolution of B(v_i)``.

    ``A = diag(F_d(v)/v, -2 D_a(v), 0)`` is re-evaluated at the current
    iterate each sweep (the first sweep uses the incoming state). ``B`` is
    evaluated at the incoming state, the iterate and their average.
    """
    s0, dw, as_state = _coulomb_prepare(s, p, ctx)
    dt = ctx.dt
    eps = p.epsilon_mu
    b_start = _diffusion(s0, eps)
    current = s0
    for sweep in range(cfg.sweeps):
        diag = _relax_diag(current)
        exp_full = np.exp(diag * dt)
        exp_half = np.exp(diag * (0.5 * dt)) if cfg.quad_rule == "simpson" else None
        b_end = _diffusion(current, eps)
        b_mid = _diffusion(0.5 * (s0 + current), eps) if cfg.quad_rule == "simpson" else None
        new = exp_full * s0 + _diag_convolution(exp_full, exp_half, b_start, b_mid, b_end, dw, cfg.quad_rule)
        _check_finite(new, sweep)
        current, _ = clamp_state(new, eps)
    return _coulomb_result(new, as_state)


def coulomb_taylor_step(s, p, ctx, cfg=IterConfig()):
    """Jacobian-linearised step.

    With ``J`` the drift Jacobian and ``r = a(s) - J s`` at the incoming
    state, the drift part is ``exp(J dt) s + (I dt + J dt^2/2 + J^2 dt^3/6) r``;
    the noise convolution with ``exp(J (t_end - s))`` is re-evaluated over
    ``cfg.sweeps`` sweeps.
    """
    s0, dw, as_state = _coulomb_prepare(s, p, ctx)
    dt = ctx.dt
    eps = p.epsilon_mu
    try:
        jac = coulomb_jacobian(s0)
        rest = coulomb_drift(s0) - np.einsum("...ij,...j->...i", jac, s0)
    except DomainError as exc:
        raise SingularityError(str(exc), state=s0) from None
    jac2 = jac @ jac
    series = np.eye(3) * dt + jac * (dt * dt / 2.0) + jac2 * (dt ** 3 / 6.0)
    exp_full = mat_exp(jac * dt)
    det = np.einsum("...ij,...j->...i", exp_full, s0) + np.einsum("...ij,...j->...i", series, rest)
    exp_half = mat_exp(jac * (0.5 * dt)) if cfg.quad_rule == "simpson" else None
    b_start = _diffusion(s0, eps)
    current = s0
    for sweep in range(cfg.sweeps):
        b_end = _diffusion(current, eps)
        if cfg.quad_rule == "trapezoid":
            kernel = 0.5 * (b_end * dw + np.einsum("...ij,...j->...i", exp_full, b_start * dw))
        else:
            b_mid = _diffusion(0.5 * (s0 + current), eps)
            kernel = (
                b_end * dw
                + 4.0 * np.einsum("...ij,...j->...i", exp_half, b_mid * dw)
                + np.einsum("...ij,...j->...i", exp_full, b_start * dw)
            ) / 6.0
        new = det + kernel
        _check_finite(new, sweep)
        current, _ = clamp_state(new, eps)
    return _coulomb_result(new, as_state)
