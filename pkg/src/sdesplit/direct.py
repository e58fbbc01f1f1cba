"""One-step direct integrators.

Linear-problem steps take ``y`` of shape ``(m,)`` or a block ``(n_paths, m)``
together with a :class:`StepContext` whose ``dW`` is ``(d,)`` or
``(n_paths, d)``. Coulomb steps take a :class:`CoulombState` or an array of
shape ``(..., 3)`` and return the same kind of object.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import RejectedInputError, SingularityError
from .linalg import mat_exp
from .problems import (
    CoulombState,
    LinearSdeProblem,
    clamp_state,
    coulomb_coefficients,
)
from .wiener import StepContext, iterated_integral, levy_difference

__all__ = [
    "StepContext",
    "ab_split_step",
    "em_step_coulomb",
    "em_step_linear",
    "exact_linear_step",
    "milstein_step_coulomb",
    "milstein_step_diag",
    "milstein_step_full",
    "summative_split_step",
]


def _prepare(y, p, ctx):
    if not isinstance(p, LinearSdeProblem):
        raise RejectedInputError(f"expected a LinearSdeProblem, got {type(p).__name__}")
    y = np.asarray(y, dtype=np.float64)
    if y.ndim not in (1, 2) or y.shape[-1] != p.dim:
        raise RejectedInputError(f"state shape {y.shape} does not match problem dimension {p.dim}")
    dw = np.asarray(ctx.dW, dtype=np.float64)
    if dw.shape[-1] != p.n_noise:
        raise RejectedInputError(f"context has {dw.shape[-1]} noise components, problem has {p.n_noise}")
    return y, dw


def _col(w):
    # per-path scalar -> broadcastable against (..., m)
    return np.asarray(w)[..., None]


def _ito_square(w, dt, ctx):
    """``dW^2 - dt``: twice the diagonal iterated integral (zero for a null driver)."""
    if ctx.null:
        return np.zeros_like(w)
    return w * w - dt


def _exponent_drift(p, ctx):
    return p.a if ctx.null else p.exponent_drift


def _single_noise(p, scheme):
    if p.n_noise != 1:
        raise RejectedInputError(f"{scheme} is defined for a single noise operator, problem has {p.n_noise}")


def em_step_linear(y, p, ctx):
    """``y + A y dt + sum_j P_j y dW_j``."""
    y, dw = _prepare(y, p, ctx)
    out = y + (y @ p.a.T) * ctx.dt
    for j, pj in enumerate(p.noise_ops):
        out = out + (y @ pj.T) * _col(dw[..., j])
    return out


def milstein_step_diag(y, p, ctx):
    """Euler-Maruyama plus ``sum_i 1/2 P_i P_i^T y (dW_i^2 - dt)``."""
    y, dw = _prepare(y, p, ctx)
    out = em_step_linear(y, p, ctx)
    for i, ppt in enumerate(p.ppt_stack):
        out = out + 0.5 * (y @ ppt.T) * _col(_ito_square(dw[..., i], ctx.dt, ctx))
    return out


def milstein_step_full(y, p, ctx):
    """Diagonal Milstein plus the commutator Levy terms ``1/2 [P_i, P_j] (J_ji - J_ij) y``."""
    y, dw = _prepare(y, p, ctx)
    out = milstein_step_diag(y, p, ctx)
    aux = np.asarray(ctx.dW_aux, dtype=np.float64)
    for i, j, comm in p.pairs:
        diff = levy_difference(dw[..., i], dw[..., j], aux[..., i], aux[..., j])
        out = out + 0.5 * (y @ comm.T) * _col(diff)
    return out


def _apply(mats, y):
    if mats.ndim == 2:
        return y @ mats.T
    return np.einsum("...ij,...j->...i", mats, y)


def _noise_exponent(p, dw):
    # sum_j P_j dW_j, shape (..., m, m)
    return np.einsum("...j,jmn->...mn", dw, p.noise_stack)


def ab_split_step(y, p, ctx):
    """``exp(P dW) exp((A - P P^T / 2) dt) y`` for a single noise operator."""
    y, dw = _prepare(y, p, ctx)
    _single_noise(p, "ab_split")
    det = _apply(mat_exp(_exponent_drift(p, ctx) * ctx.dt), y)
    return _apply(mat_exp(_noise_exponent(p, dw)), det)


def summative_split_step(y, p, ctx, n_sub):
    """Deterministic half as :func:`ab_split_step`, noise factor ``exp(P sum_j dW_j / sqrt(n_sub))``.

    The ``n_sub`` sub-increments come from ``ctx.summative_dW``.
    """
    y, _ = _prepare(y, p, ctx)
    _single_noise(p, "summative")
    if isinstance(n_sub, bool) or int(n_sub) != n_sub or n_sub < 1:
        raise RejectedInputError(f"n_sub must be a positive integer, got {n_sub!r}")
    sub = ctx.summative_dW
    if sub is None:
        raise RejectedInputError("summative splitting needs ctx.summative_dW")
    sub = np.asarray(sub, dtype=np.float64)
    if sub.shape[-2:] != (n_sub, p.n_noise):
        raise RejectedInputError(f"summative_dW has shape {sub.shape}, expected (..., {n_sub}, {p.n_noise})")
    total = sub.sum(axis=-2) / math.sqrt(n_sub)
    det = _apply(mat_exp(_exponent_drift(p, ctx) * ctx.dt), y)
    return _apply(mat_exp(_noise_exponent(p, total)), det)


def exact_linear_step(y, p, ctx):
    """``exp((A - 1/2 sum_j P_j P_j^T) dt + sum_j P_j dW_j) y``."""
    y, dw = _prepare(y, p, ctx)
    return _apply(mat_exp(_exponent_drift(p, ctx) * ctx.dt + _noise_exponent(p, dw)), y)


def _coulomb_prepare(s, p, ctx):
    as_state = isinstance(s, CoulombState)
    arr = np.asarray(s, dtype=np.float64)
    if arr.shape[-1] != 3:
        raise RejectedInputError(f"Coulomb state must have 3 components, got shape {arr.shape}")
    dw = np.asarray(ctx.dW, dtype=np.float64)
    if dw.shape[-1] != 3:
        raise RejectedInputError(f"Coulomb steps need 3 noise components, got {dw.shape[-1]}")
    if np.any(np.isnan(arr[..., 1])):
        raise SingularityError("mu is NaN; the phi diffusion is singular", state=arr)
    arr, _ = clamp_state(arr, p.epsilon_mu)
    return arr, dw, as_state


def _coulomb_result(out, as_state):
    return CoulombState(*(float(x) for x in out)) if as_state else out


def _coulomb_em_parts(arr, dw, dt):
    v, mu = arr[..., 0], arr[..., 1]
    c = coulomb_coefficients(v)
    one_minus = 1.0 - mu * mu
    out = np.empty(np.broadcast_shapes(arr.shape, dw.shape))
    out[..., 0] = v + c.F_d * dt + np.sqrt(2.0 * c.D_v) * dw[..., 0]
    out[..., 1] = mu - 2.0 * c.D_a * mu * dt + np.sqrt(2.0 * c.D_a * one_minus) * dw[..., 1]
    out[..., 2] = arr[..., 2] + np.sqrt(2.0 * c.D_a / one_minus) * dw[..., 2]
    return out, c, one_minus


def em_step_coulomb(s, p, ctx):
    """Euler-Maruyama step of the Coulomb system (``mu`` clamped first)."""
    arr, dw, as_state = _coulomb_prepare(s, p, ctx)
    out, _, _ = _coulomb_em_parts(arr, dw, ctx.dt)
    return _coulomb_result(out, as_state)


def milstein_step_coulomb(s, p, ctx):
    """Milstein step of the Coulomb system with the cross-component iterated integrals.

    ``A_kl`` approximates the double integral with inner ``dW_k`` and outer
    ``dW_l`` from the auxiliary increments.
    """
    arr, dw, as_state = _coulomb_prepare(s, p, ctx)
    out, c, one_minus = _coulomb_em_parts(arr, dw, ctx.dt)
    dt = ctx.dt
    aux = np.asarray(ctx.dW_aux, dtype=np.float64)
    mu = arr[..., 1]
    jv, jm, jp = dw[..., 0], dw[..., 1], dw[..., 2]
    av, am, ap = aux[..., 0], aux[..., 1], aux[..., 2]
    a_vm = iterated_integral(jv, jm, av, am)
    a_vp = iterated_integral(jv, jp, av, ap)
    a_mp = iterated_integral(jm, jp, am, ap)
    ratio = np.sqrt(c.D_v / c.D_a)
    root = np.sqrt(one_minus)
    out[..., 0] += c.dD_v * 0.5 * _ito_square(jv, dt, ctx)
    out[..., 1] += -2.0 * mu * c.D_a * 0.5 * _ito_square(jm, dt, ctx) + ratio * root * c.dD_a * a_vm
    out[..., 2] += ratio / root * c.dD_a * a_vp + 2.0 * c.D_a * mu / one_minus * a_mp
    return _coulomb_result(out, as_state)
