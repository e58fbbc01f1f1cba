"""Pure numpy implementations of the trajectory kernels.

Same signatures and semantics as the compiled ``_ckernels`` module; used
when the extension is unavailable or ``SDESPLIT_PURE_PYTHON`` is set.
"""

from __future__ import annotations

import numpy as np

from .errors import SdeSplitError
from .iterative import IterConfig, coulomb_relax_step
from .direct import em_step_coulomb, milstein_step_coulomb
from .linalg import mat_exp
from .problems import CoulombProblem, clamp_state
from .wiener import StepContext

COULOMB_EM, COULOMB_MILSTEIN, COULOMB_RELAX = 0, 1, 2


def affine_sequence(d0, mats, coef, y0):
    """Trajectories of ``y <- (d0 + sum_k coef[p, n, k] mats[k]) y``; shape ``(P, N+1, m)``."""
    n_paths, n_steps, _ = coef.shape
    traj = np.empty((n_paths, n_steps + 1, d0.shape[0]))
    y = np.array(y0, dtype=np.float64)
    traj[:, 0] = y
    for n in range(n_steps):
        step = np.einsum("pk,kij->pij", coef[:, n], mats)
        y = y @ d0.T + np.einsum("pij,pj->pi", step, y)
        traj[:, n + 1] = y
    return traj


def expm_sequence(m0, mats, coef, y0, pre=None):
    """Trajectories of ``y <- exp(m0 + sum_k coef[p, n, k] mats[k]) (pre y)``."""
    n_paths, n_steps, _ = coef.shape
    traj = np.empty((n_paths, n_steps + 1, m0.shape[0]))
    y = np.array(y0, dtype=np.float64)
    traj[:, 0] = y
    for n in range(n_steps):
        arg = m0 + np.einsum("pk,kij->pij", coef[:, n], mats)
        if pre is not None:
            y = y @ pre.T
        y = np.einsum("pij,pj->pi", mat_exp(arg), y)
        traj[:, n + 1] = y
    return traj


def step_loop(step, s0, contexts, clamp_eps=None):
    """Drive a batched step function over ``contexts`` (one per step).

    A path whose step raises a package error, or yields non-finite values,
    is marked failed and frozen (its remaining trajectory is NaN). With
    ``clamp_eps`` set, the Coulomb state policy is applied after every step
    and corrections are counted per path.
    """
    s = np.array(s0, dtype=np.float64)
    n_paths, dim = s.shape
    n_steps = len(contexts)
    traj = np.full((n_paths, n_steps + 1, dim), np.nan)
    traj[:, 0] = s
    clamps = np.zeros(n_paths, dtype=np.int64)
    failed = np.zeros(n_paths, dtype=bool)
    for n, ctx in enumerate(contexts):
        active = np.flatnonzero(~failed)
        if active.size == 0:
            break
        sub_ctx = _select(ctx, active) if active.size < n_paths else ctx
        try:
            new = np.asarray(step(s[active], sub_ctx), dtype=np.float64)
        except SdeSplitError:
            new = np.full((active.size, dim), np.nan)
            for r, idx in enumerate(active):
                try:
                    new[r] = step(s[idx : idx + 1], _select(ctx, [idx]))[0]
                except SdeSplitError:
                    pass
        bad = ~np.all(np.isfinite(new), axis=-1)
        failed[active[bad]] = True
        good = active[~bad]
        new = new[~bad]
        if clamp_eps is not None:
            new, events = clamp_state(new, clamp_eps)
            clamps[good] += events
        s[good] = new
        traj[good, n + 1] = new
    return traj, clamps, failed


def _select(ctx, rows):
    def pick(a):
        return None if a is None else np.asarray(a)[rows]

    return StepContext(
        ctx.step_index, ctx.dt, pick(ctx.dW), pick(ctx.dW_aux), pick(ctx.sub_dW), pick(ctx.summative_dW), ctx.null
    )


def coulomb_sequence(kind, s0, incr, aux, dt, eps, sweeps, simpson, null):
    """EM / Milstein / relaxation trajectories of the Coulomb system.

    Returns ``(traj, clamp_events, failed)``.
    """
    problem = CoulombProblem(epsilon_mu=eps)
    if kind == COULOMB_EM:
        fn = em_step_coulomb
    elif kind == COULOMB_MILSTEIN:
        fn = milstein_step_coulomb
    else:
        cfg = IterConfig(sweeps=sweeps, quad_rule="simpson" if simpson else "trapezoid")

        def fn(s, p, ctx):
            return coulomb_relax_step(s, p, ctx, cfg)

    contexts = [
        StepContext(n, dt, incr[:, n], aux[:, n], null=bool(null)) for n in range(incr.shape[1])
    ]
    return step_loop(lambda s, ctx: fn(s, problem, ctx), s0, contexts, eps)
