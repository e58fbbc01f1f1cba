"""Benchmark problems: linear multiplicative-noise systems and the Coulomb test particle.

Linear problems have the form ``dy = A y dt + sum_j P_j y dW_j``.

The Coulomb problem evolves a test particle in ``(v, mu, phi)`` (speed,
pitch cosine, gyro-phase)::

    dv   = F_d(v) dt + sqrt(2 D_v(v)) dW_v
    dmu  = -2 D_a(v) mu dt + sqrt(2 D_a(v) (1 - mu^2)) dW_mu
    dphi = sqrt(2 D_a(v) / (1 - mu^2)) dW_phi

with ``D_v = D_a = 1/(2(v+1))`` and ``F_d = -1/(2(v+1))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError, RejectedInputError, SingularityError
from .linalg import as_matrix, commutator

__all__ = [
    "VEC2X2_DEFAULT_STEPS",
    "VEC2X2_PRESETS",
    "CoulombCoefficients",
    "CoulombProblem",
    "CoulombState",
    "LinearSdeProblem",
    "build_scalar_noise_problem",
    "build_vectorial_2x2",
    "build_vectorial_mxm",
    "clamp_state",
    "coulomb_coefficients",
    "coulomb_diffusion",
    "coulomb_diffusion_diag",
    "coulomb_drift",
    "coulomb_drift_solution",
    "coulomb_jacobian",
    "coulomb_relax_matrix",
    "resolve_problem",
]

VEC2X2_DEFAULT_STEPS = 20
VEC2X2_PRESETS = {"weak01": 0.1, "weak001": 0.01, "strong": 1.0}


@dataclass(frozen=True, eq=False)
class LinearSdeProblem:
    """``dy = A y dt + sum_j P_j y dW_j`` on ``[0, t_end]`` from ``y0``."""

    a: np.ndarray
    noise_ops: tuple
    y0: np.ndarray
    t_end: float = 1.0
    name: str = "linear"

    def __post_init__(self):
        a = as_matrix(self.a, "A")
        m = a.shape[0]
        if a.shape != (m, m):
            raise RejectedInputError(f"A must be square, got {a.shape}")
        ops = tuple(as_matrix(p, f"P_{j + 1}") for j, p in enumerate(self.noise_ops))
        if not ops:
            raise RejectedInputError("a linear SDE problem needs at least one noise operator")
        for j, p in enumerate(ops):
            if p.shape != (m, m):
                raise RejectedInputError(f"P_{j + 1} has shape {p.shape}, expected {(m, m)}")
        y0 = np.asarray(self.y0, dtype=np.float64)
        if y0.shape != (m,):
            raise RejectedInputError(f"y0 has shape {y0.shape}, expected {(m,)}")
        t_end = float(self.t_end)
        if not (math.isfinite(t_end) and t_end > 0):
            raise RejectedInputError(f"t_end must be positive, got {self.t_end!r}")
        for arr in (a, y0, *ops):
            arr.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "noise_ops", ops)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "t_end", t_end)

    @property
    def dim(self):
        return self.a.shape[0]

    @property
    def n_noise(self):
        return len(self.noise_ops)

    @cached_property
    def noise_stack(self):
        return np.stack(self.noise_ops)

    @cached_property
    def ppt_stack(self):
        """``P_j P_j^T`` for every noise operator."""
        return np.stack([p @ p.T for p in self.noise_ops])

    @cached_property
    def triple_stack(self):
        """``P_j (P_j^T P_j)^T = P_j P_j^T P_j``."""
        return np.stack([p @ (p.T @ p).T for p in self.noise_ops])

    @cached_property
    def pairs(self):
        """``(i, j, [P_i, P_j])`` for ``i < j``."""
        ops = self.noise_ops
        return tuple(
            (i, j, commutator(ops[i], ops[j]))
            for i in range(len(ops))
            for j in range(i + 1, len(ops))
        )

    @cached_property
    def exponent_drift(self):
        """``A - 1/2 sum_j P_j P_j^T``, the drift inside the exponential maps."""
        return self.a - 0.5 * self.ppt_stack.sum(axis=0)


def build_scalar_noise_problem(t_end=1.0):
    """10x10 system with a single noise operator: A = -I + 0.1 (strict lower), P = 0.01 I + 0.005 (strict lower)."""
    m = 10
    lower = np.tril(np.ones((m, m)), -1)
    a = -np.eye(m) + 0.1 * lower
    p = 0.01 * np.eye(m) + 0.005 * lower
    return LinearSdeProblem(a, (p,), np.ones(m), t_end, "scalar10")


def build_vectorial_2x2(alpha1=1.0, alpha2=1.0, t_end=1.0):
    """2x2 system with two non-commuting noise operators scaled by ``alpha2``."""
    a = alpha1 * np.array([[-0.5, 0.0], [0.0, -0.5]])
    p1 = alpha2 * np.array([[0.75, 0.1], [0.0, -0.75]])
    p2 = alpha2 * np.array([[0.0, 0.9], [0.9, 0.0]])
    return LinearSdeProblem(a, (p1, p2), np.ones(2), t_end, "vec2x2")


def build_vectorial_mxm(m=10, t_end=1.0):
    """m x m system with lower- and upper-triangular noise operators (two Wiener components)."""
    if isinstance(m, bool) or int(m) != m or m < 2:
        raise RejectedInputError(f"m must be an integer >= 2, got {m!r}")
    m = int(m)
    a = -np.eye(m) + np.tril(np.full((m, m), 1.0 / m), -1)
    p1 = 0.05 * (np.eye(m) + np.tril(np.full((m, m), 1.0 / m), -1))
    p2 = 0.05 * (np.eye(m) + np.triu(np.full((m, m), 1.0 / m), 1))
    return LinearSdeProblem(a, (p1, p2), np.ones(m), t_end, f"vecMxM:{m}")


class CoulombState(NamedTuple):
    v: float
    mu: float
    phi: float


class CoulombCoefficients(NamedTuple):
    D_v: np.ndarray
    dD_v: np.ndarray
    F_d: np.ndarray
    dF_d: np.ndarray
    D_a: np.ndarray
    dD_a: np.ndarray


@dataclass(frozen=True)
class CoulombProblem:
    """Coulomb test-particle Langevin system.

    The coefficient functions are fixed; only the clamp margin, initial
    state and horizon vary. ``mu0`` defaults to just inside the pole of the
    phi diffusion at ``|mu| = 1``.
    """

    epsilon_mu: float = 1e-8
    v0: float = 1.0
    mu0: float = 1.0 - 1e-8
    phi0: float = 1.0
    t_end: float = 1.0
    name: str = "coulomb"

    def __post_init__(self):
        if not 0.0 < self.epsilon_mu <= 1e-4:
            raise RejectedInputError(f"epsilon_mu must lie in (0, 1e-4], got {self.epsilon_mu}")
        if not self.t_end > 0:
            raise RejectedInputError("t_end must be positive")
        if not self.v0 > -1:
            raise DomainError(f"v0={self.v0} is outside the coefficient domain v > -1")

    dim = 3
    n_noise = 3

    @property
    def initial_state(self):
        return np.array([self.v0, self.mu0, self.phi0], dtype=np.float64)


def _v_of(state):
    s = np.asarray(state, dtype=np.float64)
    if s.shape[-1] != 3:
        raise RejectedInputError(f"Coulomb state must have 3 components, got shape {s.shape}")
    return s


def coulomb_coefficients(v):
    """Drag, diffusion coefficients and their derivatives at speed ``v``."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(~(v > -1.0)):
        raise DomainError(f"coefficients are defined for v > -1 only (got min {np.nanmin(v) if v.size else v})")
    inv = 1.0 / (v + 1.0)
    half_inv = 0.5 * inv
    half_inv2 = 0.5 * inv * inv
    return CoulombCoefficients(half_inv, -half_inv2, -half_inv, half_inv2, half_inv, -half_inv2)


def coulomb_drift(state):
    """``(F_d(v), -2 D_a(v) mu, 0)``."""
    s = _v_of(state)
    c = coulomb_coefficients(s[..., 0])
    return np.stack([c.F_d, -2.0 * c.D_a * s[..., 1], np.zeros_like(c.F_d)], axis=-1)


def clamp_state(state, epsilon_mu=1e-8):
    """Apply the state policy; return ``(state, events)``.

    ``mu`` is clipped to ``[-(1 - eps), 1 - eps]`` and negative speeds are
    reflected (``v -> |v|``). ``events`` counts the corrections per state.
    """
    s = np.array(state, dtype=np.float64)
    bound = 1.0 - epsilon_mu
    v = s[..., 0]
    mu = s[..., 1]
    v_bad = v < 0.0
    mu_bad = np.abs(mu) > bound
    s[..., 0] = np.abs(v)
    s[..., 1] = np.clip(mu, -bound, bound)
    return s, v_bad.astype(np.int64) + mu_bad.astype(np.int64)


def coulomb_diffusion_diag(state, epsilon_mu=1e-8):
    """Diagonal of the diffusion matrix, ``mu`` clamped first."""
    s = _v_of(state)
    mu = np.clip(s[..., 1], -(1.0 - epsilon_mu), 1.0 - epsilon_mu)
    if np.any(np.isnan(mu)):
        raise SingularityError("mu is NaN; the phi diffusion cannot be evaluated", state=s)
    c = coulomb_coefficients(s[..., 0])
    one_minus = 1.0 - mu * mu
    return np.stack(
        [
            np.sqrt(2.0 * c.D_v),
            np.sqrt(2.0 * c.D_a * one_minus),
            np.sqrt(2.0 * c.D_a / one_minus),
        ],
        axis=-1,
    )


def coulomb_diffusion(state, epsilon_mu=1e-8):
    """``diag(sqrt(2 D_v), sqrt(2 D_a (1 - mu^2)), sqrt(2 D_a / (1 - mu^2)))``."""
    d = coulomb_diffusion_diag(state, epsilon_mu)
    return d[..., :, None] * np.eye(3)


def coulomb_jacobian(state):
    """Jacobian of the drift with respect to ``(v, mu, phi)``."""
    s = _v_of(state)
    c = coulomb_coefficients(s[..., 0])
    jac = np.zeros(s.shape[:-1] + (3, 3))
    jac[..., 0, 0] = c.dF_d
    jac[..., 1, 0] = -2.0 * s[..., 1] * c.dD_a
    jac[..., 1, 1] = -2.0 * c.D_a
    return jac


def coulomb_relax_matrix(state):
    """``diag(F_d(v)/v, -2 D_a(v), 0)``; singular at ``v = 0``."""
    s = _v_of(state)
    v = s[..., 0]
    if np.any(v == 0.0):
        raise SingularityError("relaxation matrix F_d(v)/v is singular at v = 0", state=s)
    c = coulomb_coefficients(v)
    out = np.zeros(s.shape[:-1] + (3, 3))
    out[..., 0, 0] = c.F_d / v
    out[..., 1, 1] = -2.0 * c.D_a
    return out


def coulomb_drift_solution(t, v0=1.0, mu0=1.0, phi0=1.0):
    """Exact noise-free solution: ``(v+1)^2 = (v0+1)^2 - t``, ``mu`` decays along it."""
    c = (v0 + 1.0) ** 2
    if t >= c:
        raise RejectedInputError(f"the drift solution reaches v = -1 before t = {t}")
    root = math.sqrt(c - t)
    return CoulombState(root - 1.0, mu0 * math.exp(-2.0 * (math.sqrt(c) - root)), phi0)


def resolve_problem(spec, *, t_end=1.0, v0=None, mu0=None, phi0=None):
    """Build a problem from a preset name.

    Presets: ``scalar10``, ``vec2x2:weak01|weak001|strong``, ``vecMxM:<m>``,
    ``coulomb``.
    """
    name, _, arg = spec.partition(":")
    if name == "scalar10" and not arg:
        return build_scalar_noise_problem(t_end)
    if name == "vec2x2":
        if arg not in VEC2X2_PRESETS:
            raise ConfigurationError(f"vec2x2 preset must be one of {sorted(VEC2X2_PRESETS)}, got {arg!r}")
        return LinearSdeProblem(
            *_vec2x2_parts(VEC2X2_PRESETS[arg]), t_end=t_end, name=f"vec2x2:{arg}"
        )
    if name == "vecMxM":
        try:
            m = int(arg or 10)
        except ValueError:
            raise ConfigurationError(f"vecMxM needs an integer size, got {arg!r}") from None
        try:
            return build_vectorial_mxm(m, t_end)
        except RejectedInputError as exc:
            raise ConfigurationError(str(exc)) from None
    if name == "coulomb" and not arg:
        kwargs = {k: val for k, val in (("v0", v0), ("mu0", mu0), ("phi0", phi0)) if val is not None}
        try:
            return CoulombProblem(t_end=t_end, **kwargs)
        except RejectedInputError as exc:
            raise ConfigurationError(str(exc)) from None
    raise ConfigurationError(f"unknown problem preset {spec!r}")


def _vec2x2_parts(alpha2):
    p = build_vectorial_2x2(1.0, alpha2)
    return p.a, p.noise_ops, p.y0
