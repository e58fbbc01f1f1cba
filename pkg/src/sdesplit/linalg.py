"""Small dense real matrix arithmetic.

Matrices are plain ``float64`` numpy arrays of shape ``(m, m)``; most
functions also accept stacks of shape ``(..., m, m)`` so that a whole
Monte-Carlo block can be processed at once.

The matrix exponential uses the Pade scaling-and-squaring method of
Higham (SIAM J. Matrix Anal. Appl. 26, 2005). Degree and scaling are
chosen per matrix from its 1-norm, so the result for one matrix never
depends on which other matrices share the batch.
"""

from __future__ import annotations

import numpy as np

from .errors import RejectedInputError

__all__ = [
    "PADE_THETA",
    "as_matrix",
    "commutator",
    "mat_exp",
    "mat_mul",
    "pade_parameters",
]

# 1-norm bounds below which the [k/k] Pade approximant has backward error <= 2**-53.
PADE_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}

_PADE_COEFFS = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0,
    ),
    13: (
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0,
        670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
        960960.0, 16380.0, 182.0, 1.0,
    ),
}


_DEGREES = (3, 5, 7, 9, 13)
_THETA_SORTED = np.array([PADE_THETA[d] for d in _DEGREES])


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float64 array or raise RejectedInputError."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise RejectedInputError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError(f"{name} has non-finite entries")
    return arr


def _as_stack(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim < 2:
        raise RejectedInputError(f"{name} must be at least 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise RejectedInputError(f"{name} has non-finite entries")
    return arr


def _require_square(arr, name):
    if arr.shape[-1] != arr.shape[-2]:
        raise RejectedInputError(f"{name} must be square, got shape {arr.shape[-2:]}")


def mat_mul(a, b):
    """Matrix product ``a @ b`` with a dimension check."""
    a = _as_stack(a, "a")
    b = _as_stack(b, "b")
    if a.shape[-1] != b.shape[-2]:
        raise RejectedInputError(
            f"cannot multiply {a.shape[-2:]} by {b.shape[-2:]}: inner dimensions differ"
        )
    return a @ b


def commutator(a, b):
    """Return ``a @ b - b @ a`` for square matrices (or stacks) of equal size."""
    a = _as_stack(a, "a")
    b = _as_stack(b, "b")
    _require_square(a, "a")
    _require_square(b, "b")
    if a.shape[-1] != b.shape[-1]:
        raise RejectedInputError(f"commutator of {a.shape[-2:]} and {b.shape[-2:]}")
    return a @ b - b @ a


def pade_parameters(norm1):
    """Pade degree and number of squarings for a matrix with the given 1-norm."""
    for degree in (3, 5, 7, 9):
        if norm1 <= PADE_THETA[degree]:
            return degree, 0
    theta = PADE_THETA[13]
    if norm1 <= theta:
        return 13, 0
    return 13, int(np.ceil(np.log2(norm1 / theta)))


def _pade_uv(x, degree):
    b = _PADE_COEFFS[degree]
    eye = np.broadcast_to(np.eye(x.shape[-1]), x.shape)
    x2 = x @ x
    if degree == 13:
        x4 = x2 @ x2
        x6 = x4 @ x2
        u = x @ (
            x6 @ (b[13] * x6 + b[11] * x4 + b[9] * x2)
            + b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * eye
        )
        v = (
            x6 @ (b[12] * x6 + b[10] * x4 + b[8] * x2)
            + b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * eye
        )
        return u, v
    powers = [eye, x2]
    for _ in range(2, degree // 2 + 1):
        powers.append(powers[-1] @ x2)
    u_inner = sum(b[2 * k + 1] * powers[k] for k in range(len(powers)))
    v = sum(b[2 * k] * powers[k] for k in range(len(powers)))
    return x @ u_inner, v


def _expm_group(x, degree, squarings):
    if squarings:
        x = x / (2.0 ** squarings)
    u, v = _pade_uv(x, degree)
    r = np.linalg.solve(v - u, v + u)
    for _ in range(squarings):
        r = r @ r
    return r


def mat_exp(m):
    """Matrix exponential of a square matrix or a stack of them.

    Accurate to about 1e-13 relative (1-norm) for well-conditioned inputs
    with norm up to 10; 1x1 inputs use ``np.exp`` directly.
    """
    arr = _as_stack(m, "m")
    _require_square(arr, "m")
    n = arr.shape[-1]
    if n == 1:
        return np.exp(arr)
    flat = arr.reshape(-1, n, n)
    norms = np.abs(flat).sum(axis=-2).max(axis=-1)
    slot = np.searchsorted(_THETA_SORTED, norms, side="left")
    squarings = np.zeros(norms.shape, dtype=np.int64)
    big = slot >= len(_DEGREES)
    if np.any(big):
        squarings[big] = np.ceil(np.log2(norms[big] / PADE_THETA[13])).astype(np.int64)
        slot[big] = len(_DEGREES) - 1
    keys = slot * 4096 + squarings
    out = np.empty_like(flat)
    for key in np.unique(keys):
        idx = np.flatnonzero(keys == key)
        out[idx] = _expm_group(flat[idx], _DEGREES[key // 4096], int(key % 4096))
    return out.reshape(arr.shape)
