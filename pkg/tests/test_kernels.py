import numpy as np
import pytest

from sdesplit import _pykernels, kernels
from sdesplit.direct import em_step_coulomb
from sdesplit.errors import SingularityError
from sdesplit.problems import CoulombProblem
from sdesplit.wiener import StepContext

compiled = pytest.importorskip("sdesplit._ckernels") if kernels.BACKEND == "compiled" else None
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def random_linear(seed, m=5, k=3, paths=4, steps=30):
    rng = np.random.default_rng(seed)
    d0 = np.eye(m) + 0.05 * rng.standard_normal((m, m))
    mats = 0.1 * rng.standard_normal((k, m, m))
    coef = 0.2 * rng.standard_normal((paths, steps, k))
    y0 = rng.standard_normal((paths, m))
    return d0, mats, coef, y0


def test_backend_selection():
    assert kernels.BACKEND in ("compiled", "python")
    assert kernels.get_backend("python") is _pykernels
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


@needs_compiled
def test_affine_sequence_backends_agree():
    args = random_linear(1)
    a = _pykernels.affine_sequence(*args)
    b = compiled.affine_sequence(*args)
    np.testing.assert_allclose(b, a, rtol=1e-13, atol=1e-15)


@needs_compiled
@pytest.mark.parametrize("with_pre", [False, True])
def test_expm_sequence_backends_agree(with_pre):
    d0, mats, coef, y0 = random_linear(2)
    m0 = -0.1 * np.eye(5) + 0.02 * d0
    pre = np.eye(5) * 0.99 if with_pre else None
    a = _pykernels.expm_sequence(m0, mats, coef, y0, pre)
    b = compiled.expm_sequence(m0, mats, coef, y0, pre)
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-15)


@needs_compiled
def test_compiled_expm_matches_library():
    from sdesplit.linalg import mat_exp

    rng = np.random.default_rng(5)
    for scale in (1e-3, 0.5, 3.0, 12.0):
        m = rng.standard_normal((4, 4)) * scale
        np.testing.assert_allclose(compiled.expm(m), mat_exp(m), rtol=1e-12)


@needs_compiled
@pytest.mark.parametrize("kind", [0, 1, 2])
@pytest.mark.parametrize("simpson", [False, True])
def test_coulomb_sequence_backends_agree(kind, simpson):
    rng = np.random.default_rng(kind + 10 * simpson)
    paths, steps, dt = 6, 40, 0.01
    s0 = np.column_stack([rng.uniform(0.5, 2, paths), rng.uniform(-0.99, 0.99, paths), np.zeros(paths)])
    s0[0, 1] = 1.0  # exercises the clamp
    incr = rng.standard_normal((paths, steps, 3)) * np.sqrt(dt)
    aux = rng.standard_normal((paths, steps, 3)) * np.sqrt(dt) * 0.2
    a = _pykernels.coulomb_sequence(kind, s0, incr, aux, dt, 1e-8, 3, simpson, False)
    b = compiled.coulomb_sequence(kind, s0, incr, aux, dt, 1e-8, 3, simpson, False)
    np.testing.assert_allclose(b[0], a[0], rtol=1e-11, atol=1e-13)
    np.testing.assert_array_equal(b[1], a[1])
    np.testing.assert_array_equal(b[2], a[2])


@needs_compiled
def test_coulomb_sequence_failure_mask_agrees():
    # a huge kick drives v below -1 in one step: the path must be marked failed
    paths, steps, dt = 3, 5, 0.1
    s0 = np.tile([0.05, 0.2, 0.0], (paths, 1))
    incr = np.zeros((paths, steps, 3))
    incr[1, 0, 0] = -50.0
    aux = np.zeros_like(incr)
    for kind in (0, 1, 2):
        a = _pykernels.coulomb_sequence(kind, s0, incr, aux, dt, 1e-8, 2, False, False)
        b = compiled.coulomb_sequence(kind, s0, incr, aux, dt, 1e-8, 2, False, False)
        np.testing.assert_array_equal(a[2], b[2])
        np.testing.assert_allclose(b[0][~a[2]], a[0][~a[2]], rtol=1e-12)


def test_step_loop_marks_failures_and_freezes():
    def step(s, ctx):
        if np.any(s[:, 0] > 2.5):
            raise SingularityError("boom", state=s)
        return s + 1.0

    s0 = np.array([[0.0], [1.0], [2.0]])
    contexts = [StepContext(n, 0.1, np.zeros((3, 1)), np.zeros((3, 1))) for n in range(3)]
    traj, clamps, failed = _pykernels.step_loop(step, s0, contexts)
    np.testing.assert_array_equal(failed, [False, True, True])
    np.testing.assert_array_equal(traj[0, :, 0], [0, 1, 2, 3])
    assert np.isnan(traj[2, 2:]).all() and traj[2, 1, 0] == 3.0


def test_step_loop_counts_clamps():
    p = CoulombProblem()
    s0 = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    contexts = [StepContext(n, 0.01, np.zeros((2, 3)), np.zeros((2, 3))) for n in range(2)]
    _, clamps, failed = _pykernels.step_loop(lambda s, c: em_step_coulomb(s, p, c), s0, contexts, 1e-8)
    assert not failed.any()
    assert clamps[1] == 0
