import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdesplit.direct import (
    ab_split_step,
    em_step_coulomb,
    em_step_linear,
    exact_linear_step,
    milstein_step_coulomb,
    milstein_step_diag,
    milstein_step_full,
    summative_split_step,
)
from sdesplit.errors import RejectedInputError, SingularityError
from sdesplit.linalg import mat_exp
from sdesplit.metrics import estimate_order
from sdesplit.problems import (
    CoulombProblem,
    CoulombState,
    LinearSdeProblem,
    build_scalar_noise_problem,
    build_vectorial_2x2,
    build_vectorial_mxm,
)
from sdesplit.wiener import StepContext, generate_path

ONE_DIM = LinearSdeProblem(np.array([[-1.0]]), [np.array([[0.01]])], np.ones(1))
CTX = StepContext.from_values(0.1, [0.05])
small = st.floats(-0.5, 0.5, allow_nan=False)


def test_em_linear_examples():
    assert em_step_linear([1.0], ONE_DIM, CTX)[0] == pytest.approx(0.9005, abs=1e-15)
    p = build_scalar_noise_problem()
    y = np.linspace(1, 2, 10)
    np.testing.assert_allclose(em_step_linear(y, p, StepContext.from_values(0.1, [0.0])), y + p.a @ y * 0.1)
    scal = LinearSdeProblem(np.zeros((2, 2)), [np.eye(2)], np.ones(2))
    np.testing.assert_allclose(em_step_linear([1.0, 1.0], scal, StepContext.from_values(0.1, [0.2])), [1.2, 1.2])


def test_milstein_diag_examples():
    assert milstein_step_diag([1.0], ONE_DIM, CTX)[0] == pytest.approx(0.900495125, abs=1e-15)
    dt = 0.04
    ctx = StepContext.from_values(dt, [0.2])  # dW^2 == dt
    p = build_scalar_noise_problem()
    np.testing.assert_allclose(milstein_step_diag(p.y0, p, ctx), em_step_linear(p.y0, p, ctx), rtol=1e-15)
    zero_ops = LinearSdeProblem(-np.eye(3), [np.zeros((3, 3))], np.ones(3))
    np.testing.assert_array_equal(milstein_step_diag(np.ones(3), zero_ops, CTX), np.ones(3) * 0.9)


def _milstein_full_transcription(y, p, dt, dw, aux):
    # direct evaluation of the displayed formula with explicit loops
    out = y + p.a @ y * dt
    for j, pj in enumerate(p.noise_ops):
        out = out + pj @ y * dw[j]
    for i, pi in enumerate(p.noise_ops):
        out = out + 0.5 * pi @ pi.T @ y * (dw[i] ** 2 - dt)
    for i in range(p.n_noise):
        for j in range(i + 1, p.n_noise):
            pi, pj = p.noise_ops[i], p.noise_ops[j]
            j_ji = 0.5 * dw[j] * dw[i] - 0.5 * (aux[i] * dw[j] - aux[j] * dw[i])
            j_ij = 0.5 * dw[i] * dw[j] - 0.5 * (aux[j] * dw[i] - aux[i] * dw[j])
            out = out + 0.5 * (pi @ pj - pj @ pi) @ y * (j_ji - j_ij)
    return out


def test_milstein_full_against_transcription():
    p = build_vectorial_2x2(1.0, 1.0)
    y = np.array([1.0, 1.0])
    ctx = StepContext.from_values(0.05, [0.1, 0.2], [0.01, 0.02])
    expected = _milstein_full_transcription(y, p, 0.05, [0.1, 0.2], [0.01, 0.02])
    np.testing.assert_allclose(milstein_step_full(y, p, ctx), expected, rtol=1e-14)


def test_milstein_full_collapses():
    ctx = StepContext.from_values(0.1, [0.3], [0.07])
    p = build_scalar_noise_problem()
    assert np.array_equal(milstein_step_full(p.y0, p, ctx), milstein_step_diag(p.y0, p, ctx))
    comm = LinearSdeProblem(-np.eye(2), [np.diag([0.1, 0.2]), np.diag([0.3, -0.1])], np.ones(2))
    ctx2 = StepContext.from_values(0.1, [0.3, -0.2], [0.05, 0.01])
    np.testing.assert_allclose(milstein_step_full(comm.y0, comm, ctx2), milstein_step_diag(comm.y0, comm, ctx2), rtol=1e-15)


def test_ab_split_examples():
    value = ab_split_step([1.0], ONE_DIM, CTX)[0]
    assert value == pytest.approx(math.exp(-0.099505), rel=1e-14)
    assert value == pytest.approx(0.9052854, abs=1e-7)
    assert value == exact_linear_step([1.0], ONE_DIM, CTX)[0]
    det = LinearSdeProblem(np.array([[-1.0, 0.3], [0.0, -2.0]]), [np.zeros((2, 2))], np.ones(2))
    np.testing.assert_allclose(
        ab_split_step(det.y0, det, StepContext.from_values(0.1, [0.0])), mat_exp(det.a * 0.1) @ det.y0, rtol=1e-15
    )
    with pytest.raises(RejectedInputError):
        ab_split_step(np.ones(2), build_vectorial_2x2(), StepContext.from_values(0.1, [0.1, 0.1]))


def test_summative_examples():
    p = build_scalar_noise_problem()
    dt = 0.1
    pm = p.noise_ops[0]
    ctx = StepContext.from_values(dt, [0.05], summative_dW=np.array([[0.1], [-0.1], [0.2], [0.0]]))
    expected = mat_exp(0.1 * pm) @ mat_exp((p.a - pm @ pm.T / 2) * dt) @ p.y0
    np.testing.assert_allclose(summative_split_step(p.y0, p, ctx, 4), expected, rtol=1e-14)
    zero = StepContext.from_values(dt, [0.05], summative_dW=np.zeros((4, 1)))
    np.testing.assert_allclose(
        summative_split_step(p.y0, p, zero, 4), mat_exp((p.a - pm @ pm.T / 2) * dt) @ p.y0, rtol=1e-15
    )
    one = StepContext.from_values(dt, [0.05], summative_dW=np.array([[0.05]]))
    np.testing.assert_allclose(summative_split_step(p.y0, p, one, 1), ab_split_step(p.y0, p, CTX), rtol=1e-15)
    with pytest.raises(RejectedInputError):
        summative_split_step(p.y0, p, ctx, 3)


def test_exact_linear_examples():
    ident = LinearSdeProblem(np.zeros((3, 3)), [np.zeros((3, 3))], np.ones(3))
    y = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(exact_linear_step(y, ident, StepContext.from_values(0.3, [0.7])), y)


def test_exact_minus_em_is_first_order():
    p = build_vectorial_2x2(1.0, 1.0)
    points = []
    for dt in (1e-2, 1e-3, 1e-4):
        path = generate_path(2, 2000, dt, 17)
        gaps = [
            np.linalg.norm(exact_linear_step(p.y0, p, path.step(n)) - em_step_linear(p.y0, p, path.step(n)))
            for n in range(path.n_steps)
        ]
        points.append((dt, math.sqrt(np.mean(np.square(gaps)))))
    assert 0.9 <= estimate_order(points).slope <= 1.1


def test_zero_noise_milstein_minus_em():
    for p in (build_scalar_noise_problem(), build_vectorial_2x2(), build_vectorial_mxm(5)):
        ctx = StepContext.from_values(0.1, np.zeros(p.n_noise))
        y = np.linspace(0.5, 1.5, p.dim)
        gap = sum(0.5 * ppt @ y for ppt in p.ppt_stack) * 0.1
        np.testing.assert_allclose(milstein_step_diag(y, p, ctx) - em_step_linear(y, p, ctx), -gap, rtol=1e-12, atol=1e-17)


def test_null_driver_reduces_to_flows():
    p = build_vectorial_2x2()
    ctx = StepContext.from_values(0.1, [0.0, 0.0], null=True)
    y = p.y0
    np.testing.assert_array_equal(milstein_step_diag(y, p, ctx), em_step_linear(y, p, ctx))
    np.testing.assert_allclose(exact_linear_step(y, p, ctx), mat_exp(p.a * 0.1) @ y, rtol=1e-15)


@pytest.mark.parametrize(
    "step",
    [em_step_linear, milstein_step_diag, milstein_step_full, exact_linear_step],
)
@given(k=st.integers(-4, 4), dw=st.lists(small, min_size=2, max_size=2), aux=st.lists(small, min_size=2, max_size=2))
def test_linear_in_state(step, k, dw, aux):
    p = build_vectorial_2x2(1.0, 0.5)
    ctx = StepContext.from_values(0.05, dw, aux)
    y = np.array([0.3, -1.2])
    alpha = 2.0**k
    assert np.array_equal(step(alpha * y, p, ctx), alpha * step(y, p, ctx))


def test_block_shapes_match_single_paths():
    p = build_vectorial_mxm(4)
    rng = np.random.default_rng(0)
    ys = rng.standard_normal((5, 4))
    dws = rng.standard_normal((5, 2)) * 0.1
    aux = rng.standard_normal((5, 2)) * 0.02
    ctx = StepContext(0, 0.01, dws, aux)
    for step in (em_step_linear, milstein_step_diag, milstein_step_full, exact_linear_step):
        block = step(ys, p, ctx)
        for r in range(5):
            single = step(ys[r], p, StepContext.from_values(0.01, dws[r], aux[r]))
            np.testing.assert_allclose(block[r], single, rtol=1e-14, atol=1e-16)


def test_linear_dimension_mismatch():
    with pytest.raises(RejectedInputError):
        em_step_linear(np.ones(3), ONE_DIM, CTX)
    with pytest.raises(RejectedInputError):
        em_step_linear(np.ones(2), build_vectorial_2x2(), CTX)


COULOMB = CoulombProblem()


def test_em_coulomb_examples():
    out = em_step_coulomb(CoulombState(1.0, 0.4, 2.0), COULOMB, StepContext.from_values(0.01, [0.0, 0.0, 0.0]))
    assert isinstance(out, CoulombState)
    assert out.v == pytest.approx(0.9975, abs=1e-15)
    assert out.mu == pytest.approx(0.4 * (1 - 0.01 / 2), abs=1e-15)
    assert out.phi == 2.0
    out = em_step_coulomb(CoulombState(1.0, 0.0, 2.0), COULOMB, StepContext.from_values(0.01, [0.0, 0.0, 0.1]))
    assert out.phi == pytest.approx(2.0 + 0.1 * math.sqrt(0.5), abs=1e-15)


def _coulomb_milstein_transcription(s, dt, dw, aux):
    v, mu, phi = s
    d = 0.5 / (v + 1)
    dd = -0.5 / (v + 1) ** 2
    f = -d

    def area(k, l):
        return 0.5 * dw[k] * dw[l] - 0.5 * (aux[l] * dw[k] - aux[k] * dw[l])

    v1 = v + f * dt + math.sqrt(2 * d) * dw[0] + dd * 0.5 * (dw[0] ** 2 - dt)
    mu1 = (
        mu
        - 2 * d * mu * dt
        + math.sqrt(2 * d * (1 - mu * mu)) * dw[1]
        - 2 * mu * d * 0.5 * (dw[1] ** 2 - dt)
        + math.sqrt(d / d) * math.sqrt(1 - mu * mu) * dd * area(0, 1)
    )
    phi1 = (
        phi
        + math.sqrt(2 * d / (1 - mu * mu)) * dw[2]
        + math.sqrt(d / d) / math.sqrt(1 - mu * mu) * dd * area(0, 2)
        + 2 * d * mu / (1 - mu * mu) * area(1, 2)
    )
    return v1, mu1, phi1


def test_milstein_coulomb_against_transcription():
    s = (1.3, 0.35, 0.2)
    dw, aux = [0.08, -0.05, 0.11], [0.004, 0.01, -0.006]
    out = milstein_step_coulomb(CoulombState(*s), COULOMB, StepContext.from_values(0.01, dw, aux))
    np.testing.assert_allclose(out, _coulomb_milstein_transcription(s, 0.01, dw, aux), rtol=1e-14)


def test_milstein_coulomb_examples():
    zero = StepContext.from_values(0.01, [0.0, 0.0, 0.0], null=True)
    s = CoulombState(1.0, 0.4, 2.0)
    assert milstein_step_coulomb(s, COULOMB, zero) == em_step_coulomb(s, COULOMB, zero)
    ctx = StepContext.from_values(0.01, [0.1, 0.0, 0.0])
    v_gap = milstein_step_coulomb(s, COULOMB, ctx).v - em_step_coulomb(s, COULOMB, ctx).v
    assert v_gap == pytest.approx(0.0, abs=1e-17)


def test_coulomb_block_and_clamp():
    states = np.array([[1.0, 1.0, 0.0], [0.5, -0.2, 1.0]])
    ctx = StepContext(0, 0.01, np.full((2, 3), 0.05), np.zeros((2, 3)))
    out = milstein_step_coulomb(states, COULOMB, ctx)
    assert out.shape == (2, 3) and np.isfinite(out).all()
    with pytest.raises(SingularityError):
        em_step_coulomb(np.array([1.0, np.nan, 0.0]), COULOMB, StepContext.from_values(0.01, [0, 0, 0]))
