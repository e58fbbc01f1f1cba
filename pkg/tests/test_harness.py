import csv
import json
import math

import numpy as np
import pytest

from sdesplit import harness
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
from sdesplit.errors import ConfigurationError, RejectedInputError
from sdesplit.harness import (
    ExperimentConfig,
    ExperimentResult,
    RuntimeOrderingWarning,
    emit_plot_data,
    emit_report,
    format_report,
    parse_report,
    parse_scheme,
    run_experiment,
    split_scheme_list,
)
from sdesplit.iterative import IterConfig, coulomb_relax_step, coulomb_taylor_step, iter_scalar_step, iter_vectorial_step
from sdesplit.metrics import ConvergenceReport, error_variance, strong_error, weak_error
from sdesplit.problems import clamp_state
from sdesplit.wiener import coarsen, generate_path, sample_seed


def small_config(**kw):
    base = dict(problem="vec2x2:weak01", schemes="em,milstein", dt_list="0.1,0.05", n_paths=6, record_timing=False)
    base.update(kw)
    return ExperimentConfig(**base)


def manual_linear(problem, label, path, substeps=10, c3="riemann"):
    y = problem.y0.copy()
    out = [y]
    for n in range(path.n_steps):
        if label.startswith("iter"):
            k = int(label.split(":")[1])
            if problem.n_noise == 1:
                cfg = IterConfig(iterations=k, quadrature_substeps=substeps, c3_variant=c3)
                y = iter_scalar_step(y, problem, path.step(n, sub_steps=substeps), cfg)
            else:
                y = iter_vectorial_step(y, problem, path.step(n), IterConfig(iterations=k))
        elif label.startswith("summative"):
            k = int(label.split(":")[1])
            y = summative_split_step(y, problem, path.step(n, summative_steps=k), k)
        else:
            step = {
                "em": em_step_linear,
                "milstein": milstein_step_diag,
                "milstein_full": milstein_step_full,
                "ab_split": ab_split_step,
                "exact": exact_linear_step,
            }[label]
            y = step(y, problem, path.step(n))
        out.append(y)
    return np.array(out)


@pytest.mark.parametrize(
    "problem,schemes",
    [
        ("scalar10", ["em", "milstein", "milstein_full", "ab_split", "summative:4", "iter:1", "iter:2", "iter:3"]),
        ("vec2x2:strong", ["em", "milstein", "milstein_full", "iter:1", "iter:2"]),
        ("vecMxM:4", ["em", "milstein_full", "iter:2"]),
    ],
)
def test_harness_matches_step_functions(problem, schemes):
    cfg = small_config(problem=problem, schemes=",".join(schemes), dt_list="0.25,0.125", n_paths=2, master_seed=7)
    result = run_experiment(cfg)
    prob = cfg.build_problem()
    dt_fine = 0.125 / 8
    fine = generate_path(prob.n_noise, 64, dt_fine, sample_seed(7, 0))
    np.testing.assert_allclose(result.reference_trajectory, manual_linear(prob, "exact", fine), rtol=1e-12)
    for dt in (0.25, 0.125):
        path = coarsen(fine, int(round(dt / dt_fine)))
        for label in schemes:
            np.testing.assert_allclose(
                result.trajectories[label, dt], manual_linear(prob, label, path), rtol=1e-12, atol=1e-15, err_msg=label
            )


@pytest.mark.parametrize("variant", ["unweighted", "increment_weighted"])
def test_harness_c3_variants_match_step_function(variant):
    cfg = small_config(problem="scalar10", schemes="iter:3", dt_list="0.25", n_paths=1, c3_variant=variant, iter_substeps=4)
    result = run_experiment(cfg)
    prob = cfg.build_problem()
    fine = generate_path(1, 32, 0.25 / 8, sample_seed(0, 0))
    expected = manual_linear(prob, "iter:3", coarsen(fine, 8), substeps=4, c3=variant)
    np.testing.assert_allclose(result.trajectories["iter:3", 0.25], expected, rtol=1e-12)


def test_harness_coulomb_matches_step_functions():
    cfg = ExperimentConfig(
        problem="coulomb",
        schemes="em,milstein,coulomb_relax:3,simpson,coulomb_taylor",
        dt_list="0.1,0.05",
        n_paths=2,
        reference="fine_milstein:0.0125",
        record_timing=False,
        master_seed=3,
    )
    result = run_experiment(cfg)
    prob = cfg.build_problem()
    fine = generate_path(3, 80, 0.0125, sample_seed(3, 0))

    def run(step, path):
        s = prob.initial_state
        out = [s]
        for n in range(path.n_steps):
            s = clamp_state(step(s, path.step(n)), prob.epsilon_mu)[0]
            out.append(s)
        return np.array(out)

    ref = run(lambda s, c: milstein_step_coulomb(s, prob, c), fine)
    np.testing.assert_allclose(result.reference_trajectory, ref, rtol=1e-12)
    steps = {
        "em": lambda s, c: em_step_coulomb(s, prob, c),
        "milstein": lambda s, c: milstein_step_coulomb(s, prob, c),
        "coulomb_relax:3,simpson": lambda s, c: coulomb_relax_step(s, prob, c, IterConfig(sweeps=3, quad_rule="simpson")),
        "coulomb_taylor:2,trapezoid": lambda s, c: coulomb_taylor_step(s, prob, c, IterConfig()),
    }
    for dt in (0.1, 0.05):
        path = coarsen(fine, int(round(dt / 0.0125)))
        for label, step in steps.items():
            np.testing.assert_allclose(result.trajectories[label, dt], run(step, path), rtol=1e-11, err_msg=label)


def test_report_statistics_follow_per_path_errors():
    result = run_experiment(small_config(n_paths=9))
    for r in result:
        errs = list(r.per_path_errors)
        assert r.n_paths == 9 and r.excluded_paths == 0
        assert r.strong_error == strong_error(errs)
        assert r.weak_error == weak_error(errs)
        assert r.variance == error_variance(errs)
        assert r.runtime_seconds == 0.0


def test_coulomb_reports_carry_components():
    cfg = ExperimentConfig(problem="coulomb", schemes="em", dt_list="0.1", n_paths=3,
                           reference="fine_milstein:0.01", record_timing=False)
    (r,) = run_experiment(cfg).reports
    assert set(r.component_errors) == {"v", "mu", "phi"}
    assert r.strong_error == r.component_errors["v"]["strong_error"]
    assert r.clamp_events > 0  # mu0 sits on the clamp boundary


def test_determinism_and_worker_independence():
    cfg = small_config(n_paths=5)
    a = format_report(run_experiment(cfg))
    b = format_report(run_experiment(cfg))
    assert a == b
    monkey_block = harness.MAX_BLOCK
    try:
        harness.MAX_BLOCK = 2  # force several blocks so the pool is used
        c = format_report(run_experiment(small_config(n_paths=5, workers=3)))
        d = format_report(run_experiment(small_config(n_paths=5, workers=1)))
    finally:
        harness.MAX_BLOCK = monkey_block
    assert c == d == a


@pytest.mark.filterwarnings("ignore::sdesplit.harness.RuntimeOrderingWarning")
def test_timing_recorded_when_enabled():
    result = run_experiment(small_config(record_timing=True, timing_repeats=1))
    assert all(r.runtime_seconds > 0 for r in result)


@pytest.mark.parametrize(
    "problem,scheme",
    [
        ("vec2x2:weak01", "ab_split"),
        ("vec2x2:weak01", "summative:4"),
        ("vecMxM:3", "iter:3"),
        ("scalar10", "coulomb_relax"),
        ("coulomb", "ab_split"),
        ("coulomb", "milstein_full"),
        ("coulomb", "iter:2"),
    ],
)
def test_incompatible_pairs_named(problem, scheme):
    with pytest.raises(ConfigurationError) as info:
        run_experiment(small_config(problem=problem, schemes=scheme, reference="fine_milstein" if problem == "coulomb" else None))
    msg = str(info.value)
    assert scheme.split(":")[0] in msg and problem.split(":")[0] in msg


@pytest.mark.parametrize(
    "kw",
    [
        {"dt_list": "0.3"},
        {"dt_list": "0.1", "reference": "exact_linear:0.03"},
        {"reference": "euler"},
        {"schemes": "em,em"},
        {"schemes": "rk4"},
        {"schemes": "iter:4"},
        {"schemes": "summative:0"},
        {"n_paths": 0},
        {"format": "xml"},
        {"dt_list": "-0.1"},
    ],
)
def test_config_errors(kw):
    with pytest.raises(ConfigurationError):
        run_experiment(small_config(**kw))


def test_coulomb_rejects_exact_reference():
    with pytest.raises(ConfigurationError):
        run_experiment(ExperimentConfig(problem="coulomb", schemes="em", reference="exact_linear", n_paths=1))


def test_scheme_parsing():
    assert split_scheme_list("em, coulomb_relax:3,simpson,coulomb_taylor,iter:2") == [
        "em", "coulomb_relax:3,simpson", "coulomb_taylor", "iter:2",
    ]
    spec = parse_scheme("coulomb_relax:3,simpson")
    assert (spec.sweeps, spec.quad_rule, spec.label) == (3, "simpson", "coulomb_relax:3,simpson")
    assert parse_scheme("coulomb_taylor", sweeps=4).label == "coulomb_taylor:4,trapezoid"
    assert parse_scheme("summative:8").n_sub == 8
    with pytest.raises(ConfigurationError):
        parse_scheme("em:2")
    with pytest.raises(ConfigurationError):
        parse_scheme("coulomb_relax:boole")


def report(**kw):
    base = dict(scheme="em", dt=0.1, n_paths=3, strong_error=0.1, weak_error=0.09, mean_bias=0.01, variance=1e-4,
                time_avg_mse=1 / 3, runtime_seconds=0.00123, clamp_events=2, excluded_paths=1)
    base.update(kw)
    return ConvergenceReport(**base)


def test_csv_format_and_round_trip():
    rows = [report(), report(scheme="coulomb_relax:2,simpson", dt=0.05, variance=float("nan"))]
    text = format_report(rows, "csv")
    lines = text.splitlines()
    assert lines[0] == "scheme,dt,n_paths,strong_error,weak_error,mean_bias,variance,time_avg_mse,runtime_seconds,clamp_events,excluded_paths"
    assert "0.33333333333333331" in lines[1]  # 17 significant digits
    back = parse_report(text, "csv")
    assert back[0].row() == rows[0].row()
    assert back[1].scheme == rows[1].scheme and math.isnan(back[1].variance)
    single = format_report([report()], "csv")
    assert len(single.splitlines()) == 2


def test_json_round_trip_and_nan():
    rows = [report(per_path_errors=(0.1, None, 0.2)), report(mean_bias=float("nan"))]
    text = format_report(rows, "json")
    data = json.loads(text)
    assert data[1]["mean_bias"] is None
    assert data[0]["per_path_errors"] == [0.1, None, 0.2]
    back = parse_report(text, "json")
    assert back[0].row() == rows[0].row()
    assert back[0].per_path_errors == (0.1, None, 0.2)


def test_emit_report_errors(tmp_path):
    with pytest.raises(RejectedInputError):
        format_report([], "csv")
    with pytest.raises(OSError):
        emit_report([report()], "csv", tmp_path / "missing" / "r.csv")
    path = emit_report([report()], "json", tmp_path / "r.json")
    assert json.loads(path.read_text())[0]["scheme"] == "em"


def test_plot_data_files(tmp_path):
    result = run_experiment(small_config(schemes="em,milstein_full", dt_list="0.1,0.05,0.025"))
    out = emit_plot_data(result, tmp_path / "plots")
    rows = list(csv.DictReader((out / "error_vs_dt.csv").open()))
    assert len(rows) == 6
    traj = list(csv.reader((out / "trajectory_milstein_full_dt0.050000000000000003.csv").open()))
    assert traj[0] == ["t", "y0", "y1"] and len(traj) == 1 + 21
    assert (out / "plot_results.py").exists() and (out / "timing.csv").exists()
    compile((out / "plot_results.py").read_text(), "plot_results.py", "exec")


def test_coulomb_trajectory_columns(tmp_path):
    cfg = ExperimentConfig(problem="coulomb", schemes="coulomb_taylor", dt_list="0.1", n_paths=1,
                           reference="fine_milstein:0.01", record_timing=False)
    out = emit_plot_data(run_experiment(cfg), tmp_path)
    header = next(csv.reader((out / "trajectory_reference.csv").open()))
    assert header == ["t", "v", "mu", "phi"]


def test_dump_noise(tmp_path):
    target = tmp_path / "noise.csv"
    run_experiment(small_config(dump_noise=str(target), dt_list="0.1"))
    rows = list(csv.reader(target.open()))
    assert rows[0] == ["step", "dim", "dW", "dW_aux"] and len(rows) == 1 + 80 * 2
    path = generate_path(2, 80, 0.1 / 8, sample_seed(0, 0))
    assert float(rows[1][2]) == path.increments[0, 0]


def test_failure_threshold():
    cfg = small_config(n_paths=10, max_failures=0.1)
    ok = ExperimentResult(cfg, "p", (), [report(excluded_paths=1)])
    bad = ExperimentResult(cfg, "p", (), [report(excluded_paths=2)])
    assert not ok.failure_exceeded and bad.failure_exceeded


def test_ordering_warning():
    cfg = small_config(record_timing=True)
    plan = harness._make_plan(cfg, cfg.build_problem())
    rows = [report(scheme="em", runtime_seconds=1.0), report(scheme="milstein", runtime_seconds=0.1)]
    with pytest.warns(RuntimeOrderingWarning):
        msgs = harness._ordering_warnings(rows, cfg, plan)
    assert len(msgs) == 1 and "em" in msgs[0]
