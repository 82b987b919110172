"""Diagnostics tests: classification rules, ensemble determinism, capture
tallies, convergence statistics, stopping times."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdlab.diagnostics import (
    CaptureConfig,
    EnsembleSpec,
    capture_escape_frequency,
    classify_dichotomy,
    compute_stopping_times,
    envelope_sup_over_ball,
    run_ensemble,
    split_seed,
)
from sgdlab.engine import Schedule, Trajectory, run_trajectory
from sgdlab.errors import ContractViolation
from sgdlab.objectives import NoiseModel, NoiseSpec, ObjectiveSpec, StochasticOracle, catalog_lookup
from sgdlab.reports import dumps_json, ensemble_report_payload


def synthetic_trajectory(norms, horizon=None):
    norms = np.asarray(norms, dtype=float)
    n = len(norms)
    return Trajectory(
        ks=np.arange(n),
        thetas=norms[:, None].copy(),
        f_values=np.zeros(n),
        grad_norms=np.zeros(n),
        seed=0,
        schedule_id="synthetic",
        objective_id="synthetic",
        oracle_id="synthetic",
        horizon=n - 1 if horizon is None else horizon,
        norm_trace=norms,
    )


# ---------------------------------------------------------------------------
# dichotomy classification
# ---------------------------------------------------------------------------

def test_classify_decaying_norms_converged_like():
    ks = np.arange(1, 2001)
    traj = synthetic_trajectory(1.0 / ks)
    c = classify_dichotomy(traj, 200, 0.5, 10.0)
    assert c.verdict == "converged-like"
    assert c.evidence["window_range"] < 0.5
    assert c.evidence["window_min"] + c.evidence["window_range"] < 10.0


def test_classify_growing_norms_diverging_like():
    traj = synthetic_trajectory(np.arange(2000, dtype=float))
    c = classify_dichotomy(traj, 100, 0.5, 10.0)
    assert c.verdict == "diverging-like"
    assert c.evidence["window_min"] > 10.0


def test_classify_oscillation_undecided():
    r_div = 10.0
    norms = np.tile([0.0, 2.0 * r_div], 500)
    c = classify_dichotomy(synthetic_trajectory(norms), 100, 0.5, r_div)
    assert c.verdict == "undecided"


def test_classify_rules_are_mutually_exclusive():
    # converged-like needs window max < R_div, diverging-like needs min > R_div
    rng = np.random.default_rng(0)
    for _ in range(200):
        norms = rng.uniform(0, 30, 50)
        c = classify_dichotomy(synthetic_trajectory(norms), 20, rng.uniform(0.1, 5),
                               rng.uniform(1, 20))
        conv = (c.evidence["window_range"] < c.epsilon_conv
                and c.evidence["window_min"] + c.evidence["window_range"] < c.R_div)
        div = c.evidence["window_min"] > c.R_div
        assert not (conv and div)
        assert c.verdict == ("converged-like" if conv else
                             "diverging-like" if div else "undecided")


def test_classify_window_contract():
    traj = synthetic_trajectory(np.ones(100))
    with pytest.raises(ContractViolation):
        classify_dichotomy(traj, 0, 0.1, 10.0)
    with pytest.raises(ContractViolation):
        classify_dichotomy(traj, 1000, 0.1, 10.0)


def test_classify_without_trace_uses_recorded_steps():
    traj = synthetic_trajectory(np.linspace(100, 200, 51))
    traj.norm_trace = None
    traj.ks = np.arange(0, 51) * 10  # pretend stride-10 recording
    traj.horizon = 500
    c = classify_dichotomy(traj, 100, 0.5, 50.0)
    assert c.verdict == "diverging-like"


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

def quad_spec(noise=None, K=2000, n=10, seed=42, stride=1, theta0=(1.0,),
              schedule=None):
    return EnsembleSpec(
        objective=ObjectiveSpec("quadratic"),
        noise=noise or NoiseSpec("zero"),
        schedule=schedule or Schedule.scalar(0.5, 0.75, k0=2),
        theta0=theta0,
        horizon=K,
        n_trajectories=n,
        master_seed=seed,
        record_stride=stride,
    )


def test_zero_noise_ensemble_all_converged_with_recursion_oracle():
    spec = quad_spec(K=2000, n=10, stride=10)
    result = run_ensemble(spec, epsilon_conv=0.5, R_div=10.0)
    assert [c.verdict for c in result.classifications] == ["converged-like"] * 10
    # deterministic recursion oracle: theta_K = theta0 * prod(1 - eta_k)
    x = 1.0
    for k in range(2000):
        x = x - 0.5 * (k + 2.0) ** -0.75 * x
    med = result.convergence.grad_norm_median[-1]
    assert med == pytest.approx(abs(x), rel=1e-12)
    assert med < 1e-3


def test_ensemble_bitwise_determinism():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=1.0), K=500, n=6)
    r1 = run_ensemble(spec, gammas=[0.0, 0.5],
                      capture=CaptureConfig((0.0,), 1.0, 0.5))
    r2 = run_ensemble(spec, gammas=[0.0, 0.5],
                      capture=CaptureConfig((0.0,), 1.0, 0.5))
    assert dumps_json(ensemble_report_payload(r1)) == dumps_json(ensemble_report_payload(r2))


def test_ensemble_parallel_matches_sequential():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=0.5), K=300, n=8)
    seq = run_ensemble(spec)
    par = run_ensemble(spec, jobs=2)
    assert dumps_json(ensemble_report_payload(seq)) == dumps_json(ensemble_report_payload(par))


def test_trajectory_seeds_are_split_and_distinct():
    spec = quad_spec(n=20)
    result = run_ensemble(spec)
    assert result.seeds == [split_seed(42, i) for i in range(20)]
    assert len(set(result.seeds)) == 20


def test_split_seed_is_stable():
    # frozen: seed splitting must never change across releases
    assert split_seed(0, 0) == 8668861027912758289
    assert split_seed(20250808, 7) == 6254504508572951081


# ---------------------------------------------------------------------------
# capture / escape
# ---------------------------------------------------------------------------

def test_zero_noise_descent_never_escapes():
    spec = quad_spec(K=500, n=5, theta0=(0.9,))
    report = capture_escape_frequency(spec, [0.0], 2.0, 0.2)
    assert report.total_escapes == 0
    assert np.all(report.empirical == 0.0)


def test_theoretical_tail_closed_form():
    # eta_k = (k+1)^-0.75, eps = 1, G_R = sup_{|x|<=2} x^2 = 4 (zero noise)
    spec = quad_spec(schedule=Schedule.scalar(1.0, 0.75, k0=1), K=1000, n=2,
                     theta0=(0.5,))
    report = capture_escape_frequency(spec, [0.0], 2.0, 1.0)
    assert report.G_R == pytest.approx(4.0, rel=1e-8)
    ks = np.arange(1000)
    expected = 4.0 * (ks + 1.0) ** -1.5
    assert report.theoretical_tail == pytest.approx(expected, rel=1e-8)
    oracle_sum = math.fsum(4.0 * (k + 1.0) ** -1.5 for k in range(1000))
    assert report.theoretical_sum == pytest.approx(oracle_sum, rel=1e-10)


def test_escape_bound_holds_for_compliant_noise():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=1.0),
                     schedule=Schedule.scalar(1.0, 0.75, k0=1),
                     K=3000, n=50, theta0=(0.5,), stride=100)
    result = run_ensemble(spec, capture=CaptureConfig((0.0,), 1.0, 0.5))
    assert result.capture.bound_margin_max <= 0.0


def test_rademacher_counterexample_produces_escapes():
    # pilot-pinned: the multiplicative random walk leaves a moderate ball
    spec = EnsembleSpec(
        objective=ObjectiveSpec("loglog1p-abs"),
        noise=NoiseSpec("rademacher-radial"),
        schedule=Schedule.scalar(0.5, 0.6, k0=1),
        theta0=(100.0,),
        horizon=10**4,
        n_trajectories=20,
        master_seed=55,
        record_stride=100,
    )
    report = capture_escape_frequency(spec, [0.0], 150.0, 15.0)
    assert report.total_escapes > 0
    assert report.G_R >= 150.0 ** 2


def test_envelope_sup_radial_reduction_matches_grid():
    spec = EnsembleSpec(
        objective=ObjectiveSpec("quadratic", dimension=2),
        noise=NoiseSpec("additive-gaussian", sigma=1.0),
        schedule=Schedule.scalar(1.0, 0.75, dim=2),
        theta0=(1.0, 0.0),
        horizon=10,
        n_trajectories=1,
        master_seed=0,
    )
    # ball of radius 2 around (1, 0): norms reach 3, so sup G = 9 + p sigma^2
    val = envelope_sup_over_ball(spec, [1.0, 0.0], 2.0)
    assert val == pytest.approx(9.0 + 2.0, rel=1e-6)


# ---------------------------------------------------------------------------
# convergence statistics
# ---------------------------------------------------------------------------

def test_deterministic_descent_mean_grad_strictly_decreasing():
    spec = quad_spec(K=1000, n=4, stride=50)
    result = run_ensemble(spec)
    means = np.array(result.convergence.grad_norm_mean)
    assert np.all(np.diff(means) < 0.0)


def test_gamma_zero_moment_is_identically_one():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=0.5), K=500, n=6,
                     stride=50)
    result = run_ensemble(spec, gammas=[0.0, 0.5])
    assert all(v == 1.0 for v in result.convergence.gamma_moments[0.0])
    assert all(0.0 <= v for v in result.convergence.gamma_moments[0.5])


def test_quantiles_are_ordered():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=1.0), K=400, n=30,
                     stride=20)
    rep = run_ensemble(spec).convergence
    for q25, med, q75 in zip(rep.f_gap_q25, rep.f_gap_median, rep.f_gap_q75):
        assert q25 <= med <= q75
    for q25, med, q75 in zip(rep.grad_norm_q25, rep.grad_norm_median, rep.grad_norm_q75):
        assert q25 <= med <= q75


def test_sup_mean_f_matches_manual_max():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=0.7), K=300, n=12,
                     stride=10)
    rep = run_ensemble(spec).convergence
    assert rep.sup_mean_f == pytest.approx(np.nanmax(rep.f_gap_mean), rel=1e-15)
    idx = int(np.nanargmax(rep.f_gap_mean))
    assert rep.sup_mean_f_k == rep.ks[idx]
    assert rep.sup_mean_f_se == pytest.approx(rep.f_gap_se[idx], rel=1e-15)


def test_f_lim_estimates_per_trajectory():
    spec = quad_spec(K=200, n=7, stride=10)
    rep = run_ensemble(spec, W=50).convergence
    assert len(rep.f_lim_estimates) == 7
    # zero-noise quadratic: the final-window mean of F is positive and tiny
    assert all(0.0 <= v < 1e-2 for v in rep.f_lim_estimates)


def test_truncated_trajectories_counted_via_n_alive():
    # big constant steps on exp-abs overflow quickly for every trajectory
    spec = EnsembleSpec(
        objective=ObjectiveSpec("exp-abs"),
        noise=NoiseSpec("zero"),
        schedule=Schedule.scalar(10.0, 0.0, k0=1),
        theta0=(5.0,),
        horizon=100,
        n_trajectories=3,
        master_seed=1,
        record_stride=1,
    )
    result = run_ensemble(spec)
    assert result.n_overflow == 3
    alive = result.convergence.n_alive
    assert alive[0] == 3
    assert alive[-1] == 0


def test_final_decade_slope_negative_for_contraction():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=0.1),
                     schedule=Schedule.scalar(1.0, 0.75, k0=1),
                     K=20000, n=10, stride=500)
    rep = run_ensemble(spec).convergence
    assert rep.final_decade_slope is not None
    assert rep.final_decade_slope < 0.0


# ---------------------------------------------------------------------------
# stopping times
# ---------------------------------------------------------------------------

def f_trajectory(f_values):
    f = np.asarray(f_values, dtype=float)
    n = len(f)
    return Trajectory(
        ks=np.arange(n),
        thetas=np.zeros((n, 1)),
        f_values=f,
        grad_norms=np.zeros(n),
        seed=0,
        schedule_id="synthetic",
        objective_id="synthetic",
        oracle_id="synthetic",
        horizon=n - 1,
    )


def test_stopping_times_example_sequence():
    st_out = compute_stopping_times(f_trajectory([0.0, 0.5, 1.2, 2.3, 3.5]))
    assert st_out.taus == [0, 2, 3, 4]
    assert st_out.tau_geq_k
    assert st_out.complete  # the final step is itself a stopping time


def test_stopping_times_constant_sequence():
    st_out = compute_stopping_times(f_trajectory(np.ones(50)))
    assert st_out.taus == [0]
    assert not st_out.complete


def test_stopping_times_strict_increase_and_gap():
    rng = np.random.default_rng(3)
    for _ in range(50):
        f = np.cumsum(rng.uniform(-0.5, 0.8, 200))
        st_out = compute_stopping_times(f_trajectory(f))
        taus = st_out.taus
        assert all(b > a for a, b in zip(taus, taus[1:]))
        for a, b in zip(taus, taus[1:]):
            assert f[b] > f[a] + 1.0
            # minimality: no earlier index crossed the threshold
            assert np.all(f[a + 1:b] <= f[a] + 1.0)
        assert st_out.tau_geq_k


def test_stopping_times_require_stride_one():
    traj = f_trajectory(np.arange(10.0))
    traj.record_stride = 4
    with pytest.raises(ContractViolation):
        compute_stopping_times(traj)


@given(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=80))
@settings(max_examples=200, deadline=None)
def test_stopping_times_invariants_hold_on_any_sequence(f_values):
    st_out = compute_stopping_times(f_trajectory(f_values))
    taus = st_out.taus
    assert taus[0] == 0
    assert all(b > a for a, b in zip(taus, taus[1:]))
    f = np.asarray(f_values)
    for a, b in zip(taus, taus[1:]):
        assert f[b] > f[a] + 1.0
    assert st_out.tau_geq_k == all(t >= i for i, t in enumerate(taus))


def test_stopping_times_on_counterexample_run():
    obj = catalog_lookup("loglog1p-abs")
    oracle = StochasticOracle(obj, NoiseModel("rademacher-radial", 1))
    traj = run_trajectory(oracle, Schedule.scalar(0.5, 0.6, k0=1), [100.0],
                          5000, seed=split_seed(9, 0), record_stride=1,
                          truncate_on_domain_error=True)
    st_out = compute_stopping_times(traj)
    taus = st_out.taus
    assert all(b > a for a, b in zip(taus, taus[1:]))
    for a, b in zip(taus, taus[1:]):
        assert traj.f_values[b] > traj.f_values[a] + 1.0


def test_capture_sparse_counts_reconstruct_empirical():
    spec = quad_spec(noise=NoiseSpec("additive-gaussian", sigma=1.0),
                     schedule=Schedule.scalar(1.0, 0.75, k0=1),
                     K=500, n=40, theta0=(0.5,), stride=50)
    report = capture_escape_frequency(spec, [0.0], 1.0, 0.5)
    rebuilt = np.zeros(spec.horizon)
    for k, c in report.escape_counts.items():
        rebuilt[k] = c / report.n_trajectories
    assert np.array_equal(rebuilt, report.empirical)
    assert report.total_escapes == sum(report.escape_counts.values())


def test_report_json_survives_dead_checkpoints():
    # overflowing ensembles leave NaN columns; JSON must emit null, not NaN
    spec = EnsembleSpec(
        objective=ObjectiveSpec("exp-abs"),
        noise=NoiseSpec("zero"),
        schedule=Schedule.scalar(10.0, 0.0, k0=1),
        theta0=(5.0,),
        horizon=50,
        n_trajectories=2,
        master_seed=3,
        record_stride=1,
    )
    result = run_ensemble(spec)
    text = dumps_json(ensemble_report_payload(result))
    assert "NaN" not in text
    assert "null" in text


# ---------------------------------------------------------------------------
# spec validation
# ---------------------------------------------------------------------------

def test_ensemble_spec_validation():
    with pytest.raises(ContractViolation):
        quad_spec(K=0)
    with pytest.raises(ContractViolation):
        quad_spec(n=0)
    with pytest.raises(ContractViolation):
        quad_spec(theta0=(1.0, 2.0))
    with pytest.raises(ContractViolation):
        run_ensemble(quad_spec(K=10), W=100)
