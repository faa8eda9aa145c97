"""Averaged-drift estimation, the averaged solve, the frozen-argument
auxiliary pair, the mixing probe, and the scale-sweep experiment."""

import math
from dataclasses import replace

import numpy as np
import pytest

from roughavg import (
    AveragedDrift,
    ConfigurationError,
    ConvergenceReport,
    ConvergenceRow,
    DomainError,
    FrozenEnsemble,
    Grid,
    breakpoint_floor,
    convergence_experiment,
    delta_gap_probe,
    estimate_fbar,
    get_preset,
    khasminskii_auxiliary,
    khasminskii_delta,
    lift_from_arrays,
    mixing_probe,
    preset_names,
    sample_bm,
    sample_fbm,
    sample_frozen_ensemble,
    solve_averaged,
    solve_fast_slow,
    tree_sum,
)

BENCH = get_preset("averaging-bench")
OU = get_preset("ou-linear")
DEGEN = get_preset("degenerate-drift")

OU_EXACT_T1 = 8.0 * math.exp(0.125)  # linear drift x/8 from x0 = 8 at t = 1


def batched_lift(n_coarse, fine_factor, replicas, hurst, seed, t_end=1.0):
    """Stack independent mixed-noise replicas into one batched lift."""
    fine = Grid(0.0, t_end, n_coarse * fine_factor)
    b = np.stack(
        [sample_fbm(hurst, fine, f"{seed}:b:{r}").values for r in range(replicas)]
    )
    w = np.stack(
        [sample_bm(1, fine, f"{seed}:w:{r}").values for r in range(replicas)]
    )
    grid = Grid(0.0, t_end, n_coarse)
    return lift_from_arrays(b, w, grid, fine_factor, hurst=hurst), grid


def sup_gap(a, b):
    return np.max(np.sqrt(np.sum((a - b) ** 2, axis=-1)), axis=-1)


@pytest.fixture(scope="module")
def tab_drift():
    return AveragedDrift.tabulated(
        BENCH.coeffs, BENCH.fbar_box, lattice_points=33, replicas=32,
        horizon=30.0, seed="tab-fixture",
    )


@pytest.fixture(scope="module")
def otf_drift():
    return AveragedDrift.on_the_fly(
        BENCH.coeffs, replicas=32, horizon=30.0, seed="tab-fixture",
    )


# ------------------------------------------------------------ reductions

def test_tree_sum_matches_numpy():
    rng = np.random.default_rng(5150)
    values = rng.standard_normal((13, 5))
    assert np.allclose(tree_sum(values), values.sum(axis=0), atol=1e-12)
    assert np.allclose(tree_sum(values, axis=1), values.sum(axis=1), atol=1e-12)
    single = tree_sum(values[:1])
    assert np.array_equal(single, values[0])


def test_tree_sum_rejects_empty():
    with pytest.raises(ConfigurationError, match="nothing to reduce"):
        tree_sum(np.empty((0, 3)))


def test_freezing_block_schedule():
    assert khasminskii_delta(0.01) == 0.021459660262893473
    for eps in (0.5, 0.1, 0.007):
        assert khasminskii_delta(eps) == eps * math.sqrt(-math.log(eps))
    for bad in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(ConfigurationError, match="must lie in"):
            khasminskii_delta(bad)


def test_breakpoint_floor():
    assert breakpoint_floor(0.37, 0.1) == pytest.approx(0.3, abs=1e-12)
    assert breakpoint_floor(0.05, 0.1) == 0.0
    # 0.6 / 0.1 is 5.999... in floats; the guard keeps the point on its own
    # breakpoint instead of dropping it a whole block back.
    assert breakpoint_floor(0.6, 0.1) == pytest.approx(0.6, abs=1e-12)
    with pytest.raises(ConfigurationError, match="delta: must be positive"):
        breakpoint_floor(0.5, 0.0)


# --------------------------------------------------------- frozen ensemble

def test_frozen_ensemble_validation():
    xi = np.array([1.0])
    with pytest.raises(ConfigurationError, match="ensemble is empty"):
        FrozenEnsemble(xi=xi, samples=np.zeros((2, 0, 1)), burn_in=1.0,
                       horizon=2.0, replicas=2)
    with pytest.raises(ConfigurationError, match="horizon > burn_in"):
        sample_frozen_ensemble(OU.coeffs, xi, 4.0, 4.0, 8, 42)


def test_sample_frozen_ensemble_keeps_post_burn_in_states():
    ens = sample_frozen_ensemble(OU.coeffs, np.array([2.0]), 0.625, 4.0, 8, 42)
    assert ens.samples.shape == (8, 865, 1)
    assert ens.replicas == 8
    assert np.all(np.isfinite(ens.samples))


# ------------------------------------------------------- drift estimation

def test_estimate_fbar_constant_in_fast_state():
    coeffs = replace(OU.coeffs, f=lambda xi, phi: np.sin(xi) + 0.0 * phi)
    est = estimate_fbar(coeffs, np.array([2.0]), burn_in=1.0, horizon=5.0,
                        replicas=4, seed=9)
    assert abs(float(est.value[0]) - math.sin(2.0)) < 1e-12


def test_estimate_fbar_relaxation_mean():
    est = estimate_fbar(OU.coeffs, np.array([8.0]), burn_in=5.0, horizon=50.0,
                        replicas=64, seed=101)
    assert abs(float(est.value[0]) - 1.0) <= 0.02
    assert float(est.stderr[0]) > 0.0
    assert est.replicas == 64


def test_estimate_fbar_second_moment():
    coeffs = replace(OU.coeffs, f=lambda xi, phi: phi ** 2 + 0.0 * xi)
    est = estimate_fbar(coeffs, np.array([8.0]), burn_in=5.0, horizon=50.0,
                        replicas=64, seed=102)
    exact = 1.0 + 1.0 / 16.0
    assert abs(float(est.value[0]) - exact) <= 0.05 * exact


def test_estimate_fbar_monte_carlo_rate():
    # Doubling replicas or the kept horizon shrinks the standard error by
    # about sqrt(2); averaged over seeds, within 30%.
    xi = np.array([2.0])
    repl_ratios, horiz_ratios = [], []
    for seed in (606, 607, 608):
        base = estimate_fbar(BENCH.coeffs, xi, replicas=64, horizon=30.0,
                             seed=seed)
        twice_r = estimate_fbar(BENCH.coeffs, xi, replicas=128, horizon=30.0,
                                seed=seed)
        twice_h = estimate_fbar(BENCH.coeffs, xi, replicas=64, horizon=60.0,
                                seed=seed)
        repl_ratios.append(float(base.stderr[0] / twice_r.stderr[0]))
        horiz_ratios.append(float(base.stderr[0] / twice_h.stderr[0]))
    root2 = math.sqrt(2.0)
    assert 0.7 * root2 <= np.mean(repl_ratios) <= 1.3 * root2
    assert 0.7 * root2 <= np.mean(horiz_ratios) <= 1.3 * root2


def test_estimate_fbar_single_replica_has_no_spread():
    est = estimate_fbar(OU.coeffs, np.array([1.0]), burn_in=0.5, horizon=2.0,
                        replicas=1, seed=3)
    assert np.isnan(est.stderr).all()


# ---------------------------------------------------------- averaged drift

def test_tabulated_drift_tracks_closed_form(tab_drift):
    queries = np.linspace(-7.5, 7.5, 11)[:, None]
    table_vals = tab_drift(queries)[:, 0]
    exact_vals = np.array([float(BENCH.fbar_exact(q)[0]) for q in queries])
    assert np.max(np.abs(table_vals - exact_vals)) < 0.02
    loop_vals = np.array([float(tab_drift(q)[0]) for q in queries])
    assert np.array_equal(table_vals, loop_vals)


def test_on_the_fly_drift_tracks_closed_form_and_memoizes(otf_drift):
    queries = np.linspace(-7.5, 7.5, 11)[:, None]
    vals = np.array([float(otf_drift(q)[0]) for q in queries])
    exact_vals = np.array([float(BENCH.fbar_exact(q)[0]) for q in queries])
    assert np.max(np.abs(vals - exact_vals)) < 0.01
    assert len(otf_drift.cache) == 11
    again = np.array([float(otf_drift(q)[0]) for q in queries])
    assert np.array_equal(vals, again)
    assert len(otf_drift.cache) == 11


def test_drift_strategies_agree(tab_drift, otf_drift):
    queries = np.linspace(-7.5, 7.5, 11)[:, None]
    gap = np.abs(tab_drift(queries) - otf_drift(queries))
    assert np.max(gap) < 0.02


def test_tabulated_drift_rejects_points_outside_box(tab_drift):
    with pytest.raises(DomainError, match="leaves the tabulated box"):
        tab_drift(np.array([9.0]))
    with pytest.raises(DomainError, match="leaves the tabulated box"):
        tab_drift(np.array([-8.5]))
    # the boundary itself stays inside
    edge = tab_drift(np.array([8.0]))
    assert np.all(np.isfinite(edge))


def test_tabulated_drift_payload(tab_drift):
    payload = tab_drift.table_payload()
    assert payload["strategy"] == "tabulated"
    assert payload["box"] == [[-8.0, 8.0]]
    assert len(payload["axes"][0]) == 33
    assert len(payload["values"]) == 33
    assert len(payload["stderr"]) == 33
    assert payload["replicas"] == 32


def test_on_the_fly_drift_has_no_lattice(otf_drift):
    with pytest.raises(ConfigurationError, match="only tabulated"):
        otf_drift.table_payload()


def test_tabulated_drift_box_validation():
    with pytest.raises(ConfigurationError, match="expected 1"):
        AveragedDrift.tabulated(BENCH.coeffs, ((-1, 1), (-1, 1)))
    with pytest.raises(ConfigurationError, match="hi > lo"):
        AveragedDrift.tabulated(BENCH.coeffs, ((2.0, -2.0),))
    with pytest.raises(ConfigurationError, match="lattice_points"):
        AveragedDrift.tabulated(BENCH.coeffs, ((-1.0, 1.0),), lattice_points=1)


# ----------------------------------------------------------- averaged solve

def test_averaged_solve_linear_drift():
    n = 256
    grid = Grid(0.0, 1.0, n)
    fine = Grid(0.0, 1.0, n * 4)
    quiet = lift_from_arrays(np.zeros((n * 4 + 1, 1)), np.zeros((n * 4 + 1, 1)),
                             grid, 4, hurst=0.4)
    drift = lambda x: x / 8.0
    no_noise = lambda x: np.zeros(x.shape[:-1] + (1, 1))
    no_jac = lambda x: np.zeros(x.shape[:-1] + (1, 1, 1))
    path = solve_averaged(drift, no_noise, quiet.b_block(), np.array([8.0]),
                          grid=grid, jac_sigma=no_jac)
    assert abs(float(path[-1, 0]) - OU_EXACT_T1) < 1e-2


def test_averaged_solve_additive_noise_identity():
    grid = Grid(0.0, 1.0, 128)
    fine = Grid(0.0, 1.0, 128 * 8)
    b = sample_fbm(0.4, fine, 99).values
    w = sample_bm(1, fine, 100).values
    lift = lift_from_arrays(b, w, grid, 8, hurst=0.4)
    zero_drift = lambda x: np.zeros_like(x)
    unit_sigma = lambda x: np.ones(x.shape[:-1] + (1, 1))
    no_jac = lambda x: np.zeros(x.shape[:-1] + (1, 1, 1))
    path = solve_averaged(zero_drift, unit_sigma, lift.b_block(),
                          np.array([0.25]), grid=grid, jac_sigma=no_jac)
    coarse_b = b[::8, 0]
    expected = 0.25 + coarse_b - coarse_b[0]
    assert np.max(np.abs(path[:, 0] - expected)) < 1e-14


def test_averaged_solve_strategies_agree(tab_drift, otf_drift):
    grid = Grid(0.0, 1.0, 32)
    fine = Grid(0.0, 1.0, 128)
    b = sample_fbm(0.4, fine, 901).values
    w = sample_bm(1, fine, 902).values
    lift = lift_from_arrays(b, w, grid, 4, hurst=0.4)
    x_tab = solve_averaged(tab_drift, BENCH.coeffs.sigma, lift.b_block(),
                           BENCH.x0, grid=grid,
                           jac_sigma=BENCH.coeffs.sigma_jacobian)
    x_otf = solve_averaged(otf_drift, BENCH.coeffs.sigma, lift.b_block(),
                           BENCH.x0, grid=grid,
                           jac_sigma=BENCH.coeffs.sigma_jacobian)
    assert np.max(np.abs(x_tab - x_otf)) < 0.08


# ------------------------------------------------ frozen-argument auxiliary

def test_degenerate_block_reproduces_the_coupled_pair():
    # Freezing at every grid step is no freezing at all: the auxiliary pair
    # must retrace the coupled solution operation for operation.
    lift, grid = batched_lift(64, 8, 3, 0.45, "kh-degenerate")
    sol = solve_fast_slow(OU.coeffs, 0.1, lift, OU.x0, OU.y0)
    x_hat, y_hat = khasminskii_auxiliary(OU.coeffs, 0.1, grid.dt, lift, sol)
    assert np.array_equal(y_hat, sol.y_substeps)
    assert np.array_equal(x_hat, sol.x_slow)


def test_auxiliary_validation():
    lift, grid = batched_lift(32, 4, 2, 0.45, "kh-valid")
    sol = solve_fast_slow(OU.coeffs, 0.2, lift, OU.x0, OU.y0)
    with pytest.raises(ConfigurationError, match="below the grid step"):
        khasminskii_auxiliary(OU.coeffs, 0.2, grid.dt / 3.0, lift, sol)
    with pytest.raises(ConfigurationError, match="does not match the solution"):
        khasminskii_auxiliary(OU.coeffs, 0.1, 0.125, lift, sol)
    with pytest.raises(ConfigurationError, match="y0: required"):
        khasminskii_auxiliary(OU.coeffs, 0.2, 0.125, lift, sol.x_slow)
    with pytest.raises(ConfigurationError, match="grid rows"):
        khasminskii_auxiliary(OU.coeffs, 0.2, 0.125, lift,
                              sol.x_slow[..., :-1, :], y0=OU.y0)
    bare = replace(lift, fine_w=None)
    with pytest.raises(ConfigurationError, match="no fine-grid W"):
        khasminskii_auxiliary(OU.coeffs, 0.2, 0.125, bare, sol.x_slow,
                              y0=OU.y0)


def test_gap_grows_linearly_in_block_length():
    # sup_t mean |Y - Y_hat|^2 against delta on a log-log scale: slope close
    # to one (the fBm-driven slow path realizes delta^{2H} = delta^{0.8}).
    deltas = (0.02, 0.04, 0.08)
    rows = delta_gap_probe(BENCH.coeffs, 0.01, deltas, 256, 0.4, (1024, 4),
                           11, BENCH.x0, BENCH.y0)
    assert [r.delta for r in rows] == sorted(deltas)
    gaps = [r.sup_mean_sq_gap for r in rows]
    assert all(g > 0 for g in gaps)
    assert gaps == sorted(gaps)
    slope = np.polyfit(np.log(deltas), np.log(gaps), 1)[0]
    assert 0.7 <= slope <= 1.3
    assert all(r.std_error < r.sup_mean_sq_gap for r in rows)


def test_gap_probe_is_deterministic():
    args = (BENCH.coeffs, 0.02, (0.04, 0.08), 8, 0.4, (256, 4), 21,
            BENCH.x0, BENCH.y0)
    assert delta_gap_probe(*args) == delta_gap_probe(*args)
    with pytest.raises(ConfigurationError, match="replicas"):
        delta_gap_probe(BENCH.coeffs, 0.02, (0.04,), 1, 0.4, (256, 4), 21,
                        BENCH.x0, BENCH.y0)


# --------------------------------------------------------------- mixing

def test_mixing_probe_recovers_relaxation_rate():
    report = mixing_probe(OU.coeffs, np.array([8.0]), (0.0, 0.05, 0.1, 0.2),
                          replicas=256, seed=103)
    assert report.reference_rate == 8.0
    assert abs(report.fitted_rate - 8.0) <= 0.3 * 8.0
    stationary_var = 1.0 / 16.0
    assert abs(report.autocov[0] - stationary_var) <= 0.05 * stationary_var
    assert np.all(np.diff(report.autocov) < 0)


def test_mixing_probe_point_mass_is_flat():
    # A noiseless contraction started at its fixed point has a point-mass
    # stationary law: every autocovariance vanishes and no rate is fitted.
    still = replace(
        OU.coeffs,
        h=lambda xi, phi: np.zeros(
            np.broadcast(xi[..., 0], phi[..., 0]).shape + (1, 1)
        ),
    )
    xi = np.array([2.0])
    report = mixing_probe(still, xi, (0.0, 0.05, 0.1, 0.2), replicas=16,
                          seed=11, phi0=xi / 8.0)
    assert np.max(np.abs(report.autocov)) == 0.0
    assert math.isnan(report.fitted_rate)
    assert report.payload()["fitted_rate"] is None


def test_mixing_probe_validation():
    xi = np.array([1.0])
    with pytest.raises(ConfigurationError, match="lags"):
        mixing_probe(OU.coeffs, xi, ())
    with pytest.raises(ConfigurationError, match="lags"):
        mixing_probe(OU.coeffs, xi, (-0.1, 0.2))
    with pytest.raises(ConfigurationError, match="too close to the kept"):
        mixing_probe(OU.coeffs, xi, (0.05, 40.0))


# ------------------------------------------------------- scale-sweep sweep

def test_convergence_schedule_validation():
    with pytest.raises(ConfigurationError, match="schedule is empty"):
        convergence_experiment(BENCH.coeffs, (), 4, 0.4, (32, 4), 1,
                               BENCH.x0, BENCH.y0, fbar=BENCH.fbar_exact)
    with pytest.raises(ConfigurationError, match="strictly decreasing"):
        convergence_experiment(BENCH.coeffs, (0.01, 0.1), 4, 0.4, (32, 4), 1,
                               BENCH.x0, BENCH.y0, fbar=BENCH.fbar_exact)
    with pytest.raises(ConfigurationError, match=r"lie in \(0, 1\)"):
        convergence_experiment(BENCH.coeffs, (1.5, 0.1), 4, 0.4, (32, 4), 1,
                               BENCH.x0, BENCH.y0, fbar=BENCH.fbar_exact)
    with pytest.raises(ConfigurationError, match="replicas"):
        convergence_experiment(BENCH.coeffs, (0.1,), 1, 0.4, (32, 4), 1,
                               BENCH.x0, BENCH.y0, fbar=BENCH.fbar_exact)
    with pytest.raises(ConfigurationError, match=r"supported range is \(1/3, 1/2\]"):
        convergence_experiment(BENCH.coeffs, (0.1,), 4, 0.25, (32, 4), 1,
                               BENCH.x0, BENCH.y0, fbar=BENCH.fbar_exact)
    with pytest.raises(ConfigurationError, match="fbar_box"):
        convergence_experiment(BENCH.coeffs, (0.1,), 4, 0.4, (32, 4), 1,
                               BENCH.x0, BENCH.y0)


def test_convergence_error_shrinks_with_scale_separation():
    report = convergence_experiment(
        BENCH.coeffs, (0.1, 0.03, 0.01), 32, 0.4, (256, 8), 909,
        BENCH.x0, BENCH.y0, fbar_box=BENCH.fbar_box,
    )
    assert report.schedule == "eps*sqrt(-ln(eps))"
    assert [r.eps for r in report.rows] == [0.1, 0.03, 0.01]
    for row in report.rows:
        assert row.delta == khasminskii_delta(row.eps)
        assert row.excluded == 0
        assert row.replicas == 32
    means = [r.mean_sup_error for r in report.rows]
    assert means == sorted(means, reverse=True)
    for high, low in zip(report.rows, report.rows[1:]):
        margin = 2.0 * math.hypot(high.std_error, low.std_error)
        assert high.mean_sup_error - low.mean_sup_error > margin
    assert report.params["n_coarse"] == 256
    assert report.params["replicas_requested"] == 32


def test_convergence_is_deterministic():
    args = (BENCH.coeffs, (0.1, 0.03), 8, 0.4, (64, 4), 77,
            BENCH.x0, BENCH.y0)
    first = convergence_experiment(*args, fbar=BENCH.fbar_exact)
    second = convergence_experiment(*args, fbar=BENCH.fbar_exact)
    for a, b in zip(first.rows, second.rows):
        assert a.eps == b.eps
        assert a.delta == b.delta
        assert a.mean_sup_error == b.mean_sup_error
        assert a.std_error == b.std_error
        assert a.excluded == b.excluded


def test_convergence_degenerate_fast_dependence_hits_the_floor():
    # When f ignores the fast state, the coupled and averaged steppers walk
    # through identical float operations: the gap is exactly zero at every
    # scale, the flattest possible eps-independent noise floor.
    report = convergence_experiment(
        DEGEN.coeffs, (0.1, 0.03, 0.01), 16, 0.4, (128, 8), 909,
        DEGEN.x0, DEGEN.y0, fbar=DEGEN.fbar_exact,
    )
    for row in report.rows:
        assert row.mean_sup_error == 0.0
        assert row.std_error == 0.0


def test_convergence_delta_override():
    report = convergence_experiment(
        BENCH.coeffs, (0.1, 0.05), 4, 0.4, (64, 4), 5,
        BENCH.x0, BENCH.y0, fbar=BENCH.fbar_exact, delta_override=0.25,
    )
    assert report.schedule == "override"
    assert [r.delta for r in report.rows] == [0.25, 0.25]
    with pytest.raises(ConfigurationError, match="delta_override"):
        convergence_experiment(
            BENCH.coeffs, (0.1, 0.05), 4, 0.4, (64, 4), 5,
            BENCH.x0, BENCH.y0, fbar=BENCH.fbar_exact,
            delta_override=(0.25, 0.25, 0.25),
        )


def test_convergence_report_needs_replicas():
    row = ConvergenceRow(eps=0.1, delta=0.15, replicas=1, excluded=0,
                         mean_sup_error=0.1, std_error=0.01, runtime=0.0)
    with pytest.raises(ConfigurationError, match="replicas"):
        ConvergenceReport(rows=[row], schedule="override", params={})


def test_pathwise_coupling_guard():
    # The sweep compares the coupled and averaged solutions on the SAME
    # noise realization. Re-pairing solutions across replicas must blow the
    # gap up; if it ever stops doing so, the coupling contract broke.
    lift, grid = batched_lift(128, 8, 16, 0.4, "guard")
    sol = solve_fast_slow(BENCH.coeffs, 0.03, lift, BENCH.x0, BENCH.y0)
    averaged = solve_averaged(BENCH.fbar_exact, BENCH.coeffs.sigma,
                              lift.b_block(), BENCH.x0, grid=grid,
                              jac_sigma=BENCH.coeffs.sigma_jacobian)
    matched = sup_gap(sol.x_slow, averaged).mean()
    reshuffled = sup_gap(sol.x_slow, np.roll(averaged, 1, axis=0)).mean()
    assert reshuffled > 5.0 * matched


def test_fast_second_moment_stays_bounded_across_scales():
    # The empirical sup_t E|Y|^2 must not grow as eps shrinks (with the fast
    # substep held well inside the explicit-Euler accuracy regime).
    sups = []
    for eps in (0.1, 0.03, 0.01):
        lift, _ = batched_lift(256, 8, 64, 0.4, "bound")
        sol = solve_fast_slow(BENCH.coeffs, eps, lift, BENCH.x0, BENCH.y0,
                              substep_factor=8)
        sq = np.sum(sol.y_substeps ** 2, axis=-1)
        sups.append(float(np.max(np.mean(sq, axis=0))))
    assert max(sups) < 0.5
    assert max(sups) / min(sups) < 1.5


# ----------------------------------------------------------------- presets

def test_preset_listing():
    names = preset_names()
    assert {"ou-linear", "averaging-bench", "degenerate-drift"} <= set(names)
    with pytest.raises(ConfigurationError, match="unknown name"):
        get_preset("nope")


def test_preset_coefficients_are_consistent():
    for preset in (OU, BENCH, DEGEN):
        preset.coeffs.validate_at(np.asarray(preset.x0),
                                  np.asarray(preset.y0))
        assert preset.coeffs.regularity["beta1"] == 16.0


def test_preset_closed_form_drifts():
    xi = np.array([2.0])
    assert float(OU.fbar_exact(xi)[0]) == pytest.approx(0.25, abs=1e-15)
    bench_exact = (2.0 / 8.0) / (1.0 + 4.0) + math.sin(2.0)
    assert float(BENCH.fbar_exact(xi)[0]) == pytest.approx(bench_exact,
                                                           abs=1e-15)
    assert float(DEGEN.fbar_exact(xi)[0]) == pytest.approx(math.sin(2.0),
                                                           abs=1e-15)


def test_bench_sigma_jacobian_matches_finite_differences():
    step = 1e-6
    for x in (-1.3, 0.4, 2.0):
        xi = np.array([x])
        sigma_plus = BENCH.coeffs.sigma(xi + step)
        sigma_minus = BENCH.coeffs.sigma(xi - step)
        numeric = (sigma_plus - sigma_minus) / (2.0 * step)
        analytic = BENCH.coeffs.jac_sigma(xi)
        assert np.allclose(analytic[..., 0], numeric, atol=1e-8)
