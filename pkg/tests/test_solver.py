"""Steppers: closed-form oracles, Ito-correction algebra, scheme order,
fast-slow coupling behavior, and failure modes."""

import math

import numpy as np
import pytest

from roughavg import ConfigurationError, DivergenceError, Grid, sample_bm, sample_fbm
from roughavg.lift import lift_from_arrays, lift_mixed
from roughavg.paths import fbm_increment_batch
from roughavg.rng import stream
from roughavg.solver import (
    CoefficientSet,
    finite_difference_jacobian,
    ito_correction,
    required_substep_factor,
    solve_fast_slow,
    solve_frozen,
    solve_ito,
    solve_rde,
)

SEED = 24680


def trivial_lift(grid, dim_w=1):
    zeros = np.zeros((grid.n_steps + 1, 1))
    return lift_from_arrays(zeros, np.zeros((grid.n_steps + 1, dim_w)), grid, 1)


def ou_coefficients(rate=8.0):
    # Linear dissipative fast drift with unit additive noise; f reads out the
    # fast state, the slow diffusion is off.
    shp = lambda x, p: np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
    return CoefficientSet(
        dims=(1, 1, 1, 1),
        f=lambda x, p: p,
        sigma=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        g=lambda x, p: x - rate * p,
        h=lambda x, p: np.ones(shp(x, p) + (1, 1)),
        jac_sigma=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
        jac_h_phi=lambda x, p: np.zeros(shp(x, p) + (1, 1, 1)),
        regularity={"dissipativity_rate": 2 * rate},
    )


def batched_mixed_lift(coarse, fine_factor, reps, seed, hurst=0.4):
    fine = coarse.refined(fine_factor)
    rng = stream(seed, "solver-batch-lift")
    binc, _ = fbm_increment_batch(hurst, fine.n_steps, fine.dt, rng, (reps,))
    winc = rng.standard_normal((reps, fine.n_steps)) * np.sqrt(fine.dt)
    pad = np.zeros((reps, 1))
    b = np.concatenate([pad, binc.cumsum(axis=1)], axis=1)[..., None]
    w = np.concatenate([pad, winc.cumsum(axis=1)], axis=1)[..., None]
    return lift_from_arrays(b, w, coarse, fine_factor)


# ---------------------------------------------------------------- rough Euler

def test_constant_path_without_coefficients():
    grid = Grid(0.0, 1.0, 32)
    path = solve_rde(None, None, trivial_lift(grid), np.array([2.5, -1.0]))
    np.testing.assert_array_equal(path, np.broadcast_to([2.5, -1.0], (33, 2)))


def test_pure_drift_exponential():
    grid = Grid(0.0, 1.0, 2**12)
    path = solve_rde(lambda u: u, None, trivial_lift(grid), np.array([1.0]))
    assert path[-1, 0] == pytest.approx(math.e, abs=1e-3)


def test_pure_drift_first_order_slope():
    errs, dts = [], []
    for n in (2**8, 2**10, 2**12):
        grid = Grid(0.0, 1.0, n)
        path = solve_rde(lambda u: u, None, trivial_lift(grid), np.array([1.0]))
        errs.append(abs(path[-1, 0] - math.e))
        dts.append(grid.dt)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.2)


def test_stratonovich_exponential_of_brownian():
    grid = Grid(0.0, 1.0, 2**14)
    fine = grid.refined(1)
    W = sample_bm(1, fine, seed=7)
    lift = lift_mixed(sample_fbm(0.4, fine, seed=8), W, grid, 1)
    path = solve_rde(None, lambda u: u[..., :, None], lift.w_block(), np.array([1.0]))
    want = np.exp(W.values[-1, 0])
    assert path[-1, 0] == pytest.approx(want, rel=1e-2)


def test_smooth_geometric_driver_at_least_first_order():
    # du = u dz1 + u dz2 with z = (t, sin t): exact u = exp(t + sin t).
    want = math.exp(1.0 + math.sin(1.0))
    errs, dts = [], []
    for n in (2**5, 2**7, 2**9):
        grid = Grid(0.0, 1.0, n)
        ff = 64
        t = grid.refined(ff).points()
        lift = lift_from_arrays(t[:, None], np.sin(t)[:, None], grid, ff)
        bc = lambda u: np.concatenate([u[..., :, None], u[..., :, None]], axis=-1)
        path = solve_rde(None, bc, lift, np.array([1.0]))
        errs.append(abs(path[-1, 0] - want))
        dts.append(grid.dt)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope >= 0.9


def test_solve_rde_analytic_jacobian_matches_finite_difference():
    grid = Grid(0.0, 0.5, 2**8)
    fine = grid.refined(4)
    W = sample_bm(1, fine, seed=3)
    lift = lift_mixed(sample_fbm(0.45, fine, seed=4), W, grid, 4)
    bc = lambda u: np.stack([np.sin(u[..., 0]), np.cos(u[..., 0])], axis=-1)[..., None, :]
    jac = lambda u: np.stack([np.cos(u[..., 0]), -np.sin(u[..., 0])],
                             axis=-1)[..., None, :, None]
    a = solve_rde(None, bc, lift, np.array([0.3]), jac_bc=jac)
    b = solve_rde(None, bc, lift, np.array([0.3]))
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_divergence_error_carries_step_index():
    grid = Grid(0.0, 1.0, 20)
    with np.errstate(over="ignore"), pytest.raises(DivergenceError) as err:
        solve_rde(lambda u: u**3, None, trivial_lift(grid), np.array([4.0]))
    assert isinstance(err.value.step, int)
    assert 1 <= err.value.step <= 20


def test_solve_rde_grid_mismatch():
    lift = trivial_lift(Grid(0.0, 1.0, 8))
    with pytest.raises(ConfigurationError):
        solve_rde(None, None, lift, np.array([0.0]), grid=Grid(0.0, 2.0, 8))


# ------------------------------------------------------------- Ito correction

def test_ito_correction_constant_noise_is_identity():
    coeffs = ou_coefficients()
    xi, phi = np.array([3.0]), np.array([0.7])
    np.testing.assert_allclose(coeffs.ito_drift(xi, phi), coeffs.g(xi, phi))


def test_ito_correction_linear_noise():
    # h(xi, phi) = phi, g = 0: corrected drift is phi / 2.
    corr = ito_correction(lambda x, p: np.zeros_like(p),
                          lambda x, p: p[..., :, None],
                          (np.array([0.0]), np.array([3.0])))
    assert corr[0] == pytest.approx(1.5, rel=1e-9)


def test_ito_correction_sine_pair():
    xi, phi = np.array([0.7]), np.array([1.1])
    corr = ito_correction(lambda x, p: np.zeros_like(p),
                          lambda x, p: (np.sin(x) + np.sin(p))[..., :, None],
                          (xi, phi))
    want = 0.5 * (math.sin(0.7) + math.sin(1.1)) * math.cos(1.1)
    assert corr[0] == pytest.approx(want, rel=1e-7)


def test_ito_correction_analytic_jacobian_agrees_with_fd():
    h = lambda x, p: (np.sin(x) + np.sin(p))[..., :, None]
    jac = lambda x, p: np.cos(p)[..., :, None, None]
    at = (np.array([0.4]), np.array([-0.9]))
    g = lambda x, p: x - p
    np.testing.assert_allclose(ito_correction(g, h, at, jac_h_phi=jac),
                               ito_correction(g, h, at), rtol=1e-7)


def test_finite_difference_jacobian_matches_analytic():
    fn = lambda u: np.stack([np.sin(u[..., 0]), u[..., 0] ** 2], axis=-1)
    u = np.array([[0.3], [1.7], [-2.2]])
    got = finite_difference_jacobian(fn, u)
    want = np.stack([np.cos(u[..., 0]), 2 * u[..., 0]], axis=-1)[..., None]
    np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-9)


# ------------------------------------------------------------- frozen dynamics

def test_frozen_ou_stationary_mean_and_variance():
    reps = 1000
    path = solve_frozen(np.array([8.0]), np.zeros((reps, 1)), ou_coefficients(),
                        horizon=10.0, n_steps=4000, seed=SEED)
    tail = path[:, 2000:, 0]
    assert tail.mean() == pytest.approx(1.0, rel=0.02)
    assert tail.var() == pytest.approx(1.0 / 16.0, rel=0.05)


def test_frozen_coupling_contraction_rate():
    # Same noise, two starts: |difference|^2 decays at twice the drift rate.
    coeffs = ou_coefficients()
    grid = Grid(0.0, 0.5, 500)
    rng = stream(SEED, "coupling")
    reps = 64
    dw = rng.standard_normal((reps, 500, 1)) * np.sqrt(grid.dt)
    y0 = np.zeros((2, reps, 1))
    y0[0, :, 0], y0[1, :, 0] = 1.0, -0.5
    xi = np.array([8.0])
    path = solve_ito(lambda p: coeffs.ito_drift(xi, p),
                     lambda p: coeffs.h(xi, p), y0, grid, dw)
    gap = ((path[0] - path[1]) ** 2)[:, :, 0].mean(axis=0)
    t = grid.points()
    rate = -(np.log(gap[300]) - np.log(gap[100])) / (t[300] - t[100])
    assert rate == pytest.approx(16.0, abs=1.0)


def test_frozen_batched_shapes():
    path = solve_frozen(np.array([1.0]), np.zeros((3, 5, 1)), ou_coefficients(),
                        horizon=0.1, n_steps=10, seed=1)
    assert path.shape == (3, 5, 11, 1)


def test_solve_ito_increment_shape_error():
    grid = Grid(0.0, 1.0, 10)
    with pytest.raises(ConfigurationError):
        solve_ito(lambda p: -p, None, np.array([1.0]), grid, np.zeros((5, 1)))


# ------------------------------------------------------- Stratonovich vs Ito

def test_rough_and_ito_forms_converge_together():
    # Pure fast line, unit scale: rough solve against the mid-point W block
    # and Euler-Maruyama with the corrected drift on the same noise approach
    # each other as the grid refines.
    g0 = lambda u: -2.0 * u
    h0 = lambda u: np.sin(u) + 1.5
    g_corr = lambda p: -2.0 * p + 0.5 * (np.sin(p) + 1.5) * np.cos(p)
    top = Grid(0.0, 1.0, 2**13)
    W = sample_bm(1, top, seed=42)
    ns = [2**6, 2**8, 2**10, 2**12]
    dists = []
    for n in ns:
        coarse = Grid(0.0, 1.0, n)
        step = top.n_steps // n
        lift = lift_from_arrays(np.zeros((top.n_steps + 1, 1)), W.values,
                                coarse, step)
        rough = solve_rde(g0, lambda u: h0(u)[..., None], lift.w_block(),
                          np.array([0.5]),
                          jac_bc=lambda u: np.cos(u)[..., None, None])
        ito = solve_ito(g_corr, lambda p: h0(p)[..., None], np.array([0.5]),
                        coarse, np.diff(W.values[::step], axis=0))
        dists.append(np.max(np.abs(rough[:, 0] - ito[:, 0])))
    slope = np.polyfit(np.log(ns), np.log(dists), 1)[0]
    assert slope < -0.25
    assert dists[-1] < dists[0]


# ------------------------------------------------------------------ fast-slow

def test_fast_slow_time_average_tracks_stationary_mean():
    coarse = Grid(0.0, 0.25, 50)
    lift = batched_mixed_lift(coarse, 80, reps=32, seed=99)
    sol = solve_fast_slow(ou_coefficients(), 0.02, lift, np.array([8.0]),
                          np.array([1.0]), substep_factor=40, seed=SEED)
    half = sol.y_substeps.shape[-2] // 2
    avg = sol.y_substeps[:, half:, 0].mean()
    assert avg == pytest.approx(1.0, rel=0.05)
    assert sol.y_fast.shape == (32, 51, 1)
    assert sol.substep_grid.n_steps == 50 * 40


def test_fast_slow_decorrelates_as_eps_shrinks():
    coarse = Grid(0.0, 2.0, 200)
    lift = batched_mixed_lift(coarse, 80, reps=8, seed=7)

    def lag_one(eps, sf):
        sol = solve_fast_slow(ou_coefficients(), eps, lift, np.array([8.0]),
                              np.array([1.0]), substep_factor=sf)
        y = sol.y_fast[:, 100:, 0]
        centered = y - y.mean()
        return (centered[:, :-1] * centered[:, 1:]).mean() / centered.var()

    c_slow, c_fast = lag_one(0.1, 40), lag_one(0.05, 80)
    assert c_fast < c_slow - 0.1
    # OU theory at this lag: exp(-8 dt / eps)
    assert c_slow == pytest.approx(math.exp(-0.8), abs=0.1)
    assert c_fast == pytest.approx(math.exp(-1.6), abs=0.1)


def test_fast_slow_noiseless_relaxation():
    shp = lambda x, p: np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
    relax = CoefficientSet(
        dims=(1, 1, 1, 1),
        f=lambda x, p: np.zeros_like(p),
        sigma=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        g=lambda x, p: -p,
        h=lambda x, p: np.zeros(shp(x, p) + (1, 1)),
        jac_sigma=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
        jac_h_phi=lambda x, p: np.zeros(shp(x, p) + (1, 1, 1)),
    )
    coarse = Grid(0.0, 1.0, 50)
    fine = coarse.refined(100)
    lift = lift_mixed(sample_fbm(0.4, fine, seed=21), sample_bm(1, fine, seed=22),
                      coarse, 100)
    sol = solve_fast_slow(relax, 0.5, lift, np.array([0.0]), np.array([1.0]),
                          substep_factor=100)
    decay = np.exp(-coarse.points() / 0.5)
    np.testing.assert_allclose(sol.y_fast[:, 0], decay, atol=1e-3)


def test_fast_slow_rejects_coarse_substep():
    coarse = Grid(0.0, 1.0, 50)  # dt = 0.02
    lift = batched_mixed_lift(coarse, 8, reps=1, seed=1)
    with pytest.raises(ConfigurationError) as err:
        solve_fast_slow(ou_coefficients(), 0.01, lift, np.array([8.0]),
                        np.array([1.0]), substep_factor=4)
    assert str(required_substep_factor(0.02, 0.01)) in str(err.value)


def test_fast_slow_substep_must_divide_fine_factor():
    coarse = Grid(0.0, 1.0, 50)
    lift = batched_mixed_lift(coarse, 8, reps=1, seed=1)
    with pytest.raises(ConfigurationError, match="divide"):
        solve_fast_slow(ou_coefficients(), 0.9, lift, np.array([8.0]),
                        np.array([1.0]), substep_factor=3)


def test_fast_slow_validates_coefficient_shapes():
    coeffs = ou_coefficients()
    coeffs = CoefficientSet(
        dims=(1, 1, 1, 1), f=coeffs.f, sigma=coeffs.sigma, g=coeffs.g,
        h=lambda x, p: np.ones(p.shape[:-1] + (2, 1)),  # wrong fast width
    )
    coarse = Grid(0.0, 1.0, 10)
    lift = batched_mixed_lift(coarse, 8, reps=1, seed=1)
    with pytest.raises(ConfigurationError, match="h"):
        solve_fast_slow(coeffs, 0.5, lift, np.array([8.0]), np.array([1.0]),
                        substep_factor=8)


def test_fast_slow_dissipative_second_moment_stays_bounded():
    shp = lambda x, p: np.broadcast_shapes(x.shape[:-1], p.shape[:-1])
    coeffs = CoefficientSet(
        dims=(1, 1, 1, 1),
        f=lambda x, p: np.sin(p),
        sigma=lambda x: np.cos(x)[..., None],
        g=lambda x, p: x - 8.0 * p,
        h=lambda x, p: (np.sin(x) + np.sin(p))[..., :, None],
        jac_h_phi=lambda x, p: np.cos(p)[..., :, None, None],
    )
    coarse = Grid(0.0, 0.5, 100)
    lift = batched_mixed_lift(coarse, 40, reps=10, seed=5)
    for eps, sf in ((0.1, 8), (0.02, 8)):
        sol = solve_fast_slow(coeffs, eps, lift, np.array([1.0]),
                              np.array([0.5]), substep_factor=sf)
        second_moment = (sol.y_substeps[..., 0] ** 2).mean(axis=0)
        assert second_moment.max() <= 1.0
