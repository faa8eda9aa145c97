"""Time steppers for rough and stochastic dynamics.

Three integrators share this module. `solve_rde` advances a state against a
level-2 driver with the explicit second-order rough Euler rule: increment
times diffusion, plus the level-2 tensor contracted against the diffusion's
directional derivative. `solve_ito` / `solve_frozen` are plain Euler-Maruyama
in the Ito convention, with `ito_correction` converting a Stratonovich-read
drift into its Ito equivalent. `solve_fast_slow` couples the two: the slow
state takes rough Euler steps against the slowly-varying block of the lift
while the fast state runs Euler-Maruyama on a finer sub-grid, consuming the
same underlying Brownian increments that built the lift's cross-areas.

All steppers broadcast over leading batch axes, so a replica ensemble is one
call with batched initial conditions rather than a Python loop.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .lift import RoughLift
from .paths import Grid
from .rng import stream

FD_REL_STEP = 1e-5


def finite_difference_jacobian(fn, x: np.ndarray, rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central-difference Jacobian of fn at x, differentiating the last axis.

    Returns an array of shape fn(x).shape + (x.shape[-1],); callers must pass
    x already broadcast to the full batch shape of fn's output.
    """
    x = np.asarray(x, dtype=float)
    k = x.shape[-1]
    base = np.asarray(fn(x), dtype=float)
    scale = rel_step * (1.0 + np.max(np.abs(x), axis=-1))
    extra = base.ndim - (x.ndim - 1)
    denom = 2.0 * scale.reshape(scale.shape + (1,) * extra)
    out = np.empty(base.shape + (k,), dtype=float)
    for l in range(k):
        dx = np.zeros_like(x)
        dx[..., l] = scale
        hi = np.asarray(fn(x + dx), dtype=float)
        lo = np.asarray(fn(x - dx), dtype=float)
        out[..., l] = (hi - lo) / denom
    return out


@dataclass
class CoefficientSet:
    """Coefficient maps of the coupled system, with optional analytic Jacobians.

    dims = (m, n, d, d_prime): slow state, fast state, slow-driver and
    fast-driver dimensions. Maps must broadcast over leading batch axes:
    f(xi, phi) -> (..., m); sigma(xi) -> (..., m, d); g(xi, phi) -> (..., n);
    h(xi, phi) -> (..., n, d_prime). jac_sigma(xi) -> (..., m, d, m) holds
    d sigma_ij / d xi_l in [..., i, j, l]; jac_h_phi(xi, phi) ->
    (..., n, d_prime, n) likewise in the fast variable. Missing Jacobians
    fall back to central finite differences with relative step 1e-5.
    """

    dims: "tuple[int, int, int, int]"
    f: "callable"
    sigma: "callable"
    g: "callable"
    h: "callable"
    jac_sigma: "callable | None" = None
    jac_h_phi: "callable | None" = None
    regularity: dict = field(default_factory=dict)

    def sigma_jacobian(self, xi: np.ndarray) -> np.ndarray:
        if self.jac_sigma is not None:
            return np.asarray(self.jac_sigma(xi), dtype=float)
        return finite_difference_jacobian(self.sigma, xi)

    def h_phi_jacobian(self, xi: np.ndarray, phi: np.ndarray) -> np.ndarray:
        if self.jac_h_phi is not None:
            return np.asarray(self.jac_h_phi(xi, phi), dtype=float)
        return finite_difference_jacobian(lambda p: self.h(xi, p), np.asarray(phi, dtype=float))

    def ito_drift(self, xi: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Ito-convention fast drift: g plus the noise-induced correction."""
        return ito_correction(self.g, self.h, (xi, phi), jac_h_phi=self.jac_h_phi)

    def validate_at(self, x0: np.ndarray, y0: np.ndarray) -> None:
        """Evaluate every map once and check trailing shapes against dims."""
        m, n, d, dp = self.dims
        x0 = np.asarray(x0, dtype=float)
        y0 = np.asarray(y0, dtype=float)
        checks = [
            ("f", self.f(x0, y0), (m,)),
            ("sigma", self.sigma(x0), (m, d)),
            ("g", self.g(x0, y0), (n,)),
            ("h", self.h(x0, y0), (n, dp)),
        ]
        for name, val, want in checks:
            got = np.asarray(val).shape[-len(want):]
            if got != want:
                raise ConfigurationError(
                    f"{name}: trailing shape {got} does not match dims {want}"
                )


def ito_correction(g, h, at, jac_h_phi=None) -> np.ndarray:
    """Ito drift of a fast equation whose noise term is read in the
    Stratonovich/rough sense: g + (1/2) sum_jk h_kj d h_lj / d phi_k."""
    xi, phi = at
    xi = np.asarray(xi, dtype=float)
    phi = np.asarray(phi, dtype=float)
    hval = np.asarray(h(xi, phi), dtype=float)
    if jac_h_phi is not None:
        jac = np.asarray(jac_h_phi(xi, phi), dtype=float)
    else:
        jac = finite_difference_jacobian(lambda p: h(xi, p), phi)
    corr = 0.5 * np.einsum("...kj,...ljk->...l", hval, jac)
    return np.asarray(g(xi, phi), dtype=float) + corr


def _check_finite(state: np.ndarray, step: int, what: str) -> None:
    if not np.all(np.isfinite(state)):
        raise DivergenceError(
            f"{what} became non-finite at step {step}", step=step
        )


def solve_rde(a, bc, lift, u0, grid: "Grid | None" = None, jac_bc=None) -> np.ndarray:
    """Second-order rough Euler solve of du = a(u) dt + bc(u) dZ.

    `lift` is any level-2 driver view (full lift or one of its blocks); `bc`
    maps state to an (..., e, dim) tensor against the driver's dim columns.
    Either map may be None (omitted term). Returns the path, shape
    (..., N+1, e). Raises a divergence error with the offending step index
    if the state leaves the finite range.
    """
    if grid is None:
        grid = lift.coarse_grid
    elif grid != lift.coarse_grid:
        raise ConfigurationError("grid: must match the lift's coarse grid")
    u0 = np.asarray(u0, dtype=float)
    e = u0.shape[-1]
    n = grid.n_steps
    dt = grid.dt
    if bc is not None:
        inc = np.diff(lift.values, axis=-2)
        z2 = lift.level2_adjacent()
    batch = np.broadcast_shapes(u0.shape[:-1], lift.batch_shape)
    path = np.empty(batch + (n + 1, e), dtype=float)
    path[..., 0, :] = u0
    for k in range(n):
        uk = path[..., k, :]
        nxt = uk
        if a is not None:
            nxt = nxt + np.asarray(a(uk), dtype=float) * dt
        if bc is not None:
            bcu = np.asarray(bc(uk), dtype=float)
            if jac_bc is not None:
                jac = np.asarray(jac_bc(uk), dtype=float)
            else:
                jac = finite_difference_jacobian(bc, np.broadcast_to(uk, batch + (e,)))
            nxt = nxt + np.einsum("...ij,...j->...i", bcu, inc[..., k, :])
            nxt = nxt + np.einsum("...ijp,...pl,...lj->...i", jac, bcu, z2[..., k, :, :])
        _check_finite(nxt, k + 1, "state")
        path[..., k + 1, :] = nxt
    return path


def solve_ito(drift, diffusion, y0, grid: Grid, increments: np.ndarray) -> np.ndarray:
    """Euler-Maruyama on supplied noise increments (..., N, q).

    Sharing an increment array between this solver and a lift keeps pathwise
    comparisons honest: both consume literally the same noise.
    """
    y0 = np.asarray(y0, dtype=float)
    increments = np.asarray(increments, dtype=float)
    n = grid.n_steps
    if increments.shape[-2] != n:
        raise ConfigurationError(
            f"increments: expected {n} steps, got {increments.shape[-2]}"
        )
    dt = grid.dt
    batch = np.broadcast_shapes(y0.shape[:-1], increments.shape[:-2])
    path = np.empty(batch + (n + 1, y0.shape[-1]), dtype=float)
    path[..., 0, :] = y0
    for k in range(n):
        yk = path[..., k, :]
        nxt = yk + np.asarray(drift(yk), dtype=float) * dt
        if diffusion is not None:
            dif = np.asarray(diffusion(yk), dtype=float)
            nxt = nxt + np.einsum("...ij,...j->...i", dif, increments[..., k, :])
        _check_finite(nxt, k + 1, "state")
        path[..., k + 1, :] = nxt
    return path


def solve_frozen(xi, phi0, coeffs: CoefficientSet, horizon: float, n_steps: int,
                 seed) -> np.ndarray:
    """Euler-Maruyama path of the fast equation with the slow state pinned.

    Drift is the Ito-corrected g at fixed xi; diffusion is h(xi, .). phi0 may
    carry leading batch axes for replica ensembles; one noise stream is drawn
    per batch element. Returns (..., n_steps+1, n).
    """
    xi = np.asarray(xi, dtype=float)
    phi0 = np.asarray(phi0, dtype=float)
    grid = Grid(0.0, float(horizon), int(n_steps))
    dp = coeffs.dims[3]
    batch = np.broadcast_shapes(xi.shape[:-1], phi0.shape[:-1])
    rng = stream(seed, "frozen-fast")
    dw = rng.standard_normal(batch + (grid.n_steps, dp)) * math.sqrt(grid.dt)
    return solve_ito(lambda p: coeffs.ito_drift(xi, p),
                     lambda p: coeffs.h(xi, p), phi0, grid, dw)


@dataclass(frozen=True)
class FastSlowSolution:
    """Coupled solve output: slow and fast paths on the coarse grid, plus the
    fast path at sub-grid resolution for time-average and mixing diagnostics."""

    grid: Grid
    x_slow: np.ndarray        # (..., N+1, m)
    y_fast: np.ndarray        # (..., N+1, n), coarse-grid restriction
    eps: float
    seed: "int | str | None"
    substep_factor: int
    y_substeps: np.ndarray    # (..., N*substep_factor+1, n)
    substep_grid: Grid

    @property
    def batch_shape(self) -> tuple:
        return self.x_slow.shape[:-2]


def required_substep_factor(dt: float, eps: float) -> int:
    """Smallest substeps-per-step keeping the fast Euler step below eps/4."""
    return max(1, math.ceil(4.0 * dt / eps))


def solve_fast_slow(coeffs: CoefficientSet, eps: float, lift: RoughLift,
                    x0, y0, grid: "Grid | None" = None,
                    substep_factor: "int | None" = None,
                    seed=None) -> FastSlowSolution:
    """Advance the coupled slow/fast pair one coarse step at a time.

    Per coarse step, the fast state runs substep_factor Euler-Maruyama
    substeps (drift ito-corrected g / eps, diffusion h / sqrt(eps)) with the
    slow state pinned at the step's left endpoint, consuming the lift's own
    fine-grid Brownian increments; the slow state then takes one rough Euler
    step against the slowly-varying block, with its dt-integral of f
    accumulated by the trapezoid rule over the substep values of the fast
    state. Requires substep <= eps/4 and substep_factor dividing the lift's
    fine_factor so the sub-grid rides on the fine grid.
    """
    if grid is None:
        grid = lift.coarse_grid
    elif grid != lift.coarse_grid:
        raise ConfigurationError("grid: must match the lift's coarse grid")
    if not 0.0 < eps <= 1.0:
        raise ConfigurationError(f"eps: must lie in (0, 1], got {eps}")
    m, n_dim, d, dp = coeffs.dims
    if lift.block_dims != (d, dp):
        raise ConfigurationError(
            f"lift: block dims {lift.block_dims} do not match coefficient "
            f"dims (d, d') = {(d, dp)}"
        )
    if lift.fine_w is None:
        raise ConfigurationError(
            "lift: carries no fine-grid W values; build it via lift_mixed or "
            "lift_from_arrays"
        )
    dt = grid.dt
    if substep_factor is None:
        substep_factor = required_substep_factor(dt, eps)
        while lift.fine_factor % substep_factor:
            substep_factor += 1
    if substep_factor < 1 or lift.fine_factor % substep_factor:
        raise ConfigurationError(
            f"substep_factor: {substep_factor} must divide the lift's "
            f"fine_factor {lift.fine_factor}"
        )
    dt_sub = dt / substep_factor
    if dt_sub > eps / 4.0 + 1e-15:
        raise ConfigurationError(
            f"substep_factor: fast substep {dt_sub:.3g} exceeds eps/4 = "
            f"{eps / 4.0:.3g}; need substep_factor >= "
            f"{required_substep_factor(dt, eps)}"
        )
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    coeffs.validate_at(x0, y0)

    n = grid.n_steps
    stride = lift.fine_factor // substep_factor
    w_sub = lift.fine_w[..., ::stride, :]
    dw = np.diff(w_sub, axis=-2)                      # (..., n*sf, dp)
    b_block = lift.b_block()
    binc = np.diff(b_block.values, axis=-2)           # (..., n, d)
    b2 = b_block.level2_adjacent()                    # (..., n, d, d)

    batch = np.broadcast_shapes(x0.shape[:-1], y0.shape[:-1], lift.batch_shape)
    sf = substep_factor
    x_path = np.empty(batch + (n + 1, m), dtype=float)
    y_sub = np.empty(batch + (n * sf + 1, n_dim), dtype=float)
    x_path[..., 0, :] = x0
    y_sub[..., 0, :] = y0
    inv_eps = 1.0 / eps
    inv_sqrt_eps = 1.0 / math.sqrt(eps)
    for k in range(n):
        xk = x_path[..., k, :]
        ys = y_sub[..., k * sf, :]
        f_acc = 0.5 * np.asarray(coeffs.f(xk, ys), dtype=float)
        for s in range(sf):
            drift = coeffs.ito_drift(xk, ys) * (dt_sub * inv_eps)
            noise = np.einsum("...ij,...j->...i",
                              np.asarray(coeffs.h(xk, ys), dtype=float),
                              dw[..., k * sf + s, :]) * inv_sqrt_eps
            ys = ys + drift + noise
            _check_finite(ys, k * sf + s + 1, "fast state")
            y_sub[..., k * sf + s + 1, :] = ys
            w = 0.5 if s == sf - 1 else 1.0
            f_acc = f_acc + w * np.asarray(coeffs.f(xk, ys), dtype=float)
        sig = np.asarray(coeffs.sigma(xk), dtype=float)
        jac = coeffs.sigma_jacobian(np.broadcast_to(xk, batch + (m,)))
        nxt = (xk + f_acc * dt_sub
               + np.einsum("...ij,...j->...i", sig, binc[..., k, :])
               + np.einsum("...ijp,...pl,...lj->...i", jac, sig, b2[..., k, :, :]))
        _check_finite(nxt, k + 1, "slow state")
        x_path[..., k + 1, :] = nxt
    return FastSlowSolution(
        grid=grid,
        x_slow=x_path,
        y_fast=y_sub[..., ::sf, :].copy(),
        eps=float(eps),
        seed=seed,
        substep_factor=sf,
        y_substeps=y_sub,
        substep_grid=Grid(grid.t_start, grid.t_end, n * sf),
    )
