"""Averaged dynamics for fast-slow systems driven by a mixed rough path.

With the slow state pinned, the fast equation is exponentially ergodic under
the declared dissipativity rate, so its invariant law is represented by
ergodic time-and-replica averages — never by density estimation. This module
estimates the averaged slow drift from those averages (fresh per query, or
tabulated on a lattice with multilinear interpolation), solves the averaged
slow equation against the B-block of the same lift that drove the coupled
system, builds the auxiliary pair whose slow argument is frozen on blocks of
length delta (the scale-decoupling device the averaging argument rests on),
probes the mixing rate that argument needs, and runs the shrinking-scale
convergence experiment with per-replica stream keying and fixed-order
reductions so identical configurations reproduce identical numbers.
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DivergenceError, DomainError
from .lift import RoughLift, lift_from_arrays
from .paths import Grid, fbm_increment_batch
from .rng import stream
from .solver import (
    CoefficientSet,
    FastSlowSolution,
    required_substep_factor,
    solve_fast_slow,
    solve_frozen,
    solve_rde,
)

# Strategy names for the averaged-drift evaluator.
TABULATED = "tabulated"
ON_THE_FLY = "on_the_fly"

# Default time step for frozen-equation ensembles: fine enough that the
# discrete stationary variance of a dissipative linear pair with rate <= 16
# is inflated by under 2 percent.
FROZEN_DT = 1.0 / 256.0

_FALLBACK_BURN_IN = 2.0


def tree_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum by repeated pairwise folding: a fixed reduction order, so replica
    aggregates are bit-reproducible regardless of how they were computed."""
    arr = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    if arr.shape[0] == 0:
        raise ConfigurationError("values: nothing to reduce")
    while arr.shape[0] > 1:
        half = arr.shape[0] // 2
        folded = arr[:half] + arr[half:2 * half]
        if arr.shape[0] % 2:
            folded = np.concatenate([folded, arr[2 * half:]], axis=0)
        arr = folded
    return arr[0]


def _tree_mean(values: np.ndarray, axis: int = 0) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    return tree_sum(arr, axis=axis) / arr.shape[axis]


def khasminskii_delta(eps: float) -> float:
    """Freezing-block length for a given scale separation: eps sqrt(-ln eps)."""
    if not 0.0 < eps < 1.0:
        raise ConfigurationError(f"eps: must lie in (0, 1), got {eps}")
    return eps * math.sqrt(-math.log(eps))


def breakpoint_floor(s: float, delta: float) -> float:
    """Largest multiple of delta not exceeding s, with a guard so times that
    are a multiple of delta up to floating-point error stay on their own
    breakpoint instead of falling one block back."""
    if delta <= 0.0:
        raise ConfigurationError(f"delta: must be positive, got {delta}")
    return math.floor(s / delta + 1e-9) * delta


# --------------------------------------------------------- frozen ensembles

@dataclass(frozen=True)
class FrozenEnsemble:
    """Post-burn-in states of the pinned fast equation: an empirical stand-in
    for its invariant law at slow state xi."""

    xi: np.ndarray
    samples: np.ndarray      # (replicas, kept_nodes, n)
    burn_in: float
    horizon: float
    replicas: int

    def __post_init__(self):
        if not self.horizon > self.burn_in:
            raise ConfigurationError(
                f"horizon: must exceed burn_in, got {self.horizon} <= "
                f"{self.burn_in}"
            )
        if self.samples.size == 0:
            raise ConfigurationError("samples: ensemble is empty")


def _default_burn_in(coeffs: CoefficientSet, seed) -> float:
    """Five relaxation times of the declared dissipativity rate; when no rate
    is declared, fit one with a short mixing probe."""
    beta1 = coeffs.regularity.get("beta1")
    if beta1 is None:
        probe = mixing_probe(
            coeffs, np.zeros(coeffs.dims[0]), lags=(0.05, 0.1, 0.2),
            replicas=64, seed=f"{seed}:burn-in-probe",
            burn_in=_FALLBACK_BURN_IN, horizon=_FALLBACK_BURN_IN + 8.0,
        )
        rate = probe.fitted_rate
        if not np.isfinite(rate) or rate <= 0.0:
            return _FALLBACK_BURN_IN
        beta1 = 2.0 * rate
    return 5.0 / float(beta1)


def sample_frozen_ensemble(coeffs: CoefficientSet, xi, burn_in: float,
                           horizon: float, replicas: int, seed,
                           n_steps: "int | None" = None,
                           phi0=None) -> FrozenEnsemble:
    """Draw replica trajectories of the pinned fast equation and keep the
    states past burn_in."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if replicas < 1:
        raise ConfigurationError(f"replicas: must be >= 1, got {replicas}")
    if not horizon > burn_in >= 0.0:
        raise ConfigurationError(
            f"horizon: need horizon > burn_in >= 0, got {horizon}, {burn_in}"
        )
    if n_steps is None:
        n_steps = max(64, math.ceil(horizon / FROZEN_DT))
    n_dim = coeffs.dims[1]
    if phi0 is None:
        phi0 = np.zeros((replicas, n_dim))
    else:
        phi0 = np.broadcast_to(
            np.asarray(phi0, dtype=float), (replicas, n_dim)).copy()
    path = solve_frozen(xi, phi0, coeffs, horizon, n_steps, seed)
    dt = horizon / n_steps
    first_kept = min(int(math.ceil(burn_in / dt - 1e-9)), n_steps - 1)
    return FrozenEnsemble(
        xi=xi,
        samples=path[..., first_kept:, :],
        burn_in=float(burn_in),
        horizon=float(horizon),
        replicas=int(replicas),
    )


@dataclass(frozen=True)
class FbarEstimate:
    """Averaged-drift value at one slow state plus its replica spread."""

    value: np.ndarray     # (m,)
    stderr: np.ndarray    # (m,)
    replicas: int
    burn_in: float
    horizon: float


def estimate_fbar(coeffs: CoefficientSet, xi, burn_in: "float | None" = None,
                  horizon: float = 50.0, replicas: int = 64, seed=0,
                  n_steps: "int | None" = None, phi0=None) -> FbarEstimate:
    """Averaged slow drift at xi: the time-and-replica average of f along
    pinned fast trajectories past burn-in, with the spread of the per-replica
    time averages as a standard-error diagnostic."""
    if burn_in is None:
        burn_in = _default_burn_in(coeffs, seed)
    ens = sample_frozen_ensemble(coeffs, xi, burn_in, horizon, replicas,
                                 seed, n_steps=n_steps, phi0=phi0)
    fvals = np.asarray(coeffs.f(ens.xi, ens.samples), dtype=float)
    per_replica = _tree_mean(fvals, axis=-2)          # (replicas, m)
    value = _tree_mean(per_replica, axis=0)
    if replicas > 1:
        dev = per_replica - value
        var = tree_sum(dev * dev, axis=0) / (replicas - 1)
        stderr = np.sqrt(var / replicas)
    else:
        stderr = np.full_like(value, np.nan)
    return FbarEstimate(value=value, stderr=stderr, replicas=int(replicas),
                        burn_in=float(burn_in), horizon=float(horizon))


# --------------------------------------------------------- averaged drift

def _multilinear(axes, table, query):
    """Multilinear interpolation of table (P1, ..., Pm, m) at query (..., m)."""
    m = len(axes)
    idx, wts = [], []
    for l, ax in enumerate(axes):
        x = query[..., l]
        j = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, ax.size - 2)
        idx.append(j)
        wts.append((x - ax[j]) / (ax[j + 1] - ax[j]))
    out = np.zeros(query.shape[:-1] + (table.shape[-1],))
    for corner in range(1 << m):
        weight = np.ones(query.shape[:-1])
        pick = []
        for l in range(m):
            if corner >> l & 1:
                weight = weight * wts[l]
                pick.append(idx[l] + 1)
            else:
                weight = weight * (1.0 - wts[l])
                pick.append(idx[l])
        out += weight[..., None] * table[tuple(pick)]
    return out


class AveragedDrift:
    """Callable averaged slow drift.

    TABULATED precomputes the ergodic estimate on a lattice over a state box
    and answers queries by multilinear interpolation (queries must stay in
    the box); ON_THE_FLY runs a fresh ergodic average per distinct query and
    caches it. Construct via the `tabulated` / `on_the_fly` classmethods.
    """

    def __init__(self, coeffs: CoefficientSet, strategy: str,
                 burn_in: "float | None", horizon: float, replicas: int,
                 seed, n_steps: "int | None" = None):
        if strategy not in (TABULATED, ON_THE_FLY):
            raise ConfigurationError(
                f"strategy: expected '{TABULATED}' or '{ON_THE_FLY}', got "
                f"{strategy!r}"
            )
        self.coeffs = coeffs
        self.strategy = strategy
        if burn_in is None:
            burn_in = _default_burn_in(coeffs, seed)
        self.burn_in = float(burn_in)
        self.horizon = float(horizon)
        self.replicas = int(replicas)
        self.seed = seed
        self.n_steps = n_steps
        self.box = None
        self.axes = None
        self.table = None
        self.table_stderr = None
        self.cache: dict = {}

    @classmethod
    def tabulated(cls, coeffs: CoefficientSet, box, lattice_points: int = 64,
                  burn_in: "float | None" = None, horizon: float = 50.0,
                  replicas: int = 64, seed=0,
                  n_steps: "int | None" = None) -> "AveragedDrift":
        """Precompute the drift on a lattice_points-per-dimension lattice
        over box = ((lo, hi), ...) covering the slow state."""
        self = cls(coeffs, TABULATED, burn_in, horizon, replicas, seed,
                   n_steps=n_steps)
        m = coeffs.dims[0]
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        if len(box) != m:
            raise ConfigurationError(
                f"box: expected {m} (lo, hi) pairs, got {len(box)}"
            )
        if lattice_points < 2 or any(not hi > lo for lo, hi in box):
            raise ConfigurationError(
                "box: each (lo, hi) needs hi > lo and lattice_points >= 2"
            )
        self.box = box
        self.axes = [np.linspace(lo, hi, lattice_points) for lo, hi in box]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        nodes = np.stack([g.ravel() for g in mesh], axis=-1)
        vals = np.empty((nodes.shape[0], m))
        errs = np.empty((nodes.shape[0], m))
        for i, node in enumerate(nodes):
            est = estimate_fbar(
                self.coeffs, node, burn_in=self.burn_in,
                horizon=self.horizon, replicas=self.replicas,
                seed=f"{self.seed}:fbar-node:{i}", n_steps=self.n_steps,
            )
            vals[i] = est.value
            errs[i] = est.stderr
        shape = (lattice_points,) * m + (m,)
        self.table = vals.reshape(shape)
        self.table_stderr = errs.reshape(shape)
        return self

    @classmethod
    def on_the_fly(cls, coeffs: CoefficientSet,
                   burn_in: "float | None" = None, horizon: float = 50.0,
                   replicas: int = 64, seed=0,
                   n_steps: "int | None" = None) -> "AveragedDrift":
        """Fresh ergodic average per distinct query, memoized by value."""
        return cls(coeffs, ON_THE_FLY, burn_in, horizon, replicas, seed,
                   n_steps=n_steps)

    def _lookup(self, point: np.ndarray) -> np.ndarray:
        key = tuple(round(float(c), 12) for c in point)
        hit = self.cache.get(key)
        if hit is None:
            est = estimate_fbar(
                self.coeffs, point, burn_in=self.burn_in,
                horizon=self.horizon, replicas=self.replicas,
                seed=f"{self.seed}:fbar-query:{key}", n_steps=self.n_steps,
            )
            hit = est.value
            self.cache[key] = hit
        return hit

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        squeeze = xi.ndim == 1
        query = np.atleast_2d(xi)
        if self.strategy == TABULATED:
            for l, (lo, hi) in enumerate(self.box):
                tol = 1e-9 * (hi - lo)
                if (np.any(query[..., l] < lo - tol)
                        or np.any(query[..., l] > hi + tol)):
                    raise DomainError(
                        f"xi: component {l} leaves the tabulated box "
                        f"[{lo}, {hi}]; widen the box or use the "
                        f"'{ON_THE_FLY}' strategy"
                    )
            out = _multilinear(self.axes, self.table, query)
        else:
            flat = query.reshape(-1, query.shape[-1])
            out = np.stack([self._lookup(p) for p in flat])
            out = out.reshape(query.shape)
        return out[0] if squeeze else out

    def table_payload(self) -> dict:
        """Lattice data in plain lists (for serialization)."""
        if self.strategy != TABULATED:
            raise ConfigurationError(
                "strategy: only tabulated drifts carry a lattice"
            )
        return {
            "strategy": self.strategy,
            "box": [list(b) for b in self.box],
            "axes": [ax.tolist() for ax in self.axes],
            "values": self.table.tolist(),
            "stderr": self.table_stderr.tolist(),
            "burn_in": self.burn_in,
            "horizon": self.horizon,
            "replicas": self.replicas,
        }


def solve_averaged(fbar, sigma, lift_b, x0, grid: "Grid | None" = None,
                   jac_sigma=None) -> np.ndarray:
    """Rough Euler solve of the averaged slow equation
    dX = fbar(X) dt + sigma(X) dB against a B-only driver view. fbar is any
    callable (an AveragedDrift or a closed form)."""
    return solve_rde(fbar, sigma, lift_b, np.asarray(x0, dtype=float),
                     grid=grid, jac_bc=jac_sigma)


# --------------------------------------------- frozen-argument auxiliaries

def khasminskii_auxiliary(coeffs: CoefficientSet, eps: float, delta: float,
                          lift: RoughLift, x_eps, seed=None,
                          substep_factor: "int | None" = None, y0=None):
    """Auxiliary pair with the slow argument frozen on blocks of length
    delta: the fast line is re-run with g-tilde and h reading the already
    solved slow path at the nearest breakpoint preceding each substep, and
    the slow line re-integrates f against that frozen pair while reusing
    sigma at the true slow path for the rough term. Consumes the lift's own
    fine-grid increments (no fresh noise; `seed` is recorded only).

    x_eps is the coupled solution object, or a plain slow-path array with
    y0 supplied. Returns (x_hat, y_hat): the slow auxiliary on the coarse
    grid and the fast auxiliary at substep resolution.
    """
    grid = lift.coarse_grid
    dt = grid.dt
    n = grid.n_steps
    if delta < dt * (1.0 - 1e-9):
        raise ConfigurationError(
            f"delta: freezing block {delta} is below the grid step {dt}"
        )
    if isinstance(x_eps, FastSlowSolution):
        if abs(x_eps.eps - eps) > 1e-12:
            raise ConfigurationError(
                f"eps: {eps} does not match the solution's {x_eps.eps}"
            )
        xs = x_eps.x_slow
        if y0 is None:
            y0 = x_eps.y_substeps[..., 0, :]
        if substep_factor is None:
            substep_factor = x_eps.substep_factor
    else:
        xs = np.asarray(x_eps, dtype=float)
        if y0 is None:
            raise ConfigurationError(
                "y0: required when x_eps is a bare slow-path array"
            )
    if xs.shape[-2] != n + 1:
        raise ConfigurationError(
            f"x_eps: expected {n + 1} grid rows, got {xs.shape[-2]}"
        )
    if lift.fine_w is None:
        raise ConfigurationError(
            "lift: carries no fine-grid W values; build it via lift_mixed "
            "or lift_from_arrays"
        )
    if substep_factor is None:
        substep_factor = required_substep_factor(dt, eps)
        while lift.fine_factor % substep_factor:
            substep_factor += 1
    sf = substep_factor
    if sf < 1 or lift.fine_factor % sf:
        raise ConfigurationError(
            f"substep_factor: {sf} must divide the lift's fine_factor "
            f"{lift.fine_factor}"
        )
    dt_sub = dt / sf
    if dt_sub > eps / 4.0 + 1e-15:
        raise ConfigurationError(
            f"substep_factor: fast substep {dt_sub:.3g} exceeds eps/4 = "
            f"{eps / 4.0:.3g}; need substep_factor >= "
            f"{required_substep_factor(dt, eps)}"
        )
    m, n_dim = coeffs.dims[0], coeffs.dims[1]

    # Coarse index of the breakpoint preceding each substep node.
    t_rel = np.arange(n * sf + 1) * dt_sub
    bp = np.floor(t_rel / delta + 1e-9) * delta
    frozen_idx = np.minimum(np.floor(bp / dt + 1e-9).astype(int), n)

    stride = lift.fine_factor // sf
    w_sub = lift.fine_w[..., ::stride, :]
    dw = np.diff(w_sub, axis=-2)
    b_block = lift.b_block()
    binc = np.diff(b_block.values, axis=-2)
    b2 = b_block.level2_adjacent()

    y0 = np.asarray(y0, dtype=float)
    batch = np.broadcast_shapes(xs.shape[:-2], y0.shape[:-1],
                                lift.batch_shape)
    x_hat = np.empty(batch + (n + 1, m), dtype=float)
    y_hat = np.empty(batch + (n * sf + 1, n_dim), dtype=float)
    x_hat[..., 0, :] = xs[..., 0, :]
    y_hat[..., 0, :] = y0
    inv_eps = 1.0 / eps
    inv_sqrt_eps = 1.0 / math.sqrt(eps)
    for k in range(n):
        xk_true = xs[..., k, :]
        ys = y_hat[..., k * sf, :]
        xj = xs[..., frozen_idx[k * sf], :]
        f_acc = 0.5 * np.asarray(coeffs.f(xj, ys), dtype=float)
        for s in range(sf):
            node = k * sf + s
            xj = xs[..., frozen_idx[node], :]
            drift = coeffs.ito_drift(xj, ys) * (dt_sub * inv_eps)
            noise = np.einsum("...ij,...j->...i",
                              np.asarray(coeffs.h(xj, ys), dtype=float),
                              dw[..., node, :]) * inv_sqrt_eps
            ys = ys + drift + noise
            if not np.all(np.isfinite(ys)):
                raise DivergenceError(
                    f"fast auxiliary became non-finite at substep {node + 1}",
                    step=node + 1,
                )
            y_hat[..., node + 1, :] = ys
            w = 0.5 if s == sf - 1 else 1.0
            xj_next = xs[..., frozen_idx[node + 1], :]
            f_acc = f_acc + w * np.asarray(coeffs.f(xj_next, ys), dtype=float)
        sig = np.asarray(coeffs.sigma(xk_true), dtype=float)
        jac = coeffs.sigma_jacobian(np.broadcast_to(xk_true, batch + (m,)))
        nxt = (x_hat[..., k, :] + f_acc * dt_sub
               + np.einsum("...ij,...j->...i", sig, binc[..., k, :])
               + np.einsum("...ijp,...pl,...lj->...i", jac, sig,
                           b2[..., k, :, :]))
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(
                f"slow auxiliary became non-finite at step {k + 1}",
                step=k + 1,
            )
        x_hat[..., k + 1, :] = nxt
    return x_hat, y_hat


# --------------------------------------------------------------- mixing

@dataclass(frozen=True)
class MixingReport:
    """Autocovariance of the slow drift along the pinned fast flow, with the
    fitted exponential decay rate and the declared reference rate."""

    lags: np.ndarray            # actual lags used (snapped to the step)
    autocov: np.ndarray
    fitted_rate: float
    reference_rate: "float | None"
    replicas: int
    burn_in: float
    horizon: float

    def payload(self) -> dict:
        ref = self.reference_rate
        return {
            "lags": self.lags.tolist(),
            "autocov": self.autocov.tolist(),
            "fitted_rate": (None if not np.isfinite(self.fitted_rate)
                            else float(self.fitted_rate)),
            "reference_rate": None if ref is None else float(ref),
            "replicas": self.replicas,
            "burn_in": self.burn_in,
            "horizon": self.horizon,
        }


def mixing_probe(coeffs: CoefficientSet, xi, lags, replicas: int = 256,
                 seed=0, burn_in: "float | None" = None,
                 horizon: "float | None" = None, phi0=None) -> MixingReport:
    """Empirical autocovariance of f(xi, Y_s) along the pinned fast flow at
    the given lags, and the exponential decay rate fitted to it. The
    declared dissipativity rate beta1 enters the report as beta1/2, the
    decorrelation rate the averaging estimates lean on."""
    beta1 = coeffs.regularity.get("beta1")
    if burn_in is None:
        burn_in = (5.0 / beta1) if beta1 else _FALLBACK_BURN_IN
    if horizon is None:
        horizon = burn_in + 16.0
    lags = np.asarray(sorted(float(l) for l in lags), dtype=float)
    if lags.size == 0 or lags[0] < 0.0:
        raise ConfigurationError("lags: need a nonempty list of lags >= 0")
    n_steps = max(64, math.ceil(horizon / FROZEN_DT))
    dt = horizon / n_steps
    if lags[-1] > (horizon - burn_in) / 2.0:
        raise ConfigurationError(
            f"lags: max lag {lags[-1]} is too close to the kept window "
            f"{horizon - burn_in}"
        )
    ens = sample_frozen_ensemble(coeffs, xi, burn_in, horizon, replicas,
                                 f"{seed}:mixing", n_steps=n_steps, phi0=phi0)
    fvals = np.asarray(coeffs.f(ens.xi, ens.samples), dtype=float)
    series = fvals.reshape(fvals.shape[:-1])          # (replicas, kept), m=1
    if fvals.shape[-1] != 1:
        series = np.linalg.norm(fvals, axis=-1)
    mean = _tree_mean(_tree_mean(series, axis=-1), axis=0)
    centered = series - mean
    kept = centered.shape[-1]
    lag_steps = np.unique(np.round(lags / dt).astype(int))
    acov = np.empty(lag_steps.size)
    for i, ls in enumerate(lag_steps):
        prod = centered[..., : kept - ls] * centered[..., ls:]
        acov[i] = _tree_mean(_tree_mean(prod, axis=-1), axis=0)
    actual = lag_steps * dt
    positive = (actual > 0.0) & (acov > 0.0)
    if positive.sum() >= 2:
        slope = np.polyfit(actual[positive], np.log(acov[positive]), 1)[0]
        fitted = -float(slope)
    else:
        fitted = float("nan")
    return MixingReport(
        lags=actual,
        autocov=acov,
        fitted_rate=fitted,
        reference_rate=None if beta1 is None else 0.5 * float(beta1),
        replicas=int(replicas),
        burn_in=float(burn_in),
        horizon=float(horizon),
    )


# ------------------------------------------------- convergence experiment

@dataclass(frozen=True)
class ConvergenceRow:
    """One scale point of the experiment: kept-replica mean of the sup-norm
    gap between the coupled slow path and the averaged path."""

    eps: float
    delta: float
    replicas: int
    excluded: int
    mean_sup_error: float
    std_error: float
    runtime: float


@dataclass
class ConvergenceReport:
    """Scale-sweep results plus the freezing-block schedule that produced
    the deltas."""

    rows: "list[ConvergenceRow]"
    schedule: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for row in self.rows:
            if row.replicas < 2:
                raise ConfigurationError(
                    f"replicas: row at eps={row.eps} kept {row.replicas} "
                    "replicas; need >= 2"
                )

    def payload(self) -> dict:
        return {
            "schedule": self.schedule,
            "params": self.params,
            "rows": [
                {
                    "eps": r.eps, "delta": r.delta, "replicas": r.replicas,
                    "excluded": r.excluded,
                    "mean_sup_error": r.mean_sup_error,
                    "std_error": r.std_error, "runtime": r.runtime,
                }
                for r in self.rows
            ],
        }


def _replica_noise(coeffs: CoefficientSet, hurst: float, n_fine: int,
                   dt_fine: float, rng) -> "tuple[np.ndarray, np.ndarray]":
    """Fine-grid (B, W) value arrays for one replica from its own stream."""
    d, dp = coeffs.dims[2], coeffs.dims[3]
    binc, _ = fbm_increment_batch(hurst, n_fine, dt_fine, rng, (d,))
    b = np.zeros((n_fine + 1, d))
    np.cumsum(binc.T, axis=0, out=b[1:])
    w = np.zeros((n_fine + 1, dp))
    np.cumsum(rng.standard_normal((n_fine, dp)) * math.sqrt(dt_fine),
              axis=0, out=w[1:])
    return b, w


def _sup_gap(x_eps: np.ndarray, x_bar: np.ndarray) -> np.ndarray:
    """Per-replica sup over time of the Euclidean gap between slow paths."""
    return np.max(np.linalg.norm(x_eps - x_bar, axis=-1), axis=-1)


def _pair_gaps_batched(coeffs, eps, lift, x0, y0, fbar, grid):
    sol = solve_fast_slow(coeffs, eps, lift, x0, y0, grid=grid)
    x_bar = solve_averaged(fbar, coeffs.sigma, lift.b_block(), x0,
                           grid=grid, jac_sigma=coeffs.sigma_jacobian)
    return _sup_gap(sol.x_slow, x_bar)


def convergence_experiment(coeffs: CoefficientSet, eps_list, replicas: int,
                           hurst: float, grid_spec, seed, x0, y0,
                           fbar=None, fbar_box=None, t_end: float = 1.0,
                           delta_override=None) -> ConvergenceReport:
    """Scale sweep for the averaging principle: per (eps, replica), draw one
    mixed noise pair on its own keyed stream, lift it, solve the coupled
    system and the averaged equation on the same B-block, and record the
    sup-norm gap. Diverged replicas are excluded with a warning and counted
    per row. The physical grid stays fixed while eps shrinks; the fast
    substep budget grows as 1/eps."""
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) == 0:
        raise ConfigurationError("eps_list: schedule is empty")
    if any(not 0.0 < e < 1.0 for e in eps_list):
        raise ConfigurationError(
            f"eps_list: every scale must lie in (0, 1), got {eps_list}"
        )
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigurationError(
            f"eps_list: schedule must be strictly decreasing, got {eps_list}"
        )
    if replicas < 2:
        raise ConfigurationError(f"replicas: need >= 2, got {replicas}")
    if not 1.0 / 3.0 < hurst <= 0.5:
        raise ConfigurationError(
            f"hurst: supported range is (1/3, 1/2], got {hurst}"
        )
    n_coarse, fine_factor = (int(grid_spec[0]), int(grid_spec[1]))
    grid = Grid(0.0, float(t_end), n_coarse)
    n_fine = n_coarse * fine_factor
    dt_fine = grid.dt / fine_factor
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if delta_override is None:
        deltas = [khasminskii_delta(e) for e in eps_list]
        schedule = "eps*sqrt(-ln(eps))"
    else:
        try:
            deltas = [float(d) for d in delta_override]
        except TypeError:
            deltas = [float(delta_override)] * len(eps_list)
        if len(deltas) != len(eps_list):
            raise ConfigurationError(
                f"delta_override: expected {len(eps_list)} values, got "
                f"{len(deltas)}"
            )
        schedule = "override"
    if fbar is None:
        if fbar_box is None:
            raise ConfigurationError(
                "fbar_box: required when no averaged drift is supplied"
            )
        fbar = AveragedDrift.tabulated(coeffs, fbar_box,
                                       seed=f"{seed}:fbar-table")

    rows = []
    for i_eps, eps in enumerate(eps_list):
        t0 = time.perf_counter()
        noise = [
            _replica_noise(coeffs, hurst, n_fine, dt_fine,
                           stream(seed, "converge", i_eps, r))
            for r in range(replicas)
        ]
        b = np.stack([nb for nb, _ in noise])
        w = np.stack([nw for _, nw in noise])
        excluded = 0
        try:
            lift = lift_from_arrays(b, w, grid, fine_factor, hurst=hurst)
            gaps = _pair_gaps_batched(coeffs, eps, lift, x0, y0, fbar, grid)
        except DivergenceError:
            kept_gaps = []
            for r in range(replicas):
                try:
                    lift_r = lift_from_arrays(b[r], w[r], grid, fine_factor,
                                              hurst=hurst)
                    kept_gaps.append(float(_pair_gaps_batched(
                        coeffs, eps, lift_r, x0, y0, fbar, grid)))
                except DivergenceError:
                    excluded += 1
            gaps = np.asarray(kept_gaps)
            warnings.warn(
                f"eps={eps}: excluded {excluded} diverged replicas of "
                f"{replicas}",
                RuntimeWarning,
                stacklevel=2,
            )
        kept = gaps.size
        if kept < 2:
            raise DivergenceError(
                f"eps={eps}: only {kept} replicas survived; cannot aggregate",
                step=-1,
            )
        mean = float(_tree_mean(gaps))
        var = float(tree_sum((gaps - mean) ** 2)) / (kept - 1)
        rows.append(ConvergenceRow(
            eps=eps,
            delta=deltas[i_eps],
            replicas=kept,
            excluded=excluded,
            mean_sup_error=mean,
            std_error=math.sqrt(var / kept),
            runtime=time.perf_counter() - t0,
        ))
    return ConvergenceReport(
        rows=rows,
        schedule=schedule,
        params={
            "hurst": float(hurst),
            "t_end": float(t_end),
            "n_coarse": n_coarse,
            "fine_factor": fine_factor,
            "replicas_requested": int(replicas),
            "seed": str(seed),
        },
    )


@dataclass(frozen=True)
class DeltaGapRow:
    """One freezing-block length and the worst-over-time mean-square gap
    between the fast path and its frozen-argument auxiliary."""

    delta: float
    sup_mean_sq_gap: float
    std_error: float
    replicas: int


def delta_gap_probe(coeffs: CoefficientSet, eps: float, deltas, replicas: int,
                    hurst: float, grid_spec, seed, x0, y0,
                    t_end: float = 1.0) -> "list[DeltaGapRow]":
    """Measure sup over time of the replica-mean squared gap |Y - Y_hat|^2
    for each freezing-block length delta, reusing one replica batch of
    coupled solutions. The linear-in-delta growth of this gap is what makes
    the freezing device admissible."""
    if replicas < 2:
        raise ConfigurationError(f"replicas: need >= 2, got {replicas}")
    n_coarse, fine_factor = (int(grid_spec[0]), int(grid_spec[1]))
    grid = Grid(0.0, float(t_end), n_coarse)
    n_fine = n_coarse * fine_factor
    dt_fine = grid.dt / fine_factor
    noise = [
        _replica_noise(coeffs, hurst, n_fine, dt_fine,
                       stream(seed, "delta-probe", r))
        for r in range(replicas)
    ]
    b = np.stack([nb for nb, _ in noise])
    w = np.stack([nw for _, nw in noise])
    lift = lift_from_arrays(b, w, grid, fine_factor, hurst=hurst)
    sol = solve_fast_slow(coeffs, eps, lift, np.asarray(x0, dtype=float),
                          np.asarray(y0, dtype=float), grid=grid)
    rows = []
    for delta in sorted(float(d) for d in deltas):
        _, y_hat = khasminskii_auxiliary(coeffs, eps, delta, lift, sol)
        sq = np.sum((sol.y_substeps - y_hat) ** 2, axis=-1)   # (R, nodes)
        mean_t = _tree_mean(sq, axis=0)
        worst = int(np.argmax(mean_t))
        dev = sq[:, worst] - mean_t[worst]
        var = float(tree_sum(dev * dev)) / (replicas - 1)
        rows.append(DeltaGapRow(
            delta=delta,
            sup_mean_sq_gap=float(mean_t[worst]),
            std_error=math.sqrt(var / replicas),
            replicas=int(replicas),
        ))
    return rows
