"""Gaussian path sampling on uniform grids.

Provides fractional Brownian motion (Hurst index in (1/3, 1/2]) and standard
Brownian motion, their covariance function, a dyadic-pair Holder-seminorm
estimate, and CSV/JSON serialization.

fBm is sampled exactly in law by circulant embedding of the increment
(fractional Gaussian noise) covariance; a dense Cholesky factorization is the
fallback when the embedding is not numerically PSD.  Which route produced a
sample is recorded in ``GaussianPath.meta["sampler"]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .rng import stream

__all__ = [
    "Grid",
    "GaussianPath",
    "HolderEstimate",
    "fbm_covariance",
    "sample_fbm",
    "sample_bm",
    "holder_norm_estimate",
    "save_path",
    "load_path",
]

FBM = "fbm"
BM = "bm"

# Hurst range supported by the lift and solvers downstream.
HURST_LOW = 1.0 / 3.0
HURST_HIGH = 0.5


@dataclass(frozen=True)
class Grid:
    """Uniform time grid with n_steps intervals on [t_start, t_end]."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.t_start < 0:
            raise ConfigurationError(f"t_start: must be >= 0, got {self.t_start}")
        if not self.t_end > self.t_start:
            raise ConfigurationError(
                f"t_end: must exceed t_start, got [{self.t_start}, {self.t_end}]"
            )
        if self.n_steps < 1:
            raise ConfigurationError(f"n_steps: must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    def points(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    def refined(self, factor: int) -> "Grid":
        """The grid with the same span and factor-times more steps."""
        if factor < 1:
            raise ConfigurationError(f"factor: must be >= 1, got {factor}")
        return Grid(self.t_start, self.t_end, self.n_steps * factor)

    def is_refinement_of(self, coarse: "Grid", factor: int) -> bool:
        return (
            self.t_start == coarse.t_start
            and self.t_end == coarse.t_end
            and self.n_steps == coarse.n_steps * factor
        )

    def index_of(self, t: float) -> int:
        """Grid index of a time that must sit on a grid point."""
        pos = (t - self.t_start) / self.dt
        k = int(round(pos))
        if k < 0 or k > self.n_steps or abs(pos - k) > 1e-8:
            raise ConfigurationError(f"t: {t} is not a point of {self}")
        return k


@dataclass
class GaussianPath:
    """A sampled path on a grid: values[k] is the state at grid point k.

    values has shape (n_steps + 1, dim) and starts at the origin.
    """

    grid: Grid
    values: np.ndarray
    kind: str
    seed: int
    hurst: "float | None" = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ConfigurationError(
                f"values: expected (n_steps+1, dim) array, got shape {self.values.shape}"
            )
        if self.values.shape[0] != self.grid.n_steps + 1:
            raise ConfigurationError(
                f"values: length {self.values.shape[0]} does not match grid "
                f"with {self.grid.n_steps} steps"
            )
        if np.any(self.values[0] != 0.0):
            raise ConfigurationError("values: paths must start at the origin")
        if self.kind not in (FBM, BM):
            raise ConfigurationError(f"kind: must be '{FBM}' or '{BM}', got {self.kind!r}")
        if self.kind == FBM:
            if self.hurst is None:
                raise ConfigurationError("hurst: required for fbm paths")
            _check_hurst(self.hurst)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)


@dataclass(frozen=True)
class HolderEstimate:
    """Lower bound for the beta-Holder seminorm from dyadic-separation pairs."""

    beta: float
    value: float
    pair_budget: int


def _check_hurst(H: float) -> None:
    if not (HURST_LOW < H <= HURST_HIGH):
        raise DomainError(f"H: must lie in (1/3, 1/2], got {H}")


def fbm_covariance(s: float, t: float, H: float) -> float:
    """Covariance of fBm: half of (t^2H + s^2H - |t-s|^2H)."""
    if s < 0 or t < 0:
        raise DomainError(f"times must be >= 0, got ({s}, {t})")
    if not (0.0 < H < 1.0):
        raise DomainError(f"H: must lie in (0, 1), got {H}")
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))


def _fgn_autocov(n: int, H: float) -> np.ndarray:
    """Autocovariance of unit-step fractional Gaussian noise at lags 0..n."""
    k = np.arange(n + 1, dtype=float)
    two_h = 2 * H
    return 0.5 * ((k + 1) ** two_h - 2 * k ** two_h + np.abs(k - 1) ** two_h)


def _circulant_eigenvalues(n: int, H: float) -> np.ndarray:
    gamma = _fgn_autocov(n, H)
    # Embedding vector [g0..gn, g_{n-1}..g1] of length 2n.
    c = np.concatenate([gamma, gamma[-2:0:-1]])
    return np.fft.fft(c).real


def _fgn_circulant(lam: np.ndarray, n: int, rng: np.random.Generator,
                   batch_shape: tuple) -> np.ndarray:
    """Unit-step fGn samples of shape batch_shape + (n,) from embedding eigenvalues."""
    m = 2 * n
    lam = np.clip(lam, 0.0, None)
    u0 = rng.standard_normal(batch_shape)
    un = rng.standard_normal(batch_shape)
    u = rng.standard_normal(batch_shape + (n - 1,)) if n > 1 else None
    v = rng.standard_normal(batch_shape + (n - 1,)) if n > 1 else None
    y = np.zeros(batch_shape + (m,), dtype=complex)
    y[..., 0] = np.sqrt(lam[0] / m) * u0
    y[..., n] = np.sqrt(lam[n] / m) * un
    if n > 1:
        half = np.sqrt(lam[1:n] / (2 * m))
        y[..., 1:n] = half * (u + 1j * v)
        y[..., n + 1:] = np.conj(y[..., n - 1:0:-1])
    return np.fft.fft(y, axis=-1).real[..., :n]


def _fgn_cholesky(n: int, H: float, rng: np.random.Generator,
                  batch_shape: tuple) -> np.ndarray:
    gamma = _fgn_autocov(n, H)
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    cov = gamma[idx]
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal(batch_shape + (n,))
    return z @ chol.T


def fbm_increment_batch(H: float, n_steps: int, dt: float, rng: np.random.Generator,
                        batch_shape: tuple = (), method: str = "auto") -> "tuple[np.ndarray, str]":
    """fBm increments of shape batch_shape + (n_steps,) and the sampler used."""
    if method not in ("auto", "circulant", "cholesky"):
        raise ConfigurationError(f"method: unknown sampler {method!r}")
    sampler = method
    if method in ("auto", "circulant"):
        lam = _circulant_eigenvalues(n_steps, H)
        if lam.min() < -1e-8 * lam.max():
            if method == "circulant":
                raise ConfigurationError(
                    "method: circulant embedding is not PSD for these parameters"
                )
            sampler = "cholesky"
        else:
            sampler = "circulant"
            fgn = _fgn_circulant(lam, n_steps, rng, batch_shape)
    if sampler == "cholesky":
        fgn = _fgn_cholesky(n_steps, H, rng, batch_shape)
    return fgn * dt ** H, sampler


def sample_fbm(H: float, grid: Grid, seed: int, dim: int = 1,
               method: str = "auto") -> GaussianPath:
    """One exact-in-law fBm sample on the grid, deterministic in (H, grid, seed)."""
    _check_hurst(H)
    if dim < 1:
        raise ConfigurationError(f"dim: must be >= 1, got {dim}")
    rng = stream(seed, "fbm-path")
    inc, sampler = fbm_increment_batch(H, grid.n_steps, grid.dt, rng, (dim,), method)
    values = np.zeros((grid.n_steps + 1, dim))
    np.cumsum(inc.T, axis=0, out=values[1:])
    return GaussianPath(grid, values, FBM, seed, hurst=H, meta={"sampler": sampler})


def sample_bm(dim: int, grid: Grid, seed: int) -> GaussianPath:
    """Standard Brownian motion with independent coordinates."""
    if dim < 1:
        raise ConfigurationError(f"dim: must be >= 1, got {dim}")
    rng = stream(seed, "bm-path")
    inc = rng.standard_normal((grid.n_steps, dim)) * np.sqrt(grid.dt)
    values = np.zeros((grid.n_steps + 1, dim))
    np.cumsum(inc, axis=0, out=values[1:])
    return GaussianPath(grid, values, BM, seed)


def holder_norm_estimate(path: GaussianPath, beta: float,
                         pair_budget: int = 4096) -> HolderEstimate:
    """Max of |f(t) - f(s)| / (t-s)^beta over dyadic-separation grid pairs.

    Pairs are enumerated coarsest separation first, then by left endpoint, and
    the first pair_budget pairs are inspected, so the estimate is monotone
    nondecreasing in pair_budget.
    """
    if not (0.0 < beta <= 1.0):
        raise DomainError(f"beta: must lie in (0, 1], got {beta}")
    n = path.grid.n_steps
    dt = path.grid.dt
    values = path.values
    best = 0.0
    used = 0
    sep = 1 << (n.bit_length() - 1)  # largest power of two <= n
    while sep >= 1 and used < pair_budget:
        starts = np.arange(0, n - sep + 1)
        if used + starts.size > pair_budget:
            starts = starts[: pair_budget - used]
        used += starts.size
        diffs = values[starts + sep] - values[starts]
        ratios = np.linalg.norm(diffs, axis=1) / (sep * dt) ** beta
        if ratios.size:
            best = max(best, float(ratios.max()))
        sep //= 2
    return HolderEstimate(beta=beta, value=best, pair_budget=used)


def save_path(path: GaussianPath, base: str) -> "list[str]":
    """Write {base}.csv (t, x_1..x_d) and {base}.json (metadata); return filenames."""
    csv_name, json_name = base + ".csv", base + ".json"
    t = path.grid.points()
    with open(csv_name, "w") as fh:
        fh.write("t," + ",".join(f"x_{i+1}" for i in range(path.dim)) + "\n")
        for k in range(t.size):
            row = [repr(float(t[k]))] + [repr(float(x)) for x in path.values[k]]
            fh.write(",".join(row) + "\n")
    header = {
        "kind": path.kind,
        "hurst": path.hurst,
        "seed": path.seed,
        "dim": path.dim,
        "grid": {"t_start": path.grid.t_start, "t_end": path.grid.t_end,
                 "n_steps": path.grid.n_steps},
        "meta": path.meta,
    }
    with open(json_name, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [csv_name, json_name]


def load_path(base: str) -> GaussianPath:
    with open(base + ".json") as fh:
        header = json.load(fh)
    grid = Grid(**header["grid"])
    data = np.loadtxt(base + ".csv", delimiter=",", skiprows=1, ndmin=2)
    return GaussianPath(
        grid=grid,
        values=data[:, 1:],
        kind=header["kind"],
        seed=header["seed"],
        hurst=header["hurst"],
        meta=header.get("meta", {}),
    )
