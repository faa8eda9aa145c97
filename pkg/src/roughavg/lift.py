"""Joint level-2 lift of a mixed (fBm, Bm) driver and its algebra checks.

The lift stores the first level Z = (B, W) restricted to a coarse grid plus
cumulative fine-grid sums from which the level-2 tensor over ANY coarse pair
(i, j) is assembled in O(1):

    left(i, j) = S_j - S_i - Z_i (x) (Z_j - Z_i)   with S the running sum of
                 Z_l (x) dZ_l over fine steps, restricted to coarse indices,
    quad(i, j) = Q_j - Q_i                         with Q the running sum of
                 dZ_l (x) dZ_l.

Blocks then follow the scheme each one calls for:

    B-B   left + quad/2      level-2 lift of the piecewise-linear interpolant
    W-W   left + quad/2      Stratonovich mid-point sums
    B-W   left               left-point (Ito) sums against W increments
    W-B   W_inc (x) B_inc - transpose(B-W)   integration-by-parts identity

Because every block of every pair derives additively from the same fine-grid
sums, Chen's relation and the symmetry identity hold to float round-off by
construction; the checks below only absorb accumulation error.

Arrays may carry leading batch axes (replicas); the public constructor builds
single lifts from GaussianPath inputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError
from .paths import BM, FBM, GaussianPath, Grid
from .rng import stream

__all__ = [
    "RoughLift",
    "LiftBlock",
    "LiftDiagnostics",
    "lift_mixed",
    "lift_from_arrays",
    "check_chen",
    "check_geometric",
    "diagnose",
    "save_lift",
]

DEFAULT_TOL = 1e-10  # relative; the identities hold by construction


@dataclass(frozen=True)
class LiftDiagnostics:
    """Residuals are relative to the largest second-level entry (scale)."""

    chen_residual_max: float
    symmetry_residual_max: float
    holder_beta: float
    first_level_norm: float
    second_level_norm: float
    scale: float
    passed: bool
    triples_checked: int
    pairs_checked: int

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in (
            "chen_residual_max", "symmetry_residual_max", "holder_beta",
            "first_level_norm", "second_level_norm", "scale", "passed",
            "triples_checked", "pairs_checked")}
        return json.dumps(payload, indent=2, sort_keys=True)


@dataclass
class RoughLift:
    """Level-2 lift over a coarse grid with (d + d')-dimensional first level."""

    coarse_grid: Grid
    z: np.ndarray                 # (..., N+1, D)
    fine_factor: int
    block_dims: "tuple[int, int]"
    _left_prefix: np.ndarray      # (..., N+1, D, D)
    _quad_prefix: np.ndarray      # (..., N+1, D, D)
    hurst: "float | None" = None
    fine_w: "np.ndarray | None" = field(default=None, repr=False)
    _overlay: "dict | None" = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.z.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.z.shape[:-2]

    @property
    def values(self) -> np.ndarray:
        return self.z

    def increment(self, i, j) -> np.ndarray:
        return self.z[..., j, :] - self.z[..., i, :]

    def second_level(self, i, j) -> np.ndarray:
        """Z2 over coarse pair(s); i, j may be scalars or index arrays."""
        zi = self.z[..., i, :]
        inc = self.z[..., j, :] - zi
        left = (self._left_prefix[..., j, :, :] - self._left_prefix[..., i, :, :]
                - zi[..., :, None] * inc[..., None, :])
        quad = self._quad_prefix[..., j, :, :] - self._quad_prefix[..., i, :, :]
        d = self.block_dims[0]
        out = np.empty_like(left)
        out[..., :d, :d] = left[..., :d, :d] + 0.5 * quad[..., :d, :d]
        out[..., d:, d:] = left[..., d:, d:] + 0.5 * quad[..., d:, d:]
        out[..., :d, d:] = left[..., :d, d:]
        out[..., d:, :d] = (inc[..., d:, None] * inc[..., None, :d]
                            - np.swapaxes(left[..., :d, d:], -1, -2))
        if self._overlay:
            for (pi, pj), delta in self._overlay.items():
                mask = (np.asarray(i) == pi) & (np.asarray(j) == pj)
                if np.ndim(mask) == 0:
                    if mask:
                        out = out + delta
                else:
                    out[..., mask, :, :] += delta
        return out

    def level2_adjacent(self) -> np.ndarray:
        """Tensors over all adjacent coarse steps, shape (..., N, D, D)."""
        n = self.coarse_grid.n_steps
        return self.second_level(np.arange(n), np.arange(1, n + 1))

    def with_perturbation(self, i: int, j: int, delta: np.ndarray) -> "RoughLift":
        """Fault-injection hook for diagnostics tests: adds delta to Z2(i, j)."""
        overlay = dict(self._overlay or {})
        overlay[(i, j)] = np.asarray(delta, dtype=float)
        return replace(self, _overlay=overlay)

    def b_block(self) -> "LiftBlock":
        return LiftBlock(self, 0, self.block_dims[0])

    def w_block(self) -> "LiftBlock":
        return LiftBlock(self, self.block_dims[0], self.dim)


class LiftBlock:
    """Read-only view of a contiguous driver sub-block of a RoughLift."""

    def __init__(self, parent: RoughLift, lo: int, hi: int):
        self.parent = parent
        self.lo = lo
        self.hi = hi

    @property
    def coarse_grid(self) -> Grid:
        return self.parent.coarse_grid

    @property
    def dim(self) -> int:
        return self.hi - self.lo

    @property
    def batch_shape(self) -> tuple:
        return self.parent.batch_shape

    @property
    def hurst(self) -> "float | None":
        return self.parent.hurst

    @property
    def values(self) -> np.ndarray:
        return self.parent.z[..., self.lo:self.hi]

    def increment(self, i, j) -> np.ndarray:
        return self.values[..., j, :] - self.values[..., i, :]

    def second_level(self, i, j) -> np.ndarray:
        full = self.parent.second_level(i, j)
        return full[..., self.lo:self.hi, self.lo:self.hi]

    def level2_adjacent(self) -> np.ndarray:
        full = self.parent.level2_adjacent()
        return full[..., self.lo:self.hi, self.lo:self.hi]


def lift_from_arrays(b_fine: np.ndarray, w_fine: np.ndarray, coarse_grid: Grid,
                     fine_factor: int, hurst: "float | None" = None) -> RoughLift:
    """Build the lift from fine-grid value arrays of shape (..., Nf+1, d)."""
    b_fine = np.asarray(b_fine, dtype=float)
    w_fine = np.asarray(w_fine, dtype=float)
    n_fine = coarse_grid.n_steps * fine_factor
    for name, arr in (("B", b_fine), ("W", w_fine)):
        if arr.shape[-2] != n_fine + 1:
            raise ConfigurationError(
                f"{name}: fine path has {arr.shape[-2] - 1} steps, expected "
                f"coarse n_steps x fine_factor = {n_fine}"
            )
    zf = np.concatenate([b_fine, w_fine], axis=-1)
    dz = np.diff(zf, axis=-2)
    shape = zf.shape[:-2] + (n_fine + 1, zf.shape[-1], zf.shape[-1])
    left = np.zeros(shape)
    np.cumsum(zf[..., :-1, :, None] * dz[..., :, None, :], axis=-3, out=left[..., 1:, :, :])
    quad = np.zeros(shape)
    np.cumsum(dz[..., :, None] * dz[..., None, :], axis=-3, out=quad[..., 1:, :, :])
    sl = slice(None, None, fine_factor)
    return RoughLift(
        coarse_grid=coarse_grid,
        z=zf[..., sl, :].copy(),
        fine_factor=fine_factor,
        block_dims=(b_fine.shape[-1], w_fine.shape[-1]),
        _left_prefix=left[..., sl, :, :].copy(),
        _quad_prefix=quad[..., sl, :, :].copy(),
        hurst=hurst,
        fine_w=w_fine,
    )


def lift_mixed(B: GaussianPath, W: GaussianPath, coarse_grid: Grid,
               fine_factor: int) -> RoughLift:
    """Lift of the mixed driver (B, W) sampled on the refined coarse grid."""
    if fine_factor < 1:
        raise ConfigurationError(f"fine_factor: must be >= 1, got {fine_factor}")
    if B.kind != FBM:
        raise ConfigurationError(f"B: expected kind '{FBM}', got {B.kind!r}")
    if W.kind != BM:
        raise ConfigurationError(f"W: expected kind '{BM}', got {W.kind!r}")
    if B.grid != W.grid:
        raise ConfigurationError("B and W must be sampled on the same fine grid")
    if not B.grid.is_refinement_of(coarse_grid, fine_factor):
        raise ConfigurationError(
            f"coarse_grid: fine grid {B.grid} is not coarse_grid refined "
            f"{fine_factor}x"
        )
    return lift_from_arrays(B.values, W.values, coarse_grid, fine_factor,
                            hurst=B.hurst)


# ------------------------------------------------------------------ checking

def _sample_pairs(n: int, budget: int, rng) -> "tuple[np.ndarray, np.ndarray]":
    ii, jj = np.triu_indices(n + 1, k=1)
    if ii.size <= budget:
        return ii, jj
    keep = rng.choice(ii.size, size=budget, replace=False)
    keep.sort()
    return ii[keep], jj[keep]


def _sample_triples(n: int, budget: int, rng):
    total = (n + 1) * n * (n - 1) // 6
    if total <= budget:
        i, u, j = [], [], []
        for a in range(n - 1):
            for b in range(a + 1, n):
                for c in range(b + 1, n + 1):
                    i.append(a)
                    u.append(b)
                    j.append(c)
        return np.array(i), np.array(u), np.array(j)
    # systematic adjacents plus a seeded random sample
    base = np.arange(n - 1)
    i = [base, np.zeros(n - 1, dtype=int)]
    u = [base + 1, np.arange(1, n)]
    j = [base + 2, np.full(n - 1, n)]
    m = max(budget - 2 * (n - 1), 0)
    draw = rng.integers(0, n + 1, size=(m, 3))
    draw.sort(axis=1)
    good = (draw[:, 0] < draw[:, 1]) & (draw[:, 1] < draw[:, 2])
    draw = draw[good]
    i.append(draw[:, 0])
    u.append(draw[:, 1])
    j.append(draw[:, 2])
    return np.concatenate(i), np.concatenate(u), np.concatenate(j)


def _dyadic_pairs(n: int):
    ii, jj = [], []
    sep = 1 << (n.bit_length() - 1)
    while sep >= 1:
        starts = np.arange(0, n - sep + 1)
        ii.append(starts)
        jj.append(starts + sep)
        sep //= 2
    return np.concatenate(ii), np.concatenate(jj)


def diagnose(lift: RoughLift, tol: float = DEFAULT_TOL, beta: "float | None" = None,
             budget: int = 20000, seed: int = 0) -> LiftDiagnostics:
    """Chen and symmetry residuals plus Holder norms of both levels.

    Residuals are reported relative to the largest sampled second-level entry.
    `passed` requires both residuals <= tol.
    """
    if lift.batch_shape != ():
        raise ConfigurationError("diagnostics run on single lifts, not batches")
    n = lift.coarse_grid.n_steps
    rng = stream(seed, "lift-diagnose")
    if beta is None:
        beta = (lift.hurst or 0.5) - 0.05

    pi, pj = _sample_pairs(n, budget, rng)
    z2 = lift.second_level(pi, pj)
    inc = lift.increment(pi, pj)
    scale = float(np.abs(z2).max()) if z2.size else 0.0
    denom = max(scale, 1e-300)
    sym = 0.5 * (z2 + np.swapaxes(z2, -1, -2)) - 0.5 * inc[..., :, None] * inc[..., None, :]
    sym_res = float(np.abs(sym).max()) / denom

    if n >= 2:
        ti, tu, tj = _sample_triples(n, budget, rng)
        res = (lift.second_level(ti, tj) - lift.second_level(ti, tu)
               - lift.second_level(tu, tj))
        cross = lift.increment(ti, tu)[..., :, None] * lift.increment(tu, tj)[..., None, :]
        chen_res = float(np.abs(res - cross).max()) / denom
        n_triples = ti.size
    else:
        chen_res, n_triples = 0.0, 0

    di, dj = _dyadic_pairs(n)
    spans = (dj - di) * lift.coarse_grid.dt
    inc_d = lift.increment(di, dj)
    first_norm = float((np.linalg.norm(inc_d, axis=-1) / spans ** beta).max())
    z2_d = lift.second_level(di, dj)
    second_norm = float((np.abs(z2_d).max(axis=(-1, -2)) / spans ** (2 * beta)).max())

    return LiftDiagnostics(
        chen_residual_max=chen_res,
        symmetry_residual_max=sym_res,
        holder_beta=beta,
        first_level_norm=first_norm,
        second_level_norm=second_norm,
        scale=scale,
        passed=bool(chen_res <= tol and sym_res <= tol),
        triples_checked=n_triples,
        pairs_checked=int(pi.size),
    )


def check_chen(lift: RoughLift, tol: float = DEFAULT_TOL, **kw) -> LiftDiagnostics:
    """Chen-relation residual over (a budget of) coarse triples, vs tol."""
    diag = diagnose(lift, tol=tol, **kw)
    return replace(diag, passed=bool(diag.chen_residual_max <= tol))


def check_geometric(lift: RoughLift, tol: float = DEFAULT_TOL, **kw) -> LiftDiagnostics:
    """Symmetric-part identity residual over coarse pairs, vs tol."""
    diag = diagnose(lift, tol=tol, **kw)
    return replace(diag, passed=bool(diag.symmetry_residual_max <= tol))


# -------------------------------------------------------------- serialization

def save_lift(lift: RoughLift, directory: str, window: "int | None" = None) -> "list[str]":
    """Write meta.json, first_level.csv, second_level.csv into directory.

    Second level is emitted as indexed triplets (i, j, flattened tensor) for
    pairs with j - i <= window; default window is the full triangle for coarse
    grids up to 512 steps and 8 beyond that.
    """
    if lift.batch_shape != ():
        raise ConfigurationError("serialization covers single lifts, not batches")
    os.makedirs(directory, exist_ok=True)
    n = lift.coarse_grid.n_steps
    if window is None:
        window = n if n <= 512 else 8
    meta = {
        "grid": {"t_start": lift.coarse_grid.t_start,
                 "t_end": lift.coarse_grid.t_end,
                 "n_steps": n},
        "fine_factor": lift.fine_factor,
        "block_dims": list(lift.block_dims),
        "hurst": lift.hurst,
        "window": window,
    }
    meta_name = os.path.join(directory, "meta.json")
    with open(meta_name, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    t = lift.coarse_grid.points()
    dim = lift.dim
    first_name = os.path.join(directory, "first_level.csv")
    with open(first_name, "w") as fh:
        fh.write("t," + ",".join(f"z_{i+1}" for i in range(dim)) + "\n")
        for k in range(n + 1):
            fh.write(",".join([repr(float(t[k]))]
                              + [repr(float(v)) for v in lift.z[k]]) + "\n")

    second_name = os.path.join(directory, "second_level.csv")
    cols = [f"z2_{a+1}{b+1}" for a in range(dim) for b in range(dim)]
    with open(second_name, "w") as fh:
        fh.write("i,j," + ",".join(cols) + "\n")
        for i in range(n):
            for j in range(i + 1, min(i + window, n) + 1):
                tensor = lift.second_level(i, j).ravel()
                fh.write(",".join([str(i), str(j)]
                                  + [repr(float(v)) for v in tensor]) + "\n")
    return [meta_name, first_name, second_name]
