"""Named coefficient presets for the experiment surface.

Three built-in fast-slow systems, all scalar in every component and all
sharing the dissipative linear fast pair g = xi - 8 phi, h = 1 (declared
contraction rate beta1 = 16, so the pinned fast equation has the Gaussian
stationary law N(xi/8, 1/16)):

- ``ou-linear``: slow drift reads out the fast state (f = phi) and the slow
  diffusion is off. Every averaged quantity has a closed form, so this is
  the oracle system: fbar(xi) = xi/8.
- ``averaging-bench``: nonlinear slow coefficients
  f = phi/(1+xi^2) + sin(xi), sigma = (1+xi^2)^(-1/2). The averaged drift
  is still closed-form (fbar = (xi/8)/(1+xi^2) + sin(xi)), but the slow
  path genuinely feels the fast state — the benchmark for the scale sweep.
- ``degenerate-drift``: same diffusion, but f = sin(xi) ignores the fast
  state entirely, so the averaged equation is the slow equation and any
  measured gap is pure discretization noise — the experiment's null case.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .solver import CoefficientSet


@dataclass(frozen=True)
class Preset:
    """A coefficient set bundled with default initial data, a slow-state box
    wide enough to tabulate the averaged drift over, and (when available)
    the closed-form averaged drift for oracle checks."""

    name: str
    coeffs: CoefficientSet
    x0: np.ndarray
    y0: np.ndarray
    fbar_box: tuple
    fbar_exact: "callable | None"
    description: str


def _fast_pair():
    """The shared dissipative fast pair: g = xi - 8 phi, unit additive h."""
    g = lambda xi, phi: xi - 8.0 * phi
    h = lambda xi, phi: np.ones(
        np.broadcast_shapes(xi.shape[:-1], phi.shape[:-1]) + (1, 1))
    jac_h_phi = lambda xi, phi: np.zeros(
        np.broadcast_shapes(xi.shape[:-1], phi.shape[:-1]) + (1, 1, 1))
    return g, h, jac_h_phi


def ou_linear() -> Preset:
    g, h, jac_h = _fast_pair()
    coeffs = CoefficientSet(
        dims=(1, 1, 1, 1),
        f=lambda xi, phi: phi + 0.0 * xi,
        sigma=lambda xi: np.zeros(xi.shape[:-1] + (1, 1)),
        g=g,
        h=h,
        jac_sigma=lambda xi: np.zeros(xi.shape[:-1] + (1, 1, 1)),
        jac_h_phi=jac_h,
        regularity={"beta1": 16.0},
    )
    return Preset(
        name="ou-linear",
        coeffs=coeffs,
        x0=np.array([8.0]),
        y0=np.array([1.0]),
        fbar_box=((-16.0, 16.0),),
        fbar_exact=lambda xi: np.asarray(xi, dtype=float) / 8.0,
        description="linear fast readout, no slow diffusion; all averaged "
                    "quantities closed-form",
    )


def averaging_bench() -> Preset:
    g, h, jac_h = _fast_pair()
    coeffs = CoefficientSet(
        dims=(1, 1, 1, 1),
        f=lambda xi, phi: phi / (1.0 + xi ** 2) + np.sin(xi),
        sigma=lambda xi: (1.0 + xi ** 2)[..., None] ** -0.5,
        g=g,
        h=h,
        jac_sigma=lambda xi: (-xi * (1.0 + xi ** 2) ** -1.5)[..., None, None],
        jac_h_phi=jac_h,
        regularity={"beta1": 16.0},
    )
    return Preset(
        name="averaging-bench",
        coeffs=coeffs,
        x0=np.array([1.0]),
        y0=np.array([0.0]),
        fbar_box=((-8.0, 8.0),),
        fbar_exact=lambda xi: (np.asarray(xi, dtype=float) / 8.0)
        / (1.0 + np.asarray(xi, dtype=float) ** 2)
        + np.sin(np.asarray(xi, dtype=float)),
        description="nonlinear slow coefficients over the dissipative "
                    "linear fast pair; the scale-sweep benchmark",
    )


def degenerate_drift() -> Preset:
    g, h, jac_h = _fast_pair()
    bench = averaging_bench()
    coeffs = CoefficientSet(
        dims=(1, 1, 1, 1),
        f=lambda xi, phi: np.sin(xi) + 0.0 * phi,
        sigma=bench.coeffs.sigma,
        g=g,
        h=h,
        jac_sigma=bench.coeffs.jac_sigma,
        jac_h_phi=jac_h,
        regularity={"beta1": 16.0},
    )
    return Preset(
        name="degenerate-drift",
        coeffs=coeffs,
        x0=np.array([1.0]),
        y0=np.array([0.0]),
        fbar_box=((-8.0, 8.0),),
        fbar_exact=lambda xi: np.sin(np.asarray(xi, dtype=float)),
        description="slow drift ignores the fast state; the averaged "
                    "equation equals the slow equation (null case)",
    )


_BUILDERS = {
    "ou-linear": ou_linear,
    "averaging-bench": averaging_bench,
    "degenerate-drift": degenerate_drift,
}


def preset_names() -> "list[str]":
    return sorted(_BUILDERS)


def get_preset(name: str) -> Preset:
    builder = _BUILDERS.get(name)
    if builder is None:
        raise ConfigurationError(
            f"preset: unknown name {name!r}; available: "
            f"{', '.join(preset_names())}"
        )
    return builder()
