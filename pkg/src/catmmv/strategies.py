"""Equilibrium controls and value function of the jump model.

The insurer controls a = (π, u, v): risky amount, ordinary retention,
catastrophe retention. The adversary controls b = (o, p(z), q(z)): the
Brownian tilt and the two jump tilts of the density process Y.

Two equivalent parametrizations are provided:

* feedback in y: controls depend on (t, y, λ) through G, H, I;
* precommitted: y is eliminated with the pathwise identity
  G(t)X + 2H(t,λ)Y + I(t,λ) = c, where c is fixed at the anchor time s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._quad import quad_half_line
from .coefficients import CoefficientCurves, GHIK
from .model import ModelParams

__all__ = [
    "InsurerControls",
    "AdversaryControls",
    "Anchor",
    "default_anchor",
    "anchor_constant",
    "bracket_D",
    "y_from_x",
    "feedback_controls_y",
    "adversary_controls",
    "precommitted_controls",
    "value_function",
    "mmv_value",
    "tilde_H",
    "value_from_parts",
]


@dataclass(frozen=True)
class InsurerControls:
    pi: float
    u: float
    v: float


@dataclass(frozen=True)
class AdversaryControls:
    o: float
    p: Callable[[float], float]
    q: Callable[[float], float]

    def admissible(self, z) -> bool:
        """p(z) >= -1 and q(z) >= -1 at the given marks."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return bool(np.all(np.asarray(self.p(z)) >= -1.0) and np.all(np.asarray(self.q(z)) >= -1.0))


@dataclass(frozen=True)
class Anchor:
    s: float
    x_s: float
    y_s: float
    lambda_s: float

    def __post_init__(self) -> None:
        if not (self.y_s > 0 and self.lambda_s > 0 and self.s >= 0):
            raise ValueError("anchor needs y_s > 0, lambda_s > 0, s >= 0")


def default_anchor(params: ModelParams) -> Anchor:
    return Anchor(params.s, params.x0, params.y0, params.lambda0)


def anchor_constant(params: ModelParams, curves: CoefficientCurves, anchor: Anchor) -> float:
    """c = G(s) x_s + 2 H(s, λ_s) y_s + I(s, λ_s)."""
    g = GHIK(params, curves)
    s = anchor.s
    return g.G(s) * anchor.x_s + 2.0 * g.H(s, anchor.lambda_s) * anchor.y_s + g.I(s, anchor.lambda_s)


def bracket_D(params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float, x, lam):
    """D = (c - G(t) x - I(t, λ)) / G(t) = 2 H(t, λ) y / G(t) on the identity."""
    if t < anchor.s:
        raise ValueError("t must not precede the anchor time")
    g = GHIK(params, curves)
    c = anchor_constant(params, curves, anchor)
    G = g.G(t)
    return (c - G * x - g.I(t, lam)) / G


def y_from_x(params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float, x, lam):
    """Invert the pathwise identity for y."""
    g = GHIK(params, curves)
    c = anchor_constant(params, curves, anchor)
    return (c - g.G(t) * x - g.I(t, lam)) / (2.0 * g.H(t, lam))


def _controls_from_D(params: ModelParams, curves: CoefficientCurves, t: float, D) -> InsurerControls:
    p = params
    a = curves.alpha(t, exact=True)
    ph = curves.phi(t, exact=True)
    disc = math.exp(-p.r * (p.T - t))
    return InsurerControls(
        pi=(p.mu0 - p.r) * D / p.sigma0**2,
        u=p.kappa_r * p.mu1 * D / p.sigma1_sq,
        v=(ph * D + a * disc) / p.k,
    )


def tilde_H(params: ModelParams, weighted: Callable[[float], float]) -> float:
    """H̃(f) = ∫ f(z) z / (2 H(t, λ+z)) F2(dz) by quadrature.

    ``weighted(z)`` must return f(z) / (2 H(t, λ+z)); the caller forms that
    ratio in log space because H(t, λ+z) alone overflows for large z.
    """
    F2 = params.F2
    return quad_half_line(
        lambda z: weighted(z) * z * F2.pdf(z),
        F2.mu,
        epsabs=0.0,
        epsrel=1e-12,
        what="H-tilde",
    )


def feedback_controls_y(
    params: ModelParams,
    curves: CoefficientCurves,
    t: float,
    y: float,
    lam: float,
    route: str = "closed",
) -> InsurerControls:
    """Optimal insurer controls as functions of (t, y, λ).

    ``route="closed"`` uses v* = (2Hφy + α)/(kG); ``route="quadrature"``
    evaluates the H̃ ratios of the general expression directly.
    """
    p = params
    g = GHIK(p, curves)
    G, H = g.G(t), g.H(t, lam)
    pi = 2.0 * H * (p.mu0 - p.r) * y / (G * p.sigma0**2)
    u = 2.0 * H * p.kappa_r * p.mu1 * y / (G * p.sigma1_sq)
    if route == "closed":
        v = (2.0 * H * curves.phi(t, exact=True) * y + curves.alpha(t, exact=True)) / (p.k * G)
    elif route == "quadrature":
        logH = g.logH(t, lam)
        inv2H = lambda z: 0.5 * math.exp(-g.logH(t, lam + z))  # noqa: E731
        hz = tilde_H(p, lambda z: z * inv2H(z))
        hH = tilde_H(p, lambda z: 0.5 * -math.expm1(logH - g.logH(t, lam + z)))
        hI = tilde_H(p, lambda z: (g.I(t, lam + z) - g.I(t, lam)) * inv2H(z))
        v = (p.iota_r * p.mu2 * y / hz + 2.0 * y * hH / hz + hI / hz) / (p.k * G)
    else:
        raise ValueError(f"unknown route {route!r}")
    return InsurerControls(pi, u, v)


def adversary_controls(params: ModelParams, curves: CoefficientCurves, t: float) -> AdversaryControls:
    """o* = -(μ0-r)/σ0, p*(z) = κ_r μ1 z/σ1², q*(z) = e^{-ηz}(1+φz) - 1."""
    p = params
    e = curves.eta(t, exact=True)
    ph = curves.phi(t, exact=True)
    cp = p.kappa_r * p.mu1 / p.sigma1_sq
    return AdversaryControls(
        o=-(p.mu0 - p.r) / p.sigma0,
        p=lambda z: cp * z,
        q=lambda z: np.exp(-e * np.asarray(z)) * (1.0 + ph * np.asarray(z)) - 1.0,
    )


def precommitted_controls(
    params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float, x: float, lam: float
) -> InsurerControls:
    """Controls driven by the wealth x and the anchor state instead of y."""
    return _controls_from_D(params, curves, t, bracket_D(params, curves, anchor, t, x, lam))


def value_function(
    params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float, x, lam
):
    """W = (c² - (G x + I)²) / (4 H)."""
    if t < anchor.s:
        raise ValueError("t must not precede the anchor time")
    g = GHIK(params, curves)
    return value_from_parts(g, anchor, t, x, lam)


def value_from_parts(g, anchor: Anchor, t: float, x, lam):
    """(c² - A²)/(4H) as d (d + 2A)/(4H) with d = c - A grouped term by term.

    The grouping makes d exact at the anchor, where c and A nearly cancel.
    """
    s, lam_s = anchor.s, anchor.lambda_s
    Gt, It = g.G(t), g.I(t, lam)
    d = (g.G(s) * anchor.x_s - Gt * x) + (g.I(s, lam_s) - It) + 2.0 * g.H(s, lam_s) * anchor.y_s
    A = Gt * x + It
    return d * (d + 2.0 * A) / (4.0 * g.H(t, lam))


def mmv_value(params: ModelParams, curves: CoefficientCurves) -> float:
    """V_θ = G(0) x0 + I(0, λ0) + H(0, λ0) for y0 = 1 at t = s = 0."""
    g = GHIK(params, curves)
    return g.G(0.0) * params.x0 + g.I(0.0, params.lambda0) + g.H(0.0, params.lambda0)
