"""Closed-form moments under the equilibrium pair and the MMV efficient frontier.

Notation for a window [s, t] started from λ(s) = λ, Y(s) = y:

    e0 = e^{η(s)λ + ζ(s)},  e2 = e^{ψ1 λ + ψ2},  e3 = e^{ψ1 λ + ψ3}

    E[Y H(t, λ(t))]      = (y/2θ) e2
    E[(Y H(t, λ(t)))²]   = (y²/2θ) e3 H(s, λ)
    E[λ(t) Y H(t, λ(t))] = E[Y H] · κ

κ is the mean of λ(t) under the measure with density Y H / E[Y H]. Its exact
value needs one extra time quadrature; ``form="displayed"`` swaps in the
cheaper expression e^{-δ(t-s)}λ + ρ(ι_r+1)μ2 (1-e^{-δ(t-s)})/δ, which only
coincides with κ at t = T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._quad import quad
from .coefficients import CoefficientCurves, GHIK, decay_integral
from .errors import ConditionViolated, DegenerateWindow
from .model import ModelParams
from .strategies import Anchor

__all__ = [
    "FrontierAux",
    "FrontierPoint",
    "psi",
    "psi_all",
    "frontier_aux",
    "frontier_constants",
    "mean_lambda",
    "second_moment_lambda",
    "mean_lambda_Q",
    "tilted_lambda_mean",
    "mean_wealth_Q",
    "mean_wealth_P",
    "var_wealth_P",
    "variance_relation",
    "yh_moments",
    "frontier_point",
]

PSI_EPS = 1e-10
FORMS = ("exact", "displayed")


@dataclass(frozen=True)
class FrontierAux:
    psi1: float
    psi2: float
    psi3: float
    log_e0: float
    log_e2: float
    log_e3: float

    @property
    def e0(self) -> float:
        return math.exp(self.log_e0)

    @property
    def e2(self) -> float:
        return math.exp(self.log_e2)

    @property
    def e3(self) -> float:
        return math.exp(self.log_e3)


@dataclass(frozen=True)
class FrontierPoint:
    t: float
    mean_P: float
    mean_Q: float
    var_P: float
    C1: float
    C2: float
    C3: float


def _window(s: float, t: float, T: float) -> None:
    if not (0.0 <= s <= t <= T):
        raise ValueError(f"need 0 <= s <= t <= T, got s={s}, t={t}, T={T}")


def _psi1(params: ModelParams, s, t):
    """ψ1(s,t) = (κ_r²μ1²/σ1²) e^{-δ(t-s)} (1 - e^{-δ(T-t)})/δ."""
    return params.ordinary_tilt * math.exp(-params.delta * (t - s)) * decay_integral(params.delta, params.T - t)


def _inner(params: ModelParams, curves: CoefficientCurves, u: float, t: float, m: int) -> float:
    """∫ e^{-η(u)z}(e^{ψ1(u,t)z} - 1)(φ(u)z + 1)^m F2(dz) via tilted moments."""
    F2 = params.F2
    e = curves.eta(u, exact=True)
    ph = curves.phi(u, exact=True)
    a = max(e - _psi1(params, u, t), 0.0)
    if m == 1:
        w = (1.0, ph)
    else:
        w = (1.0, 2.0 * ph, ph * ph)
    return sum(c * (F2.tilted_moment(j, a) - F2.tilted_moment(j, e)) for j, c in enumerate(w))


def psi(params: ModelParams, curves: CoefficientCurves, s: float, t: float, which: int) -> float:
    """ψ1, ψ2 or ψ3 on the window [s, t]."""
    _window(s, t, params.T)
    if which == 1:
        return _psi1(params, s, t)
    if which not in (2, 3):
        raise ValueError("which must be 1, 2 or 3")
    z = curves.zeta(t, exact=True)
    if params.rho == 0.0 or t == s:
        return z
    m = which - 1
    integral = quad(
        lambda u: _inner(params, curves, u, t, m), s, t, epsabs=PSI_EPS, epsrel=PSI_EPS, what=f"psi{which}"
    )
    return z + params.rho * integral


def psi_all(params: ModelParams, curves: CoefficientCurves, s: float, t: float) -> tuple[float, float, float]:
    return tuple(psi(params, curves, s, t, k) for k in (1, 2, 3))  # type: ignore[return-value]


def frontier_aux(params: ModelParams, curves: CoefficientCurves, s: float, t: float, lam: float) -> FrontierAux:
    p1, p2, p3 = psi_all(params, curves, s, t)
    log_e0 = curves.eta(s, exact=True) * lam + curves.zeta(s, exact=True)
    return FrontierAux(p1, p2, p3, log_e0, p1 * lam + p2, p1 * lam + p3)


# ------------------------------------------------------------------ λ moments


def mean_lambda(params: ModelParams, s: float, t: float, lam: float) -> float:
    """E^P λ(t) = e^{-δ(t-s)} λ + ρ μ2 (1 - e^{-δ(t-s)})/δ."""
    tau = t - s
    return math.exp(-params.delta * tau) * lam + params.rho * params.mu2 * decay_integral(params.delta, tau)


def second_moment_lambda(params: ModelParams, s: float, t: float, lam: float) -> float:
    """E^P λ(t)² = (E^P λ(t))² + ρ σ2² (1 - e^{-2δ(t-s)})/(2δ)."""
    m = mean_lambda(params, s, t, lam)
    return m * m + _var_lambda(params, t - s)


def _var_lambda(params: ModelParams, tau: float) -> float:
    return params.rho * params.sigma2_sq * decay_integral(2.0 * params.delta, tau)


def mean_lambda_Q(params: ModelParams, s: float, t: float, lam: float) -> float:
    """E^{Q*} λ(t): the jump mean under Q* is (ι_r+1) μ2."""
    tau = t - s
    return math.exp(-params.delta * tau) * lam + params.rho * (params.iota_r + 1.0) * params.mu2 * decay_integral(
        params.delta, tau
    )


def tilted_lambda_mean(
    params: ModelParams, curves: CoefficientCurves, s: float, t: float, lam: float, form: str = "exact"
) -> float:
    """κ = E[λ(t) Y H(t, λ(t))] / E[Y H(t, λ(t))].

    Under the Y H-tilted measure catastrophes on [s, t] still arrive at
    rate ρ and their sizes have mean-rate ∫ z e^{-(η(u)-ψ1(u,t))z}(1+φ(u)z) F2(dz).
    """
    if form == "displayed":
        return mean_lambda_Q(params, s, t, lam)
    if form != "exact":
        raise ValueError(f"form must be one of {FORMS}")
    _window(s, t, params.T)
    base = math.exp(-params.delta * (t - s)) * lam
    if params.rho == 0.0 or t == s:
        return base
    F2 = params.F2

    def g(u: float) -> float:
        a = max(curves.eta(u, exact=True) - _psi1(params, u, t), 0.0)
        ph = curves.phi(u, exact=True)
        return math.exp(-params.delta * (t - u)) * (F2.tilted_moment(1, a) + ph * F2.tilted_moment(2, a))

    return base + params.rho * quad(g, s, t, epsabs=PSI_EPS, epsrel=PSI_EPS, what="tilted lambda mean")


def yh_moments(
    params: ModelParams,
    curves: CoefficientCurves,
    s: float,
    t: float,
    lam: float,
    y: float,
    form: str = "exact",
) -> tuple[float, float, float]:
    """(E[Y H], E[(Y H)²], E[λ Y H]) at time t under P."""
    aux = frontier_aux(params, curves, s, t, lam)
    th = params.theta
    m1 = y / (2.0 * th) * aux.e2
    h_s = GHIK(params, curves).H(s, lam)
    m2 = y * y / (2.0 * th) * aux.e3 * h_s
    m3 = m1 * tilted_lambda_mean(params, curves, s, t, lam, form)
    return m1, m2, m3


# ------------------------------------------------------------------ wealth


def mean_wealth_Q(params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float) -> float:
    """E^{Q*} X*(t) from the anchor state."""
    p = params
    s, lam = anchor.s, anchor.lambda_s
    _window(s, t, p.T)
    disc = math.exp(-p.r * (p.T - t))
    a_t, a_s = curves.alpha(t, exact=True), curves.alpha(s, exact=True)
    b_t, b_s = curves.beta(t, exact=True), curves.beta(s, exact=True)
    tau = t - s
    return (
        anchor.x_s * math.exp(p.r * tau)
        - (a_t * math.exp(-p.delta * tau) - a_s) * disc * lam
        - a_t * p.rho * (p.iota_r + 1.0) * p.mu2 * decay_integral(p.delta, tau) * disc
        - b_t * disc
        + b_s * disc
    )


def _gap_parts(params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float, form: str):
    """Pieces of E^P[X G] - E^{Q*}[X G] and Var^P[X G]."""
    p = params
    s, lam, y = anchor.s, anchor.lambda_s, anchor.y_s
    aux = frontier_aux(p, curves, s, t, lam)
    w = y / p.theta
    a_t = curves.alpha(t, exact=True)
    tau = t - s
    K = p.rho * p.iota_r * p.mu2 * decay_integral(p.delta, tau)
    Kc = tilted_lambda_mean(p, curves, s, t, lam, form) - mean_lambda(p, s, t, lam)
    return aux, w, a_t, K, Kc, _var_lambda(p, tau)


def mean_wealth_P(
    params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float
) -> float:
    """E^P X*(t) = E^{Q*} X*(t) + [(y/θ)(e0 - e2) + α(t) K] / G(t)."""
    aux, w, a_t, K, _, _ = _gap_parts(params, curves, anchor, t, "displayed")
    gap = w * -math.expm1(aux.log_e2 - aux.log_e0) * aux.e0 + a_t * K
    return mean_wealth_Q(params, curves, anchor, t) + gap * math.exp(-params.r * (params.T - t))


def var_wealth_P(
    params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float, form: str = "exact"
) -> float:
    """Var^P X*(t) from X G = c - 2 Y H - α λ - β."""
    aux, w, a_t, _, Kc, v_lam = _gap_parts(params, curves, anchor, t, form)
    spread = aux.e2 * aux.e2 * math.expm1(aux.log_e0 + aux.log_e3 - 2.0 * aux.log_e2)
    var_g = w * w * spread + a_t * a_t * v_lam + 2.0 * a_t * w * aux.e2 * Kc
    return var_g * math.exp(-2.0 * params.r * (params.T - t))


def frontier_constants(
    params: ModelParams,
    curves: CoefficientCurves,
    s: float,
    t: float,
    lam: float,
    form: str = "exact",
) -> tuple[float, float, float]:
    """(C1, C2, C3) with Var = C1 (E^P - E^{Q*} - C2)² + C3.

    With A = log e0, B = log e2, C = log e3:
        C1 = expm1(A+C-2B) / expm1(A-B)²
        C2 = α [K - κ̃ expm1(A-B)/expm1(A+C-2B)] e^{-r(T-t)}
        C3 = α² [Vλ - κ̃²/expm1(A+C-2B)] e^{-2r(T-t)}
    where K = E^{Q*}λ - E^Pλ, κ̃ = κ - E^Pλ and Vλ = Var^P λ(t). The
    displayed form takes κ̃ = K.
    """
    p = params
    _window(s, t, p.T)
    if t == s:
        raise DegenerateWindow("frontier undefined at t = s (point mass)")
    aux = frontier_aux(p, curves, s, t, lam)
    x = aux.log_e0 - aux.log_e2
    spread = math.expm1(aux.log_e0 + aux.log_e3 - 2.0 * aux.log_e2)
    if not spread > 0.0 or not x != 0.0:
        raise ConditionViolated("e0 e3 > e2^2", f"spread={spread}, log(e0/e2)={x} at s={s}, t={t}")
    d1 = math.expm1(x)
    C1 = spread / (d1 * d1)
    a_t = curves.alpha(t, exact=True)
    tau = t - s
    K = p.rho * p.iota_r * p.mu2 * decay_integral(p.delta, tau)
    Kc = tilted_lambda_mean(p, curves, s, t, lam, form) - mean_lambda(p, s, t, lam)
    disc = math.exp(-p.r * (p.T - t))
    C2 = a_t * (K - Kc * d1 / spread) * disc
    C3 = a_t * a_t * (_var_lambda(p, tau) - Kc * Kc / spread) * disc * disc
    return C1, C2, C3


def variance_relation(
    params: ModelParams,
    curves: CoefficientCurves,
    anchor: Anchor,
    t: float,
    mean_P_observed: float,
    form: str = "exact",
) -> float:
    """Var^P X*(t) = C1 (mean_P - E^{Q*} X*(t) - C2)² + C3."""
    C1, C2, C3 = frontier_constants(params, curves, anchor.s, t, anchor.lambda_s, form)
    d = mean_P_observed - mean_wealth_Q(params, curves, anchor, t) - C2
    return C1 * d * d + C3


def frontier_point(
    params: ModelParams, curves: CoefficientCurves, anchor: Anchor, t: float, form: str = "exact"
) -> FrontierPoint:
    C1, C2, C3 = frontier_constants(params, curves, anchor.s, t, anchor.lambda_s, form)
    mq = mean_wealth_Q(params, curves, anchor, t)
    mp = mean_wealth_P(params, curves, anchor, t)
    d = mp - mq - C2
    return FrontierPoint(t, mp, mq, C1 * d * d + C3, C1, C2, C3)


def frontier_table(
    params: ModelParams, curves: CoefficientCurves, anchor: Anchor, times, form: str = "exact"
) -> list[FrontierPoint]:
    return [frontier_point(params, curves, anchor, float(t), form) for t in np.asarray(times, dtype=float)]
