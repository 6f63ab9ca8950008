"""Coefficient functions of the jump-model value function.

W(t, x, y, λ) = G(t) x y + H(t, λ) y² + I(t, λ) y + K(t, λ) with

    G(t)    = e^{r(T-t)}
    H(t, λ) = e^{η(t) λ + ζ(t)} / (2θ)
    I(t, λ) = α(t) λ + β(t)
    K       = 0

η, α, β are closed forms; ζ needs one time quadrature; φ is the
catastrophe-retention multiplier built from tilted moments of F2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._quad import quad
from .model import ModelParams

__all__ = [
    "decay_integral",
    "eta",
    "phi",
    "zeta",
    "zeta_rate",
    "alpha",
    "beta_fn",
    "CoefficientCurves",
    "build_curves",
    "GHIK",
    "ghik",
]

ZETA_EPS = 1e-12


def decay_integral(delta: float, tau):
    """∫_0^τ e^{-δ u} du = (1 - e^{-δτ})/δ, with the δ -> 0 limit τ."""
    tau = np.asarray(tau, dtype=float)
    out = tau.copy() if delta == 0.0 else -np.expm1(-delta * tau) / delta
    return out if out.ndim else float(out)


def eta(params: ModelParams, t):
    """η(t) = (κ_r² μ1² / σ1²) (1 - e^{-δ(T-t)}) / δ."""
    return params.ordinary_tilt * decay_integral(params.delta, params.T - np.asarray(t, dtype=float))


def _phi_from_moments(params: ModelParams, m1, m2):
    return ((params.iota_r + 1.0) * params.mu2 - m1) / m2


def phi(params: ModelParams, t):
    """φ(t) = ((ι_r+1) μ2 - M(1, η)) / M(2, η) with F2 tilted moments."""
    e = eta(params, t)
    if np.ndim(e):
        M = params.F2.tilted_moments(e)
        return _phi_from_moments(params, M[1], M[2])
    return _phi_from_moments(params, params.F2.tilted_moment(1, e), params.F2.tilted_moment(2, e))


def zeta_rate(params: ModelParams, u):
    """-ζ'(u) = (μ0-r)²/σ0² + ρ (1 - M(0,η) + φ² M(2,η))."""
    e = eta(params, u)
    if np.ndim(e):
        M = params.F2.tilted_moments(e)
        m0, m1, m2 = M[0], M[1], M[2]
    else:
        F2 = params.F2
        m0, m1, m2 = F2.tilted_moment(0, e), F2.tilted_moment(1, e), F2.tilted_moment(2, e)
    ph = _phi_from_moments(params, m1, m2)
    return params.sharpe_sq + params.rho * (1.0 - m0 + ph * ph * m2)


def _zeta_core(params: ModelParams, a: float, b: float) -> float:
    """∫_a^b -ζ'(u) du: the ρ-integral by adaptive quadrature, linear part exact."""
    if b <= a:
        return 0.0
    lin = (params.rho + params.sharpe_sq) * (b - a)
    if params.rho == 0.0:
        return lin
    F2 = params.F2

    def g(u: float) -> float:
        e = eta(params, u)
        m0, m1, m2 = F2.tilted_moment(0, e), F2.tilted_moment(1, e), F2.tilted_moment(2, e)
        ph = _phi_from_moments(params, m1, m2)
        return ph * ph * m2 - m0

    return params.rho * quad(g, a, b, epsabs=ZETA_EPS, epsrel=ZETA_EPS, what="zeta") + lin


def zeta(params: ModelParams, t: float) -> float:
    """ζ(t) = ρ ∫_t^T {φ² M(2,η) - M(0,η)} ds + (ρ + (μ0-r)²/σ0²)(T - t)."""
    return _zeta_core(params, float(t), params.T)


def alpha(params: ModelParams, t):
    """α(t) = ((κ_r-κ) μ1/(δ+r)) (e^{-δ(T-t)} - e^{r(T-t)})."""
    tau = params.T - np.asarray(t, dtype=float)
    d, r = params.delta, params.r
    c = (params.kappa_r - params.kappa) * params.mu1 / (d + r)
    out = -c * np.exp(-d * tau) * np.expm1((d + r) * tau)
    return out if np.ndim(t) else float(out)


def beta_fn(params: ModelParams, t):
    """β(t) = ∫_t^T {ρ(ι_r+1) μ2 α(u) - ρ(ι_r-ι) k μ2 e^{r(T-u)}} du.

    Closed form:
        ρ(κ_r-κ)(ι_r+1) μ1 μ2/(δ+r) · [(1-e^{-δτ})/δ - (e^{rτ}-1)/r]
        - ρ(ι_r-ι) k μ2 (e^{rτ}-1)/r,      τ = T - t.
    """
    p = params
    tau = p.T - np.asarray(t, dtype=float)
    grow = np.expm1(p.r * tau) / p.r
    first = (
        p.rho * (p.kappa_r - p.kappa) * (p.iota_r + 1.0) * p.mu1 * p.mu2 / (p.delta + p.r)
        * (decay_integral(p.delta, tau) - grow)
    )
    out = first - p.rho * (p.iota_r - p.iota) * p.k * p.mu2 * grow
    return out if np.ndim(t) else float(out)


# --------------------------------------------------------------- tabulation


@dataclass(frozen=True, eq=False)
class CoefficientCurves:
    """η, ζ, α, β, φ tabulated on a uniform grid over [0, T].

    Interpolated evaluation is piecewise linear (error O(Δt²)); pass
    ``exact=True`` to recompute from the closed forms instead.
    """

    params: ModelParams
    grid: np.ndarray
    eta_tab: np.ndarray
    zeta_tab: np.ndarray
    alpha_tab: np.ndarray
    beta_tab: np.ndarray
    phi_tab: np.ndarray
    m_tab: np.ndarray  # (3, n): M(0..2, η(t_j)) of F2
    _zeta_cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> float:
        return self.params.T

    @property
    def n_grid(self) -> int:
        return self.grid.size

    @property
    def ycomp_tab(self) -> np.ndarray:
        """∫ q*(z) F2(dz) = M(0,η) + φ M(1,η) - 1 on the grid."""
        return self.m_tab[0] + self.phi_tab * self.m_tab[1] - 1.0

    def _interp(self, tab: np.ndarray, t):
        out = np.interp(t, self.grid, tab)
        return out if np.ndim(t) else float(out)

    def eta(self, t, exact: bool = False):
        return eta(self.params, t) if exact else self._interp(self.eta_tab, t)

    def alpha(self, t, exact: bool = False):
        return alpha(self.params, t) if exact else self._interp(self.alpha_tab, t)

    def beta(self, t, exact: bool = False):
        return beta_fn(self.params, t) if exact else self._interp(self.beta_tab, t)

    def phi(self, t, exact: bool = False):
        return phi(self.params, t) if exact else self._interp(self.phi_tab, t)

    def zeta(self, t, exact: bool = False):
        if not exact:
            return self._interp(self.zeta_tab, t)
        if np.ndim(t):
            return np.array([self.zeta(float(x), exact=True) for x in np.ravel(t)]).reshape(np.shape(t))
        t = float(t)
        hit = self._zeta_cache.get(t)
        if hit is None:
            hit = zeta(self.params, t)
            if len(self._zeta_cache) < 100_000:
                self._zeta_cache[t] = hit
        return hit

    def tables(self) -> dict[str, np.ndarray]:
        return {
            "t": self.grid,
            "eta": self.eta_tab,
            "zeta": self.zeta_tab,
            "alpha": self.alpha_tab,
            "beta": self.beta_tab,
            "phi": self.phi_tab,
        }


def build_curves(params: ModelParams, n_grid: int = 2001) -> CoefficientCurves:
    """Tabulate the coefficients on ``n_grid`` uniform points of [0, T].

    ζ is accumulated backward from T as a sum of per-cell quadratures.
    """
    if n_grid < 2:
        raise ValueError("n_grid must be >= 2")
    p = params
    grid = np.linspace(0.0, p.T, n_grid)
    grid[-1] = p.T
    e = eta(p, grid)
    e[-1] = 0.0
    M = p.F2.tilted_moments(e)
    ph = _phi_from_moments(p, M[1], M[2])
    pieces = np.array([_zeta_core(p, grid[j], grid[j + 1]) for j in range(n_grid - 1)])
    z = np.zeros(n_grid)
    # backward running sum in a fixed order
    acc = 0.0
    for j in range(n_grid - 2, -1, -1):
        acc += pieces[j]
        z[j] = acc
    a = alpha(p, grid)
    b = beta_fn(p, grid)
    a[-1] = 0.0
    b[-1] = 0.0
    return CoefficientCurves(p, grid, e, z, a, b, ph, M[:3].copy())


# --------------------------------------------------------------- G, H, I, K


@dataclass(frozen=True, eq=False)
class GHIK:
    """Value-function coefficients, evaluated from the closed forms."""

    params: ModelParams
    curves: CoefficientCurves

    def G(self, t):
        return np.exp(self.params.r * (self.params.T - np.asarray(t))) if np.ndim(t) else math.exp(
            self.params.r * (self.params.T - t)
        )

    def logH(self, t, lam):
        c = self.curves
        return c.eta(t, exact=True) * lam + c.zeta(t, exact=True) - math.log(2.0 * self.params.theta)

    def H(self, t, lam):
        return np.exp(self.logH(t, lam))

    def I(self, t, lam):  # noqa: E743
        c = self.curves
        return c.alpha(t, exact=True) * lam + c.beta(t, exact=True)

    def K(self, t, lam):
        return 0.0 * np.asarray(lam) if np.ndim(lam) else 0.0

    def W(self, t, x, y, lam):
        return self.G(t) * x * y + self.H(t, lam) * y * y + self.I(t, lam) * y + self.K(t, lam)


def ghik(params: ModelParams, curves: CoefficientCurves) -> GHIK:
    return GHIK(params, curves)

