"""Diffusion approximation of the catastrophe model.

λ becomes an OU process dλ = (-δλ + ρμ2) dt + σ2√ρ dW2, ordinary claims a
Brownian term with variance σ1² ρμ2/δ, and H carries a quadratic exponent:

    H(t, λ) = e^{ξ(t) λ² + η(t) λ + ζ(t)} / (2θ).

ξ solves the Riccati equation ξ' = -2ρσ2² ξ² + 2δ ξ - κ_r²μ1²δ/(ρμ2σ1²),
which has a real solution from ξ(T) = 0 only when the discriminant
Δ = 4δ² - 8κ_r²μ1²σ2²δ/(μ2σ1²) is nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._quad import quad
from .coefficients import alpha as _alpha_jump
from .coefficients import beta_fn as _beta_jump
from .errors import ConditionViolated
from .model import ModelParams
from .strategies import Anchor, InsurerControls, value_from_parts

__all__ = [
    "DiffusionCoefficients",
    "discriminant",
    "diffusion_coefficients",
    "kappa_r_for_discriminant",
    "diffusion_controls",
    "diffusion_feedback_controls_y",
    "diffusion_adversary",
    "diffusion_value",
    "diffusion_anchor_constant",
]

ZERO_BRANCH_RTOL = 1e-12
ZETA_EPS = 1e-12


def discriminant(params: ModelParams) -> tuple[float, float, float]:
    """(Δ, d1, d2); raises ConditionViolated when Δ < 0."""
    p = params
    if not (p.rho > 0 and p.delta > 0):
        raise ConditionViolated("rho > 0 and delta > 0", "the diffusion approximation needs both")
    D = 4.0 * p.delta**2 - 8.0 * p.ordinary_tilt * p.sigma2_sq * p.delta / p.mu2
    if abs(D) <= ZERO_BRANCH_RTOL * 4.0 * p.delta**2:
        D = 0.0
    if D < 0:
        raise ConditionViolated(
            "Delta >= 0",
            f"Delta={D:.6g}; needs delta*mu2/sigma2^2 >= 2*kappa_r^2*mu1^2/sigma1^2 "
            f"({p.delta * p.mu2 / p.sigma2_sq:.6g} < {2.0 * p.ordinary_tilt:.6g})",
        )
    root = math.sqrt(D)
    a = 4.0 * p.rho * p.sigma2_sq
    return D, (2.0 * p.delta + root) / a, (2.0 * p.delta - root) / a


def kappa_r_for_discriminant(params: ModelParams, Delta: float) -> float:
    """The reinsurer ordinary loading that puts the discriminant at ``Delta``."""
    p = params
    num = (4.0 * p.delta**2 - Delta) * p.mu2 * p.sigma1_sq
    return math.sqrt(num / (8.0 * p.mu1**2 * p.sigma2_sq * p.delta))


@dataclass(frozen=True, eq=False)
class DiffusionCoefficients:
    params: ModelParams
    Delta: float
    d1: float
    d2: float
    grid: np.ndarray
    xi_tab: np.ndarray
    eta_tab: np.ndarray
    zeta_tab: np.ndarray
    alpha_tab: np.ndarray
    beta_tab: np.ndarray
    _zeta_cache: dict = field(default_factory=dict, repr=False)

    @property
    def branch(self) -> str:
        return "DeltaZero" if self.Delta == 0.0 else "DeltaPositive"

    @property
    def T(self) -> float:
        return self.params.T

    @property
    def c0(self) -> float:
        """κ_r²μ1²δ/(ρμ2σ1²)."""
        p = self.params
        return p.ordinary_tilt * p.delta / (p.rho * p.mu2)

    @property
    def c1(self) -> float:
        """ρμ2(2ι_r+1)."""
        p = self.params
        return p.rho * p.mu2 * (2.0 * p.iota_r + 1.0)

    def xi(self, t):
        tau = self.T - np.asarray(t, dtype=float)
        p = self.params
        if self.Delta == 0.0:
            out = self.c0 * tau / (p.delta * tau + 1.0)
        else:
            r = math.sqrt(self.Delta)
            # d1 e^{√Δτ} - d2 = d1 expm1(√Δτ) + (d1 - d2)
            den = self.d1 * np.expm1(r * tau) + (self.d1 - self.d2)
            out = self.d1 * self.d2 * np.expm1(r * tau) / den
        return out if out.ndim else float(out)

    def eta(self, t):
        tau = self.T - np.asarray(t, dtype=float)
        p = self.params
        if self.Delta == 0.0:
            out = self.c1 * self.c0 * tau**2 / (p.delta * tau + 1.0)
        else:
            r = math.sqrt(self.Delta)
            den = self.d1 * np.expm1(r * tau) + (self.d1 - self.d2)
            out = 4.0 * self.c1 * self.d1 * self.d2 * np.expm1(0.5 * r * tau) ** 2 / (r * den)
        return out if out.ndim else float(out)

    def zeta_rate(self, u):
        """-ζ'(u) = c1 η + ½ρσ2² η² + ρσ2² ξ + (μ0-r)²/σ0² + ρι_r²μ2²/σ2²."""
        p = self.params
        e = self.eta(u)
        return (
            self.c1 * e
            + 0.5 * p.rho * p.sigma2_sq * e * e
            + p.rho * p.sigma2_sq * self.xi(u)
            + p.sharpe_sq
            + p.rho * p.iota_r**2 * p.mu2**2 / p.sigma2_sq
        )

    def _zeta_piece(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        return quad(lambda u: float(self.zeta_rate(u)), a, b, epsabs=ZETA_EPS, epsrel=ZETA_EPS, what="diffusion zeta")

    def zeta(self, t, exact: bool = True):
        if not exact:
            out = np.interp(t, self.grid, self.zeta_tab)
            return out if np.ndim(t) else float(out)
        if np.ndim(t):
            return np.array([self.zeta(float(x)) for x in np.ravel(t)]).reshape(np.shape(t))
        t = float(t)
        hit = self._zeta_cache.get(t)
        if hit is None:
            hit = self._zeta_piece(t, self.T)
            if len(self._zeta_cache) < 100_000:
                self._zeta_cache[t] = hit
        return hit

    def alpha(self, t):
        return _alpha_jump(self.params, t)

    def beta(self, t):
        return _beta_jump(self.params, t)

    def phi(self, t):
        """v*-multiplier at λ = 0: ι_rμ2/σ2² + η(t)."""
        p = self.params
        return p.iota_r * p.mu2 / p.sigma2_sq + self.eta(t)

    # value-function pieces
    def G(self, t):
        return math.exp(self.params.r * (self.T - t))

    def logH(self, t, lam):
        return self.xi(t) * lam * lam + self.eta(t) * lam + self.zeta(t) - math.log(2.0 * self.params.theta)

    def H(self, t, lam):
        return np.exp(self.logH(t, lam))

    def I(self, t, lam):  # noqa: E743
        return self.alpha(t) * lam + self.beta(t)

    def W(self, t, x, y, lam):
        return self.G(t) * x * y + self.H(t, lam) * y * y + self.I(t, lam) * y

    def tables(self) -> dict[str, np.ndarray]:
        return {
            "t": self.grid,
            "eta": self.eta_tab,
            "zeta": self.zeta_tab,
            "alpha": self.alpha_tab,
            "beta": self.beta_tab,
            "phi": self.phi(self.grid),
            "xi": self.xi_tab,
        }


def diffusion_coefficients(params: ModelParams, n_grid: int = 2001) -> DiffusionCoefficients:
    """Closed-form ξ, η; ζ by quadrature; α, β shared with the jump model."""
    D, d1, d2 = discriminant(params)
    grid = np.linspace(0.0, params.T, n_grid)
    grid[-1] = params.T
    empty = np.zeros(n_grid)
    dc = DiffusionCoefficients(params, D, d1, d2, grid, empty, empty, empty, empty, empty)
    pieces = [dc._zeta_piece(grid[j], grid[j + 1]) for j in range(n_grid - 1)]
    z = np.zeros(n_grid)
    acc = 0.0
    for j in range(n_grid - 2, -1, -1):
        acc += pieces[j]
        z[j] = acc
    xi, et, al, be = dc.xi(grid), dc.eta(grid), dc.alpha(grid), dc.beta(grid)
    for a in (xi, et, al, be):
        a[-1] = 0.0
    return DiffusionCoefficients(params, D, d1, d2, grid, xi, et, z, al, be)


def diffusion_anchor_constant(dcoef: DiffusionCoefficients, anchor: Anchor) -> float:
    s = anchor.s
    return dcoef.G(s) * anchor.x_s + 2.0 * dcoef.H(s, anchor.lambda_s) * anchor.y_s + dcoef.I(s, anchor.lambda_s)


def _bracket(dcoef: DiffusionCoefficients, anchor: Anchor, t: float, x, lam):
    if t < anchor.s:
        raise ValueError("t must not precede the anchor time")
    G = dcoef.G(t)
    return (diffusion_anchor_constant(dcoef, anchor) - G * x - dcoef.I(t, lam)) / G


def _controls_from_D(dcoef: DiffusionCoefficients, t: float, lam, D) -> InsurerControls:
    p = dcoef.params
    disc = math.exp(-p.r * (p.T - t))
    return InsurerControls(
        pi=(p.mu0 - p.r) * D / p.sigma0**2,
        u=p.kappa_r * p.mu1 * lam * p.delta * D / (p.sigma1_sq * p.rho * p.mu2),
        v=((p.iota_r * p.mu2 / p.sigma2_sq + 2.0 * dcoef.xi(t) * lam + dcoef.eta(t)) * D + dcoef.alpha(t) * disc) / p.k,
    )


def diffusion_controls(
    params: ModelParams, dcoef: DiffusionCoefficients, anchor: Anchor, t: float, x, lam
) -> InsurerControls:
    """Precommitted optimal controls of the diffusion model.

    D = (c - G(t)x - I(t,λ))/G(t); u* = κ_rμ1 λ δ D/(σ1² ρμ2).
    """
    return _controls_from_D(dcoef, t, lam, _bracket(dcoef, anchor, t, x, lam))


def diffusion_feedback_controls_y(dcoef: DiffusionCoefficients, t: float, y, lam) -> InsurerControls:
    """Same controls written through y: D = 2H(t,λ)y/G(t)."""
    return _controls_from_D(dcoef, t, lam, 2.0 * dcoef.H(t, lam) * y / dcoef.G(t))


def diffusion_adversary(params: ModelParams, dcoef: DiffusionCoefficients, t: float, lam) -> tuple[float, float, float]:
    """(o*, p*, q*) = (-(μ0-r)/σ0, κ_rμ1λ/(σ1√(ρμ2/δ)), ι_rμ2√ρ/σ2)."""
    p = params
    if not (p.rho > 0 and p.delta > 0):
        raise ConditionViolated("rho > 0 and delta > 0")
    o = -(p.mu0 - p.r) / p.sigma0
    pp = p.kappa_r * p.mu1 * lam / (math.sqrt(p.sigma1_sq) * math.sqrt(p.rho * p.mu2 / p.delta))
    q = p.iota_r * p.mu2 * math.sqrt(p.rho) / math.sqrt(p.sigma2_sq)
    return o, pp, q


def diffusion_value(
    params: ModelParams, dcoef: DiffusionCoefficients, anchor: Anchor, t: float, x, lam
):
    """W = (c² - (G x + I)²)/(4H)."""
    if t < anchor.s:
        raise ValueError("t must not precede the anchor time")
    return value_from_parts(dcoef, anchor, t, x, lam)
