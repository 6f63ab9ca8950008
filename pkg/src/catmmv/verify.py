"""Numerical checks of the closed-form solution.

* generator_apply: the generator of (X, Y, λ) applied to any W by central
  differences and half-line quadrature;
* hjbi_residual_report: L^{a*,b*}W on a grid, with random one-sided
  spot checks and a perturbed-candidate negative control;
* ode/pde residual reports for the coefficient functions of both models;
* saddle_check: Monte Carlo J^{a,b*} <= J^{a*,b*} <= J^{a*,b};
* integrability_monitor: the stopped integrals that admit a density process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._quad import quad_half_line
from .coefficients import CoefficientCurves, alpha, beta_fn, eta, phi, zeta
from .diffusion import DiffusionCoefficients, diffusion_adversary, diffusion_feedback_controls_y
from .model import ModelParams
from .simulate import Adversary, SimConfig, Strategy, mmv_objective_estimate, run_ensembles
from .strategies import AdversaryControls, InsurerControls, default_anchor

__all__ = [
    "ResidualReport",
    "Candidate",
    "generator_apply",
    "diffusion_generator_apply",
    "standard_grid",
    "hjbi_residual_report",
    "negative_control",
    "ode_residual_report",
    "coefficient_pde_report",
    "riccati_residual_report",
    "SaddleRow",
    "SaddleReport",
    "saddle_check",
    "IntegrabilityReport",
    "integrability_monitor",
]

FD_STEP = 1e-5
FD_STEP2 = 1e-2  # second differences in x, y: W is quadratic there, so only round-off matters
FD_STEP2_LAM = 1e-4  # second differences in λ, where W is not polynomial
GEN_TOL = 1e-9
PDE_TOL = 1e-10
SPOT_TOL = 1e-5


@dataclass
class ResidualReport:
    """Residuals |r| / scale, where scale sums the magnitudes of the terms."""

    grid: str
    max_abs: float
    max_rel: float
    worst: tuple
    breakdown: dict[str, float]
    rows: list[tuple] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return all(v <= tol for v in self.breakdown.values())

    def lines(self) -> list[str]:
        return [f"{k:<14s} {v:.3e}" for k, v in self.breakdown.items()]


def _report(name: str, grid: str, rows: list[tuple], extra: dict[str, float] | None = None) -> ResidualReport:
    """rows: (*point, residual, scale)."""
    res = np.array([abs(r[-2]) for r in rows])
    rel = np.array([abs(r[-2]) / r[-1] if r[-1] > 0 else abs(r[-2]) for r in rows])
    j = int(np.argmax(rel))
    breakdown = {name: float(rel[j])}
    breakdown.update(extra or {})
    return ResidualReport(grid, float(res.max()), float(rel[j]), tuple(rows[j][:-2]), breakdown, rows)



def _step(v: float, rel: float) -> float:
    return rel * max(1.0, abs(v))


# ---------------------------------------------------------------- generator


def generator_apply(
    params: ModelParams,
    W: Callable[[float, float, float, float], float],
    a: InsurerControls,
    b: AdversaryControls,
    t: float,
    x: float,
    y: float,
    lam: float,
    *,
    parts: bool = False,
    tol: float = GEN_TOL,
):
    """L^{a,b}W(t, x, y, λ).

    Derivatives are central differences; the two jump integrals run over
    (0, ∞) against the claim densities. With ``parts=True`` returns
    (value, dict of the individual terms).
    """
    p = params
    w0 = W(t, x, y, lam)
    ht, hx, hy, hl = (_step(v, FD_STEP) for v in (t, x, y, lam))
    if t + ht > p.T:
        # second-order backward stencil at the terminal edge
        W_t = (3.0 * w0 - 4.0 * W(t - ht, x, y, lam) + W(t - 2.0 * ht, x, y, lam)) / (2.0 * ht)
    else:
        W_t = (W(t + ht, x, y, lam) - W(t - ht, x, y, lam)) / (2.0 * ht)
    W_x = (W(t, x + hx, y, lam) - W(t, x - hx, y, lam)) / (2.0 * hx)
    W_y = (W(t, x, y + hy, lam) - W(t, x, y - hy, lam)) / (2.0 * hy)
    W_l = (W(t, x, y, lam + hl) - W(t, x, y, lam - hl)) / (2.0 * hl)
    Hx, Hy = _step(x, FD_STEP2), _step(y, FD_STEP2)
    W_xx = (W(t, x + Hx, y, lam) - 2.0 * w0 + W(t, x - Hx, y, lam)) / (Hx * Hx)
    W_yy = (W(t, x, y + Hy, lam) - 2.0 * w0 + W(t, x, y - Hy, lam)) / (Hy * Hy)
    W_xy = (
        W(t, x + Hx, y + Hy, lam) - W(t, x + Hx, y - Hy, lam) - W(t, x - Hx, y + Hy, lam) + W(t, x - Hx, y - Hy, lam)
    ) / (4.0 * Hx * Hy)

    pi, u, v = a.pi, a.u, a.v
    rx = p.r * x + pi * (p.mu0 - p.r) + (p.kappa_r * u - p.kappa_r + p.kappa) * p.mu1 * lam
    drift = rx + (p.iota_r * v - p.iota_r + p.iota) * p.k * p.mu2 * p.rho
    F1, F2 = p.F1, p.F2

    def ordinary(z: float) -> float:
        pz = float(b.p(z))
        jump = W(t, x - u * z, y + y * pz, lam) - w0 + u * z * W_x - y * pz * W_y
        return jump * F1.pdf(z)

    def catastrophe(z: float) -> float:
        dens = F2.pdf(z)
        if dens == 0.0:
            return 0.0
        qz = float(b.q(z))
        with np.errstate(over="ignore", invalid="ignore"):
            jump = W(t, x - p.k * v * z, y + y * qz, lam + z) - w0 + p.k * v * z * W_x - y * qz * W_y - z * W_l
        if not math.isfinite(jump):
            # only reachable deep in the tail where the density has underflowed
            return 0.0 if dens < 1e-280 else math.nan
        return jump * dens

    kw = dict(epsabs=1e-15 * max(1.0, abs(w0)), epsrel=tol, what="generator jump integral")
    terms = {
        "W_t": W_t,
        "drift_x": drift * W_x,
        "drift_lambda": (-p.delta * lam + p.rho * p.mu2) * W_l,
        "diff_xx": 0.5 * pi * pi * p.sigma0**2 * W_xx,
        "diff_yy": 0.5 * y * y * b.o * b.o * W_yy,
        "diff_xy": pi * p.sigma0 * y * b.o * W_xy,
        "ordinary": lam * quad_half_line(ordinary, F1.mu, **kw),
        "catastrophe": p.rho * quad_half_line(catastrophe, F2.mu, **kw) if p.rho > 0 else 0.0,
    }
    value = math.fsum(terms.values())
    return (value, terms) if parts else value


def diffusion_generator_apply(
    params: ModelParams,
    W: Callable[[float, float, float, float], float],
    a: InsurerControls,
    b: tuple[float, float, float],
    t: float,
    x: float,
    y: float,
    lam: float,
    *,
    parts: bool = False,
):
    """L^{a,b}W for the diffusion model; b = (o, p, q) loads (W0, W1, W2)."""
    p = params
    o, pp, q = b
    w0 = W(t, x, y, lam)
    ht, hx, hy, hl = (_step(v, FD_STEP) for v in (t, x, y, lam))
    Hx, Hy, Hl = _step(x, FD_STEP2), _step(y, FD_STEP2), _step(lam, FD_STEP2_LAM)

    def d2(f, h):
        return (f(h) - 2.0 * w0 + f(-h)) / (h * h)

    def cross(f, h1, h2):
        return (f(h1, h2) - f(h1, -h2) - f(-h1, h2) + f(-h1, -h2)) / (4.0 * h1 * h2)

    W_t = (W(t + ht, x, y, lam) - W(t - ht, x, y, lam)) / (2.0 * ht)
    W_x = (W(t, x + hx, y, lam) - W(t, x - hx, y, lam)) / (2.0 * hx)
    W_l = (W(t, x, y, lam + hl) - W(t, x, y, lam - hl)) / (2.0 * hl)
    W_xx = d2(lambda h: W(t, x + h, y, lam), Hx)
    W_yy = d2(lambda h: W(t, x, y + h, lam), Hy)
    W_ll = d2(lambda h: W(t, x, y, lam + h), Hl)
    W_xy = cross(lambda a1, a2: W(t, x + a1, y + a2, lam), Hx, Hy)
    W_xl = cross(lambda a1, a2: W(t, x + a1, y, lam + a2), Hx, Hl)
    W_yl = cross(lambda a1, a2: W(t, x, y + a1, lam + a2), Hy, Hl)
    pi, u, v = a.pi, a.u, a.v
    s1 = math.sqrt(p.sigma1_sq * p.rho * p.mu2 / p.delta)
    s2 = math.sqrt(p.sigma2_sq * p.rho)
    drift = (
        p.r * x + pi * (p.mu0 - p.r) + (p.kappa_r * u - p.kappa_r + p.kappa) * p.mu1 * lam
        + (p.iota_r * v - p.iota_r + p.iota) * p.k * p.mu2 * p.rho
    )
    terms = {
        "W_t": W_t,
        "drift_x": drift * W_x,
        "drift_lambda": (-p.delta * lam + p.rho * p.mu2) * W_l,
        "diff_xx": 0.5 * (pi * pi * p.sigma0**2 + u * u * s1 * s1 + p.k**2 * v * v * s2 * s2) * W_xx,
        "diff_ll": 0.5 * s2 * s2 * W_ll,
        "diff_yy": 0.5 * y * y * (o * o + pp * pp + q * q) * W_yy,
        "diff_xy": (pi * p.sigma0 * o - u * s1 * pp - p.k * v * s2 * q) * y * W_xy,
        "diff_xl": -p.k * v * s2 * s2 * W_xl,
        "diff_yl": s2 * y * q * W_yl,
    }
    value = math.fsum(terms.values())
    return (value, terms) if parts else value


# ---------------------------------------------------------------- candidate


class Candidate:
    """W = G x y + H y² + I y built from (possibly perturbed) coefficients.

    ``factors`` multiplies η, ζ, α or β, e.g. {"eta": 1.01}. The insurer and
    adversary controls are the optimal ones written through the candidate's
    own coefficients, so an exact solution has zero residual and a wrong
    one does not.
    """

    def __init__(self, params: ModelParams, curves: CoefficientCurves, factors: dict[str, float] | None = None):
        self.params = params
        self.curves = curves
        self.factors = dict(factors or {})
        unknown = set(self.factors) - {"eta", "zeta", "alpha", "beta"}
        if unknown:
            raise ValueError(f"unknown coefficient(s) {sorted(unknown)}")
        self._cache: dict[float, tuple[float, float, float, float, float]] = {}

    def coeffs(self, t: float) -> tuple[float, float, float, float, float]:
        """(η, ζ, α, β, φ) at t; φ follows the candidate's η."""
        hit = self._cache.get(t)
        if hit is None:
            f, p = self.factors, self.params
            e = eta(p, t) * f.get("eta", 1.0)
            z = self.curves.zeta(t, exact=True) * f.get("zeta", 1.0)
            a = alpha(p, t) * f.get("alpha", 1.0)
            b = beta_fn(p, t) * f.get("beta", 1.0)
            F2 = p.F2
            ph = ((p.iota_r + 1.0) * p.mu2 - F2.tilted_moment(1, e)) / F2.tilted_moment(2, e)
            if "eta" not in f:
                ph = phi(p, t)
            hit = (e, z, a, b, ph)
            self._cache[t] = hit
        return hit

    def G(self, t: float) -> float:
        return math.exp(self.params.r * (self.params.T - t))

    def logH(self, t: float, lam: float) -> float:
        e, z, _, _, _ = self.coeffs(t)
        return e * lam + z - math.log(2.0 * self.params.theta)

    def H(self, t: float, lam: float) -> float:
        return math.exp(self.logH(t, lam))

    def I(self, t: float, lam: float) -> float:  # noqa: E743
        _, _, a, b, _ = self.coeffs(t)
        return a * lam + b

    def W(self, t: float, x: float, y: float, lam: float) -> float:
        return self.G(t) * x * y + self.H(t, lam) * y * y + self.I(t, lam) * y

    def a_star(self, t: float, y: float, lam: float) -> InsurerControls:
        p = self.params
        G, H = self.G(t), self.H(t, lam)
        _, _, a, _, ph = self.coeffs(t)
        D = 2.0 * H * y / G
        return InsurerControls(
            pi=(p.mu0 - p.r) * D / p.sigma0**2, u=p.kappa_r * p.mu1 * D / p.sigma1_sq, v=(ph * D + a / G) / p.k
        )

    def b_star(self, t: float, lam: float | None = None) -> AdversaryControls:
        p = self.params
        e, _, _, _, ph = self.coeffs(t)
        cp = p.kappa_r * p.mu1 / p.sigma1_sq
        return AdversaryControls(
            o=-(p.mu0 - p.r) / p.sigma0,
            p=lambda z: cp * z,
            q=lambda z: math.exp(-e * z) * (1.0 + ph * z) - 1.0,
        )


class _DiffusionCandidate:
    """The diffusion value function with its optimal controls."""

    def __init__(self, params: ModelParams, dcoef: DiffusionCoefficients):
        self.params, self.dcoef = params, dcoef
        self.W = dcoef.W

    def a_star(self, t: float, y: float, lam: float) -> InsurerControls:
        return diffusion_feedback_controls_y(self.dcoef, t, y, lam)

    def b_star(self, t: float, lam: float) -> tuple[float, float, float]:
        return diffusion_adversary(self.params, self.dcoef, t, lam)


def _random_b_diffusion(rng: np.random.Generator, b: tuple[float, float, float]) -> tuple[float, float, float]:
    d = rng.normal(size=3) * 0.5
    return tuple(c + e * (abs(c) + 0.1) for c, e in zip(b, d))


def standard_grid(params: ModelParams, model: str = "jump") -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """10 times in [0, 0.9T], 5 wealths, 3 densities, 5 intensities.

    The diffusion intensity is an OU process, so its λ values sit at
    mean + {-1, -0.5, 0, 1, 3} stationary standard deviations (kept > 0).
    """
    if model == "diffusion":
        mean = params.rho * params.mu2 / params.delta
        sd = math.sqrt(params.rho * params.sigma2_sq / (2.0 * params.delta))
        lams = np.maximum(mean + sd * np.array([-1.0, -0.5, 0.0, 1.0, 3.0]), 0.05 * mean)
    else:
        lams = np.array([0.1, 0.5, 1.0, 2.0, 5.0])
    return (
        np.linspace(0.0, 0.9 * params.T, 10),
        np.array([-100.0, 0.0, 50.0, 100.0, 250.0]),
        np.array([0.5, 1.0, 2.0]),
        lams,
    )


def _scale(terms: dict[str, float]) -> float:
    return math.fsum(abs(v) for v in terms.values())


def _random_a(rng: np.random.Generator, a: InsurerControls) -> InsurerControls:
    d = rng.normal(size=3) * 0.5
    return InsurerControls(
        a.pi + d[0] * (abs(a.pi) + 1.0), a.u + d[1] * (abs(a.u) + 1.0), a.v + d[2] * (abs(a.v) + 1e-3)
    )


def _random_b(rng: np.random.Generator, b: AdversaryControls) -> AdversaryControls:
    """A tilted copy of b that stays admissible: p >= -1, q > -1, q decays like q*."""
    do, dp, dq = rng.normal(size=3) * 0.5
    w = abs(rng.normal()) + 0.1
    return AdversaryControls(
        o=b.o + do * (abs(b.o) + 0.1),
        p=lambda z, bp=b.p: float(bp(z)) * math.exp(dp),
        q=lambda z, bq=b.q: (1.0 + float(bq(z))) * math.exp(dq * math.exp(-w * z)) - 1.0,
    )


def hjbi_residual_report(
    params: ModelParams,
    curves: CoefficientCurves,
    grid: tuple[Sequence[float], ...] | None = None,
    *,
    candidate: Candidate | None = None,
    n_random: int = 20,
    seed: int = 0,
    spot_points: int = 5,
) -> ResidualReport:
    """L^{a*,b*}W over a (t, x, y, λ) grid plus one-sided spot checks.

    The spot checks draw ``n_random`` admissible a and b at ``spot_points``
    grid points and record the worst violation of L^{a,b*}W <= 0 and
    L^{a*,b}W >= 0, relative to the scale at that point.
    """
    if isinstance(curves, DiffusionCoefficients):
        cand = candidate or _DiffusionCandidate(params, curves)
        gen, rand_b, model = diffusion_generator_apply, _random_b_diffusion, "diffusion"
    else:
        cand = candidate or Candidate(params, curves)
        gen, rand_b, model = generator_apply, _random_b, "jump"
    ts, xs, ys, ls = grid or standard_grid(params, model)
    rows = []
    for t in ts:
        for lam in ls:
            for y in ys:
                for x in xs:
                    t_, x_, y_, l_ = float(t), float(x), float(y), float(lam)
                    val, terms = gen(params, cand.W, cand.a_star(t_, y_, l_), cand.b_star(t_, l_), t_, x_, y_, l_, parts=True)
                    rows.append((t_, x_, y_, l_, val, _scale(terms)))
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(rows), size=min(spot_points, len(rows)), replace=False)
    worst_a = worst_b = 0.0
    for j in sorted(picks):
        t, x, y, lam, _, scale = rows[j]
        a0, b0 = cand.a_star(t, y, lam), cand.b_star(t, lam)
        for _ in range(n_random):
            la = gen(params, cand.W, _random_a(rng, a0), b0, t, x, y, lam)
            lb = gen(params, cand.W, a0, rand_b(rng, b0), t, x, y, lam)
            worst_a = max(worst_a, la / scale)
            worst_b = max(worst_b, -lb / scale)
    desc = f"{len(ts)}x{len(xs)}x{len(ys)}x{len(ls)} (t,x,y,lambda)"
    return _report("hjbi", desc, rows, {"sup_a_spot": max(worst_a, 0.0), "inf_b_spot": max(worst_b, 0.0)})


def negative_control(
    params: ModelParams,
    curves: CoefficientCurves,
    grid: tuple[Sequence[float], ...] | None = None,
    factor: float = 1.01,
    names: Sequence[str] = ("eta", "zeta", "alpha", "beta"),
) -> dict[str, float]:
    """Max relative residual of candidates with one coefficient scaled by ``factor``."""
    ts, xs, ys, ls = grid or standard_grid(params)
    out = {}
    for name in names:
        cand = Candidate(params, curves, {name: factor})
        worst = 0.0
        for t in ts:
            for lam in ls:
                for y in ys:
                    for x in xs:
                        t_, x_, y_, l_ = float(t), float(x), float(y), float(lam)
                        val, terms = generator_apply(
                            params, cand.W, cand.a_star(t_, y_, l_), cand.b_star(t_), t_, x_, y_, l_, parts=True
                        )
                        worst = max(worst, abs(val) / _scale(terms))
        out[name] = worst
    return out


# ------------------------------------------------------------ coefficients


def _fd(f: Callable[[float], float], t: float, h: float = FD_STEP) -> float:
    return (f(t + h) - f(t - h)) / (2.0 * h)


def ode_residual_report(
    params: ModelParams,
    curves: CoefficientCurves,
    times: Sequence[float] | None = None,
    factors: dict[str, float] | None = None,
) -> ResidualReport:
    """Residuals of the coefficient ODEs with central differences of step 1e-5.

    ``factors`` scales η, ζ, α or β as in Candidate, for negative controls.

        η' = δη - κ_r²μ1²/σ1²
        ζ' = -(μ0-r)²/σ0² - ρ(1 - M(0,η) + φ² M(2,η))
        α' = δα + (κ_r-κ)μ1 G
        β' = -ρ(ι_r+1)μ2 α + ρ(ι_r-ι) k μ2 G
    """
    p = params
    f = dict(factors or {})
    if set(f) - {"eta", "zeta", "alpha", "beta"}:
        raise ValueError(f"unknown coefficient(s) {sorted(set(f) - {'eta', 'zeta', 'alpha', 'beta'})}")
    E = lambda s: eta(p, s) * f.get("eta", 1.0)  # noqa: E731
    Z = lambda s: zeta(p, s) * f.get("zeta", 1.0)  # noqa: E731
    A = lambda s: alpha(p, s) * f.get("alpha", 1.0)  # noqa: E731
    B = lambda s: beta_fn(p, s) * f.get("beta", 1.0)  # noqa: E731
    ts = np.linspace(0.0, p.T, 12)[1:-1] if times is None else np.asarray(times, dtype=float)
    rows, per = [], {}
    for t in ts:
        t = float(t)
        G = math.exp(p.r * (p.T - t))
        e, a = E(t), A(t)
        F2 = p.F2
        m0, m2 = F2.tilted_moment(0, e), F2.tilted_moment(2, e)
        ph = ((p.iota_r + 1.0) * p.mu2 - F2.tilted_moment(1, e)) / m2 if "eta" in f else phi(p, t)
        eqs = {
            "eta": [_fd(E, t), -p.delta * e, p.ordinary_tilt],
            "zeta": [_fd(Z, t), p.sharpe_sq, p.rho * (1.0 - m0 + ph * ph * m2)],
            "alpha": [_fd(A, t), -p.delta * a, -(p.kappa_r - p.kappa) * p.mu1 * G],
            "beta": [
                _fd(B, t),
                p.rho * (p.iota_r + 1.0) * p.mu2 * a,
                -p.rho * (p.iota_r - p.iota) * p.k * p.mu2 * G,
            ],
        }
        for name, terms in eqs.items():
            r = math.fsum(terms)
            sc = math.fsum(abs(v) for v in terms)
            rows.append((name, t, r, sc))
            per[name] = max(per.get(name, 0.0), abs(r) / sc)
    rep = _report("ode", f"{len(ts)} times", [(n, t, r, s) for n, t, r, s in rows])
    rep.breakdown = per
    return rep


def _tilde(F, f: Callable[[float], float], tol: float) -> float:
    return quad_half_line(lambda z: f(z) * F.pdf(z), F.mu, epsabs=1e-300, epsrel=tol, what="H-tilde")


def coefficient_pde_report(
    params: ModelParams,
    curves: CoefficientCurves,
    times: Sequence[float] | None = None,
    lams: Sequence[float] | None = None,
    *,
    candidate: Candidate | None = None,
    tol: float = PDE_TOL,
) -> ResidualReport:
    """Residuals of the H, I and K equations on a (t, λ) grid.

    The H equation is divided by H, and its two divergent pieces are merged
    first: ∫H_z F2 - 2H̃(H_z²/z) = H ∫(1 - H(λ)/H(λ+z)) F2. Every other
    tilde-integral is written through r(z) = H(λ)/H(λ+z) <= 1.
    """
    p = params
    cand = candidate or Candidate(params, curves)
    ts = np.linspace(0.0, p.T, 11)[:-1] if times is None else np.asarray(times, dtype=float)
    ls = np.linspace(0.2, 5.0, 10) if lams is None else np.asarray(lams, dtype=float)
    F2 = p.F2
    rows, per = [], {"H": 0.0, "I": 0.0, "K": 0.0}
    for t in ts:
        t = float(t)
        G = cand.G(t)
        for lam in ls:
            lam = float(lam)
            lh = cand.logH(t, lam)
            ratio = lambda z: math.exp(lh - cand.logH(t, lam + z))  # noqa: E731
            Iz = lambda z: cand.I(t, lam + z) - cand.I(t, lam)  # noqa: E731
            A = 0.5 * _tilde(F2, lambda z: z * z * ratio(z), tol)  # H̃(z)·H
            B = 0.5 * _tilde(F2, lambda z: z * (1.0 - ratio(z)), tol)  # H̃(H_z)
            C = _tilde(F2, lambda z: z * Iz(z) * ratio(z), tol)  # 2 H̃(I_z)·H
            D = 0.5 * _tilde(F2, lambda z: (1.0 - ratio(z)) * Iz(z), tol)  # H̃(H_z I_z / z)
            E = 0.5 * _tilde(F2, lambda z: Iz(z) ** 2 * ratio(z), tol)  # H̃(I_z²/z)·H
            hz = 0.5 * C / A  # H̃(I_z)/H̃(z)
            H_terms = [
                _fd(lambda s: cand.logH(s, lam), t),
                -p.delta * lam * _fd(lambda m: cand.logH(t, m), lam),
                p.rho * _tilde(F2, lambda z: 1.0 - ratio(z), tol),
                p.sharpe_sq,
                lam * p.ordinary_tilt,
                p.rho * (p.iota_r * p.mu2 + 2.0 * B) ** 2 / (2.0 * A),
            ]
            H = math.exp(lh)
            I_terms = [
                _fd(lambda s: cand.I(s, lam), t),
                -p.delta * lam * _fd(lambda m: cand.I(t, m), lam),
                p.rho * _tilde(F2, Iz, tol),
                ((p.kappa - p.kappa_r) * p.mu1 * lam + (p.iota - p.iota_r) * p.k * p.mu2 * p.rho) * G,
                p.rho * p.iota_r * p.mu2 * hz,
                -2.0 * p.rho * D,
                2.0 * p.rho * B * hz,
            ]
            # K = 0, so only the tilde pair remains; both sides carry 1/H
            K_terms = [-0.5 * p.rho * E / H, 0.5 * p.rho * (0.5 * C) ** 2 / (A * H)]
            for name, terms in (("H", H_terms), ("I", I_terms), ("K", K_terms)):
                r = math.fsum(terms)
                sc = math.fsum(abs(v) for v in terms)
                rows.append((name, t, lam, r, sc))
                per[name] = max(per[name], abs(r) / sc if sc > 0 else abs(r))
    rep = _report("pde", f"{len(ts)}x{len(ls)} (t,lambda)", rows)
    rep.breakdown = per
    return rep


def riccati_residual_report(
    params: ModelParams, dcoef: DiffusionCoefficients, times: Sequence[float] | None = None, lams: Sequence[float] | None = None
) -> ResidualReport:
    """Diffusion-model residuals: the ξ, η, ζ ODEs and the H, I equations.

        ξ' = -2ρσ2² ξ² + 2δ ξ - c0
        η' = δ η - 2 c1 ξ - 2ρσ2² ξ η
        ζ' = -(c1 η + ½ρσ2² η² + ρσ2² ξ + (μ0-r)²/σ0² + ρ ι_r² μ2²/σ2²)
    """
    p = params
    ts = np.linspace(0.0, p.T, 12)[1:-1] if times is None else np.asarray(times, dtype=float)
    ls = np.linspace(0.2, 5.0, 5) if lams is None else np.asarray(lams, dtype=float)
    s2 = p.rho * p.sigma2_sq
    c0, c1 = dcoef.c0, dcoef.c1
    rows, per = [], {"xi": 0.0, "eta": 0.0, "zeta": 0.0, "H": 0.0, "I": 0.0}

    def add(name, pt, terms):
        r = math.fsum(terms)
        sc = math.fsum(abs(v) for v in terms)
        rows.append((name, *pt, r, sc))
        per[name] = max(per[name], abs(r) / sc if sc > 0 else abs(r))

    for t in ts:
        t = float(t)
        xi, e = dcoef.xi(t), dcoef.eta(t)
        add("xi", (t, math.nan), [_fd(dcoef.xi, t), 2.0 * s2 * xi * xi, -2.0 * p.delta * xi, c0])
        add("eta", (t, math.nan), [_fd(dcoef.eta, t), -p.delta * e, 2.0 * c1 * xi, 2.0 * s2 * xi * e])
        add("zeta", (t, math.nan), [_fd(lambda s: dcoef.zeta(s), t), dcoef.zeta_rate(t)])
        G = dcoef.G(t)
        h2 = 1e-3
        for lam in ls:
            lam = float(lam)
            lH = lambda m: dcoef.logH(t, m)  # noqa: E731
            d1 = (lH(lam + h2) - lH(lam - h2)) / (2.0 * h2)
            d2 = (lH(lam + h2) - 2.0 * lH(lam) + lH(lam - h2)) / (h2 * h2)
            add(
                "H",
                (t, lam),
                [
                    _fd(lambda s: dcoef.logH(s, lam), t),
                    (-p.delta * lam + c1) * d1,
                    0.5 * s2 * (d2 + d1 * d1),
                    p.sharpe_sq,
                    c0 * lam * lam,
                    p.rho * p.iota_r**2 * p.mu2**2 / p.sigma2_sq,
                ],
            )
            a = dcoef.alpha(t)
            add(
                "I",
                (t, lam),
                [
                    _fd(lambda s: dcoef.alpha(s) * lam + dcoef.beta(s), t),
                    ((p.kappa - p.kappa_r) * p.mu1 * lam + (p.iota - p.iota_r) * p.k * p.rho * p.mu2) * G,
                    (-p.delta * lam + p.rho * (p.iota_r + 1.0) * p.mu2) * a,
                ],
            )
    rep = _report("riccati", f"{len(ts)} times x {len(ls)} intensities", rows)
    rep.breakdown = per
    return rep


# ------------------------------------------------------------------ saddle


@dataclass(frozen=True)
class SaddleRow:
    side: str  # "insurer": J^{a,b*} <= J*, "adversary": J^{a*,b} >= J*
    label: str
    estimate: float
    se: float
    reference: float
    reference_se: float

    @property
    def gap(self) -> float:
        """Signed violation: positive when the inequality fails."""
        d = self.estimate - self.reference
        return d if self.side == "insurer" else -d

    @property
    def se_diff(self) -> float:
        return math.hypot(self.se, self.reference_se)

    @property
    def holds(self) -> bool:
        return self.gap <= 3.0 * self.se_diff


@dataclass(frozen=True)
class SaddleReport:
    value: float
    optimal: tuple[float, float]
    rows: tuple[SaddleRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.holds for r in self.rows)


DEFAULT_INSURER = (
    ("pi+1", Strategy("feedback", offset=(1.0, 0.0, 0.0))),
    ("pi*0.5", Strategy("feedback", scale=(0.5, 1.0, 1.0))),
    ("u=0", Strategy("feedback", scale=(1.0, 0.0, 1.0))),
    ("u*1.5", Strategy("feedback", scale=(1.0, 1.5, 1.0))),
    ("v*0.5", Strategy("feedback", scale=(1.0, 1.0, 0.5))),
    ("all*0.8", Strategy("feedback", scale=(0.8, 0.8, 0.8))),
)
DEFAULT_ADVERSARY = (
    ("o=0", Adversary((0.0, 1.0, 1.0))),
    ("o*0.5", Adversary((0.5, 1.0, 1.0))),
    ("p=0", Adversary((1.0, 0.0, 1.0))),
    ("q=0", Adversary((1.0, 1.0, 0.0))),
    ("p,q*0.5", Adversary((1.0, 0.5, 0.5))),
    ("none", Adversary.none()),
)


def saddle_check(
    params: ModelParams,
    curves: CoefficientCurves,
    config: SimConfig,
    *,
    insurer: Sequence[tuple[str, Strategy]] = DEFAULT_INSURER,
    adversary: Sequence[tuple[str, Adversary]] = DEFAULT_ADVERSARY,
) -> SaddleReport:
    """Monte Carlo J^{a,b*} <= J^{a*,b*} <= J^{a*,b}, each within 3 SE.

    All pairs share the same random inputs. The insurer uses the y-feedback
    form so that its controls respond to the adversary's density process.
    """
    from .strategies import mmv_value

    a_star, b_star = Strategy("feedback"), Adversary.optimal()
    policies = [(a_star, b_star)] + [(s, b_star) for _, s in insurer] + [(a_star, b) for _, b in adversary]
    results = run_ensembles(params, curves, policies, config, anchor=default_anchor(params))
    est = [mmv_objective_estimate(r) for r in results]
    ref, ref_se = est[0]
    rows = []
    for (label, _), (m, se) in zip(insurer, est[1 : 1 + len(insurer)]):
        rows.append(SaddleRow("insurer", label, m, se, ref, ref_se))
    for (label, _), (m, se) in zip(adversary, est[1 + len(insurer) :]):
        rows.append(SaddleRow("adversary", label, m, se, ref, ref_se))
    return SaddleReport(mmv_value(params, curves), (ref, ref_se), tuple(rows))


# ----------------------------------------------------------- integrability


@dataclass(frozen=True)
class IntegrabilityReport:
    """Stopped integrals per truncation level n (ζ_n = first time Y <= 1/n)."""

    n: tuple[int, ...]
    stop_time: tuple[float, ...]
    truncated: tuple[bool, ...]
    brownian: tuple[float, ...]
    ordinary: tuple[float, ...]
    catastrophe: tuple[float, ...]
    hits_zero: bool

    @property
    def total(self) -> tuple[float, ...]:
        return tuple(a + b + c for a, b, c in zip(self.brownian, self.ordinary, self.catastrophe))

    @property
    def finite(self) -> bool:
        return all(math.isfinite(v) for v in self.total)


def _hellinger(F, g: Callable[[float], float]) -> float:
    """∫ (1 - √(g(z)+1))² F(dz); g >= -1."""
    def f(z: float) -> float:
        w = float(g(z))
        if w < -1.0:
            raise ValueError("density tilt below -1 is not admissible")
        return (1.0 - math.sqrt(w + 1.0)) ** 2 * F.pdf(z)

    return quad_half_line(f, F.mu, epsabs=1e-14, epsrel=1e-10, what="integrability")


def integrability_monitor(
    params: ModelParams,
    path,
    b: AdversaryControls | Callable[[float], AdversaryControls],
    ns: Sequence[int] = (10, 100, 1000),
) -> IntegrabilityReport:
    """∫ o² dt + ∫∫(1-√(p+1))² λ F1 dt + ∫∫(1-√(q+1))² ρ F2 dt up to T ∧ ζ_n.

    ``path`` needs ``t``, ``Y`` and ``lam`` arrays on its record grid; the
    time integrals are trapezoidal on that grid, cut at ζ_n.
    """
    p = params
    t = np.asarray(path.t, dtype=float)
    Y = np.asarray(path.Y, dtype=float)
    lam = np.asarray(path.lam, dtype=float)
    ctrl = b if callable(b) and not isinstance(b, AdversaryControls) else (lambda _t: b)
    o2 = np.empty(t.size)
    h1 = np.empty(t.size)
    h2 = np.empty(t.size)
    for j, tj in enumerate(t):
        c = ctrl(float(tj))
        o2[j] = c.o * c.o
        h1[j] = lam[j] * _hellinger(p.F1, c.p)
        h2[j] = p.rho * _hellinger(p.F2, c.q) if p.rho > 0 else 0.0

    def cut(f: np.ndarray, stop: float) -> float:
        keep = t <= stop
        tt, ff = t[keep], f[keep]
        if tt.size and tt[-1] < stop:
            j = tt.size
            if j < t.size:
                w = (stop - t[j - 1]) / (t[j] - t[j - 1])
                tt = np.append(tt, stop)
                ff = np.append(ff, f[j - 1] + w * (f[j] - f[j - 1]))
        return float(np.trapezoid(ff, tt)) if tt.size > 1 else 0.0

    stops, trunc, bi, oi, ci = [], [], [], [], []
    for n in ns:
        hit = np.flatnonzero(Y <= 1.0 / n)
        stop = float(t[hit[0]]) if hit.size else float(t[-1])
        stops.append(stop)
        trunc.append(bool(hit.size))
        bi.append(cut(o2, stop))
        oi.append(cut(h1, stop))
        ci.append(cut(h2, stop))
    return IntegrabilityReport(
        tuple(int(n) for n in ns), tuple(stops), tuple(trunc), tuple(bi), tuple(oi), tuple(ci), bool(np.any(Y <= 0.0))
    )
