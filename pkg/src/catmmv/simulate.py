"""Monte Carlo engines for the jump and the diffusion model.

Jump engine: catastrophes are exact compound-Poisson events, ordinary claims
are drawn by thinning against the decaying intensity, and X, Y advance by
Euler steps between events with the compensators integrated in closed form.
Diffusion engine: plain Euler on the three Brownian drivers.

Randomness is counter based. Every path (or antithetic pair) owns two
Philox streams keyed by the master seed: stream A carries the events and
the Brownian-bridge normals, stream B the Brownian increments on a fixed
fine grid. Coarser Euler grids aggregate the same fine increments, so
refining dt keeps the noise path fixed.
"""

from __future__ import annotations

import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .coefficients import CoefficientCurves
from .diffusion import DiffusionCoefficients, diffusion_anchor_constant
from .errors import NonFiniteState
from .model import ClaimDistribution, ExponentialClaims, GammaClaims, ModelParams
from .strategies import Anchor, anchor_constant, default_anchor

__all__ = [
    "SimConfig",
    "Strategy",
    "Adversary",
    "EventLog",
    "PathRecord",
    "EnsembleResult",
    "EnsembleStats",
    "simulate_events",
    "simulate_events_q_star",
    "simulate_path",
    "run_ensemble",
    "run_ensembles",
    "ensemble_stats",
    "mmv_objective_estimate",
    "q_star_expectation",
    "path_functional",
    "ENSEMBLE_HEADER",
]

ENSEMBLE_HEADER = (
    "t", "mean_X", "se_X", "var_X", "mean_Y", "se_Y", "mean_lambda", "se_lambda",
    "mean_YX", "se_YX", "mean_Y2", "se_Y2",
)
Y_SCHEMES = {"euler": 0.0, "exact": 1.0, "product": 2.0}
_STREAM_EVENTS = 0
_STREAM_BROWNIAN = 1


@dataclass(frozen=True)
class SimConfig:
    """Ensemble settings.

    ``refine`` splits every Euler step into that many noise cells; the
    noise grid is dt/refine and stays fixed when only ``refine`` changes.
    """

    n_paths: int
    dt: float
    seed: int = 0
    record_grid: tuple[float, ...] = ()
    engine: str = "jump"
    antithetic: bool = False
    refine: int = 1
    y_scheme: str = "euler"
    workers: int = 1
    chunk: int = 2048
    backend: str | None = None
    max_fail_fraction: float = 1e-3

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.engine not in ("jump", "diffusion"):
            raise ValueError("engine must be jump or diffusion")
        if self.refine < 1 or self.workers < 1 or self.chunk < 1:
            raise ValueError("refine, workers and chunk must be >= 1")
        if self.y_scheme not in Y_SCHEMES:
            raise ValueError(f"y_scheme must be one of {sorted(Y_SCHEMES)}")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        g = np.asarray(self.record_grid, dtype=float)
        if g.size > 1:
            gaps = np.diff(g)
            if np.any(gaps <= 0):
                raise ValueError("record_grid must be strictly increasing")
            if self.dt > gaps.min() * (1.0 + 1e-12):
                raise ValueError("dt must not exceed the smallest record-grid gap")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def resolved_backend(self) -> str:
        return self.backend or _kernels.default_backend()


@dataclass(frozen=True)
class Strategy:
    """Insurer policy: the optimal one, optionally scaled and shifted.

    ``kind="feedback"`` reads y along the path; ``"precommitted"`` uses the
    anchor identity instead. Controls are scale * optimal + offset.
    """

    kind: str = "precommitted"
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.kind not in ("feedback", "precommitted"):
            raise ValueError("strategy kind must be feedback or precommitted")


@dataclass(frozen=True)
class Adversary:
    """Density-process tilts: scale * (o*, p*, q*). ``none`` keeps Y fixed."""

    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @classmethod
    def optimal(cls) -> "Adversary":
        return cls((1.0, 1.0, 1.0))

    @classmethod
    def none(cls) -> "Adversary":
        return cls((0.0, 0.0, 0.0))

    def __post_init__(self) -> None:
        if not all(0.0 <= c <= 1.0 for c in self.scale):
            # q = c q* stays > -1 and p = c p* >= 0 only for c in [0, 1]
            raise ValueError("adversary scales must lie in [0, 1]")


@dataclass(frozen=True)
class EventLog:
    """Catastrophes (τ_i, V_i) and ordinary claims (σ_j, U_j)."""

    cat_times: np.ndarray
    cat_marks: np.ndarray
    claim_times: np.ndarray
    claim_marks: np.ndarray

    def merged(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(times, types, marks) in time order; type 1 ordinary, 2 catastrophe."""
        t = np.concatenate([self.claim_times, self.cat_times])
        typ = np.concatenate(
            [np.ones(self.claim_times.size, np.int64), np.full(self.cat_times.size, 2, np.int64)]
        )
        z = np.concatenate([self.claim_marks, self.cat_marks])
        order = np.argsort(t, kind="stable")
        return t[order], typ[order], z[order]

    def intensity(self, t, lambda0: float, delta: float, s: float = 0.0) -> np.ndarray:
        """λ(t) reconstructed from the catastrophe log (right-continuous)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = lambda0 * np.exp(-delta * (t - s))
        for tau, v in zip(self.cat_times, self.cat_marks):
            out = out + np.where(t >= tau, v * np.exp(-delta * (t - tau)), 0.0)
        return out


@dataclass(frozen=True)
class PathRecord:
    """One trajectory on the record grid plus its terminal state."""

    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    lam: np.ndarray
    pi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    events: EventLog | None
    identity_max: float
    identity_scale: float

    @property
    def X_T(self) -> float:
        return float(self.X[-1])

    @property
    def Y_T(self) -> float:
        return float(self.Y[-1])


# ------------------------------------------------------------------ RNG


def _philox_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


class _Streams:
    """Counter-based streams: one Philox key from the seed, counter block (which, unit).

    Re-keying a single bit generator is cheaper than building one per path;
    each worker owns its own instance.
    """

    def __init__(self, seed: int):
        self.key = _philox_key(seed)
        self.bitgen = np.random.Philox(key=self.key)
        self.gen = np.random.Generator(self.bitgen)
        self._template = self.bitgen.state

    def get(self, unit: int, which: int) -> np.random.Generator:
        st = dict(self._template)
        st["state"] = {"counter": np.array([0, 0, which, unit], dtype=np.uint64), "key": self.key}
        st["buffer"] = np.zeros(4, dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self.bitgen.state = st
        return self.gen



# --------------------------------------------------------------- events


def simulate_events(
    params: ModelParams,
    T: float,
    rng: np.random.Generator,
    *,
    s: float = 0.0,
    lambda0: float | None = None,
) -> EventLog:
    """Catastrophes as a Poisson(ρ) stream, ordinary claims by thinning.

    Between catastrophes λ decays from its segment-start value, which
    therefore dominates; a homogeneous candidate stream at that rate is
    thinned with acceptance e^{-δ(t-a)}.
    """
    p = params
    lam0 = p.lambda0 if lambda0 is None else lambda0
    n_cat = rng.poisson(p.rho * (T - s)) if p.rho > 0 else 0
    cat_t = np.sort(rng.uniform(s, T, n_cat))
    cat_z = p.F2.sample(rng, n_cat) if n_cat else np.empty(0)
    claim_t = _thin_claims(p, rng, s, T, lam0, cat_t, cat_z, 1.0)
    claim_z = p.F1.sample(rng, claim_t.size) if claim_t.size else np.empty(0)
    return EventLog(cat_t, np.asarray(cat_z, float), claim_t, np.asarray(claim_z, float))


def _thin_claims(p: ModelParams, rng, s, T, lam0, cat_t, cat_z, boost: float) -> np.ndarray:
    bounds = np.concatenate([[s], cat_t, [T]])
    lam_a = lam0
    out = []
    for j in range(bounds.size - 1):
        a, b = bounds[j], bounds[j + 1]
        if j > 0:
            lam_a = lam_a * math.exp(-p.delta * (a - bounds[j - 1])) + cat_z[j - 1]
        n = rng.poisson(boost * lam_a * (b - a))
        if n:
            cand = np.sort(rng.uniform(a, b, n))
            keep = rng.uniform(size=n) < np.exp(-p.delta * (cand - a))
            out.append(cand[keep])
    return np.concatenate(out) if out else np.empty(0)


def _gamma_parts(dist: ClaimDistribution) -> tuple[float, float]:
    if isinstance(dist, ExponentialClaims):
        return 1.0, dist.rate
    if isinstance(dist, GammaClaims):
        return dist.shape, dist.rate
    raise NotImplementedError("the Q* sampler supports exponential and gamma claim laws only")


def _tilted_gamma_sample(rng, shape, rate, w_biased, n):
    """Mixture of Gamma(shape, rate) and the size-biased Gamma(shape+1, rate)."""
    pick = rng.uniform(size=n) < w_biased
    return rng.gamma(np.where(pick, shape + 1.0, shape), 1.0 / rate)


def simulate_events_q_star(
    params: ModelParams, curves: CoefficientCurves, T: float, rng: np.random.Generator, *, s: float = 0.0,
    lambda0: float | None = None,
) -> EventLog:
    """Events under the worst-case measure Q*.

    Ordinary claims arrive at rate λ(1 + c μ1) with marks ∝ (1 + c z) F1,
    c = κ_r μ1/σ1². Catastrophes arrive at rate ρ(M0 + φ M1)(t) with marks
    ∝ e^{-ηz}(1 + φz) F2; both are drawn by thinning.
    """
    p = params
    lam0 = p.lambda0 if lambda0 is None else lambda0
    k2, b2 = _gamma_parts(p.F2)
    k1, b1 = _gamma_parts(p.F1)
    cp = p.kappa_r * p.mu1 / p.sigma1_sq
    mass = curves.m_tab[0] + curves.phi_tab * curves.m_tab[1]
    bound = float(mass.max()) * (1.0 + 1e-6)
    cat_t = np.empty(0)
    cat_z = np.empty(0)
    if p.rho > 0:
        n = rng.poisson(p.rho * bound * (T - s))
        cand = np.sort(rng.uniform(s, T, n))
        rate = np.interp(cand, curves.grid, mass)
        keep = rng.uniform(size=n) < rate / bound
        cat_t = cand[keep]
        e = np.interp(cat_t, curves.grid, curves.eta_tab)
        ph = np.interp(cat_t, curves.grid, curves.phi_tab)
        M = p.F2.tilted_moments(e)
        w = ph * M[1] / (M[0] + ph * M[1])
        pick = rng.uniform(size=cat_t.size) < w
        cat_z = rng.gamma(np.where(pick, k2 + 1.0, k2), 1.0 / (b2 + e))
    claim_t = _thin_claims(p, rng, s, T, lam0, cat_t, cat_z, 1.0 + cp * p.mu1)
    claim_z = _tilted_gamma_sample(rng, k1, b1, cp * p.mu1 / (1.0 + cp * p.mu1), claim_t.size)
    return EventLog(cat_t, cat_z, claim_t, claim_z)


# ------------------------------------------------------------ node layout


@dataclass(frozen=True)
class _Layout:
    """Fine noise grid and the subset of it that the Euler scheme visits."""

    fine_t: np.ndarray
    fine_h: np.ndarray
    node_mask: np.ndarray  # fine points that are Euler nodes
    record_t: np.ndarray
    record_pos: np.ndarray  # index of each record time among the Euler nodes
    n_user_records: int


def _layout(s: float, T: float, cfg: SimConfig) -> _Layout:
    h0 = cfg.dt / cfg.refine
    span = T - s
    n = max(1, int(math.ceil(span / h0 - 1e-9)))
    j = np.arange(n + 1)
    uni = s + span * j / n if abs(n * h0 - span) <= 1e-9 * span else np.minimum(s + h0 * j, T)
    uni[-1] = T
    coarse = (j % cfg.refine == 0) | (j == n)
    user = np.asarray(cfg.record_grid, dtype=float)
    if user.size and (user.min() < s - 1e-12 or user.max() > T + 1e-12):
        raise ValueError("record_grid must lie inside [s, T]")
    rec = np.unique(np.concatenate([user, [T]]))
    # snap record times onto nearby uniform points
    near = np.searchsorted(uni, rec)
    extra = []
    for r, i in zip(rec, near):
        hit = [q for q in (i - 1, i) if 0 <= q <= n and abs(uni[q] - r) <= 1e-9 * max(1.0, abs(r))]
        if hit:
            uni[hit[0]] = r
            coarse[hit[0]] = True
        else:
            extra.append(r)
    fine_t = np.concatenate([uni, extra])
    mask = np.concatenate([coarse, np.ones(len(extra), bool)])
    order = np.argsort(fine_t, kind="stable")
    fine_t, mask = fine_t[order], mask[order]
    nodes = fine_t[mask]
    record_pos = np.searchsorted(nodes, rec)
    return _Layout(fine_t, np.diff(fine_t), mask, rec, record_pos.astype(np.int64), user.size)


@dataclass
class _UnitDraw:
    """Random inputs of one stream unit (a path, or an antithetic pair)."""

    z: np.ndarray
    events: EventLog | None
    ev_t: np.ndarray
    ev_typ: np.ndarray
    ev_mark: np.ndarray
    bz: np.ndarray


_NO_EVENTS = (np.empty(0), np.empty(0, np.int64), np.empty(0))


def _draw_unit(params, coef, engine: "_Engine", lay: _Layout, streams: _Streams, unit: int, anchor: Anchor) -> _UnitDraw:
    # Brownian normals first, from their own stream, so events never shift them
    z = streams.get(unit, _STREAM_BROWNIAN).standard_normal((lay.fine_h.size, engine.n_w))
    if engine.kind != "jump":
        return _UnitDraw(z, None, *_NO_EVENTS, np.empty((0, engine.n_w)))
    rng = streams.get(unit, _STREAM_EVENTS)
    if engine.q_star:
        events = simulate_events_q_star(params, coef, params.T, rng, s=anchor.s, lambda0=anchor.lambda_s)
    else:
        events = simulate_events(params, params.T, rng, s=anchor.s, lambda0=anchor.lambda_s)
    ev_t, ev_typ, ev_mark = events.merged()
    bz = rng.standard_normal((ev_t.size, engine.n_w))
    return _UnitDraw(z, events, ev_t, ev_typ, ev_mark, bz)


@dataclass
class _Packed:
    t: np.ndarray
    h: np.ndarray
    dw: np.ndarray
    typ: np.ndarray
    mark: np.ndarray
    rec_idx: np.ndarray


def _assemble(lay: _Layout, draws: list[_UnitDraw], antithetic: bool, T: float, n_w: int, backend: str) -> _Packed:
    """Padded node arrays for a chunk; padding repeats T with zero steps."""
    fn = _kernels.assemble_nb if backend == "numba" else _kernels.assemble_py
    signs = (1.0, -1.0) if antithetic else (1.0,)
    m = len(draws) * len(signs)
    n_grid = int(lay.node_mask.sum())
    K = n_grid + max(d.ev_t.size for d in draws)
    t = np.full((m, K), T)
    dw = np.zeros((m, K - 1, n_w))
    typ = np.zeros((m, K), np.int64)
    mark = np.zeros((m, K))
    rec = np.zeros((m, lay.record_pos.size), np.int64)
    sqrt_h = np.sqrt(lay.fine_h)
    row = 0
    for d in draws:
        for sg in signs:
            fn(lay.fine_t, sqrt_h, lay.node_mask, d.z, d.ev_t, d.ev_typ, d.ev_mark, d.bz, lay.record_pos, sg,
               t[row], dw[row], typ[row], mark[row], rec[row])
            row += 1
    return _Packed(t, np.diff(t, axis=1), dw, typ, mark, rec)



# ----------------------------------------------------------- parameters


def _base_par(params: ModelParams, strategy: Strategy, adversary: Adversary, c: float, y_scheme: str) -> np.ndarray:
    p = params
    P = _kernels.P
    par = np.zeros(_kernels.N_PAR)
    vals = dict(
        r=p.r, mu0=p.mu0, sigma0=p.sigma0, kappa=p.kappa, kappa_r=p.kappa_r, iota=p.iota, iota_r=p.iota_r,
        rho=p.rho, delta=p.delta, k=p.k, mu1=p.mu1, s1sq=p.sigma1_sq, mu2=p.mu2, theta=p.theta, T=p.T, c=c,
        s_pi=strategy.scale[0], s_u=strategy.scale[1], s_v=strategy.scale[2],
        c_pi=strategy.offset[0], c_u=strategy.offset[1], c_v=strategy.offset[2],
        s_o=adversary.scale[0], s_p=adversary.scale[1], s_q=adversary.scale[2],
        feedback=1.0 if strategy.kind == "feedback" else 0.0, y_scheme=Y_SCHEMES[y_scheme],
        s2sq=p.sigma2_sq,
    )
    for key, val in vals.items():
        par[P[key]] = val
    return par


def _set_grid(par: np.ndarray, grid: np.ndarray) -> None:
    P = _kernels.P
    par[P["g0"]], par[P["inv_dg"]], par[P["n_cells"]] = _kernels.grid_par(grid)


@dataclass(frozen=True)
class _Engine:
    kind: str
    par: np.ndarray
    tabs: np.ndarray
    n_w: int
    q_star: bool


def _jump_engine(params, curves: CoefficientCurves, strategy, adversary, anchor, y_scheme, q_star=False) -> _Engine:
    if y_scheme == "product":
        raise ValueError("the product Y scheme exists for the diffusion engine only")
    par = _base_par(params, strategy, adversary, anchor_constant(params, curves, anchor), y_scheme)
    if q_star:
        par[_kernels.P["w_shift"]] = -(params.mu0 - params.r) / params.sigma0
    tabs = np.ascontiguousarray(
        np.vstack([curves.eta_tab, curves.zeta_tab, curves.alpha_tab, curves.beta_tab, curves.phi_tab, curves.ycomp_tab])
    )
    _set_grid(par, curves.grid)
    return _Engine("jump", par, tabs, 1, q_star)


def _diffusion_engine(params, dcoef: DiffusionCoefficients, strategy, adversary, anchor, y_scheme) -> _Engine:
    p = params
    par = _base_par(p, strategy, adversary, diffusion_anchor_constant(dcoef, anchor), y_scheme)
    P = _kernels.P
    par[P["c0"]] = dcoef.c0
    par[P["c1"]] = dcoef.c1
    par[P["zeta_lin"]] = p.sharpe_sq + p.rho * p.iota_r**2 * p.mu2**2 / p.sigma2_sq
    tabs = np.ascontiguousarray(np.vstack([dcoef.xi_tab, dcoef.eta_tab, dcoef.zeta_tab, dcoef.alpha_tab, dcoef.beta_tab]))
    _set_grid(par, dcoef.grid)
    return _Engine("diffusion", par, tabs, 3, False)


# ---------------------------------------------------------------- running


def _run_packed(engine: _Engine, pk: _Packed, anchor: Anchor, backend: str):
    m = pk.t.shape[0]
    x0 = np.tile([anchor.x_s, anchor.y_s, anchor.lambda_s], (m, 1))
    rec = np.full((m, pk.rec_idx.shape[1], len(_kernels.REC_FIELDS)), np.nan)
    diag = np.zeros((m, 4))
    if engine.kind == "jump":
        _kernels.run_jump_kernel(backend, pk.t, pk.h, pk.dw[:, :, 0], pk.typ, pk.mark, pk.rec_idx, x0, engine.par,
                                 engine.tabs, rec, diag)
    else:
        _kernels.run_diffusion_kernel(backend, pk.t, pk.h, pk.dw, pk.typ, pk.mark, pk.rec_idx, x0, engine.par,
                                      engine.tabs, rec, diag)
    return rec, diag


def _engine_for(params, coef, strategy, adversary, anchor, cfg: SimConfig, q_star: bool) -> _Engine:
    if cfg.engine == "jump":
        if not isinstance(coef, CoefficientCurves):
            raise TypeError("the jump engine needs CoefficientCurves")
        return _jump_engine(params, coef, strategy, adversary, anchor, cfg.y_scheme, q_star)
    if q_star:
        raise ValueError("the Q* sampler exists for the jump engine only")
    if not isinstance(coef, DiffusionCoefficients):
        raise TypeError("the diffusion engine needs DiffusionCoefficients")
    return _diffusion_engine(params, coef, strategy, adversary, anchor, cfg.y_scheme)


def simulate_path(
    params: ModelParams,
    coef: CoefficientCurves | DiffusionCoefficients,
    strategy: Strategy,
    adversary: Adversary,
    config: SimConfig,
    path_index: int,
    *,
    anchor: Anchor | None = None,
    q_star: bool = False,
) -> PathRecord:
    """One path, identical to the same index inside run_ensemble."""
    anchor = anchor or default_anchor(params)
    lay = _layout(anchor.s, params.T, config)
    engine = _engine_for(params, coef, strategy, adversary, anchor, config, q_star)
    backend = config.resolved_backend
    unit, member = (path_index // 2, path_index % 2) if config.antithetic else (path_index, 0)
    draw = _draw_unit(params, coef, engine, lay, _Streams(config.seed), unit, anchor)
    pk = _assemble(lay, [draw], config.antithetic, params.T, engine.n_w, backend)
    rec, diag = _run_packed(engine, pk, anchor, backend)
    if diag[member, 2]:
        raise NonFiniteState("state left the finite range", path_index, float(diag[member, 3]))
    r = rec[member]
    return PathRecord(
        lay.record_t, *(r[:, j].copy() for j in range(6)), draw.events, float(diag[member, 0]), float(diag[member, 1])
    )


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Per-path records in path order; rec[i, j] = (X, Y, λ, π, u, v) at t[j]."""

    t: np.ndarray
    rec: np.ndarray
    diag: np.ndarray
    ok: np.ndarray
    n_user_records: int
    antithetic: bool
    theta: float
    config: SimConfig

    @property
    def n_paths(self) -> int:
        return self.rec.shape[0]

    @property
    def n_failed(self) -> int:
        return int((~self.ok).sum())

    def field(self, name: str) -> np.ndarray:
        return self.rec[:, :, _kernels.REC_FIELDS.index(name)]

    @property
    def identity_max(self) -> float:
        return float(self.diag[self.ok, 0].max())

    @property
    def identity_scale(self) -> float:
        return float(self.diag[self.ok, 1].max())


def run_ensembles(
    params: ModelParams,
    coef: CoefficientCurves | DiffusionCoefficients,
    policies: Sequence[tuple[Strategy, Adversary]],
    config: SimConfig,
    *,
    anchor: Anchor | None = None,
    q_star: bool = False,
) -> list[EnsembleResult]:
    """Several (strategy, adversary) pairs driven by the same random inputs.

    Results do not depend on ``workers`` or ``chunk``: every path draws from
    its own stream and lands at its own row.
    """
    anchor = anchor or default_anchor(params)
    lay = _layout(anchor.s, params.T, config)
    engines = [_engine_for(params, coef, s, a, anchor, config, q_star) for s, a in policies]
    backend = config.resolved_backend
    per_unit = 2 if config.antithetic else 1
    n_units = config.n_paths // per_unit
    units_per_chunk = max(1, config.chunk // per_unit)
    R = lay.record_t.size
    recs = [np.empty((config.n_paths, R, len(_kernels.REC_FIELDS))) for _ in engines]
    diags = [np.empty((config.n_paths, 4)) for _ in engines]

    def work(c0: int, streams: _Streams) -> None:
        c1 = min(n_units, c0 + units_per_chunk)
        draws = [_draw_unit(params, coef, engines[0], lay, streams, u, anchor) for u in range(c0, c1)]
        pk = _assemble(lay, draws, config.antithetic, params.T, engines[0].n_w, backend)
        for e, engine in enumerate(engines):
            r, d = _run_packed(engine, pk, anchor, backend)
            recs[e][c0 * per_unit : c1 * per_unit] = r
            diags[e][c0 * per_unit : c1 * per_unit] = d

    starts = list(range(0, n_units, units_per_chunk))
    if config.workers == 1:
        streams = _Streams(config.seed)
        for c0 in starts:
            work(c0, streams)
    else:
        local = threading.local()

        def job(c0: int) -> None:
            if not hasattr(local, "streams"):
                local.streams = _Streams(config.seed)
            work(c0, local.streams)

        with ThreadPoolExecutor(config.workers) as pool:
            list(pool.map(job, starts))
    return [_finish(params, lay, config, rec, diag) for rec, diag in zip(recs, diags)]


def _finish(params, lay: _Layout, config: SimConfig, rec, diag) -> EnsembleResult:
    ok = diag[:, 2] == 0.0
    if config.antithetic:
        ok = np.repeat(ok.reshape(-1, 2).all(axis=1), 2)
    failed = int((~ok).sum())
    if failed > config.max_fail_fraction * config.n_paths:
        first = int(np.argmax(~ok))
        raise NonFiniteState(
            f"{failed} of {config.n_paths} paths left the finite range", first, float(diag[first, 3])
        )
    return EnsembleResult(lay.record_t, rec, diag, ok, lay.n_user_records, config.antithetic, params.theta, config)


def run_ensemble(
    params: ModelParams,
    coef: CoefficientCurves | DiffusionCoefficients,
    strategy: Strategy,
    adversary: Adversary,
    config: SimConfig,
    *,
    anchor: Anchor | None = None,
    q_star: bool = False,
) -> EnsembleResult:
    """Simulate ``config.n_paths`` paths of one (strategy, adversary) pair."""
    return run_ensembles(params, coef, [(strategy, adversary)], config, anchor=anchor, q_star=q_star)[0]



# ------------------------------------------------------------ statistics


def path_functional(result: EnsembleResult, values: np.ndarray) -> tuple[float, float, float]:
    """(mean, SE, variance) of per-path values (n,) over the surviving paths.

    Antithetic pairs are averaged first and the SE is taken over pairs.
    """
    v = np.asarray(values, dtype=float)
    if result.antithetic:
        ok = result.ok.reshape(-1, 2)[:, 0]
        units = v.reshape(-1, 2).sum(axis=1)[ok] * 0.5
        pairs = v.reshape(-1, 2)[ok].ravel()
        var = float(np.var(pairs, ddof=1)) if pairs.size > 1 else 0.0
    else:
        units = v[result.ok]
        var = float(np.var(units, ddof=1)) if units.size > 1 else 0.0
    n = units.size
    mean = float(np.sum(units) / n)
    se = float(np.std(units, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se, var


@dataclass(frozen=True)
class EnsembleStats:
    """Per record time: mean, SE, variance of X, Y, λ, Y X, Y²; terminal objective."""

    t: np.ndarray
    columns: dict[str, np.ndarray]
    objective: tuple[float, float]
    n_paths: int
    n_failed: int

    def rows(self) -> list[tuple[float, ...]]:
        return [tuple(float(self.columns[h][j]) for h in ENSEMBLE_HEADER) for j in range(self.t.size)]


def ensemble_stats(result: EnsembleResult, user_only: bool = True) -> EnsembleStats:
    n_rec = (result.n_user_records or result.t.size) if user_only else result.t.size
    idx = range(n_rec)
    X, Y, L = result.field("X"), result.field("Y"), result.field("lambda")
    cols: dict[str, list[float]] = {h: [] for h in ENSEMBLE_HEADER}
    for j in idx:
        cols["t"].append(float(result.t[j]))
        for name, vals in (("X", X[:, j]), ("Y", Y[:, j]), ("lambda", L[:, j]), ("YX", Y[:, j] * X[:, j]),
                           ("Y2", Y[:, j] ** 2)):
            m, se, var = path_functional(result, vals)
            cols[f"mean_{name}"].append(m)
            cols[f"se_{name}"].append(se)
            if name == "X":
                cols["var_X"].append(var)
    return EnsembleStats(
        result.t[list(idx)],
        {k: np.asarray(v) for k, v in cols.items()},
        mmv_objective_estimate(result),
        result.n_paths,
        result.n_failed,
    )


def mmv_objective_estimate(result: EnsembleResult) -> tuple[float, float]:
    """Mean and SE of X(T) Y(T) + Y(T)²/(2θ)."""
    X, Y = result.field("X")[:, -1], result.field("Y")[:, -1]
    m, se, _ = path_functional(result, X * Y + Y * Y / (2.0 * result.theta))
    return m, se


def q_star_expectation(
    result: EnsembleResult, f: Callable[[float, np.ndarray, np.ndarray], np.ndarray], j: int | None = None
) -> tuple[float, float]:
    """E^{Q*}[f] = E^P[Y f] at record index j (default: terminal).

    ``f(t, X, λ)`` maps per-path arrays to values.
    """
    j = result.t.size - 1 if j is None else j
    X, Y, L = result.field("X")[:, j], result.field("Y")[:, j], result.field("lambda")[:, j]
    m, se, _ = path_functional(result, Y * f(float(result.t[j]), X, L))
    return m, se


def record_index(result: EnsembleResult, t: float) -> int:
    j = int(np.argmin(np.abs(result.t - t)))
    if abs(result.t[j] - t) > 1e-9 * max(1.0, abs(t)):
        raise KeyError(f"t={t} is not on the record grid")
    return j


def default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


__all__ += ["record_index", "default_workers"]
