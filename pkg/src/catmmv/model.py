"""Model inputs: market, loadings, catastrophe shot noise, claim-size laws.

All parameter objects are frozen dataclasses. Claim distributions expose the
raw moments and the exponentially tilted moments

    M(m, a) = ∫ z^m e^{-a z} F(dz),    m = 0..3, a >= 0,

which every downstream closed form is built from.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy import special

from ._quad import quad_half_line
from .errors import ValidationError

__all__ = [
    "MarketParams",
    "LoadingParams",
    "CatastropheParams",
    "ClaimDistribution",
    "ExponentialClaims",
    "GammaClaims",
    "GenericClaims",
    "ModelParams",
    "validate",
    "raw_moments",
    "tilted_moment",
    "params_from_dict",
    "params_to_dict",
    "load_params",
    "reference_params",
]


@dataclass(frozen=True)
class MarketParams:
    mu0: float
    sigma0: float
    r: float


@dataclass(frozen=True)
class LoadingParams:
    kappa: float
    kappa_r: float
    iota: float
    iota_r: float


@dataclass(frozen=True)
class CatastropheParams:
    rho: float
    delta: float
    k: float


class ClaimDistribution:
    """Claim-size law on (0, inf).

    Subclasses provide ``tilted_moment``, ``sample`` and ``to_dict``.
    """

    kind: str = "abstract"

    @property
    def mu(self) -> float:
        return self.tilted_moment(1, 0.0)

    @property
    def sigma2(self) -> float:
        return self.tilted_moment(2, 0.0)

    def tilted_moment(self, m: int, a: float) -> float:  # pragma: no cover - interface
        raise NotImplementedError

    def tilted_moments(self, a) -> np.ndarray:
        """Array of shape (4, *a.shape) with M(0..3, a)."""
        a = np.asarray(a, dtype=float)
        out = np.empty((4,) + a.shape)
        flat = a.ravel()
        for m in range(4):
            out[m].ravel()[:] = [self.tilted_moment(m, float(x)) for x in flat]
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def pdf(self, z: float) -> float:  # pragma: no cover
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:  # pragma: no cover
        raise NotImplementedError


@dataclass(frozen=True)
class ExponentialClaims(ClaimDistribution):
    rate: float
    kind: str = field(default="exponential", init=False)

    def tilted_moment(self, m: int, a: float) -> float:
        _check_m_a(m, a)
        b = self.rate
        return math.factorial(m) * b / (b + a) ** (m + 1)

    def tilted_moments(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = self.rate
        s = b + a
        return np.stack([b / s, b / s**2, 2.0 * b / s**3, 6.0 * b / s**4])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, n)

    def pdf(self, z: float) -> float:
        return self.rate * math.exp(-self.rate * z) if z >= 0 else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"dist": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class GammaClaims(ClaimDistribution):
    """Gamma(shape, rate); tilted moments in closed form."""

    shape: float
    rate: float
    kind: str = field(default="gamma", init=False)

    def tilted_moment(self, m: int, a: float) -> float:
        _check_m_a(m, a)
        k, b = self.shape, self.rate
        return math.exp(
            special.gammaln(k + m) - special.gammaln(k) + k * math.log(b) - (k + m) * math.log(b + a)
        )

    def tilted_moments(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        k, b = self.shape, self.rate
        rows = [
            np.exp(special.gammaln(k + m) - special.gammaln(k) + k * np.log(b) - (k + m) * np.log(b + a))
            for m in range(4)
        ]
        return np.stack(rows)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.gamma(self.shape, 1.0 / self.rate, n)

    def pdf(self, z: float) -> float:
        if z <= 0:
            return 0.0
        k, b = self.shape, self.rate
        return math.exp(k * math.log(b) + (k - 1) * math.log(z) - b * z - special.gammaln(k))

    def to_dict(self) -> dict[str, Any]:
        return {"dist": "gamma", "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True, eq=False)
class GenericClaims(ClaimDistribution):
    """Any law given by a density and a sampler; moments by quadrature.

    ``scale`` is a typical claim size; the half line is split there and the
    tail piece is integrated with QUADPACK's infinite-range transform.
    """

    density: Callable[[float], float]
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    scale: float = 1.0
    name: str = "generic"
    kind: str = field(default="generic", init=False)

    def tilted_moment(self, m: int, a: float) -> float:
        _check_m_a(m, a)
        f = self.density
        return quad_half_line(
            lambda z: z**m * math.exp(-a * z) * f(z),
            self.scale,
            epsabs=0.0,
            epsrel=1e-10,
            what=f"M({m},{a}) of {self.name}",
        )

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.asarray(self.sampler(rng, n), dtype=float)

    def pdf(self, z: float) -> float:
        return self.density(z)

    def to_dict(self) -> dict[str, Any]:
        return {"dist": self.name}


def _check_m_a(m: int, a: float) -> None:
    if m not in (0, 1, 2, 3):
        raise ValueError(f"tilted moment order must be 0..3, got {m}")
    if not a >= 0:
        raise ValueError(f"tilt must be >= 0, got {a}")


@dataclass(frozen=True)
class ModelParams:
    market: MarketParams
    loadings: LoadingParams
    cat: CatastropheParams
    F1: ClaimDistribution
    F2: ClaimDistribution
    theta: float
    T: float
    x0: float
    lambda0: float
    y0: float = 1.0
    s: float = 0.0
    allow_cheap_reinsurance: bool = False

    # flat accessors used all over the formulas
    @property
    def mu0(self) -> float:
        return self.market.mu0

    @property
    def sigma0(self) -> float:
        return self.market.sigma0

    @property
    def r(self) -> float:
        return self.market.r

    @property
    def kappa(self) -> float:
        return self.loadings.kappa

    @property
    def kappa_r(self) -> float:
        return self.loadings.kappa_r

    @property
    def iota(self) -> float:
        return self.loadings.iota

    @property
    def iota_r(self) -> float:
        return self.loadings.iota_r

    @property
    def rho(self) -> float:
        return self.cat.rho

    @property
    def delta(self) -> float:
        return self.cat.delta

    @property
    def k(self) -> float:
        return self.cat.k

    @property
    def mu1(self) -> float:
        return self.F1.mu

    @property
    def sigma1_sq(self) -> float:
        return self.F1.sigma2

    @property
    def mu2(self) -> float:
        return self.F2.mu

    @property
    def sigma2_sq(self) -> float:
        return self.F2.sigma2

    @property
    def sharpe_sq(self) -> float:
        """(mu0 - r)^2 / sigma0^2."""
        return (self.mu0 - self.r) ** 2 / self.sigma0**2

    @property
    def ordinary_tilt(self) -> float:
        """kappa_r^2 mu1^2 / sigma1^2."""
        return self.kappa_r**2 * self.mu1**2 / self.sigma1_sq

    def with_updates(self, **changes: float) -> "ModelParams":
        """Copy with leaf fields replaced, e.g. ``with_updates(rho=0.02)``."""
        return params_from_dict(_set_leaves(params_to_dict(self), changes))


def _violations(p: ModelParams) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []

    def need(ok: bool, name: str, constraint: str) -> None:
        if not ok:
            out.append((name, constraint))

    finite = {
        "mu0": p.mu0, "sigma0": p.sigma0, "r": p.r, "kappa": p.kappa, "kappa_r": p.kappa_r,
        "iota": p.iota, "iota_r": p.iota_r, "rho": p.rho, "delta": p.delta, "k": p.k,
        "theta": p.theta, "T": p.T, "x0": p.x0, "lambda0": p.lambda0, "y0": p.y0, "s": p.s,
    }
    for name, value in finite.items():
        if not math.isfinite(value):
            out.append((name, "finite"))
    if out:
        return out
    need(p.sigma0 > 0, "sigma0", "> 0")
    need(p.r > 0, "r", "> 0")
    need(p.kappa >= 0, "kappa", ">= 0")
    need(p.iota >= 0, "iota", ">= 0")
    if not p.allow_cheap_reinsurance:
        need(p.kappa_r >= p.kappa, "kappa_r", ">= kappa")
        need(p.iota_r >= p.iota, "iota_r", ">= iota")
    need(p.rho >= 0, "rho", ">= 0")
    need(p.delta >= 0, "delta", ">= 0")
    need(p.k > 0, "k", "> 0")
    need(p.theta > 0, "theta", "> 0")
    need(p.T > 0, "T", "> 0")
    need(p.lambda0 > 0, "lambda0", "> 0")
    need(p.y0 > 0, "y0", "> 0")
    need(0 <= p.s < p.T, "s", "in [0, T)")
    for name, dist in (("claims.ordinary", p.F1), ("claims.catastrophe", p.F2)):
        rate = getattr(dist, "rate", 1.0)
        shape = getattr(dist, "shape", 1.0)
        need(rate > 0 and math.isfinite(rate), f"{name}.rate", "> 0")
        need(shape > 0 and math.isfinite(shape), f"{name}.shape", "> 0")
    return out


def validate(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged or raise ValidationError listing every violation."""
    bad = _violations(params)
    if bad:
        raise ValidationError(bad)
    return params


def raw_moments(dist: ClaimDistribution) -> tuple[float, float]:
    """(∫ z F(dz), ∫ z^2 F(dz))."""
    return dist.tilted_moment(1, 0.0), dist.tilted_moment(2, 0.0)


def tilted_moment(dist: ClaimDistribution, m: int, a: float) -> float:
    """M(m, a) = ∫ z^m e^{-a z} F(dz)."""
    return dist.tilted_moment(m, a)


# ---------------------------------------------------------------- JSON schema

_DIST_KEYS = {"exponential": ("rate",), "gamma": ("shape", "rate")}


def _dist_from_dict(d: dict[str, Any], where: str) -> ClaimDistribution:
    kind = d.get("dist")
    if kind == "exponential":
        return ExponentialClaims(float(d["rate"]))
    if kind == "gamma":
        return GammaClaims(float(d["shape"]), float(d["rate"]))
    raise ValidationError([(f"{where}.dist", "one of " + ", ".join(sorted(_DIST_KEYS)))])


def params_from_dict(cfg: dict[str, Any]) -> ModelParams:
    """Build (and validate) params from the JSON schema layout."""
    try:
        m, ld, c = cfg["market"], cfg["loadings"], cfg["catastrophe"]
        claims, hz, ini = cfg["claims"], cfg["horizon"], cfg["initial"]
        params = ModelParams(
            market=MarketParams(float(m["mu0"]), float(m["sigma0"]), float(m["r"])),
            loadings=LoadingParams(
                float(ld["kappa"]), float(ld["kappa_r"]), float(ld["iota"]), float(ld["iota_r"])
            ),
            cat=CatastropheParams(float(c["rho"]), float(c["delta"]), float(c["k"])),
            F1=_dist_from_dict(claims["ordinary"], "claims.ordinary"),
            F2=_dist_from_dict(claims["catastrophe"], "claims.catastrophe"),
            theta=float(cfg["theta"]),
            T=float(hz["T"]),
            s=float(hz.get("s", 0.0)),
            x0=float(ini["x0"]),
            lambda0=float(ini["lambda0"]),
            y0=float(ini.get("y0", 1.0)),
            allow_cheap_reinsurance=bool(cfg.get("allow_cheap_reinsurance", False)),
        )
    except KeyError as exc:
        raise ValidationError([(str(exc.args[0]), "present")]) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError([("config", f"numeric ({exc})")]) from None
    return validate(params)


def params_to_dict(p: ModelParams) -> dict[str, Any]:
    out = {
        "market": asdict(p.market),
        "loadings": asdict(p.loadings),
        "catastrophe": asdict(p.cat),
        "claims": {"ordinary": p.F1.to_dict(), "catastrophe": p.F2.to_dict()},
        "theta": p.theta,
        "horizon": {"T": p.T, "s": p.s},
        "initial": {"x0": p.x0, "lambda0": p.lambda0, "y0": p.y0},
    }
    if p.allow_cheap_reinsurance:
        out["allow_cheap_reinsurance"] = True
    return out


def load_params(path: str | Path, *, allow_cheap_reinsurance: bool = False) -> ModelParams:
    cfg = json.loads(Path(path).read_text())
    if allow_cheap_reinsurance:
        cfg["allow_cheap_reinsurance"] = True
    return params_from_dict(cfg)


def leaf_paths(cfg: dict[str, Any], prefix: str = "") -> list[str]:
    out = []
    for key, value in cfg.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            out.extend(leaf_paths(value, path))
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            out.append(path)
    return out


def resolve_leaf(cfg: dict[str, Any], name: str) -> str:
    """Map a dotted path or an unambiguous leaf name to its dotted path."""
    paths = leaf_paths(cfg)
    if name in paths:
        return name
    hits = [p for p in paths if p.split(".")[-1] == name]
    if len(hits) == 1:
        return hits[0]
    raise ValidationError([(name, "a numeric config field" if not hits else "unambiguous")])


def _set_leaves(cfg: dict[str, Any], changes: dict[str, float]) -> dict[str, Any]:
    cfg = json.loads(json.dumps(cfg))
    for name, value in changes.items():
        path = resolve_leaf(cfg, name).split(".")
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    return cfg


def reference_params(**changes: float) -> ModelParams:
    """The monthly parameter set used throughout the examples and tests."""
    base = params_from_dict(
        {
            "market": {"mu0": 0.03, "sigma0": 0.4, "r": 0.01},
            "loadings": {"kappa": 0.1, "kappa_r": 0.105, "iota": 0.1, "iota_r": 0.12},
            "catastrophe": {"rho": 0.01, "delta": 0.01, "k": 10000.0},
            "claims": {
                "ordinary": {"dist": "exponential", "rate": 0.2},
                "catastrophe": {"dist": "exponential", "rate": 0.3},
            },
            "theta": 1.0,
            "horizon": {"T": 100.0, "s": 0.0},
            "initial": {"x0": 100.0, "lambda0": 1.0, "y0": 1.0},
        }
    )
    return base.with_updates(**changes) if changes else base


def replace_params(p: ModelParams, **kw: Any) -> ModelParams:
    """dataclasses.replace followed by validation."""
    return validate(replace(p, **kw))
