import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from catmmv.errors import ValidationError
from catmmv.model import (
    ExponentialClaims,
    GammaClaims,
    load_params,
    params_from_dict,
    params_to_dict,
    raw_moments,
    reference_params,
    tilted_moment,
    validate,
)

from oracles import exp_tilted_moment


def _quad_moment(dist, m, a):
    val, _ = integrate.quad(lambda z: z**m * math.exp(-a * z) * dist.pdf(z), 0.0, math.inf, epsabs=0, epsrel=1e-12, limit=200)
    return val


def test_reference_set_is_accepted(ref):
    assert validate(ref) is ref
    assert (ref.mu0, ref.sigma0, ref.r) == (0.03, 0.4, 0.01)
    assert (ref.kappa, ref.kappa_r, ref.iota, ref.iota_r) == (0.1, 0.105, 0.1, 0.12)
    assert (ref.rho, ref.delta, ref.k, ref.theta, ref.T, ref.x0, ref.lambda0) == (0.01, 0.01, 10000.0, 1.0, 100.0, 100.0, 1.0)


@pytest.mark.parametrize(
    "change, field, constraint",
    [({"sigma0": 0.0}, "sigma0", "> 0"), ({"theta": -1.0}, "theta", "> 0"), ({"k": 0.0}, "k", "> 0")],
)
def test_boundary_violations(change, field, constraint):
    with pytest.raises(ValidationError) as exc:
        reference_params(**change)
    assert (field, constraint) in exc.value.violations


def test_all_violations_are_listed():
    cfg = params_to_dict(reference_params())
    cfg["market"]["sigma0"] = 0.0
    cfg["theta"] = -1.0
    with pytest.raises(ValidationError) as exc:
        params_from_dict(cfg)
    assert {f for f, _ in exc.value.violations} >= {"sigma0", "theta"}


def test_cheap_reinsurance_needs_the_flag(tmp_path):
    cfg = params_to_dict(reference_params())
    cfg["loadings"]["kappa_r"] = 0.05
    with pytest.raises(ValidationError):
        params_from_dict(cfg)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert load_params(path, allow_cheap_reinsurance=True).kappa_r == 0.05


def test_missing_field_and_unknown_law():
    cfg = params_to_dict(reference_params())
    del cfg["market"]["mu0"]
    with pytest.raises(ValidationError):
        params_from_dict(cfg)
    cfg = params_to_dict(reference_params())
    cfg["claims"]["ordinary"] = {"dist": "pareto", "rate": 1.0}
    with pytest.raises(ValidationError):
        params_from_dict(cfg)


def test_dict_round_trip(ref):
    assert params_to_dict(params_from_dict(params_to_dict(ref))) == params_to_dict(ref)


@pytest.mark.parametrize("rate, mu, m2", [(0.2, 5.0, 50.0), (0.3, 10.0 / 3.0, 200.0 / 9.0), (1.0, 1.0, 2.0)])
def test_raw_moments(rate, mu, m2):
    got = raw_moments(ExponentialClaims(rate))
    assert got == pytest.approx((mu, m2), rel=1e-14)
    assert got[0] == pytest.approx(exp_tilted_moment(rate, 1, 0.0), rel=1e-9)
    assert got[1] == pytest.approx(exp_tilted_moment(rate, 2, 0.0), rel=1e-9)


@pytest.mark.parametrize("m, a, expected", [(0, 0.0, 1.0), (1, 0.348456, 0.713444), (2, 0.348456, 2.20045)])
def test_tilted_moment_values(m, a, expected):
    dist = ExponentialClaims(0.3)
    got = tilted_moment(dist, m, a)
    assert got == pytest.approx(expected, rel=5e-6)
    assert got == pytest.approx(exp_tilted_moment(0.3, m, a), rel=1e-9)


def test_tilted_moment_rejects_bad_order_and_tilt():
    with pytest.raises(ValueError):
        tilted_moment(ExponentialClaims(1.0), 4, 0.0)
    with pytest.raises(ValueError):
        tilted_moment(ExponentialClaims(1.0), 1, -0.1)


laws = st.one_of(
    st.builds(ExponentialClaims, st.floats(0.05, 5.0)),
    st.builds(GammaClaims, st.floats(0.5, 5.0), st.floats(0.05, 5.0)),
)


@given(dist=laws, m=st.integers(0, 3), a=st.floats(0.0, 3.0))
def test_tilted_moment_matches_quadrature(dist, m, a):
    assert tilted_moment(dist, m, a) == pytest.approx(_quad_moment(dist, m, a), rel=1e-9)


@given(dist=laws, m=st.integers(0, 3), a1=st.floats(0.0, 3.0), gap=st.floats(1e-3, 2.0))
def test_tilted_moment_strictly_decreasing(dist, m, a1, gap):
    assert tilted_moment(dist, m, a1) > tilted_moment(dist, m, a1 + gap)


@given(dist=laws, a=st.floats(0.0, 5.0))
def test_tilted_moment_cauchy_schwarz(dist, a):
    m0, m1, m2 = (tilted_moment(dist, m, a) for m in range(3))
    assert m1 * m1 <= m0 * m2 * (1 + 1e-12)


@given(dist=laws, a=st.floats(0.0, 3.0))
def test_vector_moments_match_scalar(dist, a):
    vec = dist.tilted_moments([a])[:, 0]
    for m in range(4):
        assert vec[m] == pytest.approx(dist.tilted_moment(m, a), rel=1e-13)
