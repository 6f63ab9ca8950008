import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catmmv.coefficients import build_curves
from catmmv.model import reference_params
from catmmv.strategies import (
    Anchor,
    adversary_controls,
    anchor_constant,
    bracket_D,
    default_anchor,
    feedback_controls_y,
    mmv_value,
    precommitted_controls,
    value_function,
    y_from_x,
)

# precommitted controls at (t=1, x=100, λ=5) from the reference anchor
PRE_T1 = (0.5130330922262911, 0.04309477974700846, 0.0004494030214686674)
V_REF = -874.239050258372


def test_controls_at_zero_y(ref, curves):
    c = feedback_controls_y(ref, curves, 10.0, 0.0, 1.0)
    assert c.pi == 0.0 and c.u == 0.0
    G = math.exp(ref.r * (ref.T - 10.0))
    assert c.v == pytest.approx(curves.alpha(10.0, exact=True) / (ref.k * G), rel=1e-14)


def test_retention_at_horizon(ref, curves):
    c = feedback_controls_y(ref, curves, ref.T, 1.0, 1.0)
    assert c.u == pytest.approx(2 * 0.5 * 0.105 * 5 / 50, rel=1e-13)


def test_catastrophe_retention_two_routes(ref, curves):
    closed = feedback_controls_y(ref, curves, 0.0, 1.0, 1.0, route="closed")
    quad = feedback_controls_y(ref, curves, 0.0, 1.0, 1.0, route="quadrature")
    assert quad.v == pytest.approx(closed.v, rel=1e-9)
    H = 0.5 * math.exp(curves.eta(0.0, exact=True) + curves.zeta(0.0, exact=True))
    expect = (2 * H * curves.phi(0.0, exact=True) + curves.alpha(0.0, exact=True)) / (ref.k * math.exp(ref.r * ref.T))
    assert closed.v == pytest.approx(expect, rel=1e-13)
    with pytest.raises(ValueError):
        feedback_controls_y(ref, curves, 0.0, 1.0, 1.0, route="nope")


def test_adversary_values(ref, curves):
    b = adversary_controls(ref, curves, 0.0)
    assert b.o == pytest.approx(-0.05, rel=1e-14)
    assert b.p(1.0) == pytest.approx(0.0105, rel=1e-13)
    bT = adversary_controls(ref, curves, ref.T)
    z = np.linspace(0, 500, 101)
    assert np.allclose(bT.q(z), curves.phi(ref.T, exact=True) * z, rtol=1e-13, atol=1e-15)
    assert b.admissible(z) and bT.admissible(z)


@given(t=st.floats(0.0, 100.0), z=st.floats(0.0, 1e4))
def test_q_star_above_minus_one(ref, curves, t, z):
    # 1 + q* = e^{-ηz}(1 + φz) > 0 with φ > 0; in floating point it may round to -1
    assert curves.phi(t, exact=True) > 0
    assert adversary_controls(ref, curves, t).q(z) >= -1.0


def test_bracket_cancels_at_anchor(ref, curves):
    an = Anchor(3.0, 50.0, 2.0, 1.5)
    H = 0.5 * math.exp(curves.eta(3.0, exact=True) * 1.5 + curves.zeta(3.0, exact=True))
    x = an.x_s + (an.y_s / ref.theta) * math.exp(curves.eta(3.0, exact=True) * 1.5 + curves.zeta(3.0, exact=True)) * math.exp(-ref.r * (ref.T - 3.0))
    assert 2 * H == pytest.approx(math.exp(curves.eta(3.0, exact=True) * 1.5 + curves.zeta(3.0, exact=True)))
    c = precommitted_controls(ref, curves, an, 3.0, x, 1.5)
    assert abs(c.pi) < 1e-12 and abs(c.u) < 1e-12
    assert c.v == pytest.approx(curves.alpha(3.0, exact=True) * math.exp(-ref.r * (ref.T - 3.0)) / ref.k, rel=1e-9)


def test_precommitted_frozen_and_table_route(ref, curves):
    an = default_anchor(ref)
    c = precommitted_controls(ref, curves, an, 1.0, 100.0, 5.0)
    assert (c.pi, c.u, c.v) == PRE_T1
    # independent route: D from the interpolated tables
    G = lambda t: math.exp(ref.r * (ref.T - t))  # noqa: E731
    H = lambda t, l: math.exp(curves.eta(t) * l + curves.zeta(t)) / (2 * ref.theta)  # noqa: E731
    I = lambda t, l: curves.alpha(t) * l + curves.beta(t)  # noqa: E731
    cst = G(0) * 100.0 + 2 * H(0, 1.0) + I(0, 1.0)
    D = (cst - G(1.0) * 100.0 - I(1.0, 5.0)) / G(1.0)
    assert c.pi == pytest.approx((ref.mu0 - ref.r) * D / ref.sigma0**2, rel=1e-6)
    assert c.u == pytest.approx(ref.kappa_r * ref.mu1 * D / ref.sigma1_sq, rel=1e-6)


@given(t=st.floats(0.0, 100.0), x=st.floats(-500.0, 500.0), lam=st.floats(0.05, 20.0))
def test_anchor_consistency(ref, curves, t, x, lam):
    an = default_anchor(ref)
    y = y_from_x(ref, curves, an, t, x, lam)
    pre = precommitted_controls(ref, curves, an, t, x, lam)
    fb = feedback_controls_y(ref, curves, t, y, lam)
    for a, b in ((pre.pi, fb.pi), (pre.u, fb.u), (pre.v, fb.v)):
        assert a == pytest.approx(b, rel=1e-10, abs=1e-12 * max(1.0, abs(b)))


@given(x=st.floats(-1e3, 1e3), y=st.floats(0.01, 10.0), lam=st.floats(0.05, 20.0))
def test_value_at_horizon(ref, curves, x, y, lam):
    an = Anchor(ref.T, x, y, lam)
    assert value_function(ref, curves, an, ref.T, x, lam) == pytest.approx(x * y + y * y / (2 * ref.theta), rel=1e-12, abs=1e-12)


def test_value_horizon_example(ref, curves):
    an = Anchor(ref.T, 2.0, 3.0, 1.0)
    assert value_function(ref, curves, an, ref.T, 2.0, 1.0) == pytest.approx(10.5, rel=1e-14)


def test_value_at_anchor_expands(ref, curves):
    an = Anchor(5.0, 80.0, 1.7, 2.0)
    G = math.exp(ref.r * (ref.T - 5.0))
    H = math.exp(curves.eta(5.0, exact=True) * 2.0 + curves.zeta(5.0, exact=True)) / (2 * ref.theta)
    I = curves.alpha(5.0, exact=True) * 2.0 + curves.beta(5.0, exact=True)
    got = value_function(ref, curves, an, 5.0, 80.0, 2.0)
    assert got == pytest.approx((G * 80.0 + I) * 1.7 + H * 1.7**2, rel=1e-12)
    assert anchor_constant(ref, curves, an) == pytest.approx(G * 80 + 2 * H * 1.7 + I, rel=1e-14)
    with pytest.raises(ValueError):
        value_function(ref, curves, an, 4.0, 80.0, 2.0)
    with pytest.raises(ValueError):
        bracket_D(ref, curves, an, 4.0, 80.0, 2.0)


def test_mmv_value_frozen(ref, curves):
    assert mmv_value(ref, curves) == V_REF
    an = default_anchor(ref)
    assert value_function(ref, curves, an, 0.0, ref.x0, ref.lambda0) == pytest.approx(V_REF, rel=1e-12)


def test_mmv_value_without_risk():
    # symmetric loadings, no excess return, no catastrophes, no ordinary tilt
    p = reference_params(kappa=0.0, kappa_r=0.0, iota=0.0, iota_r=0.0, mu0=1e-12, rho=0.0, r=1e-12)
    c = build_curves(p, 11)
    assert mmv_value(p, c) == pytest.approx(p.x0 + 1 / (2 * p.theta), rel=1e-9)


def test_mmv_value_large_theta():
    gaps = []
    for th in (1e2, 1e4, 1e6):
        p = reference_params(theta=th)
        c = build_curves(p, 11)
        G0 = math.exp(p.r * p.T)
        gaps.append(abs(mmv_value(p, c) - (G0 * p.x0 + c.alpha(0.0, exact=True) * p.lambda0 + c.beta(0.0, exact=True))))
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-4
