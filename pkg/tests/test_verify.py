import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from catmmv import verify as vf
from catmmv.simulate import Adversary, SimConfig, Strategy, simulate_path
from catmmv.strategies import AdversaryControls, InsurerControls

A0 = InsurerControls(0.7, 0.3, 0.002)


def _b(ref, curves, t):
    return vf.Candidate(ref, curves).b_star(t)


def test_generator_of_wealth_is_the_drift(ref, curves):
    p = ref
    b = _b(ref, curves, 3.0)
    t, x, y, lam = 3.0, 40.0, 1.3, 2.0
    got = vf.generator_apply(p, lambda t_, x_, y_, l_: x_, A0, b, t, x, y, lam)
    drift = (
        p.r * x + A0.pi * (p.mu0 - p.r) + (p.kappa_r * A0.u - p.kappa_r + p.kappa) * p.mu1 * lam
        + (p.iota_r * A0.v - p.iota_r + p.iota) * p.k * p.mu2 * p.rho
    )
    assert got == pytest.approx(drift, rel=1e-9)


def test_generator_of_density_vanishes(ref, curves):
    b = _b(ref, curves, 3.0)
    got = vf.generator_apply(ref, lambda t_, x_, y_, l_: y_, A0, b, 3.0, 40.0, 1.3, 2.0)
    assert abs(got) < 1e-9


def test_generator_of_intensity(ref, curves):
    b = _b(ref, curves, 3.0)
    got = vf.generator_apply(ref, lambda t_, x_, y_, l_: l_, A0, b, 3.0, 40.0, 1.3, 2.0)
    assert got == pytest.approx(-ref.delta * 2.0 + ref.rho * ref.mu2, rel=1e-8)


def test_generator_of_density_square(ref, curves):
    # L y² = y² (o² + λ ∫p² F1 + ρ ∫q² F2)
    p = ref
    b = _b(ref, curves, 3.0)
    y, lam = 1.3, 2.0
    ip = integrate.quad(lambda z: float(b.p(z)) ** 2 * p.F1.pdf(z), 0, np.inf, epsrel=1e-12)[0]
    iq = integrate.quad(lambda z: float(b.q(z)) ** 2 * p.F2.pdf(z), 0, np.inf, epsrel=1e-12)[0]
    got = vf.generator_apply(p, lambda t_, x_, y_, l_: y_ * y_, A0, b, 3.0, 40.0, y, lam)
    assert got == pytest.approx(y * y * (b.o**2 + lam * ip + p.rho * iq), rel=1e-7)


def test_hjbi_small_grid(ref, curves):
    grid = ([0.0, 50.0], [-100.0, 100.0], [0.5, 2.0], [0.1, 5.0])
    rep = vf.hjbi_residual_report(ref, curves, grid, n_random=5, spot_points=3)
    assert rep.passed(1e-6)
    assert len(rep.rows) == 16


def test_hjbi_terminal_slice(ref, curves):
    grid = ([ref.T], [0.0, 100.0], [1.0], [1.0, 5.0])
    rep = vf.hjbi_residual_report(ref, curves, grid, n_random=3, spot_points=2)
    assert rep.breakdown["hjbi"] <= 1e-6


def test_hjbi_diffusion(dparams, dcoef):
    grid = vf.standard_grid(dparams, "diffusion")
    sub = (grid[0][::3], grid[1][::2], grid[2][:2], grid[3][::2])
    rep = vf.hjbi_residual_report(dparams, dcoef, sub, n_random=3, spot_points=2)
    assert rep.passed(1e-6)
    assert np.all(grid[3] > 0)


def test_negative_control_sees_perturbations(ref, curves):
    got = vf.negative_control(ref, curves, names=("eta", "zeta", "beta"))
    assert set(got) == {"eta", "zeta", "beta"}
    assert min(got.values()) >= 1e-3
    grid = ([0.0, 50.0], [-100.0, 100.0], [1.0], [1.0, 5.0])
    assert vf.negative_control(ref, curves, grid, factor=1.0, names=("eta",))["eta"] <= 1e-6


def test_candidate_rejects_unknown_factor(ref, curves):
    with pytest.raises(ValueError):
        vf.Candidate(ref, curves, {"theta": 2.0})


@settings(max_examples=20)
@given(t=st.floats(0.0, 99.0), x=st.floats(-300.0, 300.0), y=st.floats(0.1, 5.0), lam=st.floats(0.1, 10.0))
def test_w_derivatives_against_closed_form(ref, curves, t, x, y, lam):
    c = vf.Candidate(ref, curves)
    h = 1e-5
    wx = (c.W(t, x + h, y, lam) - c.W(t, x - h, y, lam)) / (2 * h)
    wy = (c.W(t, x, y + h, lam) - c.W(t, x, y - h, lam)) / (2 * h)
    G, H, I = c.G(t), c.H(t, lam), c.I(t, lam)
    assert wx == pytest.approx(G * y, rel=1e-6, abs=1e-6)
    assert wy == pytest.approx(G * x + 2 * H * y + I, rel=1e-6, abs=1e-4 * (abs(G * x) + abs(I) + H))


def test_ode_and_pde_reports(ref, curves):
    assert vf.ode_residual_report(ref, curves).passed(1e-6)
    rep = vf.coefficient_pde_report(ref, curves, times=[0.0, 60.0], lams=[0.5, 4.0])
    assert rep.passed(1e-6)
    bad = vf.coefficient_pde_report(ref, curves, times=[0.0], lams=[1.0], candidate=vf.Candidate(ref, curves, {"eta": 1.01}))
    assert bad.breakdown["H"] >= 1e-3


def test_riccati_report(dparams, dcoef):
    rep = vf.riccati_residual_report(dparams, dcoef)
    assert rep.passed(1e-6)
    assert set(rep.breakdown) == {"xi", "eta", "zeta", "H", "I"}


def test_saddle_small(ref10, curves10):
    cfg = SimConfig(n_paths=2000, dt=0.1, seed=5)
    rep = vf.saddle_check(
        ref10,
        curves10,
        cfg,
        insurer=(("same", Strategy("feedback")), ("pi+1", Strategy("feedback", offset=(1.0, 0.0, 0.0)))),
        adversary=(("same", Adversary.optimal()), ("none", Adversary.none())),
    )
    same_a, same_b = rep.rows[0], rep.rows[2]
    # a = a*, b = b* reuse the reference inputs, so the estimates coincide
    assert same_a.gap == 0.0 and same_b.gap == 0.0
    assert rep.passed
    assert rep.value == pytest.approx(rep.optimal[0], abs=4 * rep.optimal[1] + 0.1)


def _fake_path(Y):
    t = np.linspace(0.0, 1.0, len(Y))
    return SimpleNamespace(t=t, Y=np.asarray(Y, dtype=float), lam=np.ones(len(Y)))


def test_integrability_optimal_is_finite(ref10, curves10):
    cfg = SimConfig(n_paths=4, dt=0.1, seed=3, record_grid=tuple(np.arange(1.0, 10.0)))
    path = simulate_path(ref10, curves10, Strategy(), Adversary.optimal(), cfg, 0)
    cand = vf.Candidate(ref10, curves10)
    rep = vf.integrability_monitor(ref10, path, cand.b_star)
    assert rep.finite and not rep.hits_zero
    assert all(v > 0 for v in rep.brownian)


def test_integrability_truncation_is_flagged(ref):
    b = AdversaryControls(o=0.0, p=lambda z: 0.0 * z, q=lambda z: -1.0 + 0.0 * z)
    rep = vf.integrability_monitor(ref, _fake_path([1.0, 0.5, 0.05, 0.0]), b, ns=(10, 1000))
    assert rep.truncated == (True, True)
    assert rep.hits_zero
    # (1 - √0)² ρ integrated up to the first hit of 1/n
    assert rep.catastrophe[0] == pytest.approx(ref.rho * 2 / 3, rel=1e-9)
    assert rep.ordinary == (0.0, 0.0) and rep.brownian == (0.0, 0.0)


def test_integrability_zero_controls(ref):
    b = AdversaryControls(o=0.0, p=lambda z: 0.0 * z, q=lambda z: 0.0 * z)
    rep = vf.integrability_monitor(ref, _fake_path([1.0, 1.0, 1.0]), b)
    assert rep.total == (0.0, 0.0, 0.0)
    assert rep.truncated == (False, False, False)
    assert rep.stop_time == (1.0, 1.0, 1.0)


def test_inadmissible_tilt_is_rejected(ref):
    b = AdversaryControls(o=0.0, p=lambda z: -2.0 + 0.0 * z, q=lambda z: 0.0 * z)
    with pytest.raises(ValueError):
        vf.integrability_monitor(ref, _fake_path([1.0, 1.0]), b)


def test_standard_grid_shape(ref):
    ts, xs, ys, ls = vf.standard_grid(ref)
    assert (ts.size, xs.size, ys.size, ls.size) == (10, 5, 3, 5)
    assert ts[-1] == pytest.approx(0.9 * ref.T) and math.isclose(ts[0], 0.0)
