import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp

from blowuplab import lyapunov as ly
from blowuplab.model_core import DomainError, Params, Profile
from blowuplab.steady_states import Classification, phi_rhs

P3 = Params.make(3)
CFG = ly.LyapunovConfig()
ONE = Profile.one(P3)


def test_config_validation():
    with pytest.raises(ValueError):
        ly.LyapunovConfig(eta_bar=0.0)
    with pytest.raises(ValueError):
        ly.LyapunovConfig(quadrature_points=32)


def test_phase_point_membership():
    for bad in ((1.0, -0.1, 0.0), (1.0, 1.0, 0.5), (0.0, 1.0, -1.0)):
        with pytest.raises(DomainError):
            ly.PhasePoint(*bad)
    ly.PhasePoint(0.0, 2.0, 0.0)


def test_f_rhs_examples():
    assert ly.f_rhs(ly.PhasePoint(2.5, 1.0, 0.0), P3) == 0.0
    assert ly.f_rhs(ly.PhasePoint(2.5, 0.0, 0.0), P3) == 0.0
    assert ly.f_rhs(ly.PhasePoint(1.0, 2.0, -1.0), P3) == pytest.approx(-13.0 / 6.0, rel=1e-15)
    with pytest.raises(DomainError):
        ly.f_rhs(ly.PhasePoint(0.0, 1.0, 0.0), P3)


def test_characteristics():
    traj, o = ly.integrate_characteristic(ly.PhasePoint(2.0, 1.0, 0.0), P3, CFG)
    assert o.classification is Classification.CONSTANT_ONE
    assert np.max(np.abs(traj.values - 1.0)) < 1e-12
    e = 1.7
    p = ly.PhasePoint(e, float(ONE(e)), float(ONE.derivative(e)))
    traj, o = ly.integrate_characteristic(p, P3, CFG)
    assert o.classification is Classification.DECAYS
    xs = traj.grid[traj.grid <= 20.0]
    assert np.max(np.abs(traj.values[:xs.size] - ONE(xs))) < 1e-8
    _, o = ly.integrate_characteristic(ly.PhasePoint(1.0, 3.0, -5.0), P3, CFG)
    assert o.classification is Classification.CROSSES_ZERO and o.eta_star > 1.0


def test_region_examples():
    assert ly.classify_region(ly.PhasePoint(2.0, 1.0, 0.0), P3, CFG).region is ly.Region.R1
    e = 2.0
    tag = ly.classify_region(ly.PhasePoint(e, float(ONE(e)), float(ONE.derivative(e))), P3, CFG)
    assert tag.region is ly.Region.R3
    # integrate backward from a zero at eta* = 2.5 to land in R2a
    s = solve_ivp(phi_rhs(3), (2.5, 1.0), [0.0, -1.0], method="DOP853", rtol=1e-12, atol=1e-14)
    v, w = s.y[:, -1]
    assert v > 0 and w < 0
    tag = ly.classify_region(ly.PhasePoint(1.0, v, w), P3, CFG)
    assert tag.region is ly.Region.R2A
    assert tag.anchor == pytest.approx(min(2.5, CFG.eta_bar), abs=1e-6)


@pytest.mark.parametrize("eta", [0.5, 2.0, 5.0, 9.0])
def test_rho_closed_forms(eta):
    d, eb = 3, CFG.eta_bar
    r1 = eta ** (d + 1) * math.exp(-(d - 2) * eta ** 2 / (4 * d) - eb ** 2 / (2 * d))
    r0 = eta ** (d + 1) * math.exp(-eta ** 2 / 4)
    assert ly.rho(ly.PhasePoint(eta, 1.0, 0.0), P3, CFG) == pytest.approx(r1, rel=1e-14)
    assert ly.rho(ly.PhasePoint(eta, 0.0, 0.0), P3, CFG) == pytest.approx(r0, rel=1e-14)


def test_rho_excluded_set():
    with pytest.raises(DomainError):
        ly.rho(ly.PhasePoint(CFG.eta_bar, 2.0, -1.0), P3, CFG)


@given(e=st.floats(0.05, 12.0), v=st.floats(0.0, 6.0), w=st.floats(-6.0, 0.0))
@settings(max_examples=150, deadline=None)
def test_rho_positive_and_bounded(e, v, w):
    if abs(e - CFG.eta_bar) < 1e-9:
        return
    r, _, _ = ly.rho_array(np.array([e]), np.array([v]), np.array([w]), P3, CFG)
    assert r[0] > 0
    assert r[0] <= ly.rho_upper(e, 3) * (1 + 1e-9)


@pytest.mark.parametrize("pt", [(1.0, 0.3, -0.5), (3.0, 2.0, -1.0), (6.0, 0.4, -0.2),
                                (6.0, 1.5, -0.4), (9.0, 3.0, -2.0), (2.2, 0.9, -0.05)])
def test_rho_kernel_matches_reference(pt):
    p = ly.PhasePoint(*pt)
    assert ly.rho(p, P3, CFG) == pytest.approx(ly.rho_reference(p, P3, CFG), rel=1e-8)


@pytest.mark.parametrize("eta,w", [(1.0, -0.5), (3.0, -1.0), (6.0, -0.2), (5.0, -1.0),
                                   (4.5, -0.3), (9.0, -2.0)])
def test_rho_continuous_across_regions(eta, w):
    V = np.linspace(0.0, 6.0, 601)
    E, W = np.full_like(V, eta), np.full_like(V, w)
    _, _, fl = ly.rho_array(E, V, W, P3, CFG)
    switches = np.nonzero(np.diff(fl))[0]
    assert switches.size > 0
    for i in switches:
        a, b, fa = V[i], V[i + 1], fl[i]
        for _ in range(45):
            m = 0.5 * (a + b)
            if ly.rho_array([eta], [m], [w], P3, CFG)[2][0] == fa:
                a = m
            else:
                b = m
        ra = ly.rho_array([eta], [a], [w], P3, CFG)[0][0]
        rb = ly.rho_array([eta], [b], [w], P3, CFG)[0][0]
        assert abs(ra - rb) <= 1e-6 * ra


@pytest.mark.parametrize("eta", [0.5, 2.0, 5.0, 8.0])
def test_rho_continuous_at_R1(eta):
    eps = 1e-8
    r1 = ly.rho(ly.PhasePoint(eta, 1.0, 0.0), P3, CFG)
    r0 = ly.rho(ly.PhasePoint(eta, 0.0, 0.0), P3, CFG)
    for p, ref in (((eta, 1.0, -eps), r1), ((eta, 1 - eps, 0.0), r1), ((eta, 1 + eps, -eps), r1),
                   ((eta, eps, -eps), r0)):
        assert abs(ly.rho(ly.PhasePoint(*p), P3, CFG) / ref - 1) < 1e-6


def test_big_phi_examples():
    assert ly.big_phi(ly.PhasePoint(3.0, 0.0, 0.0), P3, CFG) == 0.0
    for e in (0.7, 5.0):
        val = ly.big_phi(ly.PhasePoint(e, 1.0, 0.0), P3, CFG)
        ref, _ = quad(lambda m: -ly.rho_reference(ly.PhasePoint(e, m, 0.0), P3, CFG) * (m * m - m),
                      0.0, 1.0, epsabs=0, epsrel=1e-9, limit=20)
        assert val > 0
        assert val == pytest.approx(ref, rel=1e-7)


def test_big_phi_envelope():
    rng = np.random.default_rng(1)
    n = 1000
    M, Mb = CFG.bounds(P3)
    E = rng.uniform(0.05, 12.0, n)
    V = rng.uniform(0.0, M, n)
    W = -rng.uniform(0.0, Mb, n)
    Phi = ly.big_phi_array(E, V, W, P3, CFG)
    assert np.all(np.abs(Phi) <= ly.phi_envelope(E, V, W, 3) * (1 + 1e-9))


def test_energy_of_constant_states():
    eta = np.linspace(0.0, 40.0, 801)
    s0 = ly.synthetic_state(0.0, eta, np.zeros_like(eta))
    assert ly.energy_E(s0, P3, CFG) == 0.0
    one = ly.synthetic_state(0.0, eta, np.ones_like(eta))
    e20 = ly.energy_E(one, P3, CFG)
    e40 = ly.energy_E(one, P3, ly.LyapunovConfig(energy_cut=40.0))
    assert e20 > 0 and abs(e40 - e20) < 1e-8 * e20
    ref, _ = quad(lambda x: ly.big_phi(ly.PhasePoint(x, 1.0, 0.0), P3, CFG), 0.0, 20.0,
                  points=[CFG.eta_bar], limit=200, epsrel=1e-10)
    assert e20 == pytest.approx(ref, rel=1e-8)


def test_monotonicity_synthetic():
    eta = np.linspace(0.0, 20.0, 2001)
    stationary = [ly.synthetic_state(t, eta, ONE(eta)) for t in (0.0, 1.0, 2.0)]
    rows = ly.monotonicity_check(stationary, P3, CFG)
    assert all(r.ok for r in rows) and all(abs(r.lhs) < 1e-15 for r in rows)
    zero = ly.synthetic_state(0.0, eta, np.zeros_like(eta))
    one = ly.synthetic_state(1.0, eta, np.ones_like(eta))
    assert ly.monotonicity_check([one, zero], P3, CFG)[0].ok
    assert not ly.monotonicity_check([zero, one], P3, CFG)[0].ok
    with pytest.raises(ValueError):
        ly.monotonicity_check([zero], P3, CFG)


def test_energy_rejects_increasing_profile():
    eta = np.linspace(0.0, 10.0, 201)
    with pytest.raises(DomainError):
        ly.energy_E(ly.synthetic_state(0.0, eta, 1 + 0.1 * eta), P3, CFG)


def test_pde_residuals_small_sample():
    E, V, W, regions = ly.residual_sample(60, P3, CFG, seed=3)
    assert {g.value for g in regions} == {"R1", "R2a", "R2b", "R3"}
    r1, r2, _ = ly.pde_residuals(E, V, W, P3, CFG)
    assert max(r1.max(), r2.max()) < 1e-4


def test_l1_growth_linear():
    out = ly.l1_growth(P3, CFG)
    assert np.all(np.isfinite(out["ratio"])) and out["C"] > 0
    # L1 / eta does not grow along the eta grid
    assert out["ratio"][-1] <= out["ratio"][0] * (1 + 1e-6)


def test_lower_bound_constant_holds_on_fresh_sample():
    cal = ly.calibrate_C0(P3, CFG, samples=300, seed=0)
    assert cal["failed"] == 0 and cal["positive"] and cal["upper_ok"]
    C0 = cal["C0"]
    rng = np.random.default_rng(7)
    M, Mb = CFG.bounds(P3)
    E, V, W = rng.uniform(0.05, 12.0, 300), rng.uniform(0.0, M, 300), -rng.uniform(0.0, Mb, 300)
    r, _, _ = ly.rho_array(E, V, W, P3, CFG)
    assert np.all(r >= E ** 4 * np.exp(-C0 * E * E) / C0)


def test_etabar_scan():
    out = ly.calibrate_etabar(P3, candidates=(4.0, 8.0, 16.0), margin=1.0)
    s = out["max_slope_in_band"]
    assert s[4.0] > s[8.0] > s[16.0]
    assert out["eta_bar"] == 16.0
