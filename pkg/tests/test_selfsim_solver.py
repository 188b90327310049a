import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowuplab import pde_solver as ps
from blowuplab import selfsim_solver as ss
from blowuplab.model_core import DomainError, Params, Profile, RadialField, ell_of_tau

P3 = Params.make(3)
ONE = Profile.one(P3)
STAR = Profile.star(P3)
SING = Profile.singular(P3)


def test_interior_residual_examples():
    e = np.linspace(0.0, 10.0, 41)
    # zero up to roundoff in the O(1/h^2) stencil weights
    assert np.max(np.abs(ss.interior_residual(lambda x: np.ones_like(x), None, e, P3))) < 1e-10
    # phi1 on [0, ell/2] with ell = 20
    r = ss.interior_residual(ONE, ONE.derivative, e, P3, h=2.5e-3, eta_end=20.0)
    assert np.max(np.abs(r)) < 1e-8
    # the singular solution on [1, 2]; values below 0.5 never reach the stencils used there
    r = ss.interior_residual(lambda x: 6.0 / np.maximum(x, 0.5) ** 2, None,
                             np.linspace(1.0, 2.0, 11), P3, h=1e-3, eta_end=3.0)
    assert np.max(np.abs(r)) < 1e-8


def test_step_keeps_phi1_nearly_fixed():
    cfg = ss.RescaledConfig(calibrate_T=False, grid_size=2001, eta_far=10.0)
    T = 1.0 / (P3.kappa * 100.0)
    s = ss.state_on_grid(ONE, 0.0, T, P3, cfg)
    s2 = ss.step_B(s, cfg, P3, dtau=1e-3)
    assert s2.tau == pytest.approx(1e-3)
    # the edge follows T exp(-tau), so compare on [0, 5]
    m = s.B.grid <= 5.0
    assert np.max(np.abs(s2.B.values[m] - s.B.values[m])) < 1e-8


def test_phi1_fixed_point():
    cfg = ss.RescaledConfig(calibrate_T=False, grid_size=2001, eta_far=10.0, rtol=1e-9)
    T = 1.0 / (P3.kappa * 100.0)
    s = ss.state_on_grid(ONE, 0.0, T, P3, cfg)
    states, om = ss.run_rescaled_from(s, 3.0, cfg, P3, boundary=ONE)
    assert max(h for _, h in om.sup_distance_history) < 1e-6
    assert ss.sup_distance_to(states[-1], ONE, 5.0) < 1e-6
    assert om.s1_member and om.intersections_with_singular == 1


def test_wrong_T_warns(caplog):
    cfg_p = ps.SolverConfig(grid_size=512)
    b0 = ps.constant_initial(cfg_p)
    cfg = ss.RescaledConfig(calibrate_T=False)
    with caplog.at_level(logging.WARNING):
        states, om = ss.run_rescaled(b0, 1.2 * 1.0959, 8.0, cfg, P3)
    kinds = {e["kind"] for e in om.events}
    assert kinds & {"escape", "B0_above_M", "B0_below_one"}
    assert any("blow-up time" in m for m in caplog.messages)
    with pytest.raises(ValueError):
        ss.run_rescaled(b0, 1.0959, 4.0, cfg, P3)


def test_intersection_examples():
    r = ss.count_intersections(ONE, SING, 0.1, 20.0)
    assert r.count == 1 and r.locations[0] == pytest.approx(math.sqrt(2), abs=1e-9)
    r = ss.count_intersections(STAR, SING, 0.1, 20.0)
    assert r.count == 1 and r.locations[0] == pytest.approx(math.sqrt(6), abs=1e-9)
    r = ss.count_intersections(STAR, ONE, 0.0, 20.0)
    assert r.count == 1 and r.locations[0] == pytest.approx(math.sqrt(10), abs=1e-9)
    with pytest.raises(DomainError):
        ss.count_intersections(ONE, ONE, 0.0, 5.0)


def test_touch_is_not_a_crossing():
    r = ss.count_intersections(lambda x: (x - 1) ** 2, lambda x: np.zeros_like(x), 0.0, 2.0,
                               n_samples=4001)
    assert r.count == 0 and len(r.touches) == 1


@given(st.lists(st.floats(0.5, 9.5), min_size=0, max_size=5, unique=True))
@settings(max_examples=60, deadline=None)
def test_crossings_of_polynomials(roots):
    roots = sorted(roots)
    if any(b - a < 0.05 for a, b in zip(roots, roots[1:])):
        return

    def f(x):
        out = np.ones_like(x) * 0.5
        for z in roots:
            out = out * (x - z)
        return out

    r = ss.count_intersections(f, lambda x: np.zeros_like(x), 0.0, 10.0, n_samples=8000)
    assert r.count == len(roots)
    assert np.allclose(r.locations, roots, atol=1e-8)


def test_zero_number_constant_series():
    cfg = ss.RescaledConfig(calibrate_T=False)
    states = [ss.state_on_grid(ONE, tau, 1.0, P3, cfg) for tau in (0.0, 1.0, 2.0, 3.0)]
    z, viol = ss.zero_number_series(states, SING)
    assert [v for _, v in z] == [1, 1, 1, 1] and not viol


def test_transform_edge_value():
    r = np.linspace(0.0, 1.0, 101)
    snap = ps.Snapshot(0.3, RadialField(r, 2.0 - r ** 2), 2.0)
    T = 1.1
    s = ss.transform_snapshot(snap, T, P3)
    assert s.tau == pytest.approx(math.log(T / (T - 0.3)))
    assert s.B.values[-1] == pytest.approx(T * math.exp(-s.tau), rel=1e-14)
    assert s.ell == pytest.approx(float(ell_of_tau(s.tau, T, P3)), rel=1e-12)
