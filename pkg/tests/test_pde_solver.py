import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowuplab import pde_solver as ps
from blowuplab._numerics import richardson_step
from blowuplab.model_core import CoordinateKind, Params, RadialField

P3 = Params.make(3)


def _snap(r, b, t=0.0):
    return ps.Snapshot(t, RadialField(r, b, CoordinateKind.PHYSICAL_R), float(b[0]))


def test_config_validation():
    with pytest.raises(ValueError):
        ps.SolverConfig(grid_size=32)
    with pytest.raises(ValueError):
        ps.SolverConfig(blowup_threshold=10.0)
    with pytest.raises(ValueError):
        ps.SolverConfig(dt_safety=0.0)


def test_euler_step_on_constant():
    cfg = ps.SolverConfig(grid_size=128, scheme="euler")
    r = ps.make_grid(cfg)
    s = ps.step_b(_snap(r, np.ones_like(r)), cfg, P3, dt=1e-3)
    assert np.allclose(s.b.values[:-1], 1.001, rtol=0, atol=1e-13)
    assert s.b.values[-1] == 1.0


def test_zero_interior_rhs():
    r = np.linspace(0.0, 1.0, 101)
    prob = ps.PhysicalProblem(r, P3)
    b = np.zeros_like(r)
    b[-1] = 1.0
    assert np.all(prob.rhs(0.0, b)[:-2] == 0.0)


def _manufactured_error(n, eps=0.1, t_end=0.2, dt=1e-3):
    d, k = P3.d, P3.kappa
    r = np.linspace(0.0, 1.0, n)

    def exact(t, x):
        return 1 + eps * np.cos(np.pi * x / 2) * np.exp(t)

    def source(t, x):
        c, e = np.cos(np.pi * x / 2), np.exp(t)
        b = 1 + eps * c * e
        br = -eps * np.pi / 2 * np.sin(np.pi * x / 2) * e
        brr = -eps * (np.pi / 2) ** 2 * c * e
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(x > 0, (d + 1) * br / np.where(x > 0, x, 1.0), (d + 1) * brr)
        return eps * c * e - (k * (brr + radial) + x * b * br / d + b * b)

    prob = ps.PhysicalProblem(r, P3, source=source)
    b, t = exact(0.0, r), 0.0
    while t < t_end - 1e-12:
        b, _ = richardson_step(prob, t, b, dt)
        b[-1] = 1.0
        t += dt
    return np.max(np.abs(b - exact(t, r)))


def test_manufactured_solution_second_order():
    e = [_manufactured_error(n) for n in (33, 65, 129)]
    assert e[2] < 1e-4
    assert 3.0 < e[0] / e[1] < 5.5 and 3.0 < e[1] / e[2] < 5.5


def test_boundary_value_and_diffusion_only_relaxes():
    cfg = ps.SolverConfig(grid_size=96, diffusion_only=True, dt_safety=1.0)
    r = ps.make_grid(cfg)
    b = 1.0 + 0.5 * (1 - r ** 2)
    snap = _snap(r, b)
    dev = [np.max(np.abs(b - 1))]
    for _ in range(300):
        snap = ps.step_b(snap, cfg, P3, dt=0.5)
        assert snap.b.values[-1] == 1.0
        dev.append(np.max(np.abs(snap.b.values - 1)))
    assert np.all(np.diff(dev) <= 1e-12)
    assert dev[-1] < 1e-3


def test_fit_on_exact_trace():
    t = np.linspace(0.0, 0.5 - 1e-9, 4000)
    T, res, n = ps.fit_blowup_time(t, 1.0 / (0.5 - t), 1e2, 1e9)
    assert abs(T - 0.5) < 1e-10 and res < 1e-10 and n >= 3


@given(T0=st.floats(0.1, 10.0), c=st.floats(1.0, 6.0))
@settings(max_examples=50, deadline=None)
def test_fit_property(T0, c):
    t = T0 * (1 - np.geomspace(1.0, 1e-8, 500))
    T, _, _ = ps.fit_blowup_time(t, c / (T0 - t), c / T0 * 1e4, np.inf)
    assert abs(T - T0) < 1e-8 * T0


def test_monitors_trivial_and_violated():
    r = np.linspace(0.0, 1.0, 201)
    one = _snap(r, np.ones_like(r))
    assert all(ps.monitor_invariants(one, None, P3).values())
    rr = np.linspace(0.01, 1.0, 201)
    bad = _snap(rr, np.minimum(1.1 * rr ** -3.0, 1e3), t=1.0)
    flags = ps.monitor_invariants(bad, None, P3)
    assert not flags["upper_bound"]


@pytest.fixture(scope="module")
def blowup_512():
    cfg = ps.SolverConfig(grid_size=512)
    return ps.run_to_blowup(ps.constant_initial(cfg), cfg, P3)


def test_blowup_sandwich(blowup_512):
    traj, est, trace = blowup_512
    assert est.detected and est.T < P3.m_one
    assert est.T > trace[-1, 0]
    assert est.sandwich_min >= 1.0 and est.sandwich_max <= P3.m_one
    assert np.isfinite(est.fit_residual)


def test_blowup_monitors_and_boundary(blowup_512):
    traj, _, _ = blowup_512
    ok = ps.all_monitors_ok(traj)
    assert ok and all(ok.values())
    assert traj[-1].invariant_flags["gradient_bound"]
    assert all(s.b.values[-1] == 1.0 for s in traj)


def test_no_blowup_reported():
    cfg = ps.SolverConfig(grid_size=64, max_steps=5)
    traj, est, trace = ps.run_to_blowup(ps.constant_initial(cfg), cfg, P3)
    assert not est.detected and np.isnan(est.T) and trace.shape == (6, 2)
