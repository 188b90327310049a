import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blowuplab.model_core import (CoordinateKind, DomainError, Params, Profile, ProfileKind,
                                  RadialField, ResolutionError, b_from_n, closed_form_derivatives,
                                  eval_profile, from_selfsim, n_from_b, rational_b0,
                                  stationary_residual, to_selfsim, unit_ball_volume,
                                  validate_initial_data)
from blowuplab.selfsim_solver import count_intersections

P3 = Params.make(3)


def test_unit_ball_volume_examples():
    assert unit_ball_volume(1) == pytest.approx(2.0, rel=1e-15)
    assert unit_ball_volume(2) == pytest.approx(math.pi, rel=1e-15)
    assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0, rel=1e-14)
    with pytest.raises(DomainError):
        unit_ball_volume(0)


@pytest.mark.parametrize("d", [3, 4, 5, 9])
def test_params_consistency(d):
    p = Params.make(d)
    assert p.theta == pytest.approx(0.5 / (4 * d * unit_ball_volume(d)))
    assert p.m_one == 2 * d / (d - 2)
    with pytest.raises(DomainError):
        Params.make(2)
    with pytest.raises(DomainError):
        Params.make(3, theta=-1.0)


def test_radial_field_validation():
    with pytest.raises(ValueError):
        RadialField(np.array([0.0, 0.5, 0.4]), np.zeros(3))
    with pytest.raises(ValueError):
        RadialField(np.array([0.0, 1.0]), np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        RadialField(np.array([0.0, 1.0]), np.zeros(3))


def test_eval_profile_examples():
    assert eval_profile(Profile.singular(P3), 1.0) == 6.0
    assert eval_profile(Profile.one(P3), 0.0) == 6.0
    assert eval_profile(Profile.star(P3), 17.3) == 1.0
    assert eval_profile(Profile.zero(P3), 2.0) == 0.0
    with pytest.raises(DomainError):
        eval_profile(Profile.singular(P3), 0.0)


def test_n_from_b_examples():
    r = np.linspace(0.0, 1.0, 401)
    n = n_from_b(RadialField(r, np.ones_like(r)), P3)
    assert np.allclose(n.values, 1.0 / P3.chi_d, atol=1e-14)
    b = 2.0 - r ** 2
    n = n_from_b(RadialField(r, b), P3)
    exact = (1 - 2 * r ** 2 / 3 + (1 - r ** 2)) / P3.chi_d
    assert np.max(np.abs(n.values - exact)) < 1e-12  # quadratics are differentiated exactly
    rs = np.linspace(0.2, 1.0, 801)
    n = n_from_b(RadialField(rs, rs ** -3.0), P3)
    assert np.max(np.abs(n.values[1:-1])) < 1e-2
    with pytest.raises(ResolutionError):
        n_from_b(RadialField(np.array([0.0, 1.0]), np.ones(2)), P3)


def test_b_from_n_examples():
    r = np.linspace(0.0, 1.0, 401)
    b = b_from_n(RadialField(r, np.full_like(r, 1.0 / P3.chi_d)), P3)
    assert np.allclose(b.values, 1.0, atol=1e-12)
    assert np.all(b_from_n(RadialField(r, np.zeros_like(r)), P3).values == 0.0)
    with pytest.raises(DomainError):
        b_from_n(RadialField(r, -np.ones_like(r)), P3)
    # unit mass concentrated on [0, 0.1]
    r = np.linspace(0.0, 1.0, 20001)
    dens = np.where(r <= 0.1, 1.0, 0.0)
    mass = 3 * P3.chi_d * np.trapezoid(dens * r ** 2, r)
    b = b_from_n(RadialField(r, dens / mass), P3)
    far = r >= 0.11
    assert np.max(np.abs(b.values[far] * r[far] ** 3 - 1.0)) < 1e-3


def test_round_trip_second_order():
    errs = []
    for n in (101, 201, 401):
        r = np.linspace(0.0, 1.0, n)
        b = RadialField(r, 1.0 + np.cos(r) ** 2)
        back = b_from_n(n_from_b(b, P3), P3)
        errs.append(np.max(np.abs(back.values - b.values)))
    assert errs[2] < 1e-4
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0


@given(t=st.floats(0.0, 0.999), r=st.floats(0.0, 1.0), T=st.floats(0.1, 10.0))
@settings(max_examples=200, deadline=None)
def test_selfsim_round_trip(t, r, T):
    t = t * T
    tau, eta = to_selfsim(t, r, T, P3)
    t2, r2 = from_selfsim(tau, eta, T, P3)
    assert abs(t2 - t) <= 1e-12 * max(T, 1.0)
    assert abs(r2 - r) <= 1e-12 * max(r, 1e-300) + 1e-15


def test_selfsim_examples():
    T = 1.3
    tau, eta = to_selfsim(0.0, 0.7, T, P3)
    assert tau == 0.0 and eta == pytest.approx(0.7 / math.sqrt(P3.kappa * T), rel=1e-15)
    tau, _ = to_selfsim(T * (1 - math.exp(-1)), 0.1, T, P3)
    assert tau == pytest.approx(1.0, rel=1e-13)
    with pytest.raises(DomainError):
        to_selfsim(T, 0.1, T, P3)


def test_initial_data_examples():
    r = np.linspace(0.0, 1.0, 2001)
    assert validate_initial_data(RadialField(r, np.ones_like(r)), P3).all_ok
    # K1 + K2/(1+K3) = 1 and theta < K2 / (2 d^2 chi_d)
    K1, K2, K3 = 0.5, 1.0, 1.0
    assert P3.theta < K2 / (2 * 9 * P3.chi_d)
    rep = validate_initial_data(RadialField(r, rational_b0(r, K1, K2, K3, 3)), P3)
    assert rep.all_ok
    rep = validate_initial_data(RadialField(r, 1.0 + r ** 2), P3)
    assert not rep.satisfies_inicon0
    assert rep.worst_violation < 0


@given(K1=st.floats(0.0, 0.9), K3=st.floats(0.05, 5.0))
@settings(max_examples=30, deadline=None)
def test_report_consistent_with_worst(K1, K3):
    r = np.linspace(0.0, 1.0, 801)
    K2 = (1 - K1) * (1 + K3)
    rep = validate_initial_data(RadialField(r, rational_b0(r, K1, K2, K3, 3)), P3)
    assert rep.all_ok == (rep.worst_violation >= -rep.details["tolerance"])


def test_closed_form_residuals():
    eta = np.linspace(0.0, 20.0, 2001)
    for kind in (ProfileKind.EXPLICIT_ONE, ProfileKind.CONSTANT_STAR):
        res = stationary_residual(*closed_form_derivatives(kind, eta, 3), eta, 3)
        assert np.max(np.abs(res)) < 1e-10
    e = np.linspace(0.1, 20.0, 2001, dtype=np.longdouble)
    p, dp, d2p = closed_form_derivatives(ProfileKind.SINGULAR_S, e, 3)
    assert np.max(np.abs(p + e * dp / 2)) < 1e-10
    assert np.max(np.abs(d2p + 4 * dp / e + e * p * dp / 3 + p * p)) < 1e-10


@pytest.mark.parametrize("d", [3, 4, 5, 7])
def test_special_crossings(d):
    p = Params.make(d)
    S = Profile.singular(p)
    r1 = count_intersections(Profile.one(p), S, 0.1, 20.0)
    assert r1.count == 1 and r1.locations[0] == pytest.approx(math.sqrt(2 * (d - 2)), abs=1e-9)
    rs = count_intersections(Profile.star(p), S, 0.1, 20.0)
    assert rs.count == 1 and rs.locations[0] == pytest.approx(math.sqrt(2 * d), abs=1e-9)


def test_numeric_profile_domain():
    g = np.linspace(0.0, 5.0, 51)
    prof = Profile.numeric(g, np.exp(-g), P3)
    assert prof(np.array([2.5]))[0] == pytest.approx(math.exp(-2.5), abs=1e-4)
    with pytest.raises(DomainError):
        prof(np.array([6.0]))
    assert prof.params.d == 3 and prof.table.coordinate_kind is CoordinateKind.SELFSIM_ETA
