from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from blowuplab import stability as sb
from blowuplab import steady_states as sst
from blowuplab.model_core import DomainError, Params, Profile, ResolutionError

P3 = Params.make(3)


def test_discretization_validation():
    with pytest.raises(ValueError):
        sb.Discretization(n_cheb=100)
    with pytest.raises(ValueError):
        sb.Discretization(boundary="dirichlet")
    g = sb.Discretization().scaled(2.0)
    assert g.n_cheb % 2 == 1 and g.eta_max == 60.0 and not g.check


@pytest.mark.parametrize("d", [3, 4, 7])
def test_eigen_star_values(d):
    p = Params.make(d)
    lam0, e0 = sb.eigen_star(0, p)
    assert lam0 == 1 and e0.coefficients == [1]
    lam1, _ = sb.eigen_star(1, p)
    assert lam1 == Fraction(2, d)
    for n in range(6):
        lam, e = sb.eigen_star(n, p)
        assert lam == Fraction(d - n * (d - 2), d)
        assert e.recurrence_ok() and e.degree == 2 * n
    with pytest.raises(DomainError):
        sb.eigen_star(-1, p)


@pytest.mark.parametrize("d", [3, 5])
def test_eigen_star_solves_linearization_symbolically(d):
    x = sp.symbols("x")
    for n in range(5):
        lam, e = sb.eigen_star(n, Params.make(d))
        psi = sum(sp.Rational(a.numerator, a.denominator) * x ** (2 * i)
                  for i, a in enumerate(e.coefficients))
        # linearization about phi = 1
        L = (sp.diff(psi, x, 2) + (d + 1) / x * sp.diff(psi, x)
             + (sp.Rational(1, d) - sp.Rational(1, 2)) * x * sp.diff(psi, x) + psi)
        assert sp.simplify(L - sp.Rational(lam.numerator, lam.denominator) * psi) == 0


def test_polynomial_residual_floats():
    x = np.linspace(0.0, 10.0, 2001)
    for n in range(6):
        _, e = sb.eigen_star(n, P3)
        assert np.max(np.abs(e.residual(x))) < 1e-10


def test_star_spectrum_numeric():
    spectrum = sb.eigen_profile(Profile.star(P3), P3)
    exact = [float(sb.eigen_star(n, P3)[0]) for n in range(4)]
    assert np.all(np.abs(spectrum.eigenvalues[:4] - exact) < 1e-3)
    assert np.all(np.diff(spectrum.eigenvalues) <= 0)
    assert spectrum.unstable_count == 3 and spectrum.profile_kind is sb.ProfileClass.AROUND_STAR
    assert sb.star_spectrum(4, P3).eigenvalues == pytest.approx(exact, abs=0)


def test_phi1_spectrum():
    spectrum = sb.eigen_profile(Profile.one(P3), P3)
    lam = spectrum.eigenvalues
    assert lam[0] > 0 and -0.292 <= lam[1] <= -0.252
    assert spectrum.unstable_count == 1
    fine = sb.eigen_profile(Profile.one(P3), P3, sb.Discretization().scaled(2.0))
    assert np.all(np.abs(fine.eigenvalues[:3] - lam[:3]) <= 1e-3 * np.abs(lam[:3]))
    for f in spectrum.eigenfunctions[:3]:
        assert abs(sb.origin_slope(f)) < 1e-4


@pytest.mark.parametrize("d", [4, 5])
def test_phi1_stable_direction_other_dimensions(d):
    p = Params.make(d)
    spectrum = sb.eigen_profile(Profile.one(p), p)
    assert spectrum.eigenvalues[0] > 0 and spectrum.eigenvalues[1] < 0


def test_mode_count_examples():
    assert sb.mode_count_vs_intersections(Profile.one(P3), 1, P3)
    assert sb.eigen_profile(Profile.one(P3), P3).unstable_count == 1
    fam = sst.find_family(2, P3, bracket_hi=1e6)
    assert not fam.partial
    assert sb.mode_count_vs_intersections(fam.members[1].profile, 2, P3)
    with pytest.raises(ValueError):
        sb.mode_count_vs_intersections(Profile.one(P3), 0, P3)


def test_resolution_error_on_short_domain():
    with pytest.raises((ResolutionError, DomainError)):
        g = sst.shoot_phi(6.0, P3, eta_max=10.0)
        sb.eigen_profile(Profile.numeric(g.trajectory.grid, g.trajectory.values, P3), P3)
