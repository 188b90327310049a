"""Linear stability of self-similar profiles.

The linearization of the rescaled equation about a profile phi is

    L psi = psi'' + ((d+1)/eta + (phi/d - 1/2) eta) psi' + (eta phi'/d + 2 phi - 1) psi.

Around the constant profile the eigenfunctions are even polynomials and the
eigenvalues are explicit rationals.  Around other profiles L is discretized
by an even Chebyshev collocation on [0, eta_max] with a Robin closure that
selects the algebraic far-field branch psi ~ eta^p.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sl

from .model_core import (CoordinateKind, DomainError, Params, Profile, ProfileKind, RadialField,
                         ResolutionError)

# eigenvalues within this distance of zero are not counted as unstable
UNSTABLE_TOL = 1e-6


class ProfileClass(str, enum.Enum):
    AROUND_STAR = "around_star"
    AROUND_ONE = "around_one"
    AROUND_NUMERIC = "around_numeric"


@dataclass(frozen=True)
class Discretization:
    eta_max: float = 30.0
    n_cheb: int = 361
    # sinh stretching of the collocation nodes toward the origin (0 = plain Chebyshev)
    stretch: float = 5.0
    boundary: str = "robin"
    # repeat with 1.5x domain and nodes and compare the leading eigenvalue
    check: bool = True

    def __post_init__(self):
        if self.n_cheb % 2 == 0 or self.n_cheb < 21:
            raise ValueError("n_cheb must be odd and at least 21")
        if self.eta_max <= 0 or self.stretch < 0:
            raise ValueError("eta_max must be positive and stretch nonnegative")
        if self.boundary != "robin":
            raise ValueError("only the robin closure is implemented")

    def scaled(self, factor: float) -> "Discretization":
        n = int(round(self.n_cheb * factor))
        n += 1 - n % 2
        return Discretization(self.eta_max * factor, n, self.stretch, self.boundary, False)


@dataclass
class PolyEigenfunction:
    """psi = sum_i A_i eta^(2i) with exact rational coefficients."""
    degree: int
    coefficients: list
    lam: Fraction
    d: int

    def __call__(self, eta):
        eta = np.asarray(eta, dtype=float)
        c = [float(a) for a in self.coefficients]
        return np.polynomial.polynomial.polyval(eta * eta, c)

    def recurrence_ok(self) -> bool:
        d, lam = self.d, self.lam
        A = self.coefficients
        return all(A[i] * (2 * i * (2 * i - 1) + (d + 1) * 2 * i)
                   == -A[i - 1] * (1 - lam - Fraction(2 * (i - 1) * (d - 2), 2 * d))
                   for i in range(1, len(A)))

    def residual(self, eta) -> np.ndarray:
        """psi'' + ((d+1)/eta - (d-2) eta/(2d)) psi' + (1 - lam) psi, evaluated in floats."""
        eta = np.asarray(eta, dtype=float)
        d = self.d
        c = np.zeros(2 * len(self.coefficients) - 1)
        c[::2] = [float(a) for a in self.coefficients]
        P = np.polynomial.Polynomial(c)
        p1, p2 = P.deriv(1), P.deriv(2)
        # (d+1) psi'/eta is a polynomial since psi is even
        q = np.polynomial.Polynomial(p1.coef[1:]) if len(p1.coef) > 1 else np.polynomial.Polynomial([0.0])
        return (p2(eta) + (d + 1) * q(eta) - (d - 2) / (2 * d) * eta * p1(eta)
                + (1 - float(self.lam)) * P(eta))


@dataclass
class Spectrum:
    profile_kind: ProfileClass
    eigenvalues: np.ndarray
    eigenfunctions: list
    discretization: Discretization | None = None
    concentration: np.ndarray | None = None
    refined_leading: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def unstable_count(self) -> int:
        return int(np.sum(np.asarray(self.eigenvalues) > UNSTABLE_TOL))


def eigen_star(n: int, params: Params):
    """Exact eigenpair n of the linearization about the constant profile."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    d = params.d
    lam = Fraction(d - n * (d - 2), d)
    A = [Fraction(1)]
    for i in range(1, n + 1):
        A.append(-A[-1] * (1 - lam - Fraction(2 * (i - 1) * (d - 2), 2 * d))
                 / (2 * i * (2 * i - 1) + (d + 1) * 2 * i))
    return lam, PolyEigenfunction(2 * n, A, lam, d)


def star_spectrum(n_modes: int, params: Params) -> Spectrum:
    pairs = [eigen_star(n, params) for n in range(n_modes)]
    return Spectrum(ProfileClass.AROUND_STAR, np.array([float(l) for l, _ in pairs]),
                    [e for _, e in pairs])


def _cheb(N):
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.r_[2.0, np.ones(N - 1), 2.0] * (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(1))
    return D, x


def _far_value(phi: Profile) -> float:
    if phi.kind is ProfileKind.CONSTANT_STAR:
        return float(phi(np.array([1.0]))[0])
    if phi.kind is ProfileKind.CONSTANT_ZERO:
        return 0.0
    # decaying profiles (explicit or numeric) vanish at infinity
    return 0.0


def _kind_of(phi: Profile) -> ProfileClass:
    if phi.kind is ProfileKind.CONSTANT_STAR:
        return ProfileClass.AROUND_STAR
    if phi.kind is ProfileKind.EXPLICIT_ONE:
        return ProfileClass.AROUND_ONE
    return ProfileClass.AROUND_NUMERIC


def _solve(phi: Profile, params: Params, grid: Discretization, n_modes: int):
    d = params.d
    L, N, a = grid.eta_max, grid.n_cheb, grid.stretch
    if phi.kind is ProfileKind.NUMERIC and phi.domain[1] < L:
        raise DomainError(f"numeric profile ends at {phi.domain[1]:.4g} < eta_max = {L}")
    D, x = _cheb(N)
    if a > 0:
        eta = L * np.sinh(a * x) / np.sinh(a)
        jac = L * a * np.cosh(a * x) / np.sinh(a)
    else:
        eta, jac = L * x, np.full_like(x, L)
    D1 = D / jac[:, None]
    D2 = D1 @ D1
    h = (N + 1) // 2
    e = eta[:h]
    # even extension: psi(-eta) = psi(eta) folds the mirrored columns back
    A1 = D1[:h, :h] + D1[:h, ::-1][:, :h]
    A2 = D2[:h, :h] + D2[:h, ::-1][:, :h]
    p, dp = phi(e), phi.derivative(e)
    A = A2 + ((d + 1) / e + (p / d - 0.5) * e)[:, None] * A1 + np.diag(e * dp / d + 2 * p - 1)
    B = np.eye(h)
    # Robin row at eta_max: psi'/psi = p_exp/eta with p_exp = (p0 + p1 lam)
    pinf = _far_value(phi)
    den = pinf / d - 0.5
    p0, p1 = -(2 * pinf - 1) / den, 1 / den
    A[0] = A1[0]
    A[0, 0] -= p0 / L
    B[0] = 0.0
    B[0, 0] = p1 / L
    w, V = sl.eig(A, B)
    keep = np.isfinite(w) & (np.abs(w.imag) <= 1e-8 * (1 + np.abs(w.real)))
    w, V = w.real[keep], V[:, keep].real
    order = np.argsort(-w)
    w, V = w[order], V[:, order]
    conc = np.empty(len(w))
    for j in range(len(w)):
        g = np.abs(V[:, j]) * np.exp(-e ** 2 / 8)
        conc[j] = g[e < L / 2].max() / g.max()
    ok = conc >= 0.5
    w, V, conc = w[ok][:n_modes], V[:, ok][:, :n_modes], conc[ok][:n_modes]
    grid_e = e[::-1]
    funcs = []
    for j in range(len(w)):
        v = V[::-1, j]
        v = v / v[np.argmax(np.abs(v))]
        funcs.append(RadialField(grid_e, v, CoordinateKind.SELFSIM_ETA))
    return w, funcs, conc


def eigen_profile(phi: Profile, params: Params, grid: Discretization | None = None,
                  n_modes: int = 8) -> Spectrum:
    """Leading eigenvalues of the linearization about phi, sorted descending."""
    grid = grid or Discretization()
    w, funcs, conc = _solve(phi, params, grid, n_modes)
    if len(w) == 0:
        raise ResolutionError("no admissible modes were found")
    sp = Spectrum(_kind_of(phi), w, funcs, grid, conc)
    if grid.check:
        w2, _, _ = _solve(phi, params, grid.scaled(1.5), 1)
        sp.refined_leading = float(w2[0])
        if abs(w2[0] - w[0]) > 0.01 * max(abs(w[0]), 1e-12):
            raise ResolutionError(f"leading eigenvalue moved from {w[0]:.6g} to {w2[0]:.6g} "
                                  f"when eta_max grew to {1.5 * grid.eta_max:.4g}")
    return sp


def origin_slope(f: RadialField) -> float:
    """psi'(0) from a quartic fit in eta to the six samples nearest the origin.

    The fit does not impose evenness, so the result measures it.
    """
    x, y = f.grid[:6], f.values[:6]
    c = np.polyfit(x, y, 4)
    return float(np.polyval(np.polyder(c), 0.0))


def mode_count_vs_intersections(phi_k: Profile, k: int, params: Params,
                                grid: Discretization | None = None) -> bool:
    """True when the linearization about phi_k has at least k unstable modes."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return eigen_profile(phi_k, params, grid).unstable_count >= k
