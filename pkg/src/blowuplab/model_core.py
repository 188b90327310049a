"""Parameters, closed-form profiles, coordinate transforms and initial-data checks."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import gamma, log, pi, sqrt, exp

import numpy as np

# tolerance used for "nonnegative" checks on discrete data
NONNEG_TOL = 1e-10


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ResolutionError(ValueError):
    """Discretization too coarse for the requested operation."""


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d."""
    if d <= 0:
        raise DomainError(f"dimension must be positive, got {d}")
    return pi ** (d / 2) / gamma(d / 2 + 1)


@dataclass(frozen=True)
class Params:
    d: int
    theta: float
    chi_d: float
    theta_one: float
    m_one: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise DomainError(f"d must be an integer >= 3, got {self.d}")
        if not self.theta > 0:
            raise DomainError(f"theta must be positive, got {self.theta}")
        if abs(self.chi_d - unit_ball_volume(self.d)) > 1e-12 * self.chi_d:
            raise DomainError("chi_d inconsistent with d")
        if self.theta_one != 1.0 / (4 * self.d * self.chi_d):
            raise DomainError("theta_one inconsistent with d")
        if self.m_one != 2.0 * self.d / (self.d - 2):
            raise DomainError("m_one inconsistent with d")

    @classmethod
    def make(cls, d: int = 3, theta: float | None = None, theta_ratio: float = 0.5) -> "Params":
        """Build parameters; theta defaults to theta_ratio * theta_one."""
        if int(d) != d or d < 3:
            raise DomainError(f"d must be an integer >= 3, got {d}")
        chi = unit_ball_volume(d)
        th1 = 1.0 / (4 * d * chi)
        if theta is None:
            theta = theta_ratio * th1
        return cls(d=d, theta=float(theta), chi_d=chi, theta_one=th1, m_one=2.0 * d / (d - 2))

    @property
    def kappa(self) -> float:
        """Diffusion coefficient chi_d * theta of the b-equation."""
        return self.chi_d * self.theta

    def require_family_range(self):
        if not 3 <= self.d <= 9:
            raise DomainError(f"profile family routines need 3 <= d <= 9, got d={self.d}")

    def as_dict(self) -> dict:
        return {"d": self.d, "theta": self.theta, "chi_d": self.chi_d,
                "theta_one": self.theta_one, "m_one": self.m_one}


class CoordinateKind(str, enum.Enum):
    PHYSICAL_R = "physical_r"
    SELFSIM_ETA = "selfsim_eta"


@dataclass(frozen=True)
class RadialField:
    grid: np.ndarray
    values: np.ndarray
    coordinate_kind: CoordinateKind = CoordinateKind.PHYSICAL_R

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if g.size >= 2 and not np.all(np.diff(g) > 0):
            raise ValueError("grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        g.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "coordinate_kind", CoordinateKind(self.coordinate_kind))

    def __len__(self):
        return self.grid.size

    def at(self, x):
        return np.interp(x, self.grid, self.values)


class ProfileKind(str, enum.Enum):
    SINGULAR_S = "singular_S"
    EXPLICIT_ONE = "explicit_one"
    CONSTANT_STAR = "constant_star"
    CONSTANT_ZERO = "constant_zero"
    NUMERIC = "numeric"


@dataclass(frozen=True)
class Profile:
    kind: ProfileKind
    params: Params
    table: RadialField | None = None
    # optional derivative table for numeric profiles
    slope: RadialField | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if self.kind is ProfileKind.NUMERIC and self.table is None:
            raise ValueError("numeric profile needs a table")

    @classmethod
    def singular(cls, params):
        return cls(ProfileKind.SINGULAR_S, params)

    @classmethod
    def one(cls, params):
        return cls(ProfileKind.EXPLICIT_ONE, params)

    @classmethod
    def star(cls, params):
        return cls(ProfileKind.CONSTANT_STAR, params)

    @classmethod
    def zero(cls, params):
        return cls(ProfileKind.CONSTANT_ZERO, params)

    @classmethod
    def numeric(cls, grid, values, params, slope=None):
        tab = RadialField(grid, values, CoordinateKind.SELFSIM_ETA)
        sl = None if slope is None else RadialField(grid, slope, CoordinateKind.SELFSIM_ETA)
        return cls(ProfileKind.NUMERIC, params, tab, sl)

    @property
    def domain(self):
        if self.kind is ProfileKind.NUMERIC:
            return float(self.table.grid[0]), float(self.table.grid[-1])
        return (0.0, np.inf)

    def __call__(self, eta):
        return eval_profile_array(self, eta)

    def derivative(self, eta):
        return eval_profile_slope(self, eta)


def _numeric_interp(p: Profile):
    # cached monotone-free cubic interpolant of a numeric table
    from scipy.interpolate import CubicSpline
    cache = p.__dict__.get("_spline")
    if cache is None:
        cache = CubicSpline(p.table.grid, p.table.values)
        object.__setattr__(p, "_spline", cache)
    return cache


def eval_profile_array(p: Profile, eta):
    eta = np.asarray(eta, dtype=float)
    d = p.params.d
    if np.any(eta < 0):
        raise DomainError("eta must be nonnegative")
    if p.kind is ProfileKind.SINGULAR_S:
        if np.any(eta == 0):
            raise DomainError("singular profile is undefined at eta = 0")
        return 2.0 * d / eta ** 2
    if p.kind is ProfileKind.EXPLICIT_ONE:
        return 2.0 * d / (d - 2 + eta ** 2 / 2)
    if p.kind is ProfileKind.CONSTANT_STAR:
        return np.ones_like(eta)
    if p.kind is ProfileKind.CONSTANT_ZERO:
        return np.zeros_like(eta)
    lo, hi = p.domain
    if np.any(eta < lo - 1e-12) or np.any(eta > hi + 1e-12):
        raise DomainError("eta outside the tabulated range of the numeric profile")
    return _numeric_interp(p)(eta)


def eval_profile_slope(p: Profile, eta):
    eta = np.asarray(eta, dtype=float)
    d = p.params.d
    if p.kind is ProfileKind.SINGULAR_S:
        if np.any(eta == 0):
            raise DomainError("singular profile is undefined at eta = 0")
        return -4.0 * d / eta ** 3
    if p.kind is ProfileKind.EXPLICIT_ONE:
        return -2.0 * d * eta / (d - 2 + eta ** 2 / 2) ** 2
    if p.kind in (ProfileKind.CONSTANT_STAR, ProfileKind.CONSTANT_ZERO):
        return np.zeros_like(eta)
    if p.slope is not None:
        from scipy.interpolate import CubicSpline
        return CubicSpline(p.slope.grid, p.slope.values)(eta)
    return _numeric_interp(p)(eta, 1)


def eval_profile(p: Profile, eta: float) -> float:
    """Value of a profile at a single point."""
    return float(eval_profile_array(p, float(eta)))


def _as_real(x):
    x = np.asarray(x)
    return x if x.dtype == np.longdouble else np.asarray(x, dtype=float)


def stationary_residual(phi, dphi, d2phi, eta, d):
    """Residual of phi'' + (d+1)/eta phi' + (eta/d) phi phi' - (eta/2) phi' + phi^2 - phi.

    At eta = 0 the term (d+1)/eta * phi' is replaced by its limit (d+1) phi''(0).
    Extended-precision inputs are evaluated in their own precision.
    """
    eta = _as_real(eta)
    phi, dphi, d2phi = (_as_real(a) for a in (phi, dphi, d2phi))
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(eta > 0, (d + 1) * dphi / np.where(eta > 0, eta, 1.0), (d + 1) * d2phi)
    return d2phi + radial + eta * phi * dphi / d - eta * dphi / 2 + phi ** 2 - phi


def closed_form_derivatives(kind: ProfileKind, eta, d):
    """Exact (phi, phi', phi'') for the explicit closed-form profiles."""
    eta = _as_real(eta)
    kind = ProfileKind(kind)
    if kind is ProfileKind.EXPLICIT_ONE:
        D = d - 2 + eta ** 2 / 2
        phi = 2.0 * d / D
        dphi = -2.0 * d * eta / D ** 2
        d2phi = -2.0 * d / D ** 2 + 4.0 * d * eta ** 2 / D ** 3
        return phi, dphi, d2phi
    if kind is ProfileKind.SINGULAR_S:
        return 2.0 * d / eta ** 2, -4.0 * d / eta ** 3, 12.0 * d / eta ** 4
    if kind is ProfileKind.CONSTANT_STAR:
        return np.ones_like(eta), np.zeros_like(eta), np.zeros_like(eta)
    if kind is ProfileKind.CONSTANT_ZERO:
        z = np.zeros_like(eta)
        return z, z, z
    raise ValueError("no closed form for numeric profiles")


# ---------------------------------------------------------------------------
# finite-difference stencils on monotone grids

def _three_point_weights(r):
    """Second-order first/second derivative weights on a nonuniform grid.

    Interior rows are centred; end rows use one-sided three-point formulas.
    Returns (cols, w1, w2) with cols[i] the three column indices of row i.
    """
    r = np.asarray(r, dtype=float)
    n = r.size
    if n < 3:
        raise ResolutionError("need at least 3 grid points")
    cols = np.empty((n, 3), dtype=int)
    w1 = np.empty((n, 3))
    w2 = np.empty((n, 3))
    for i in range(n):
        j0 = min(max(i - 1, 0), n - 3)
        js = np.arange(j0, j0 + 3)
        x = r[js] - r[i]
        # Lagrange derivative weights for three nodes
        a, b, c = x
        w1[i] = [-(b + c) / ((a - b) * (a - c)),
                 -(a + c) / ((b - a) * (b - c)),
                 -(a + b) / ((c - a) * (c - b))]
        w2[i] = [2 / ((a - b) * (a - c)), 2 / ((b - a) * (b - c)), 2 / ((c - a) * (c - b))]
        cols[i] = js
    return cols, w1, w2


def derivative(field: RadialField, order: int = 1, symmetric_origin: bool = True) -> np.ndarray:
    """First or second derivative of a sampled field with second-order stencils.

    With symmetric_origin and grid[0] == 0 the field is treated as even, so
    the first derivative at 0 is exactly zero and the second derivative uses
    the mirrored node.
    """
    r = field.grid
    y = field.values
    cols, w1, w2 = _three_point_weights(r)
    w = w1 if order == 1 else w2
    out = (w * y[cols]).sum(axis=1)
    if symmetric_origin and r[0] == 0.0:
        h = r[1]
        if order == 1:
            out[0] = 0.0
        else:
            out[0] = 2.0 * (y[1] - y[0]) / h ** 2
    return out


def n_from_b(b: RadialField, params: Params) -> RadialField:
    """Density n = (r b_r / d + b) / chi_d from the average density b."""
    if len(b) < 3:
        raise ResolutionError("need at least 3 grid points")
    br = derivative(b, 1, symmetric_origin=True)
    n = (b.grid * br / params.d + b.values) / params.chi_d
    return RadialField(b.grid, n, b.coordinate_kind)


def b_from_n(n: RadialField, params: Params) -> RadialField:
    """Average density b(r) = d chi_d r^{-d} int_0^r n(y) y^{d-1} dy.

    n is taken piecewise linear between nodes and its moments against
    y^{d-1} are integrated exactly, so constant and linear densities are
    reproduced to roundoff and smooth ones to second order.
    """
    if np.any(n.values < -NONNEG_TOL):
        raise DomainError("density must be nonnegative")
    d = params.d
    r = n.grid
    y = n.values
    a, b = r[:-1], r[1:]
    slope = np.diff(y) / np.diff(r)
    # int_a^b (y_a + s (x - a)) x^{d-1} dx
    pd, pd1 = (b ** d - a ** d) / d, (b ** (d + 1) - a ** (d + 1)) / (d + 1)
    pieces = (y[:-1] - slope * a) * pd + slope * pd1
    mass = np.concatenate([[0.0], np.cumsum(pieces)])
    if r[0] > 0:
        # mass inside the first node, assuming n constant there
        mass = mass + y[0] * r[0] ** d / d
    with np.errstate(divide="ignore", invalid="ignore"):
        bv = np.where(r > 0, d * params.chi_d * mass / np.where(r > 0, r, 1.0) ** d, params.chi_d * y[0])
    return RadialField(r, bv, n.coordinate_kind)


# ---------------------------------------------------------------------------
# physical <-> self-similar variables

def to_selfsim(t: float, r: float, T: float, params: Params):
    """Map (t, r) to (tau, eta)."""
    if not t < T:
        raise DomainError(f"t = {t} must be below the blow-up time T = {T}")
    if t < 0 or r < 0:
        raise DomainError("t and r must be nonnegative")
    tau = log(T / (T - t))
    eta = r / sqrt(params.kappa * (T - t))
    return tau, eta


def from_selfsim(tau: float, eta: float, T: float, params: Params):
    """Inverse of to_selfsim."""
    rem = T * exp(-tau)
    return T - rem, eta * sqrt(params.kappa * rem)


def ell_of_tau(tau, T: float, params: Params):
    """Image of r = 1 in self-similar coordinates."""
    return np.exp(np.asarray(tau) / 2) / sqrt(params.kappa * T)


def selfsim_field(b: RadialField, t: float, T: float, params: Params) -> RadialField:
    """Pointwise map of a physical profile b(., t) to B(., tau) = (T - t) b."""
    if not t < T:
        raise DomainError("snapshot time must be below T")
    scale = sqrt(params.kappa * (T - t))
    return RadialField(b.grid / scale, (T - t) * b.values, CoordinateKind.SELFSIM_ETA)


# ---------------------------------------------------------------------------
# initial data

@dataclass(frozen=True)
class InitialDataReport:
    satisfies_inic: bool
    satisfies_inicon0: bool
    satisfies_btpositive: bool
    worst_violation: float
    worst_location: float
    worst_check: str
    details: dict = field(default_factory=dict)

    @property
    def all_ok(self) -> bool:
        return self.satisfies_inic and self.satisfies_inicon0 and self.satisfies_btpositive


def b_operator(b: RadialField, params: Params) -> np.ndarray:
    """kappa (b_rr + (d+1)/r b_r) + (r/d) b b_r + b^2 with the r = 0 limit."""
    d = params.d
    r = b.grid
    br = derivative(b, 1)
    brr = derivative(b, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        radial = np.where(r > 0, (d + 1) * br / np.where(r > 0, r, 1.0), (d + 1) * brr)
    return params.kappa * (brr + radial) + r * b.values * br / d + b.values ** 2


def validate_initial_data(b0: RadialField, params: Params) -> InitialDataReport:
    """Check smoothness/nonnegativity, monotonicity and b_t >= 0 at t = 0."""
    r = b0.grid
    b = b0.values
    scale = max(1.0, float(np.max(np.abs(b))))
    tol = NONNEG_TOL * scale
    n = n_from_b(b0, params).values
    br = derivative(b0, 1)
    op = b_operator(b0, params)
    # smoothness proxy: second differences bounded relative to the grid
    brr = derivative(b0, 2)
    smooth = bool(np.all(np.isfinite(brr)))
    checks = {
        "inic": (n * params.chi_d, smooth),
        "inicon0": (-br, True),
        "btpositive": (op, True),
    }
    worst = np.inf
    where = 0.0
    which = ""
    flags = {}
    for name, (vals, extra) in checks.items():
        i = int(np.argmin(vals))
        flags[name] = bool(vals[i] >= -tol) and extra
        if vals[i] < worst:
            worst, where, which = float(vals[i]), float(r[i]), name
    return InitialDataReport(flags["inic"], flags["inicon0"], flags["btpositive"],
                             worst, where, which,
                             {"boundary_value": float(b[-1]), "tolerance": tol})


def rational_b0(r, K1, K2, K3, d):
    """Initial data K1 + K2 / (r^d + K3)."""
    r = np.asarray(r, dtype=float)
    return K1 + K2 / (r ** d + K3)
