"""Bounded stationary profiles of the rescaled equation, located by shooting.

Two forms of the stationary ODE are integrated:

    phi'' + (d+1)/eta phi' + (eta/d) phi phi' - (eta/2) phi' + phi^2 - phi = 0,
    G'' + ((d-3)/eta + G/(d eta) - eta/2) G' + 2(d-2) G/eta^2 (G/(2d) - 1) = 0,

with G = eta^2 phi.  A forward shot from phi(0) = a0 generically ends by
crossing zero.  Decaying solutions (eta^2 phi -> C) form a codimension-one
set, so they are certified by matching the forward shot at an interior point
to the decaying manifold, which is integrated inward from far away where the
two-term expansion phi = C/eta^2 + D/eta^4 is accurate.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .model_core import DomainError, Params, Profile, RadialField, CoordinateKind, stationary_residual
from .selfsim_solver import count_intersections

log_ = logging.getLogger(__name__)

ETA0 = 1e-4
RTOL = 1e-10
ATOL = 1e-12
ETA_MATCH = 6.0
ETA_FAR = 60.0
MATCH_TOL = 1e-6
BLOWUP_CAP = 1e8


class Classification(str, enum.Enum):
    CONSTANT_ONE = "constant_one"
    CONSTANT_ZERO = "constant_zero"
    CROSSES_ZERO = "crosses_zero"
    DECAYS = "decays"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class ShootingOutcome:
    classification: Classification
    trajectory: RadialField
    a0: float
    eta_star: float | None = None
    asymptotic_C: float | None = None
    # signed distance to the decaying manifold at the matching point
    mismatch: float | None = None
    # largest value of eta^2 phi before the zero crossing
    G_max: float | None = None
    slope: RadialField | None = None

    @property
    def overshoots(self) -> bool:
        """True when eta^2 phi exceeds 4d before the outcome is decided."""
        return self.G_max is not None and self.G_max > 4 * self.trajectory_d

    trajectory_d: int = 3


@dataclass
class FamilyMember:
    k: int
    a0: float
    profile: Profile
    asymptotic_C: float
    crossings: list
    a0_bracket: tuple


@dataclass
class ProfileFamily:
    d: int
    members: list = field(default_factory=list)
    partial: bool = False
    bracket_hi: float = 0.0
    roots: list = field(default_factory=list)
    below_one_roots: list = field(default_factory=list)

    def table(self):
        """Rows (k, a0, asymptotic_C, crossing locations) for CSV output."""
        return [(m.k, m.a0, m.asymptotic_C, list(m.crossings)) for m in self.members]


# ---------------------------------------------------------------------------
# right-hand sides and series starts

def phi_rhs(d: int):
    def f(x, y):
        p, q = y
        return [q, -((d + 1) / x * q + x * p * q / d - x * q / 2 + p * p - p)]
    return f


def g_rhs(d: int):
    def f(x, y):
        G, Gp = y
        return [Gp, -((d - 3) / x + G / (d * x) - x / 2) * Gp
                - 2 * (d - 2) * G / x ** 2 * (G / (2 * d) - 1)]
    return f


def phi_jac(d: int):
    def J(x, y):
        p, q = y
        return [[0.0, 1.0], [-(x * q / d + 2 * p - 1), -((d + 1) / x + x * p / d - x / 2)]]
    return J


def g_jac(d: int):
    def J(x, y):
        G, Gp = y
        return [[0.0, 1.0], [-Gp / (d * x) - 2 * (d - 2) / x ** 2 * (G / d - 1),
                             -((d - 3) / x + G / (d * x) - x / 2)]]
    return J


def series_coefficient(a0: float, d: int) -> float:
    """c in phi = a0 + c eta^2 + O(eta^4)."""
    return a0 * (1 - a0) / (2 * (d + 2))


def series_balance(a0: float, d: int) -> float:
    """O(1) residual of the truncated series substituted into the phi equation."""
    c = series_coefficient(a0, d)
    return 2 * c + (d + 1) * 2 * c + a0 ** 2 - a0


def tail_coefficient(C: float, d: int) -> float:
    """D in phi = C/eta^2 + D/eta^4 + ... for a decaying solution."""
    return (d - 2) * C * (2 - C / d)


# ---------------------------------------------------------------------------
# shooting

def _check(a0, eta_max):
    if not a0 > 0:
        raise DomainError("a0 must be positive")
    if eta_max < 20:
        raise DomainError("eta_max must be at least 20")


def tail_solution(C: float, d: int, eta_m: float, eta_far: float, form: str = "phi"):
    """Decaying solution with eta^2 phi -> C, integrated inward to eta_m."""
    D = tail_coefficient(C, d)
    x = eta_far
    p = C / x ** 2 + D / x ** 4
    q = -2 * C / x ** 3 - 4 * D / x ** 5
    if form == "phi":
        y0, f, J = [p, q], phi_rhs(d), phi_jac(d)
    else:
        y0, f, J = [x * x * p, 2 * x * p + x * x * q], g_rhs(d), g_jac(d)
    # inward the growing mode becomes strongly damped, so an implicit method is used
    return solve_ivp(f, (eta_far, eta_m), y0, method="LSODA", jac=J, rtol=1e-12, atol=1e-15,
                     dense_output=True)


def _tail_match(value: float, d: int, eta_m: float, eta_far: float, form: str):
    """C whose decaying solution takes `value` at eta_m, or None."""
    def g(C):
        s = tail_solution(C, d, eta_m, eta_far, form)
        if s.status != 0:
            return np.nan
        return s.y[0, -1] - value
    Cs = np.linspace(0.05, 6.0 * d, 25)
    vals = np.array([g(C) for C in Cs])
    ok = np.isfinite(vals)
    for i in range(len(Cs) - 1):
        if ok[i] and ok[i + 1] and np.sign(vals[i]) != np.sign(vals[i + 1]):
            return brentq(g, Cs[i], Cs[i + 1], xtol=1e-14, rtol=1e-14)
    return None


def _shoot(a0: float, params: Params, eta_max: float, form: str,
           eta_match: float = ETA_MATCH, eta_far: float = ETA_FAR,
           match_tol: float = MATCH_TOL) -> ShootingOutcome:
    _check(a0, eta_max)
    d = params.d
    c = series_coefficient(a0, d)
    x0 = ETA0
    if form == "phi":
        y0 = [a0 + c * x0 ** 2, 2 * c * x0]
    else:
        y0 = [a0 * x0 ** 2 + c * x0 ** 4, 2 * a0 * x0 + 4 * c * x0 ** 3]
    return classify_from(x0, y0, params, eta_max, form=form, a0=a0, prefix=([0.0], [a0], [0.0]),
                         eta_match=eta_match, eta_far=eta_far, match_tol=match_tol)


def classify_from(x0: float, y0, params: Params, eta_max: float, form: str = "phi",
                  a0: float | None = None, prefix=([], [], []), eta_match: float = ETA_MATCH,
                  eta_far: float = ETA_FAR, match_tol: float = MATCH_TOL) -> ShootingOutcome:
    """Forward solution from (x0, y0) classified as constant, zero crossing or decaying.

    y0 is (phi, phi') or (G, G') depending on form.  A decaying outcome is
    certified by matching at max(x0, eta_match) to the decaying manifold.
    """
    d = params.d
    if a0 is None:
        a0 = y0[0] if form == "phi" else y0[0] / x0 ** 2
    if form == "phi":
        f = phi_rhs(d)
        to_phi = lambda x, y: y[0]
        to_G = lambda x, y: x * x * y[0]
    else:
        f = g_rhs(d)
        to_phi = lambda x, y: y[0] / (x * x)
        to_G = lambda x, y: y[0]
    # G is O(eta^2) near the origin, so its absolute tolerance is scaled down
    atol = ATOL if form == "phi" else ATOL * min(1.0, x0 * x0)

    def zero(x, y):
        return y[0]
    zero.terminal = True
    zero.direction = -1

    def big(x, y):
        return abs(to_phi(x, y)) - BLOWUP_CAP
    big.terminal = True

    px, pp, pq = (list(map(float, z)) for z in prefix)

    def mk(cls, xs, ps, dps, **kw):
        xs = np.concatenate([px, xs])
        ps = np.concatenate([pp, ps])
        dps = np.concatenate([pq, dps])
        return ShootingOutcome(Classification(cls), RadialField(xs, ps, CoordinateKind.SELFSIM_ETA),
                               float(a0), slope=RadialField(xs, dps, CoordinateKind.SELFSIM_ETA),
                               trajectory_d=d, **kw)

    def phi_pair(sol_y, xs):
        if form == "phi":
            return sol_y[0], sol_y[1]
        G, Gp = sol_y
        return G / xs ** 2, Gp / xs ** 2 - 2 * G / xs ** 3

    p_start = to_phi(x0, y0)
    q_start = phi_pair(np.array(y0, dtype=float).reshape(2, 1), np.array([x0]))[1][0]
    for const, cls in ((1.0, "constant_one"), (0.0, "constant_zero")):
        # G-form starts carry roundoff from the eta^2 scaling
        if abs(p_start - const) <= 1e-14 and abs(q_start) <= 1e-10:
            # exact equilibrium; integrate anyway and verify it is reproduced
            s = solve_ivp(f, (x0, eta_max), y0, method="DOP853", rtol=RTOL, atol=atol)
            ph, dph = phi_pair(s.y, s.t)
            if np.max(np.abs(ph - const)) < 1e-6:
                return mk(cls, s.t, ph, dph, G_max=float(np.max(s.t ** 2 * ph)))

    eta_m = min(max(eta_match, x0), eta_max)
    mis = None
    if eta_m > x0:
        s1 = solve_ivp(f, (x0, eta_m), y0, method="DOP853", rtol=RTOL, atol=atol,
                       events=[zero], dense_output=True)
        status, y_m = s1.status, s1.y[:, -1]
    else:
        s1, status, y_m = None, 0, np.asarray(y0, dtype=float)
    if status == 0 and eta_m < eta_far and match_tol > 0:
        # candidate decaying solution: match at eta_m to the decaying manifold
        v = to_phi(eta_m, y_m)
        C = _tail_match(y_m[0], d, eta_m, eta_far, form) if v > 0 else None
        if C is not None:
            tl = tail_solution(C, d, eta_m, eta_far, form)
            scale = abs(y_m[1]) + abs(y_m[0]) / eta_m
            mis = (y_m[1] - tl.y[1, -1]) / scale
            if abs(mis) <= match_tol:
                parts_x, parts_p, parts_q = [], [], []
                if s1 is not None:
                    xa = np.geomspace(x0, eta_m, 400)
                    pa, qa = phi_pair(s1.sol(xa), xa)
                    parts_x.append(xa)
                    parts_p.append(pa)
                    parts_q.append(qa)
                xb = np.linspace(eta_m, max(eta_max, eta_m + 1.0), int(40 * (eta_max - eta_m)) + 2)
                if s1 is not None:
                    xb = xb[1:]
                yb = tl.sol(np.minimum(xb, eta_far))
                far = xb > eta_far
                if far.any():
                    # beyond eta_far the two-term expansion is used directly
                    D = tail_coefficient(C, d)
                    pf = C / xb[far] ** 2 + D / xb[far] ** 4
                    qf = -2 * C / xb[far] ** 3 - 4 * D / xb[far] ** 5
                    if form == "phi":
                        yb[:, far] = np.vstack([pf, qf])
                    else:
                        yb[:, far] = np.vstack([xb[far] ** 2 * pf,
                                                2 * xb[far] * pf + xb[far] ** 2 * qf])
                pb, qb = phi_pair(yb, xb)
                xs = np.concatenate(parts_x + [xb])
                ph = np.concatenate(parts_p + [pb])
                dph = np.concatenate(parts_q + [qb])
                Gall = xs ** 2 * ph
                tail_part = Gall[xs >= xs[0] + 0.8 * (xs[-1] - xs[0])]
                if np.ptp(tail_part) < 5e-3 * abs(tail_part.mean()) and np.all(ph > 0):
                    return mk("decays", xs, ph, dph, asymptotic_C=float(C), mismatch=float(mis),
                              G_max=float(Gall.max()))
                # matched, but eta^2 phi has not levelled off yet: the caller enlarges eta_max
                return mk("undecided", xs, ph, dph, asymptotic_C=float(C), mismatch=float(mis),
                          G_max=float(Gall.max()))
    # otherwise continue forward until the classification is decided
    if s1 is None:
        s2 = solve_ivp(f, (x0, eta_max), y0, method="DOP853", rtol=RTOL, atol=atol,
                       events=[zero, big])
        xs, ys = s2.t, s2.y
    elif status == 0:
        s2 = solve_ivp(f, (eta_m, eta_max), y_m, method="DOP853", rtol=RTOL, atol=atol,
                       events=[zero, big])
        xs = np.concatenate([s1.t, s2.t[1:]])
        ys = np.hstack([s1.y, s2.y[:, 1:]])
    else:
        s2 = s1
        xs, ys = s1.t, s1.y
    ph, dph = phi_pair(ys, xs)
    G_max = float(np.max(xs ** 2 * ph))
    crossed = s2.status == 1 and len(s2.t_events[0]) > 0
    if crossed:
        eta_star = float(s2.t_events[0][0])
        # follow the negative branch a little to confirm it stays negative
        s3 = solve_ivp(f, (eta_star, min(eta_max, eta_star + 2.0)), ys[:, -1], method="DOP853",
                       rtol=RTOL, atol=atol, events=[big])
        p3, q3 = phi_pair(s3.y[:, 1:], s3.t[1:])
        if np.any(p3 > 0):
            log_.warning("trajectory re-entered phi > 0 after its zero at %.4g", eta_star)
        return mk("crosses_zero", np.concatenate([xs, s3.t[1:]]), np.concatenate([ph, p3]),
                  np.concatenate([dph, q3]), eta_star=eta_star, G_max=G_max, mismatch=mis)
    return mk("undecided", xs, ph, dph, G_max=G_max, mismatch=mis)


def shoot_phi(a0: float, params: Params, eta_max: float = 20.0, **kw) -> ShootingOutcome:
    """Shoot the phi equation from phi(0) = a0 and classify the outcome."""
    return _shoot(a0, params, eta_max, "phi", **kw)


def shoot_G(a0: float, params: Params, eta_max: float = 20.0, **kw) -> ShootingOutcome:
    """Shoot the G = eta^2 phi equation from G ~ a0 eta^2; trajectory is reported as phi."""
    return _shoot(a0, params, eta_max, "G", **kw)


def integrate_G(eta0: float, G0: float, dG0: float, eta_max: float, params: Params):
    """Plain initial value problem for the G equation (used for the singular solution G = 2d)."""
    s = solve_ivp(g_rhs(params.d), (eta0, eta_max), [G0, dG0], method="DOP853",
                  rtol=RTOL, atol=ATOL, dense_output=True)
    return RadialField(s.t, s.y[0], CoordinateKind.SELFSIM_ETA)


def phi_residual(outcome: ShootingOutcome, params: Params) -> np.ndarray:
    """Pointwise residual of the phi equation along a shooting trajectory."""
    xs = outcome.trajectory.grid
    ph = outcome.trajectory.values
    dph = outcome.slope.values
    x = xs[xs > 0]
    p, q = ph[xs > 0], dph[xs > 0]
    d2 = np.array(phi_rhs(params.d)(x, (p, q))[1])
    return stationary_residual(p, q, d2, x, params.d)


# ---------------------------------------------------------------------------
# the profile family

def _side(a0, params, eta_max):
    """Branch of the forward shot: +1 if eta^2 phi overshoots 4d before crossing, else -1."""
    o = _shoot(a0, params, eta_max, "phi", match_tol=0.0)
    return (1 if o.overshoots else -1), o


def _bisect_root(lo, hi, s_lo, params, eta_max, tol):
    while hi - lo > max(tol, 4 * np.spacing(hi)):
        m = 0.5 * (lo + hi)
        if m in (lo, hi):
            break
        s, _ = _side(m, params, eta_max)
        if s == s_lo:
            lo = m
        else:
            hi = m
    return lo, hi


def member_profile(a0_lo: float, a0_hi: float, params: Params, eta_max: float = 60.0):
    """Profile from the matched construction at the midpoint of a root bracket."""
    a0 = 0.5 * (a0_lo + a0_hi)
    o = shoot_phi(a0, params, eta_max=eta_max)
    if o.classification is not Classification.DECAYS:
        # the root bracket is narrower than the integration error; relax the match test
        o = shoot_phi(a0, params, eta_max=eta_max, match_tol=1e-3)
    return o


def find_family(k_max: int, params: Params, bracket_hi: float | None = None,
                points_per_decade: int = 40, tol: float = 1e-10, eta_max: float = 40.0,
                probe_below_one: bool = False) -> ProfileFamily:
    """Locate phi_1, ..., phi_{k_max} as switches of the forward-shot branch.

    The scan is logarithmic in a0 over (1, bracket_hi].  Each switch is
    bisected to tol in a0, the member profile is rebuilt by matching and its
    crossings with the singular solution 2d/eta^2 are counted.
    """
    params.require_family_range()
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    d = params.d
    if bracket_hi is None:
        bracket_hi = 40.0 * d
    n = max(8, int(points_per_decade * np.log10(bracket_hi)) + 1)
    grid = np.geomspace(1.0 + 1e-6, bracket_hi, n)
    fam = ProfileFamily(d=d, bracket_hi=bracket_hi)
    sides = []
    for a in grid:
        s, _ = _side(a, params, eta_max)
        sides.append(s)
        if len(sides) >= 2 and sides[-1] != sides[-2]:
            lo, hi = _bisect_root(grid[len(sides) - 2], a, sides[-2], params, eta_max, tol)
            fam.roots.append((lo, hi))
            if len(fam.roots) >= k_max:
                break
    phiS = Profile.singular(params)
    for k, (lo, hi) in enumerate(fam.roots, start=1):
        o = member_profile(lo, hi, params)
        prof = Profile.numeric(o.trajectory.grid, o.trajectory.values, params, slope=o.slope.values)
        xs = o.trajectory.grid
        res = count_intersections(prof, phiS, 1e-3, float(xs[-1]), n_samples=20000)
        C = o.asymptotic_C if o.asymptotic_C is not None else float("nan")
        fam.members.append(FamilyMember(k, 0.5 * (lo + hi), prof, C, res.locations, (lo, hi)))
    if len(fam.members) < k_max:
        fam.partial = True
        log_.warning("found %d of %d family members below a0 = %g", len(fam.members), k_max,
                     bracket_hi)
    if probe_below_one:
        g2 = np.linspace(1e-3, 1 - 1e-6, 200)
        prev = None
        for a in g2:
            s, _ = _side(a, params, eta_max)
            if prev is not None and s != prev[1]:
                fam.below_one_roots.append(_bisect_root(prev[0], a, prev[1], params, eta_max, tol))
            prev = (a, s)
    return fam


def no_subsingular_check(params: Params, samples: int = 200, eta_max: float = 20.0) -> bool:
    """No bounded positive profile stays strictly below 2d/eta^2.

    Every shot with a0 in (0, 2d) is examined; a trajectory that decays while
    remaining under the singular solution would be a counterexample.  The
    property is also checked on the special profiles phi = 1 and, when 2d/(d-2)
    lies in range, the explicit profile.
    """
    if samples < 100:
        raise ValueError("samples must be at least 100")
    d = params.d
    a0s = list(np.linspace(0.0, 2.0 * d, samples + 2)[1:-1]) + [1.0]
    ok = True
    for a0 in a0s:
        o = shoot_phi(float(a0), params, eta_max=eta_max)
        if o.classification not in (Classification.DECAYS, Classification.CONSTANT_ONE):
            continue
        xs = o.trajectory.grid
        m = xs > 0
        below = np.all(xs[m] ** 2 * o.trajectory.values[m] < 2 * d)
        if below:
            ok = False
            log_.warning("profile from a0 = %g stays below the singular solution", a0)
    return ok


def first_singular_crossing(profile: Profile, eta_hi: float = 20.0) -> float | None:
    """Smallest eta > 0 where the profile meets 2d/eta^2."""
    res = count_intersections(profile, Profile.singular(profile.params), 1e-3, eta_hi)
    return res.locations[0] if res.locations else None
