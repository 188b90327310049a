"""Rescaled (self-similar) solver, omega-limit extraction and zero-number diagnostics.

The rescaled equation

    B_tau = B_etaeta + (d+1)/eta B_eta + (eta/d) B B_eta + B^2 - B - (eta/2) B_eta

is integrated on a uniform grid.  While the physical domain edge
ell(tau) = ell0 exp(tau/2) is below eta_far, the grid stretches with the
domain (eta = ell(tau) x), which removes the -(eta/2) B_eta term and keeps
B(ell, tau) = T exp(-tau) exact.  Once ell reaches eta_far the grid is frozen
on [0, eta_far] and the last node obeys the reduced first-order equation
(an outflow row); the tail there is O(exp(-tau)) and carries no information
into the window of interest.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from math import exp, log, sqrt

import numpy as np
from ._numerics import EvenStencil, error_norm, next_step, ros2_step, scaled_banded
from .model_core import (CoordinateKind, Params, Profile, ProfileKind, RadialField,
                         DomainError, eval_profile_array)

log_ = logging.getLogger(__name__)

TOUCH_TOL = 1e-9


class RescaledDivergence(RuntimeError):
    def __init__(self, msg, last_valid=None):
        super().__init__(msg)
        self.last_valid = last_valid


@dataclass(frozen=True)
class RescaledConfig:
    grid_size: int = 601
    eta_far: float = 60.0
    rtol: float = 1e-7
    dtau_init: float = 1e-3
    dtau_max: float = 0.25
    bound_M: float | None = None
    escape_factor: float = 1.1
    escape_drop: float = 0.1
    down_level: float = 0.5
    window_C: float = 5.0
    checkpoint_first: float = 0.25
    checkpoints_per_octave: int = 4
    calibrate_T: bool = True
    T_rel_bracket: float = 2e-4
    restart_lag: float = 8.0
    T_escape_target: float = 12.0
    escape_horizon: float = 6.0
    kick_amplitude: float = 1e-3
    max_bisections: int = 64
    max_segments: int = 10
    max_steps: int = 200_000

    def __post_init__(self):
        if self.grid_size < 64:
            raise ValueError("grid_size must be at least 64")
        if self.eta_far <= self.window_C:
            raise ValueError("eta_far must exceed the comparison window")


@dataclass(frozen=True)
class RescaledState:
    tau: float
    B: RadialField
    ell: float
    T: float

    @property
    def B0(self) -> float:
        return float(self.B.values[0])


@dataclass
class OmegaReport:
    profile: Profile
    sup_distance_history: list
    s1_member: bool
    intersections_with_singular: int
    T_used: float = float("nan")
    events: list = field(default_factory=list)
    boundary_trace: np.ndarray | None = None
    segments: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# discretization

class _Grid:
    def __init__(self, n):
        self.x = np.linspace(0.0, 1.0, n)
        self.st = EvenStencil(self.x, width=5)
        self.n = n


_grid_cache: dict = {}


def _grid(n) -> _Grid:
    g = _grid_cache.get(n)
    if g is None:
        g = _Grid(n)
        _grid_cache[n] = g
    return g


class RescaledProblem:
    """Semi-discrete rescaled equation on x in [0, 1], eta = scale(tau) x."""

    def __init__(self, grid: _Grid, params: Params, T: float, eta_far: float,
                 boundary: Profile | None = None):
        self.g = grid
        self.p = params
        self.T = T
        self.ell0 = 1.0 / sqrt(params.kappa * T)
        self.eta_far = eta_far
        self.tau_fix = 2.0 * log(eta_far / self.ell0) if eta_far > self.ell0 else 0.0
        self.boundary = boundary

    def ale(self, tau):
        return tau < self.tau_fix - 1e-12

    def scale(self, tau):
        return self.ell0 * exp(tau / 2) if self.ale(tau) else max(self.eta_far, self.ell0)

    def edge_value(self, tau):
        if self.boundary is not None:
            return float(eval_profile_array(self.boundary, self.scale(tau)))
        return self.T * exp(-tau)

    def _eval(self, tau, B, want_jac, ale_phase=None):
        d = self.p.d
        st = self.g.st
        ale = self.ale(tau) if ale_phase is None else ale_phase
        s = self.ell0 * exp(tau / 2) if ale else max(self.eta_far, self.ell0)
        eta = s * self.g.x
        n = B.size
        B1 = st.d1(B) / s
        B2 = st.d2(B) / s ** 2
        adv = eta * B / d - (0.0 if ale else eta / 2)
        F = np.empty(n)
        F[1:] = B2[1:] + (d + 1) / eta[1:] * B1[1:] + adv[1:] * B1[1:] + B[1:] ** 2 - B[1:]
        F[0] = (d + 2) * B2[0] + B[0] ** 2 - B[0]
        outflow = not ale and self.boundary is None
        if ale or self.boundary is not None:
            # boundary value follows T exp(-tau) (or the override profile)
            F[-1] = -B[-1] if self.boundary is None else 0.0
        else:
            h = eta[-1] - eta[-2]
            b1 = (3 * B[-1] - 4 * B[-2] + B[-3]) / (2 * h)
            a = (d + 1) / eta[-1] + eta[-1] * B[-1] / d - eta[-1] / 2
            F[-1] = a * b1 + B[-1] ** 2 - B[-1]
        if not want_jac:
            return F
        c1 = np.zeros(n)
        c1[1:] = (d + 1) / eta[1:] + adv[1:]
        c2 = np.ones(n)
        c2[0] = d + 2
        c1 = c1 / s
        c2 = c2 / s ** 2
        c1[-1] = 0.0
        c2[-1] = 0.0
        diag = np.zeros(n)
        diag[1:] = eta[1:] / d * B1[1:]
        diag += 2 * B - 1
        if outflow:
            h = eta[-1] - eta[-2]
            b1 = (3 * B[-1] - 4 * B[-2] + B[-3]) / (2 * h)
            a = (d + 1) / eta[-1] + eta[-1] * B[-1] / d - eta[-1] / 2
            diag[-1] = a * 3 / (2 * h) + eta[-1] / d * b1 + 2 * B[-1] - 1
        else:
            diag[-1] = -1.0 if self.boundary is None else 0.0
        ab = scaled_banded(st, c1, c2)
        bw = st.bw
        ab[bw] += diag
        if outflow:
            h = eta[-1] - eta[-2]
            a = (d + 1) / eta[-1] + eta[-1] * B[-1] / d - eta[-1] / 2
            ab[bw + 1, n - 2] += -4 * a / (2 * h)
            ab[bw + 2, n - 3] += a / (2 * h)
        return F, ab

    # interface used by the Rosenbrock step
    def rhs(self, tau, B):
        return self._eval(tau, B, False, self._phase)

    def rhs_jac(self, tau, B):
        F, ab = self._eval(tau, B, True, self._phase)
        return F, ab, (self.g.st.bw, self.g.st.bw)

    _phase = None

    def step(self, tau, B, h):
        """Richardson-extrapolated ROS2 step; returns (B_new, diff)."""
        self._phase = self.ale(tau)
        try:
            yf = ros2_step(self, tau, B, h)
            ym = ros2_step(self, tau, B, h / 2)
            yh = ros2_step(self, tau + h / 2, ym, h / 2)
        finally:
            self._phase = None
        diff = yh - yf
        return yh + diff / 3.0, diff


def eta_grid(problem: RescaledProblem, tau) -> np.ndarray:
    return problem.scale(tau) * problem.g.x


def slope(state: RescaledState) -> np.ndarray:
    """B_eta at the grid nodes (fourth-order stencils, even at the origin)."""
    x = state.B.grid
    g = _grid(x.size)
    s = x[-1]
    return g.st.d1(np.asarray(state.B.values)) / s


# ---------------------------------------------------------------------------
# single trajectory integration

@dataclass
class _Attempt:
    status: str            # "ok", "up", "down"
    tau: float
    states: list
    trace: list            # (tau, ell, B_edge, B_eta_edge, eta_edge)
    restarts: list         # (tau, B array) candidates for later kicks
    steps: int
    tau0: float = 0.0


def _checkpoint_taus(cfg: RescaledConfig, tau_max: float, extra=()):
    q = 2.0 ** (1.0 / cfg.checkpoints_per_octave)
    taus = [0.0]
    t = cfg.checkpoint_first
    while t < tau_max * (1 - 1e-12):
        taus.append(t)
        t *= q
    taus.append(tau_max)
    taus.extend(float(x) for x in extra if 0.0 <= x <= tau_max)
    return np.unique(np.round(np.array(taus), 12))


def _make_state(problem, tau, B):
    eta = eta_grid(problem, tau)
    return RescaledState(float(tau), RadialField(eta, B.copy(), CoordinateKind.SELFSIM_ETA),
                         float(problem.ell0 * exp(tau / 2)), problem.T)


def _integrate(problem: RescaledProblem, B: np.ndarray, tau0: float, tau_end: float,
               checkpoints: np.ndarray, cfg: RescaledConfig, M_up: float,
               stop_on_escape: bool = True, restart_every: float = 1.0) -> _Attempt:
    tau = tau0
    B = B.copy()
    h = cfg.dtau_init
    states = []
    trace = []
    restarts = [(tau, B.copy())]
    cps = [c for c in checkpoints if c >= tau0 - 1e-12]
    ci = 0
    if cps and abs(cps[0] - tau0) < 1e-12:
        states.append(_make_state(problem, tau, B))
        ci = 1
    next_restart = tau0 + restart_every
    b0_max = B[0]
    steps = 0
    status = "ok"

    def edge(tau, B):
        s = problem.scale(tau)
        be = problem.g.st.d1(B)[-1] / s
        return (tau, problem.ell0 * exp(tau / 2), B[-1], be, s)

    trace.append(edge(tau, B))
    while tau < tau_end - 1e-12:
        if steps >= cfg.max_steps:
            raise RescaledDivergence(f"step budget exhausted at tau = {tau}")
        target = tau_end
        if ci < len(cps):
            target = min(target, cps[ci])
        if problem.ale(tau) and problem.tau_fix < target:
            target = problem.tau_fix
        hh = min(h, cfg.dtau_max, target - tau)
        Bn, diff = problem.step(tau, B, hh)
        err = error_norm(diff, Bn, cfg.rtol, cfg.rtol)
        if not np.all(np.isfinite(Bn)):
            err = np.inf
        if err > 1.0:
            h = next_step(hh, min(err, 1e6))
            if h < 1e-12:
                raise RescaledDivergence(f"step size underflow at tau = {tau}",
                                         last_valid=_make_state(problem, tau, B))
            continue
        steps += 1
        tau_new = tau + hh
        if abs(tau_new - target) < 1e-12:
            tau_new = target
        tau = tau_new
        B = Bn
        if problem.ale(tau - 1e-13) or (problem.boundary is not None):
            B[-1] = problem.edge_value(tau)
        h = next_step(hh, err) if hh >= h * 0.999 else max(h, next_step(hh, err))
        trace.append(edge(tau, B))
        if ci < len(cps) and tau >= cps[ci] - 1e-12:
            states.append(_make_state(problem, tau, B))
            ci += 1
        if tau >= next_restart:
            restarts.append((tau, B.copy()))
            next_restart += restart_every
        b0_max = max(b0_max, B[0])
        if stop_on_escape:
            if B[0] > M_up:
                status = "up"
                break
            # the approach to a profile is monotone from below; a drop away
            # from the running maximum is the downward escape
            if B[0] < cfg.down_level or B[0] < (1 - cfg.escape_drop) * b0_max:
                status = "down"
                break
    return _Attempt(status, tau, states, trace, restarts, steps, tau0)


def initial_B(b0: RadialField, T: float, params: Params, n: int) -> np.ndarray:
    """B(eta, 0) = T b0(r) on the uniform grid eta = ell0 x."""
    from scipy.interpolate import PchipInterpolator
    x = _grid(n).x
    return T * PchipInterpolator(b0.grid, b0.values)(x)


def time_shift_mode(B: np.ndarray, problem: RescaledProblem, tau: float) -> np.ndarray:
    """psi = B + (eta/2) B_eta, the direction of a blow-up time shift."""
    eta = eta_grid(problem, tau)
    s = problem.scale(tau)
    psi = B + 0.5 * eta * problem.g.st.d1(B) / s
    psi[-1] = 0.0
    return psi / np.max(np.abs(psi))


# ---------------------------------------------------------------------------
# public operations

def step_B(state: RescaledState, cfg: RescaledConfig, params: Params,
           dtau: float | None = None) -> RescaledState:
    """Advance a rescaled state by one (Richardson-extrapolated) step."""
    n = state.B.grid.size
    prob = RescaledProblem(_grid(n), params, state.T, cfg.eta_far)
    # the state grid must match the problem grid at this tau
    expected = eta_grid(prob, state.tau)
    if not np.allclose(expected, state.B.grid, rtol=1e-12, atol=1e-12):
        raise DomainError("state grid does not match the solver grid at this tau")
    h = cfg.dtau_init if dtau is None else dtau
    if prob.ale(state.tau) and state.tau + h > prob.tau_fix:
        h = prob.tau_fix - state.tau
    Bn, _ = prob.step(state.tau, np.array(state.B.values), h)
    tau = state.tau + h
    if prob.ale(tau - 1e-13):
        Bn[-1] = prob.edge_value(tau)
    if not np.all(np.isfinite(Bn)):
        raise RescaledDivergence(f"non-finite values at tau = {tau}", last_valid=state)
    return _make_state(prob, tau, Bn)


def interior_residual(B_fn, dB_fn, eta, params: Params, ops: str = "stencil",
                      h: float = 0.005, eta_end: float | None = None) -> np.ndarray:
    """Residual of the stationary rescaled equation for a sampled profile.

    The profile is sampled on the uniform solver grid of spacing h on
    [0, eta_end] and differentiated with the solver's stencils; returns the
    residual at the nodes closest to eta.
    """
    eta = np.asarray(eta, dtype=float)
    L = float(eta.max() if eta_end is None else eta_end)
    n = int(round(L / h)) + 1
    g = _grid(n)
    xs = g.x * L
    Bv = B_fn(xs)
    B1 = g.st.d1(Bv) / L
    B2 = g.st.d2(Bv) / L ** 2
    d = params.d
    res = np.empty(n)
    res[1:] = (B2[1:] + (d + 1) / xs[1:] * B1[1:] + xs[1:] * Bv[1:] * B1[1:] / d
               + Bv[1:] ** 2 - Bv[1:] - xs[1:] / 2 * B1[1:])
    res[0] = (d + 2) * B2[0] + Bv[0] ** 2 - Bv[0]
    idx = np.clip(np.searchsorted(xs, eta), 0, n - 1)
    return res[idx]


def _window_sup(state_a: RescaledState, state_b: RescaledState, C: float) -> float:
    xs = np.linspace(0.0, C, 501)
    return float(np.max(np.abs(state_a.B.at(xs) - state_b.B.at(xs))))


def sup_distance_to(state: RescaledState, prof: Profile, C: float) -> float:
    from scipy.interpolate import CubicSpline
    xs = np.linspace(0.0, C, 1001)
    g = state.B.grid
    m = g <= C + 5 * (g[1] - g[0])
    sp = CubicSpline(g[m], state.B.values[m])
    return float(np.max(np.abs(sp(xs) - eval_profile_array(prof, xs))))


def state_profile(state: RescaledState, params: Params) -> Profile:
    return Profile.numeric(state.B.grid, state.B.values, params, slope=slope(state))


def run_rescaled(b0: RadialField, T: float, tau_max: float, cfg: RescaledConfig,
                 params: Params, *, extra_checkpoints=(), progress=None):
    """Integrate the rescaled equation to tau_max and extract the omega profile.

    With cfg.calibrate_T the given T is refined by bisection on the escape
    direction of B(0, tau); when the remaining imprecision still lets B(0, tau)
    escape before tau_max, the run restarts from an earlier state kicked
    along the time-shift mode with a bisected amplitude.
    """
    if tau_max < 5:
        raise ValueError("tau_max must be at least 5")
    M = cfg.bound_M if cfg.bound_M is not None else params.m_one
    M_up = cfg.escape_factor * M
    n = cfg.grid_size
    cps = _checkpoint_taus(cfg, tau_max, extra_checkpoints)
    events = []
    segments = []

    def attempt(Tv, B_init=None, tau0=0.0):
        prob = RescaledProblem(_grid(n), params, Tv, cfg.eta_far)
        B = initial_B(b0, Tv, params, n) if B_init is None else B_init
        # attempts run past tau_max so that surviving ones are close to the
        # separatrix at tau_max, not merely about to escape
        return _integrate(prob, B, tau0, tau_max + cfg.escape_horizon, cps, cfg, M_up)

    if cfg.calibrate_T:
        T_used, pieces = _calibrate(attempt, T, cfg, params, events, segments, progress)
    else:
        T_used, pieces = T, [attempt(T)]
        if pieces[0].status != "ok":
            msg = (f"B(0,tau) escaped ({pieces[0].status}) before tau_max: "
                   "blow-up time likely wrong")
            events.append({"kind": "escape", "tau": pieces[0].tau, "message": msg})
            log_.warning("%s (tau = %.3f)", msg, pieces[0].tau)
    states, trace = _stitch(pieces)
    states = [x for x in states if x.tau <= tau_max + 1e-12]
    trace = [r for r in trace if r[0] <= tau_max + 1e-12]
    _bound_events(states, M, events)
    omega = make_omega_report(states, params, cfg.window_C)
    omega.T_used = T_used
    omega.events = events
    omega.boundary_trace = np.array(trace)
    omega.segments = segments
    return states, omega


def run_rescaled_from(state: RescaledState, tau_max: float, cfg: RescaledConfig,
                      params: Params, boundary: Profile | None = None):
    """Integrate from a given rescaled state without calibration.

    With a boundary profile the edge value follows that profile instead of
    T exp(-tau) (used for fixed-point checks on steady profiles).
    """
    n = state.B.grid.size
    prob = RescaledProblem(_grid(n), params, state.T, cfg.eta_far, boundary=boundary)
    M = cfg.bound_M if cfg.bound_M is not None else params.m_one
    cps = _checkpoint_taus(cfg, tau_max)
    cps = np.unique(np.r_[state.tau, cps[cps > state.tau]])
    att = _integrate(prob, np.array(state.B.values), state.tau, tau_max, cps, cfg,
                     cfg.escape_factor * M)
    events = []
    _bound_events(att.states, M, events)
    omega = make_omega_report(att.states, params, cfg.window_C)
    omega.T_used = state.T
    omega.events = events
    omega.boundary_trace = np.array(att.trace)
    return att.states, omega


def state_on_grid(profile_fn, tau: float, T: float, params: Params, cfg: RescaledConfig) -> RescaledState:
    """Sample a profile on the solver grid belonging to (tau, T)."""
    prob = RescaledProblem(_grid(cfg.grid_size), params, T, cfg.eta_far)
    eta = eta_grid(prob, tau)
    return _make_state(prob, tau, np.asarray(profile_fn(eta), dtype=float))


def _bound_events(states, M, events):
    b0s = np.array([s.B0 for s in states])
    low = b0s < 1 - 1e-6
    if low.sum() >= 2:
        tau = float(states[int(np.argmax(low))].tau)
        events.append({"kind": "B0_below_one", "tau": tau,
                       "message": "B(0,tau) < 1 sustained: blow-up time likely wrong"})
    high = b0s > M * (1 + 1e-6)
    if high.any():
        tau = float(states[int(np.argmax(high))].tau)
        events.append({"kind": "B0_above_M", "tau": tau,
                       "message": f"B(0,tau) exceeded M = {M}: blow-up time likely wrong"})
    for e in events:
        if e["kind"] in ("B0_below_one", "B0_above_M"):
            log_.warning("%s (tau = %.3f)", e["message"], e["tau"])


def _stitch(pieces):
    """Concatenate attempt segments; each later segment takes over at its start."""
    states = []
    trace = []
    for k, att in enumerate(pieces):
        t_end = pieces[k + 1].tau0 if k + 1 < len(pieces) else np.inf
        states.extend(s for s in att.states if s.tau < t_end - 1e-12)
        trace.extend(r for r in att.trace if r[0] < t_end - 1e-12)
    return states, trace


def _bisect(run, lo, hi, a_lo, a_hi, max_iter, progress, tag, enough=np.inf):
    """Locate the separatrix between a parameter escaping down (lo) and up (hi).

    Near the separatrix the escape time grows like -log|p - p*|, so the next
    trial point interpolates in that logarithmic scale, with the Illinois
    adjustment of the stale end when the same end moves twice in a row.
    Stops once an attempt survives past `enough` or four consecutive trials
    fail to survive longer than the best one.  Returns the attempt that survived longest and
    its parameter.
    """
    best, p_best = (a_lo, lo) if a_lo.tau >= a_hi.tau else (a_hi, hi)
    t_lo, t_hi = a_lo.tau, a_hi.tau
    last_side = None
    stall = 0
    for it in range(max_iter):
        frac = 1.0 / (1.0 + exp(min(50.0, max(-50.0, t_lo - t_hi))))
        frac = min(0.98, max(0.02, frac))
        mid = lo + frac * (hi - lo)
        if mid == lo or mid == hi:
            break
        att = run(mid)
        if progress:
            progress((tag, it, mid, att.status, att.tau))
        if att.status == "ok" or att.tau > best.tau + 1e-3:
            best, p_best = att, mid
            stall = 0
        else:
            # no further progress once the parameter is resolved to roundoff
            stall += 1
        if att.status == "ok" or best.tau >= enough or stall >= 4:
            break
        side = att.status
        if side == "up":
            hi, t_hi = mid, att.tau
            if last_side == "up":
                t_lo += log(2.0)
        else:
            lo, t_lo = mid, att.tau
            if last_side == "down":
                t_hi += log(2.0)
        last_side = side
    return best, p_best


def _calibrate(attempt, T, cfg, params, events, segments, progress):
    lo = T * (1 - cfg.T_rel_bracket)
    hi = T * (1 + cfg.T_rel_bracket)
    a_lo, a_hi = attempt(lo), attempt(hi)
    widen = 0
    while not (a_lo.status == "down" and a_hi.status == "up") and widen < 8:
        if a_lo.status != "down":
            lo = T - 4 * (T - lo)
            a_lo = attempt(lo)
        if a_hi.status != "up":
            hi = T + 4 * (hi - T)
            a_hi = attempt(hi)
        widen += 1
    if not (a_lo.status == "down" and a_hi.status == "up"):
        raise RescaledDivergence("could not bracket the blow-up time")
    # the T bisection only needs to reach a moderate escape time; later
    # corrections are cheaper as kicks from an intermediate state
    best, T_best = _bisect(attempt, lo, hi, a_lo, a_hi, cfg.max_bisections, progress, "T",
                           enough=cfg.T_escape_target)
    segments.append({"kind": "T_bisection", "T": T_best, "escape_tau": best.tau,
                     "status": best.status})
    pieces = [best]
    problem = RescaledProblem(_grid(cfg.grid_size), params, T_best, cfg.eta_far)
    while pieces[-1].status != "ok" and len(segments) <= cfg.max_segments:
        last = pieces[-1]
        tr = max(last.tau0, last.tau - cfg.restart_lag)
        cand = [r for r in last.restarts if r[0] <= tr + 1e-12]
        tau_r, B_r = cand[-1]
        psi = time_shift_mode(B_r, problem, tau_r)

        def kicked(eps, B_r=B_r, psi=psi, tau_r=tau_r):
            return attempt(T_best, B_r + eps * psi, tau_r)

        amp = cfg.kick_amplitude
        for _ in range(6):
            k_lo, k_hi = -amp, amp
            a_lo, a_hi = kicked(k_lo), kicked(k_hi)
            if a_lo.status == "up" and a_hi.status == "down":
                k_lo, k_hi, a_lo, a_hi = k_hi, k_lo, a_hi, a_lo
            if a_lo.status == "down" and a_hi.status == "up":
                break
            amp *= 4
        if not (a_lo.status == "down" and a_hi.status == "up"):
            events.append({"kind": "kick_bracket_failed", "tau": tau_r,
                           "message": "time-shift kicks did not bracket the escape"})
            break
        seg_best, eps_best = _bisect(kicked, k_lo, k_hi, a_lo, a_hi, cfg.max_bisections,
                                     progress, "kick")
        if seg_best.status != "ok" and seg_best.tau <= last.tau + 1e-9:
            events.append({"kind": "kick_no_progress", "tau": tau_r,
                           "message": "kicked restart did not extend the trajectory"})
            break
        segments.append({"kind": "kick", "tau_restart": tau_r, "amplitude": eps_best,
                         "escape_tau": seg_best.tau, "status": seg_best.status})
        pieces.append(seg_best)
    if pieces[-1].status != "ok":
        events.append({"kind": "escape", "tau": pieces[-1].tau,
                       "message": f"B(0,tau) escaped ({pieces[-1].status}) before tau_max"})
    return T_best, pieces


# ---------------------------------------------------------------------------
# intersections and omega-limit diagnostics

@dataclass(frozen=True)
class IntersectionResult:
    count: int
    locations: list
    touches: list

    def __int__(self):
        return self.count


def _as_callable(p):
    if isinstance(p, Profile):
        return lambda x: eval_profile_array(p, x)
    if isinstance(p, RescaledState):
        from scipy.interpolate import CubicSpline
        return CubicSpline(p.B.grid, p.B.values)
    return p


def count_intersections(A, B, eta_lo: float, eta_hi: float, n_samples: int = 4000,
                        tol: float = TOUCH_TOL) -> IntersectionResult:
    """Count transversal sign changes of A - B on [eta_lo, eta_hi].

    Samples falling inside the band |A - B| < tol are treated as touching;
    a crossing is counted only when the sign on both sides of such a band
    differs.  Crossing locations are sharpened by bisection.
    """
    if not eta_lo < eta_hi:
        raise ValueError("need eta_lo < eta_hi")
    fa, fb = _as_callable(A), _as_callable(B)
    xs = np.linspace(eta_lo, eta_hi, n_samples)
    diff = fa(xs) - fb(xs)
    if np.max(np.abs(diff)) < 1e-12:
        raise DomainError("profiles are identical on the interval")
    sgn = np.where(diff > tol, 1, np.where(diff < -tol, -1, 0))
    locs = []
    touches = []
    last_sign = 0
    last_idx = -1
    band_start = None
    for i, s in enumerate(sgn):
        if s == 0:
            if band_start is None:
                band_start = i
            continue
        if last_sign != 0 and s != last_sign:
            if band_start is None:
                a, b = xs[i - 1], xs[i]
                g = lambda x: float(fa(np.array([x]))[0] - fb(np.array([x]))[0])
                ga = g(a)
                for _ in range(60):
                    m = 0.5 * (a + b)
                    gm = g(m)
                    if (gm > 0) == (ga > 0):
                        a, ga = m, gm
                    else:
                        b = m
                locs.append(0.5 * (a + b))
            else:
                locs.append(0.5 * (xs[band_start] + xs[i - 1]))
        elif last_sign != 0 and band_start is not None:
            touches.append(0.5 * (xs[band_start] + xs[i - 1]))
        last_sign, last_idx = s, i
        band_start = None
    return IntersectionResult(len(locs), locs, touches)


def zero_number_series(states, phi: Profile, eta_lo: float = 0.0, n_samples: int = 4000):
    """Z(tau) = number of crossings of B(., tau) with phi over the state's domain.

    Returns a list of (tau, Z) and a list of violation events (increases).
    """
    if not states:
        raise ValueError("need at least one state")
    out = []
    for s in states:
        lo = max(eta_lo, s.B.grid[0])
        if phi.kind is ProfileKind.SINGULAR_S:
            lo = max(lo, 1e-3)
        try:
            z = count_intersections(s, phi, lo, float(s.B.grid[-1]), n_samples).count
        except DomainError:
            z = 0
        out.append((s.tau, z))
    violations = [{"tau": out[i][0], "from": out[i - 1][1], "to": out[i][1]}
                  for i in range(1, len(out)) if out[i][1] > out[i - 1][1]]
    return out, violations


def make_omega_report(states, params: Params, C: float = 5.0) -> OmegaReport:
    hist = []
    for a, b in zip(states[:-1], states[1:]):
        hist.append((b.tau, _window_sup(a, b, C)))
    last = states[-1]
    prof = state_profile(last, params)
    S = Profile.singular(params)
    hi = float(last.B.grid[-1])
    z = count_intersections(prof, S, 1e-3, hi, 8000).count
    return OmegaReport(prof, hist, z == 1, z)


# ---------------------------------------------------------------------------
# transformed route: physical snapshots mapped pointwise

def transform_snapshot(snap, T: float, params: Params) -> RescaledState:
    """B(eta, tau) = (T - t) b(r, t) with eta = r / sqrt(kappa (T - t))."""
    from .model_core import selfsim_field
    f = selfsim_field(snap.b, snap.t, T, params)
    tau = log(T / (T - snap.t))
    return RescaledState(tau, f, float(f.grid[-1]), T)


def transform_route(trajectory, T: float, params: Params):
    return [transform_snapshot(s, T, params) for s in trajectory if s.t < T]


def compare_routes(direct, transformed, C: float = 5.0, n: int = 501):
    """Sup-difference on [0, C] between matched states (same tau).

    direct and transformed are lists of RescaledState; pairs are matched by
    tau to 1e-9.  Returns a list of (tau, sup difference).
    """
    from scipy.interpolate import CubicSpline
    xs = np.linspace(0.0, C, n)
    out = []
    dmap = {round(s.tau, 9): s for s in direct}
    for s in transformed:
        key = round(s.tau, 9)
        if key not in dmap:
            continue
        a = dmap[key]
        ga = a.B.grid
        ma = ga <= C + 5 * (ga[1] - ga[0])
        gb = s.B.grid
        mb = gb <= C * 1.05 + 1e-9
        mb[: np.searchsorted(gb, C) + 3] = True
        fa = CubicSpline(ga[ma], a.B.values[ma])
        fb = CubicSpline(gb[mb], s.B.values[mb])
        out.append((s.tau, float(np.max(np.abs(fa(xs) - fb(xs))))))
    return out
