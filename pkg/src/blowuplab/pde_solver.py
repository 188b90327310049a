"""Physical-variable solver for the average density b(r, t) on [0, 1]."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
import numpy as np

from ._numerics import richardson_step
from .model_core import CoordinateKind, Params, RadialField, n_from_b, derivative

MONITOR_RTOL = 1e-8


class DivergenceError(RuntimeError):
    """Raised when a step produces non-finite values."""

    def __init__(self, msg, last_valid=None):
        super().__init__(msg)
        self.last_valid = last_valid


@dataclass(frozen=True)
class SolverConfig:
    grid_size: int = 512
    grid_stretch: float = 4.0
    dt_safety: float = 0.1
    blowup_threshold: float = 1e8
    max_steps: int = 400_000
    # "ros2": Richardson-extrapolated linearly implicit steps; "euler": explicit
    scheme: str = "ros2"
    snapshots_per_decade: int = 4
    fit_decades: float = 1.0
    diffusion_only: bool = False

    def __post_init__(self):
        if self.grid_size < 64:
            raise ValueError("grid_size must be at least 64")
        if self.grid_stretch < 1:
            raise ValueError("grid_stretch must be >= 1")
        if not 0 < self.dt_safety <= 1:
            raise ValueError("dt_safety must lie in (0, 1]")
        if self.blowup_threshold < 1e2:
            raise ValueError("blowup_threshold must be at least 1e2")
        if self.scheme not in ("ros2", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class Snapshot:
    t: float
    b: RadialField
    b0t: float
    invariant_flags: dict = field(default_factory=dict)
    dt: float = 0.0


@dataclass(frozen=True)
class BlowupEstimate:
    T: float
    fit_residual: float
    lower_ok: bool
    upper_ok: bool
    detected: bool = True
    sandwich_min: float = float("nan")
    sandwich_max: float = float("nan")
    n_fit: int = 0


def make_grid(cfg: SolverConfig) -> np.ndarray:
    """Graded mesh r = s^p on [0, 1], clustered at the origin."""
    s = np.linspace(0.0, 1.0, cfg.grid_size)
    return s ** cfg.grid_stretch


class PhysicalProblem:
    """Spatial discretization of the b-equation with three-point stencils.

    Interior rows use second-order nonuniform central differences; the row at
    r = 0 uses the even-extension limit kappa (d+2) b_rr(0) + b(0)^2; the row
    at r = 1 is held fixed so b(1, t) = 1 exactly.
    """

    def __init__(self, r: np.ndarray, params: Params, diffusion_only=False, source=None):
        self.r = np.asarray(r, dtype=float)
        self.params = params
        self.diffusion_only = diffusion_only
        self.source = source
        h = np.diff(self.r)
        hm, hp = h[:-1], h[1:]
        self.a1 = np.c_[-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))]
        self.a2 = np.c_[2 / (hm * (hm + hp)), -2 / (hm * hp), 2 / (hp * (hm + hp))]
        self.h1 = self.r[1]

    def _parts(self, b):
        bm, bc, bp = b[:-2], b[1:-1], b[2:]
        a1, a2 = self.a1, self.a2
        # differences against the centre keep constants exact despite O(1/h^2) weights
        dm, dp = bm - bc, bp - bc
        br = a1[:, 0] * dm + a1[:, 2] * dp
        brr = a2[:, 0] * dm + a2[:, 2] * dp
        return bc, br, brr

    def rhs(self, t, b):
        p = self.params
        k, d = p.kappa, p.d
        rr = self.r[1:-1]
        bc, br, brr = self._parts(b)
        out = np.zeros_like(b)
        out[1:-1] = k * (brr + (d + 1) / rr * br)
        out[0] = k * (d + 2) * 2 * (b[1] - b[0]) / self.h1 ** 2
        if not self.diffusion_only:
            out[1:-1] += rr * bc * br / d + bc ** 2
            out[0] += b[0] ** 2
        if self.source is not None:
            out[:-1] += self.source(t, self.r)[:-1]
        out[-1] = 0.0
        return out

    def rhs_jac(self, t, b):
        p = self.params
        k, d = p.kappa, p.d
        n = b.size
        rr = self.r[1:-1]
        bc, br, brr = self._parts(b)
        F = self.rhs(t, b)
        conv = 0.0 if self.diffusion_only else 1.0
        cfd = k * (d + 1) / rr + conv * rr * bc / d
        ab = np.zeros((3, n))
        # ab[0, j] = J[j-1, j], ab[1, j] = J[j, j], ab[2, j] = J[j+1, j]
        ab[0, 2:] = k * self.a2[:, 2] + cfd * self.a1[:, 2]
        ab[1, 1:-1] = k * self.a2[:, 1] + cfd * self.a1[:, 1] + conv * (rr * br / d + 2 * bc)
        ab[2, :-2] = k * self.a2[:, 0] + cfd * self.a1[:, 0]
        c0 = k * (d + 2) * 2 / self.h1 ** 2
        ab[1, 0] = -c0 + conv * 2 * b[0]
        ab[0, 1] = c0
        # boundary row r = 1 is frozen
        ab[1, -1] = 0.0
        ab[2, -2] = 0.0
        return F, ab, (1, 1)

    def stability_limit(self):
        """Explicit Euler diffusion limit on the graded mesh."""
        h = np.diff(self.r)
        return float(0.5 * np.min(h[:-1] * h[1:]) / self.params.kappa)


_problem_cache: dict = {}


def _problem_for(grid: np.ndarray, params: Params, diffusion_only: bool) -> PhysicalProblem:
    key = (hashlib.sha1(np.ascontiguousarray(grid).tobytes()).hexdigest(), params, diffusion_only)
    prob = _problem_cache.get(key)
    if prob is None:
        if len(_problem_cache) > 16:
            _problem_cache.clear()
        prob = PhysicalProblem(grid, params, diffusion_only)
        _problem_cache[key] = prob
    return prob


def default_dt(b0t: float, cfg: SolverConfig, prob: PhysicalProblem) -> float:
    """dt = dt_safety * min(stability limit, 0.1 / b(0, t))."""
    limit = prob.stability_limit() if cfg.scheme == "euler" else np.inf
    return cfg.dt_safety * min(limit, 0.1 / max(b0t, 1e-300))


def _advance(prob, t, b, dt, scheme):
    if scheme == "euler":
        return b + dt * prob.rhs(t, b)
    y, _ = richardson_step(prob, t, b, dt)
    return y


def step_b(state: Snapshot, cfg: SolverConfig, params: Params, dt: float | None = None,
           problem: PhysicalProblem | None = None) -> Snapshot:
    """Advance the b-equation by one step and re-impose b(1, t) = 1."""
    b = np.array(state.b.values, dtype=float)
    prob = problem or _problem_for(state.b.grid, params, cfg.diffusion_only)
    if dt is None:
        dt = default_dt(b[0], cfg, prob)
    bn = _advance(prob, state.t, b, dt, cfg.scheme)
    bn[-1] = 1.0
    if not np.all(np.isfinite(bn)):
        raise DivergenceError(f"non-finite values at t = {state.t + dt}", last_valid=state)
    return Snapshot(state.t + dt, RadialField(state.b.grid, bn, CoordinateKind.PHYSICAL_R),
                    float(bn[0]), {}, dt)


def monitor_invariants(snap: Snapshot, prev: Snapshot, params: Params) -> dict:
    """Check the a priori inequalities on a snapshot (with relative tolerance)."""
    r = snap.b.grid
    b = snap.b.values
    b0 = max(float(b[0]), 1.0)
    br = derivative(snap.b, 1)
    flags = {}
    # b_r <= 0 tested on consecutive differences: stencil weights near the
    # origin are O(1/h) and would amplify roundoff in b itself
    db = np.diff(b)
    flags["br_nonpositive"] = bool(np.all(db <= MONITOR_RTOL * np.maximum(np.abs(b[:-1]), 1.0)))
    if prev is not None and snap.t > prev.t:
        bt = (b - prev.b.values) / (snap.t - prev.t)
        bt_scale = max(float(np.max(np.abs(bt))), 1.0)
        flags["bt_nonnegative"] = bool(np.all(bt >= -MONITOR_RTOL * bt_scale))
    else:
        flags["bt_nonnegative"] = True
    lhs = params.kappa * br ** 2
    rhs = (2.0 / 3.0) * b0 ** 3
    flags["gradient_bound"] = bool(np.all(lhs <= rhs * (1 + MONITOR_RTOL)))
    mask = r > 0
    flags["upper_bound"] = bool(np.all(b[mask] <= r[mask] ** (-params.d) * (1 + MONITOR_RTOL)))
    n = n_from_b(snap.b, params).values
    flags["density_nonnegative"] = bool(np.all(n >= -MONITOR_RTOL * max(float(np.max(np.abs(n))), 1.0)))
    return flags


def fit_blowup_time(t, b0, lo: float, hi: float):
    """Least-squares line through 1/b(0, t) over samples with b(0, t) in [lo, hi].

    Returns (T, relative residual, number of samples).  The residual is the
    RMS misfit divided by the range of 1/b(0, t) in the window.
    """
    t = np.asarray(t, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    m = (b0 >= lo) & (b0 <= hi)
    if m.sum() < 3:
        raise ValueError("fewer than 3 samples in the fit window")
    y = 1.0 / b0[m]
    x = t[m]
    x0 = x[-1]
    coef, res, *_ = np.polyfit(x - x0, y, 1, full=True)
    slope, icpt = coef
    T = x0 - icpt / slope
    resid = y - np.polyval(coef, x - x0)
    rel = float(np.sqrt(np.mean(resid ** 2)) / max(np.ptp(y), 1e-300))
    return float(T), rel, int(m.sum())


def sandwich_values(t, b0, T):
    return (T - np.asarray(t)) * np.asarray(b0)


def run_to_blowup(b0: RadialField, cfg: SolverConfig, params: Params, *,
                  monitor: bool = True, progress=None):
    """Integrate until b(0, t) exceeds the threshold or max_steps is reached.

    Returns (trajectory, estimate, trace) where trajectory holds snapshots at
    geometrically spaced b(0, t) levels and trace is an (n, 2) array of
    every accepted (t, b(0, t)).
    """
    grid = np.asarray(b0.grid, dtype=float)
    if grid[0] != 0.0 or grid[-1] != 1.0:
        raise ValueError("initial data must live on [0, 1]")
    prob = PhysicalProblem(grid, params, cfg.diffusion_only)
    state = Snapshot(0.0, b0, float(b0.values[0]), {}, 0.0)
    traj = []
    ts = [0.0]
    b0s = [state.b0t]
    ratio = 10.0 ** (1.0 / cfg.snapshots_per_decade)
    next_level = state.b0t * ratio
    prev = None
    if monitor:
        state = replace(state, invariant_flags=monitor_invariants(state, None, params))
    traj.append(state)
    steps = 0
    while state.b0t < cfg.blowup_threshold and steps < cfg.max_steps:
        new = step_b(state, cfg, params, problem=prob)
        steps += 1
        prev, state = state, new
        ts.append(state.t)
        b0s.append(state.b0t)
        if state.b0t >= next_level or state.b0t >= cfg.blowup_threshold:
            if monitor:
                state = replace(state, invariant_flags=monitor_invariants(state, prev, params))
            traj.append(state)
            while next_level <= state.b0t:
                next_level *= ratio
            if progress is not None:
                progress(state)
    trace = np.column_stack([ts, b0s])
    detected = state.b0t >= cfg.blowup_threshold
    if not detected:
        est = BlowupEstimate(float("nan"), float("nan"), False, False, detected=False)
        return traj, est, trace
    thr = cfg.blowup_threshold
    T, res, nfit = fit_blowup_time(trace[:, 0], trace[:, 1], thr / 10 ** cfg.fit_decades, thr)
    est = certify(trace, T, res, nfit, params, thr)
    return traj, est, trace


def certify(trace, T, res, nfit, params: Params, thr: float, decades: float = 2.0) -> BlowupEstimate:
    """Evaluate the sandwich 1 <= (T - t) b(0, t) <= M1 over the last decades."""
    t, b0 = trace[:, 0], trace[:, 1]
    m = (b0 >= thr / 10 ** decades) & (t < T)
    s = sandwich_values(t[m], b0[m], T)
    smin = float(s.min()) if s.size else float("nan")
    smax = float(s.max()) if s.size else float("nan")
    return BlowupEstimate(T, res, bool(s.size and smin >= 1.0), bool(s.size and smax <= params.m_one),
                          True, smin, smax, nfit)


def constant_initial(cfg: SolverConfig, value: float = 1.0) -> RadialField:
    r = make_grid(cfg)
    return RadialField(r, np.full(r.size, value), CoordinateKind.PHYSICAL_R)


def all_monitors_ok(traj) -> dict:
    """Aggregate monitor flags over a trajectory: name -> all passed."""
    out: dict = {}
    for s in traj:
        for k, v in s.invariant_flags.items():
            out[k] = out.get(k, True) and bool(v)
    return out
