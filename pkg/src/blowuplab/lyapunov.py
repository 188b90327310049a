"""Implicit Lyapunov functional for the rescaled equation.

A weight rho(eta, v, w) solving a first-order PDE is built along the
characteristics phi'' + f(xi, phi, phi') = 0 with

    f(eta, v, w) = (d+1) w/eta - eta w/2 + eta v w/d + v^2 - v,

and the density

    Phi(eta, v, w) = int_0^w (w - s) rho(eta, v, s) ds - int_0^v rho(eta, mu, 0) f(eta, mu, 0) dmu

gives E(tau) = int_0^ell Phi(eta, B, B_eta) d eta.  Phase points are
classified by the fate of their forward characteristic: constant (R1), zero
crossing before or after eta_bar (R2a / R2b) and decay (R3).

Bulk evaluations go through the compiled kernels in _charkernels, which use
the zero-crossing formulas; decaying characteristics are a codimension-one
set that the compiled path never isolates.  The scalar `rho` dispatches on
the classification and evaluates the decaying case separately.
"""
from __future__ import annotations

import dataclasses
import enum
import logging
from dataclasses import dataclass, field
from math import exp, log

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import _charkernels as ck
from .model_core import CoordinateKind, DomainError, Params, RadialField
from .selfsim_solver import RescaledState, slope as state_slope
from .steady_states import RTOL, ATOL, Classification, classify_from, phi_rhs, tail_solution

log_ = logging.getLogger(__name__)

# slack for numerically zero slopes of monotone profiles
W_TOL = 1e-8


class ClassificationFailure(RuntimeError):
    """A characteristic could not be continued to its anchor."""


class Region(str, enum.Enum):
    R1 = "R1"
    R2A = "R2a"
    R2B = "R2b"
    R3 = "R3"


@dataclass(frozen=True)
class PhasePoint:
    eta: float
    v: float
    w: float

    def __post_init__(self):
        for name in ("eta", "v", "w"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not in_R(self.eta, self.v, self.w):
            raise DomainError(f"phase point ({self.eta}, {self.v}, {self.w}) is outside R")


def in_R(eta, v, w) -> bool:
    if eta > 0:
        return v >= 0 and w <= 0
    return eta == 0 and v >= 0 and w == 0


@dataclass
class LyapunovConfig:
    eta_bar: float = 4.0
    M: float | None = None
    M_bar: float | None = None
    quadrature_points: int = 64
    char_eta_max: float = 60.0
    # fixed DOP853 steps per characteristic (doubled beyond eta = 8, again beyond 16)
    char_steps: int = 100
    # probes per segment used to split quadratures at anchor switches
    anchor_probes: int = 8
    # composite Gauss-Legendre rule for the eta integral of E
    energy_panel: float = 1.0
    energy_nodes: int = 10
    # Phi <= (w^2 + v^2/2) eta^(d+1) exp(-(d-2) eta^2/4d), so the tail past 20 is below 1e-8
    energy_cut: float = 20.0

    def __post_init__(self):
        if not self.eta_bar > 0:
            raise ValueError("eta_bar must be positive")
        if self.quadrature_points < 64:
            raise ValueError("quadrature_points must be at least 64")

    def bounds(self, params: Params):
        M = self.M if self.M is not None else params.m_one
        Mb = self.M_bar if self.M_bar is not None else M
        return M, Mb


@dataclass(frozen=True)
class RegionTag:
    region: Region
    anchor: float
    characteristic: RadialField
    classification: Classification


class _Kern:
    """Bound arguments for the compiled kernels."""

    def __init__(self, params: Params, cfg: LyapunovConfig):
        self.d = float(params.d)
        self.eb = float(cfg.eta_bar)
        self.n = int(cfg.char_steps)
        self.K = int(cfg.anchor_probes)
        self.gx, self.gw = np.polynomial.legendre.leggauss(cfg.quadrature_points)

    def _c(self, *a):
        return [np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float))) for x in a]

    def rho(self, E, V, W):
        E, V, W = self._c(E, V, W)
        return ck.rho_many(E, V, W, self.eb, self.d, self.n, ck.DOP_A, ck.DOP_B, ck.DOP_C)

    def phi(self, E, V, W):
        E, V, W = self._c(E, V, W)
        return ck.big_phi_many(E, V, W, self.eb, self.d, self.n, self.gx, self.gw, self.K,
                               ck.DOP_A, ck.DOP_B, ck.DOP_C)

    def w_part(self, E, V, W):
        E, V, W = self._c(E, V, W)
        return ck.w_integral_many(E, V, W, self.eb, self.d, self.n, self.gx, self.gw, self.K,
                                  ck.DOP_A, ck.DOP_B, ck.DOP_C)

    def mu_between(self, E, V0, V1):
        E, V0, V1 = self._c(E, V0, V1)
        return ck.mu_between_many(E, V0, V1, self.eb, self.d, self.n, self.gx, self.gw, self.K,
                                  ck.DOP_A, ck.DOP_B, ck.DOP_C)

    def slope_int(self, E, V, W):
        E, V, W = self._c(E, V, W)
        return ck.slope_integral_many(E, V, W, self.eb, self.d, self.n, self.gx, self.gw,
                                      self.K, ck.DOP_A, ck.DOP_B, ck.DOP_C)


_kern_cache: dict = {}


def _kern(params: Params, cfg: LyapunovConfig) -> _Kern:
    key = (params.d, cfg.eta_bar, cfg.char_steps, cfg.anchor_probes, cfg.quadrature_points)
    k = _kern_cache.get(key)
    if k is None:
        k = _kern_cache[key] = _Kern(params, cfg)
    return k


# ---------------------------------------------------------------------------
# characteristics and regions

def f_rhs(p: PhasePoint, params: Params) -> float:
    if p.eta <= 0:
        raise DomainError("f is singular at eta = 0")
    d = params.d
    e, v, w = p.eta, p.v, p.w
    return (d + 1) * w / e - e * w / 2 + e * v * w / d + v * v - v


def f_array(eta, v, w, d):
    return (d + 1) * w / eta - eta * w / 2 + eta * v * w / d + v * v - v


def integrate_characteristic(p: PhasePoint, params: Params, cfg: LyapunovConfig):
    """Forward characteristic from (eta, v, w) and its classification."""
    if p.eta <= 0:
        raise DomainError("characteristics start at eta > 0")
    o = classify_from(p.eta, [p.v, p.w], params, max(cfg.char_eta_max, p.eta + 20.0))
    if o.classification is Classification.UNDECIDED:
        raise ClassificationFailure(f"characteristic from {p} is undecided at eta_max")
    return o.trajectory, o


def _to_level(eta, v, w, target, level, direction, d):
    """solve_ivp characteristic from eta toward target, stopping at phi = level.

    Returns (stop point, integral of xi phi / d from eta to the stop point)."""
    f = phi_rhs(d)

    def rhs(x, y):
        a, b = f(x, y[:2])
        return [a, b, x * y[0] / d]

    def hit(x, y):
        return y[0] - level
    hit.terminal = True
    hit.direction = direction

    def blow(x, y):
        return abs(y[0]) - 1e8
    blow.terminal = True
    if (direction < 0 and v <= level) or (direction > 0 and v >= level):
        return eta, 0.0
    s = solve_ivp(rhs, (eta, target), [v, w, 0.0], method="DOP853", rtol=RTOL, atol=ATOL,
                  events=[hit, blow])
    if s.status == 1 and len(s.t_events[1]):
        raise ClassificationFailure(f"characteristic from ({eta}, {v}, {w}) blew up")
    if s.status == 1 and len(s.t_events[0]):
        return float(s.t_events[0][0]), float(s.y_events[0][0][2])
    if s.status != 0:
        raise ClassificationFailure(s.message)
    return float(s.t[-1]), float(s.y[2, -1])


def l1_anchor(p: PhasePoint, params: Params, cfg: LyapunovConfig) -> float:
    """L_1: first point ahead with phi <= 1 (v >= 1) or last point behind with phi >= 1 (v < 1)."""
    if p.v >= 1:
        L, _ = _to_level(p.eta, p.v, p.w, p.eta + cfg.char_eta_max, 1.0, -1, params.d)
        return L
    L, _ = _to_level(p.eta, p.v, p.w, cfg.eta_bar, 1.0, 1, params.d)
    return max(L, cfg.eta_bar)


def classify_region(p: PhasePoint, params: Params, cfg: LyapunovConfig) -> RegionTag:
    traj, o = (None, None)
    if p.eta > 0 and p.w == 0 and p.v in (0.0, 1.0):
        traj, o = integrate_characteristic(p, params, cfg)
        return RegionTag(Region.R1, cfg.eta_bar, traj, o.classification)
    traj, o = integrate_characteristic(p, params, cfg)
    if o.classification is Classification.CROSSES_ZERO:
        if p.eta <= cfg.eta_bar:
            return RegionTag(Region.R2A, min(o.eta_star, cfg.eta_bar), traj, o.classification)
        return RegionTag(Region.R2B, l1_anchor(p, params, cfg), traj, o.classification)
    if o.classification is Classification.DECAYS:
        return RegionTag(Region.R3, cfg.eta_bar, traj, o.classification)
    raise ClassificationFailure(f"unexpected classification {o.classification} at {p}")


# ---------------------------------------------------------------------------
# rho and Phi

def _check_excluded(eta, v, cfg):
    if eta == cfg.eta_bar and v > 1:
        raise DomainError("rho is discontinuous on {eta = eta_bar, v > 1}")


def rho_reference(p: PhasePoint, params: Params, cfg: LyapunovConfig,
                  tag: RegionTag | None = None) -> float:
    """rho from the region formulas with adaptive integration of the characteristic."""
    _check_excluded(p.eta, p.v, cfg)
    d = params.d
    eb = cfg.eta_bar
    e = p.eta
    if e == 0:
        return 0.0
    if tag is None:
        tag = classify_region(p, params, cfg)
    if tag.region is Region.R1:
        if p.v == 1.0:
            return e ** (d + 1) * exp(-(d - 2) * e * e / (4 * d) - eb * eb / (2 * d))
        return e ** (d + 1) * exp(-e * e / 4)
    if tag.region is Region.R2A:
        L, I = _to_level(e, p.v, p.w, eb, 0.0, -1, d)
        return e ** (d + 1) * exp(-e * e / 4 - I)
    if tag.region is Region.R3:
        # anchored at eta_bar, forward or backward
        f = phi_rhs(d)
        s = solve_ivp(lambda x, y: [*f(x, y[:2]), x * y[0] / d], (e, eb), [p.v, p.w, 0.0],
                      method="DOP853", rtol=RTOL, atol=ATOL)
        if s.status != 0:
            raise ClassificationFailure("decaying characteristic could not reach eta_bar")
        return e ** (d + 1) * exp(-e * e / 4 - s.y[2, -1])
    # R2b
    if p.v >= 1:
        L, I = _to_level(e, p.v, p.w, e + cfg.char_eta_max, 1.0, -1, d)
    else:
        L, I = _to_level(e, p.v, p.w, eb, 1.0, 1, d)
        L = max(L, eb)
    return e ** (d + 1) * exp(-e * e / 4 + L * L / (2 * d) - eb * eb / (2 * d) - I)


def rho(p: PhasePoint, params: Params, cfg: LyapunovConfig) -> float:
    """Weight rho at a phase point, dispatched on its region."""
    _check_excluded(p.eta, p.v, cfg)
    if p.eta == 0:
        return 0.0
    if p.w == 0 and p.v in (0.0, 1.0):
        return rho_reference(p, params, cfg, RegionTag(Region.R1, cfg.eta_bar, None, None))
    r, _, flag = _kern(params, cfg).rho(p.eta, p.v, p.w)
    if flag[0] == ck.FLAG_FAIL or not np.isfinite(r[0]):
        return rho_reference(p, params, cfg)
    if p.eta > cfg.eta_bar and p.v >= 1 and flag[0] == ck.FLAG_L1_FORWARD:
        # a decaying characteristic uses the eta_bar anchor instead of L_1
        tag = classify_region(p, params, cfg)
        if tag.region is Region.R3:
            return rho_reference(p, params, cfg, tag)
    return float(r[0])


def rho_array(eta, v, w, params: Params, cfg: LyapunovConfig):
    """Vectorized rho (zero-crossing formulas) with anchors and kernel flags."""
    return _kern(params, cfg).rho(eta, v, w)


def big_phi(p: PhasePoint, params: Params, cfg: LyapunovConfig) -> float:
    _check_excluded(p.eta, p.v, cfg)
    if p.eta == 0:
        return 0.0
    return float(_kern(params, cfg).phi(p.eta, p.v, p.w)[0])


def big_phi_array(eta, v, w, params: Params, cfg: LyapunovConfig) -> np.ndarray:
    eta = np.asarray(eta, dtype=float)
    out = np.zeros(eta.shape)
    m = eta > 0
    if m.any():
        out[m] = _kern(params, cfg).phi(eta[m], np.asarray(v, float)[m], np.asarray(w, float)[m])
    return out


def rho_upper(eta, d):
    return eta ** (d + 1) * np.exp(-(d - 2) * eta ** 2 / (4 * d))


def phi_envelope(eta, v, w, d):
    """Polynomial envelope (w^2 + v^2/2 + v^3/3) times the rho upper bound."""
    return (w * w + v * v / 2 + v ** 3 / 3) * rho_upper(eta, d)


# Gauss nodes used when differencing Phi numerically
RESIDUAL_QUADRATURE = 128


def pde_residuals(eta, v, w, params: Params, cfg: LyapunovConfig, h: float = 5e-4):
    """Relative residuals of Phi_ww = rho and -Phi_v + Phi_eta_w + w Phi_vw = rho f.

    Phi is split into its w-part and mu-part; mu-part differences in v are
    integrated directly to avoid cancellation.  The step shrinks like
    min(1, eta, 3/eta) to keep the Gaussian weight resolved.  Stencils turn
    one-sided where a central one would leave R (w within h of 0, v within
    h of 0), so points of R1 can be sampled.  Where every term of the second
    relation vanishes (w = 0 and f = 0) it is measured relative to rho.
    Difference quotients amplify quadrature error by 1/h^2, so the kernel
    here uses at least RESIDUAL_QUADRATURE nodes whatever cfg asks for.
    """
    if cfg.quadrature_points < RESIDUAL_QUADRATURE:
        cfg = dataclasses.replace(cfg, quadrature_points=RESIDUAL_QUADRATURE)
    k = _kern(params, cfg)
    E, V, W = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (eta, v, w))
    H = h * np.minimum.reduce([np.ones_like(E), E, 3.0 / E])
    fwd_v = V - H < 0
    bwd_w = W + H > 0
    # first-derivative offsets and weights, second-derivative offsets and weights in w
    ov = np.where(fwd_v[:, None], [0, 1, 2], [-1, 0, 1])
    av = np.where(fwd_v[:, None], [-1.5, 2.0, -0.5], [-0.5, 0.0, 0.5])
    ow = np.where(bwd_w[:, None], [0, -1, -2], [-1, 0, 1])
    aw = np.where(bwd_w[:, None], [1.5, -2.0, 0.5], [-0.5, 0.0, 0.5])
    ow2 = np.where(bwd_w[:, None], [0, -1, -2, -3], [-1, 0, 1, 0])
    aw2 = np.where(bwd_w[:, None], [2.0, -5.0, 4.0, -1.0], [1.0, -2.0, 1.0, 0.0])
    nodes = []
    for j in range(3):
        for l in range(3):
            nodes.append((0 * E, ov[:, j], ow[:, l]))
    for l in range(3):
        nodes.append((E * 0 + 1, 0 * E, ow[:, l]))
        nodes.append((E * 0 - 1, 0 * E, ow[:, l]))
    for m in range(4):
        nodes.append((0 * E, 0 * E, ow2[:, m]))
    for j in range(3):
        nodes.append((0 * E, ov[:, j], 0 * E))
    P = k.w_part(np.concatenate([E + n[0] * H for n in nodes]),
                 np.concatenate([V + n[1] * H for n in nodes]),
                 np.concatenate([W + n[2] * H for n in nodes])).reshape(len(nodes), E.size)
    Pvw = sum(av[:, j] * aw[:, l] * P[3 * j + l] for j in range(3) for l in range(3)) / H ** 2
    Pew = sum(aw[:, l] * (P[9 + 2 * l] - P[10 + 2 * l]) for l in range(3)) / (2 * H ** 2)
    Pww = sum(aw2[:, m] * P[15 + m] for m in range(4)) / H ** 2
    Pv = 0.0
    for j in range(3):
        Vj = V + ov[:, j] * H
        Pv = Pv + av[:, j] * (P[19 + j] - k.mu_between(E, V, Vj))
    Pv = Pv / H
    r, anchor, flag = k.rho(E, V, W)
    f = f_array(E, V, W, params.d)
    r1 = np.abs(Pww - r) / r
    lhs = -Pv + Pew + W * Pvw
    scale = np.maximum.reduce([np.abs(Pv), np.abs(Pew), np.abs(W * Pvw), np.abs(r * f)])
    trivial = (W == 0) & (f == 0)
    scale = np.where(trivial, r, scale)
    r2 = np.abs(lhs - r * f) / scale
    return r1, r2, flag


def residual_sample(n: int, params: Params, cfg: LyapunovConfig, seed: int = 0,
                    eta_max: float = 10.0, gap: float = 0.01):
    """Phase points spread over the four regions for residual checks.

    Two fifths each are drawn uniformly with eta below and above eta_bar
    (R2a, R2b); one tenth lie on the constant characteristics v = 0, 1 with
    w = 0 (R1); one tenth lie on decaying solutions eta^2 phi -> C (R3).
    All points satisfy v <= M and |w| <= M_bar.
    Points within `gap` of eta = eta_bar are skipped, since rho jumps there.
    """
    M, Mb = cfg.bounds(params)
    rng = np.random.default_rng(seed)
    eb = cfg.eta_bar
    n1 = n3 = n // 10
    n2b = (n - n1 - n3) // 2
    n2a = n - n1 - n3 - n2b

    def etas(k, lo, hi):
        out = []
        while len(out) < k:
            e = rng.uniform(lo, hi)
            if abs(e - eb) > gap:
                out.append(e)
        return np.array(out)
    pts, reg = [], []
    e = etas(n2a, 0.1, eb)
    pts.append(np.c_[e, rng.uniform(0, M, n2a), -rng.uniform(0, Mb, n2a)])
    reg += [Region.R2A] * n2a
    e = etas(n2b, eb, eta_max)
    pts.append(np.c_[e, rng.uniform(0, M, n2b), -rng.uniform(0, Mb, n2b)])
    reg += [Region.R2B] * n2b
    e = etas(n1, 0.1, eta_max)
    pts.append(np.c_[e, (np.arange(n1) % 2).astype(float), np.zeros(n1)])
    reg += [Region.R1] * n1
    got = 0
    rows = []
    while got < n3:
        C = rng.uniform(0.5, 2.0 * params.d)
        e = etas(1, 0.3, eta_max)[0]
        tl = tail_solution(C, params.d, min(e, 0.3), 60.0)
        v, w = tl.sol(e)
        if tl.status == 0 and 0 < v <= M and -Mb <= w < 0:
            rows.append((e, v, w))
            got += 1
    pts.append(np.array(rows))
    reg += [Region.R3] * n3
    P = np.vstack(pts)
    return P[:, 0], P[:, 1], P[:, 2], reg


def region_of_flag(eta, v, w, flag, eta_bar):
    """Region label implied by a kernel flag (zero-crossing formulas)."""
    if w == 0 and v in (0.0, 1.0):
        return Region.R1
    return Region.R2A if eta <= eta_bar else Region.R2B


# ---------------------------------------------------------------------------
# calibration diagnostics

def calibrate_etabar(params: Params, candidates=(2.0, 4.0, 8.0, 16.0, 32.0),
                     slopes=None, margin: float = 2.0) -> dict:
    """First eta_1 for which phi(eta_1) = 1, phi'(eta_1) <= 0 forces phi' < -margin
    wherever phi lies in [0, 1/2] (the threshold itself is -1)."""
    if slopes is None:
        slopes = np.concatenate([[0.0], np.geomspace(1e-3, 10.0, 30)])
    d = params.d
    f = phi_rhs(d)
    results = {}
    chosen = None
    for e1 in candidates:
        worst = -np.inf
        for s in slopes:
            def low(x, y):
                return y[0] + 0.05
            low.terminal = True
            sol = solve_ivp(f, (e1, e1 + 40.0), [1.0, -s], method="DOP853", rtol=RTOL,
                            atol=ATOL, events=[low], dense_output=True)
            x = np.linspace(e1, sol.t[-1], 4000)
            p, q = sol.sol(x)
            band = (p >= 0) & (p <= 0.5)
            if band.any():
                worst = max(worst, float(q[band].max()))
        results[e1] = worst
        if chosen is None and worst < -margin:
            chosen = e1
    return {"eta_bar": chosen, "max_slope_in_band": results, "margin": margin}


def implied_C0(eta, r, d):
    """Smallest C with r >= C^-1 eta^(d+1) exp(-C eta^2)."""
    target = np.log(r / eta ** (d + 1))

    def g(C):
        return -np.log(C) - C * eta * eta - target
    if g(1.0) <= 0:
        lo = 1e-12
        if g(lo) <= 0:
            return lo
        return brentq(g, lo, 1.0)
    hi = 2.0
    while g(hi) > 0:
        hi *= 2
    return brentq(g, hi / 2, hi)


def calibrate_C0(params: Params, cfg: LyapunovConfig, samples: int = 1000, seed: int = 0,
                 eta_max: float = 12.0) -> dict:
    """Doubled maximum of the implied lower-bound constant over a sample of the bounded set."""
    M, Mb = cfg.bounds(params)
    rng = np.random.default_rng(seed)
    E = rng.uniform(0.05, eta_max, samples)
    V = rng.uniform(0.0, M, samples)
    W = -rng.uniform(0.0, Mb, samples)
    keep = np.abs(E - cfg.eta_bar) > 1e-9
    E, V, W = E[keep], V[keep], W[keep]
    r, _, flag = rho_array(E, V, W, params, cfg)
    ok = (flag != ck.FLAG_FAIL) & np.isfinite(r)
    Cs = np.array([implied_C0(e, x, params.d) for e, x in zip(E[ok], r[ok])])
    upper_ok = r[ok] <= rho_upper(E[ok], params.d) * (1 + 1e-9)
    return {"C0": 2.0 * float(Cs.max()), "n": int(ok.sum()), "failed": int((~ok).sum()),
            "positive": bool(np.all(r[ok] > 0)), "upper_ok": bool(np.all(upper_ok))}


def l1_growth(params: Params, cfg: LyapunovConfig, etas=None, a_grid=None, b_grid=None) -> dict:
    """max over (a, b) of L_1(eta, a, -b) / eta for eta on a grid."""
    M, Mb = cfg.bounds(params)
    if etas is None:
        etas = np.linspace(max(cfg.eta_bar, 5.0), 50.0, 10)
    if a_grid is None:
        a_grid = np.linspace(1.0, M, 6)
    if b_grid is None:
        b_grid = np.linspace(0.0, Mb, 6)
    ratios = []
    for e in etas:
        worst = 0.0
        for a in a_grid:
            for b in b_grid:
                L, _ = ck.integrate_to_level(float(e), float(a), -float(b), float(e) + 60.0, 1.0,
                                             -1, float(params.d), 4 * cfg.char_steps,
                                             ck.DOP_A, ck.DOP_B, ck.DOP_C)
                if L < 0:
                    # fixed steps are unstable once eta*phi/d is large; retry adaptively
                    L, _ = _to_level(float(e), float(a), -float(b), float(e) + 60.0, 1.0, -1,
                                     params.d)
                worst = max(worst, L / e)
        ratios.append(worst)
    return {"eta": np.asarray(etas), "ratio": np.asarray(ratios), "C": float(max(ratios))}


# ---------------------------------------------------------------------------
# the functional along rescaled trajectories

def _profile_phase(state: RescaledState):
    from scipy.interpolate import CubicSpline
    x = state.B.grid
    B = np.asarray(state.B.values)
    Bp = state_slope(state)
    return CubicSpline(x, B), CubicSpline(x, Bp), float(x[-1])


def _phase_clean(eta, v, w, where):
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    bad_w = w > W_TOL * scale
    bad_v = v < -W_TOL
    if bad_w.any() or bad_v.any():
        i = int(np.argmax(bad_w | bad_v))
        raise DomainError(f"{where}: phase point {i} at eta = {eta[i]:.6g} "
                          f"(v = {v[i]:.3g}, w = {w[i]:.3g}) lies outside R")
    return np.maximum(v, 0.0), np.minimum(w, 0.0)


def energy_nodes(edge: float, cfg: LyapunovConfig):
    """Composite Gauss-Legendre nodes on [0, min(edge, cut)] split at eta_bar."""
    top = min(edge, cfg.energy_cut)
    breaks = [0.0]
    if cfg.eta_bar < top:
        breaks += list(np.arange(0.0, cfg.eta_bar, cfg.energy_panel)[1:]) + [cfg.eta_bar]
        start = cfg.eta_bar
    else:
        start = 0.0
    n = max(1, int(np.ceil((top - start) / cfg.energy_panel)))
    breaks += list(np.linspace(start, top, n + 1)[1:])
    breaks = np.unique(breaks)
    gx, gw = np.polynomial.legendre.leggauss(cfg.energy_nodes)
    a, b = breaks[:-1, None], breaks[1:, None]
    x = (a + (b - a) * (gx + 1) / 2).ravel()
    w = ((b - a) / 2 * gw).ravel()
    return x, w


def energy_E(state: RescaledState, params: Params, cfg: LyapunovConfig) -> float:
    """E = int_0^ell Phi(eta, B, B_eta) d eta by composite quadrature."""
    Bs, Bps, edge = _profile_phase(state)
    x, w = energy_nodes(edge, cfg)
    v, s = _phase_clean(x, Bs(x), Bps(x), f"state tau = {state.tau:.4g}")
    return float(np.dot(w, big_phi_array(x, v, s, params, cfg)))


def psi_integrand(trace: np.ndarray, params: Params, cfg: LyapunovConfig) -> np.ndarray:
    """Boundary integrand ell Phi/2 + B_tau int_0^{B_eta} rho ds at each trace row.

    Rows are (tau, ell, B_edge, B_eta_edge, edge) with B_tau = -B - ell B_eta / 2.
    Rows whose weight envelope underflows contribute exactly zero.
    """
    tr = np.asarray(trace, dtype=float)
    ell, Be, Bpe = tr[:, 1], tr[:, 2], np.minimum(tr[:, 3], 0.0)
    d = params.d
    env = phi_envelope(ell, np.abs(Be), Bpe, d) * (1 + ell)
    live = env > 1e-18
    g = np.zeros(len(tr))
    if live.any():
        k = _kern(params, cfg)
        E, V, W = ell[live], np.maximum(Be[live], 0.0), Bpe[live]
        # W is the upper limit; slope_integral returns int_0^W rho ds
        Phi = k.phi(E, V, W)
        S = k.slope_int(E, V, W)
        Bt = -V - E * W / 2
        g[live] = 0.5 * E * Phi + Bt * S
    return g


def psi_between(trace: np.ndarray, g: np.ndarray, a: float, b: float):
    """Left and right Riemann sums of the boundary integrand over [a, b]."""
    t = trace[:, 0]
    m = (t >= a - 1e-12) & (t <= b + 1e-12)
    tt, gg = t[m], g[m]
    if tt.size < 2:
        return 0.0, 0.0
    dt = np.diff(tt)
    return float(np.dot(gg[:-1], dt)), float(np.dot(gg[1:], dt))


@dataclass
class MonotonicityRow:
    tau_a: float
    tau_b: float
    E_a: float
    E_b: float
    lhs: float
    psi: float
    ok: bool


def monotonicity_check(states, params: Params, cfg: LyapunovConfig, trace=None,
                       tol: float = 1e-6, energies=None) -> list:
    """E(b) - E(a) <= psi(a, b) + tol for consecutive checkpoints.

    psi is accumulated from the boundary trace recorded by the solver; both
    Riemann orderings are evaluated and the larger one is used.  Without a
    trace psi is taken as zero (fixed boundary).
    """
    if len(states) < 2:
        raise ValueError("need at least two checkpoints")
    if energies is None:
        energies = [energy_E(s, params, cfg) for s in states]
    g = None
    if trace is not None and len(trace):
        trace = np.asarray(trace, dtype=float)
        g = psi_integrand(trace, params, cfg)
    rows = []
    for (sa, Ea), (sb, Eb) in zip(zip(states[:-1], energies[:-1]), zip(states[1:], energies[1:])):
        a, b = sa.tau, sb.tau
        psi = 0.0
        if g is not None:
            lo, hi = (a, b) if a <= b else (b, a)
            left, right = psi_between(trace, g, lo, hi)
            psi = max(left, right) if a <= b else -min(left, right)
        lhs = Eb - Ea
        rows.append(MonotonicityRow(a, b, Ea, Eb, lhs, psi, bool(lhs <= psi + tol)))
    return rows


def synthetic_state(tau: float, eta: np.ndarray, values: np.ndarray, T: float = 1.0) -> RescaledState:
    """RescaledState holding an arbitrary profile on a uniform grid starting at 0."""
    return RescaledState(float(tau), RadialField(eta, values, CoordinateKind.SELFSIM_ETA),
                         float(eta[-1]), float(T))
