"""Compiled kernels for the characteristic ODE used by the Lyapunov weight.

The characteristic equation phi'' + f(xi, phi, phi') = 0 is integrated in the
variable x = log(xi) with state (phi, q = xi*phi', I) where
dI/dx = xi^2*phi/d accumulates the integral of xi*phi/d.  A fixed number of
DOP853 steps is used so that the result depends smoothly on the starting
point; events are located by a secant iteration on the length of a partial
step.
"""
import numpy as np
import numba as nb
from math import exp, log

from scipy.integrate._ivp import dop853_coefficients as _dop

_NS = _dop.N_STAGES
DOP_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
DOP_B = np.ascontiguousarray(_dop.B)
DOP_C = np.ascontiguousarray(_dop.C[:_NS])

# flags returned by rho_kernel
FLAG_ZERO_HIT = 1      # eta <= etabar, phi reached 0 before etabar
FLAG_ETABAR = 0        # eta <= etabar, anchored at etabar
FLAG_L1_FORWARD = 2    # eta > etabar, v >= 1, phi fell to 1 ahead
FLAG_L1_BACKWARD = 3   # eta > etabar, v < 1, phi rose to 1 behind
FLAG_BACK_ETABAR = 4   # eta > etabar, v < 1, anchored at etabar
FLAG_FAIL = -1


@nb.njit(cache=True)
def _stage_rhs(xi, p, q, d):
    x2 = xi * xi
    return q, -d * q + x2 * (0.5 * q - p * q / d - p * p + p), x2 * p / d


@nb.njit(cache=True)
def _dop_step(x, p, q, I, h, d, A, Bw, EC, K):
    # EC[i] = exp(C[i]*h) for the stage abscissae
    ns = A.shape[0]
    ex = exp(x)
    for i in range(ns):
        pp = p
        qq = q
        for j in range(i):
            a = h * A[i, j]
            pp += a * K[j, 0]
            qq += a * K[j, 1]
        k0, k1, k2 = _stage_rhs(ex * EC[i], pp, qq, d)
        K[i, 0] = k0
        K[i, 1] = k1
        K[i, 2] = k2
    dp = 0.0
    dq = 0.0
    dI = 0.0
    for i in range(ns):
        dp += Bw[i] * K[i, 0]
        dq += Bw[i] * K[i, 1]
        dI += Bw[i] * K[i, 2]
    return p + h * dp, q + h * dq, I + h * dI


@nb.njit(cache=True)
def integrate_to_level(eta, v, w, target, level, direction, d, n, A, Bw, C):
    """Integrate from eta toward target until phi crosses level.

    direction = -1 stops when phi <= level, +1 when phi >= level.
    Returns (stop point, integral of xi*phi/d from eta to the stop point,
    signed by the integration direction).  A stop point of -1 signals
    overflow of the trajectory.
    """
    K = np.empty((A.shape[0], 3))
    x = log(eta)
    h = (log(target) - x) / n
    EC = np.empty(C.shape[0])
    ECs = np.empty(C.shape[0])
    for i in range(C.shape[0]):
        EC[i] = exp(C[i] * h)
    p = v
    q = eta * w
    I = 0.0
    if direction < 0 and p <= level:
        return eta, 0.0
    if direction > 0 and p >= level:
        return eta, 0.0
    for k in range(n):
        pn, qn, In = _dop_step(x, p, q, I, h, d, A, Bw, EC, K)
        if not (abs(pn) < 1e100 and abs(qn) < 1e100):
            return -1.0, 0.0
        cross = (direction < 0 and pn <= level) or (direction > 0 and pn >= level)
        if cross:
            s0 = 0.0
            g0 = p - level
            s1 = 1.0
            g1 = pn - level
            Ic = In
            sc = 1.0
            for it in range(60):
                if g1 == g0:
                    break
                s2 = s1 - g1 * (s1 - s0) / (g1 - g0)
                if s2 < 0.0:
                    s2 = 0.5 * s1
                if s2 > 1.0:
                    s2 = 0.5 * (1.0 + s1)
                for i in range(C.shape[0]):
                    ECs[i] = exp(C[i] * s2 * h)
                ps, qs, Is = _dop_step(x, p, q, I, s2 * h, d, A, Bw, ECs, K)
                s0 = s1
                g0 = g1
                s1 = s2
                g1 = ps - level
                sc = s2
                Ic = Is
                if abs(g1) <= 1e-15 * (1.0 + abs(level)):
                    break
            return exp(x + sc * h), Ic
        p = pn
        q = qn
        I = In
        x = x + h
    return target, I


@nb.njit(cache=True)
def rho_kernel(eta, v, w, etabar, d, n, A, Bw, C):
    """Weight rho at a phase point; returns (rho, anchor, flag)."""
    if eta <= 0.0:
        return 0.0, 0.0, FLAG_ETABAR
    if eta <= etabar:
        L, I = integrate_to_level(eta, v, w, etabar, 0.0, -1, d, n, A, Bw, C)
        if L < 0.0:
            return np.nan, L, FLAG_FAIL
        fl = FLAG_ZERO_HIT if L < etabar else FLAG_ETABAR
        return eta ** (d + 1) * exp(-eta * eta / 4 - I), L, fl
    if v >= 1.0:
        cap = eta + 8.0
        L, I = integrate_to_level(eta, v, w, cap, 1.0, -1, d, n, A, Bw, C)
        if L < 0.0 or L >= cap:
            return np.nan, L, FLAG_FAIL
        val = eta ** (d + 1) * exp(-eta * eta / 4 + L * L / (2 * d)
                                   - etabar * etabar / (2 * d) - I)
        return val, L, FLAG_L1_FORWARD
    L, I = integrate_to_level(eta, v, w, etabar, 1.0, 1, d, n, A, Bw, C)
    if L < 0.0:
        return np.nan, L, FLAG_FAIL
    fl = FLAG_L1_BACKWARD if L > etabar else FLAG_BACK_ETABAR
    val = eta ** (d + 1) * exp(-eta * eta / 4 + L * L / (2 * d)
                               - etabar * etabar / (2 * d) - I)
    return val, L, fl


@nb.njit(cache=True)
def _steps_for(eta, n_base):
    # more steps for far-out points where the characteristic is stiffer
    if eta <= 8.0:
        return n_base
    if eta <= 16.0:
        return 2 * n_base
    return 4 * n_base


@nb.njit(cache=True)
def _rho(eta, v, w, etabar, d, n_base, A, Bw, C):
    return rho_kernel(eta, v, w, etabar, d, _steps_for(eta, n_base), A, Bw, C)


@nb.njit(cache=True)
def _switch_points(eta, v0, dv, w0, dw, etabar, d, n_base, K, A, Bw, C):
    # probe the segment (v0 + t dv, w0 + t dw), t in [0, 1], and bisect
    # every change of anchor type
    flags = np.empty(K + 1, np.int64)
    for j in range(K + 1):
        t = j / K
        flags[j] = _rho(eta, v0 + t * dv, w0 + t * dw, etabar, d, n_base, A, Bw, C)[2]
    out = [0.0]
    for j in range(K):
        if flags[j] != flags[j + 1]:
            lo = j / K
            hi = (j + 1) / K
            flo = flags[j]
            for it in range(32):
                mid = 0.5 * (lo + hi)
                fl = _rho(eta, v0 + mid * dv, w0 + mid * dw, etabar, d, n_base, A, Bw, C)[2]
                if fl == flo:
                    lo = mid
                else:
                    hi = mid
            out.append(0.5 * (lo + hi))
    out.append(1.0)
    return np.array(out)


@nb.njit(cache=True)
def w_integral(eta, v, w, etabar, d, n_base, gx, gw, K, A, Bw, C):
    """Integral over s in (0, w) of (w - s) rho(eta, v, s)."""
    if w == 0.0:
        return 0.0
    br = _switch_points(eta, v, 0.0, 0.0, w, etabar, d, n_base, K, A, Bw, C)
    tot = 0.0
    for k in range(len(br) - 1):
        a = br[k]
        b = br[k + 1]
        for j in range(len(gx)):
            t = a + (b - a) * 0.5 * (gx[j] + 1)
            s = t * w
            r = _rho(eta, v, s, etabar, d, n_base, A, Bw, C)[0]
            tot += (w - s) * r * 0.5 * (b - a) * gw[j] * w
    return tot


@nb.njit(cache=True)
def slope_integral(eta, v, w, etabar, d, n_base, gx, gw, K, A, Bw, C):
    """Integral over s in (0, w) of rho(eta, v, s)."""
    if w == 0.0:
        return 0.0
    br = _switch_points(eta, v, 0.0, 0.0, w, etabar, d, n_base, K, A, Bw, C)
    tot = 0.0
    for k in range(len(br) - 1):
        a = br[k]
        b = br[k + 1]
        for j in range(len(gx)):
            t = a + (b - a) * 0.5 * (gx[j] + 1)
            r = _rho(eta, v, t * w, etabar, d, n_base, A, Bw, C)[0]
            tot += r * 0.5 * (b - a) * gw[j] * w
    return tot


@nb.njit(cache=True)
def mu_integral_between(eta, v0, v1, etabar, d, n_base, gx, gw, K, A, Bw, C):
    """Integral over mu in (v0, v1) of rho(eta, mu, 0) f(eta, mu, 0)."""
    if v1 == v0:
        return 0.0
    sgn = 1.0
    if v1 < v0:
        v0, v1 = v1, v0
        sgn = -1.0
    if v0 < 1.0 < v1:
        edges = np.array([v0, 1.0, v1])
    else:
        edges = np.array([v0, v1])
    tot = 0.0
    for q in range(len(edges) - 1):
        m0 = edges[q]
        m1 = edges[q + 1]
        br = _switch_points(eta, m0, m1 - m0, 0.0, 0.0, etabar, d, n_base, K, A, Bw, C)
        for k in range(len(br) - 1):
            a = br[k]
            b = br[k + 1]
            for j in range(len(gx)):
                t = a + (b - a) * 0.5 * (gx[j] + 1)
                mu = m0 + t * (m1 - m0)
                r = _rho(eta, mu, 0.0, etabar, d, n_base, A, Bw, C)[0]
                tot += r * (mu * mu - mu) * 0.5 * (b - a) * gw[j] * (m1 - m0)
    return sgn * tot


@nb.njit(cache=True)
def mu_integral(eta, v, etabar, d, n_base, gx, gw, K, A, Bw, C):
    """Integral over mu in (0, v) of rho(eta, mu, 0) f(eta, mu, 0)."""
    if v <= 0.0:
        return 0.0
    return mu_integral_between(eta, 0.0, v, etabar, d, n_base, gx, gw, K, A, Bw, C)


@nb.njit(cache=True)
def rho_many(E, V, W, etabar, d, n_base, A, Bw, C):
    m = E.shape[0]
    out = np.empty(m)
    anchor = np.empty(m)
    flag = np.empty(m, np.int64)
    for i in range(m):
        r, L, fl = _rho(E[i], V[i], W[i], etabar, d, n_base, A, Bw, C)
        out[i] = r
        anchor[i] = L
        flag[i] = fl
    return out, anchor, flag


@nb.njit(cache=True)
def big_phi_many(E, V, W, etabar, d, n_base, gx, gw, K, A, Bw, C):
    m = E.shape[0]
    out = np.empty(m)
    for i in range(m):
        out[i] = (w_integral(E[i], V[i], W[i], etabar, d, n_base, gx, gw, K, A, Bw, C)
                  - mu_integral(E[i], V[i], etabar, d, n_base, gx, gw, K, A, Bw, C))
    return out


@nb.njit(cache=True)
def w_integral_many(E, V, W, etabar, d, n_base, gx, gw, K, A, Bw, C):
    m = E.shape[0]
    out = np.empty(m)
    for i in range(m):
        out[i] = w_integral(E[i], V[i], W[i], etabar, d, n_base, gx, gw, K, A, Bw, C)
    return out


@nb.njit(cache=True)
def mu_integral_many(E, V, etabar, d, n_base, gx, gw, K, A, Bw, C):
    m = E.shape[0]
    out = np.empty(m)
    for i in range(m):
        out[i] = mu_integral(E[i], V[i], etabar, d, n_base, gx, gw, K, A, Bw, C)
    return out


@nb.njit(cache=True)
def mu_between_many(E, V0, V1, etabar, d, n_base, gx, gw, K, A, Bw, C):
    m = E.shape[0]
    out = np.empty(m)
    for i in range(m):
        out[i] = mu_integral_between(E[i], V0[i], V1[i], etabar, d, n_base, gx, gw, K, A, Bw, C)
    return out


@nb.njit(cache=True)
def slope_integral_many(E, V, W, etabar, d, n_base, gx, gw, K, A, Bw, C):
    m = E.shape[0]
    out = np.empty(m)
    for i in range(m):
        out[i] = slope_integral(E[i], V[i], W[i], etabar, d, n_base, gx, gw, K, A, Bw, C)
    return out
