"""Shared numerical building blocks: stencils and a linearly implicit stepper."""
from __future__ import annotations

from math import sqrt

import numpy as np
from scipy.linalg.lapack import dgbtrf, dgbtrs

ROS_GAMMA = 1.0 + 1.0 / sqrt(2.0)


def fornberg(x0: float, x: np.ndarray, m: int) -> np.ndarray:
    """Finite-difference weights for derivatives 0..m at x0 from nodes x."""
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - x0
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


class EvenStencil:
    """Banded first/second derivative operators for even functions on [0, L].

    Nodes are x[0] = 0 < x[1] < ...; ghost values at negative abscissae are
    folded back onto their mirror nodes so B_eta(0) = 0 holds exactly.
    """

    def __init__(self, x: np.ndarray, width: int = 5):
        x = np.asarray(x, dtype=float)
        if x[0] != 0.0:
            raise ValueError("first node must be 0")
        n = len(x)
        half = width // 2
        ext = np.concatenate([-x[half:0:-1], x])
        node = np.concatenate([np.arange(half, 0, -1), np.arange(n)])
        cols = np.empty((n, width), dtype=int)
        w1 = np.empty((n, width))
        w2 = np.empty((n, width))
        for i in range(n):
            e = i + half
            lo = min(max(e - half, 0), len(ext) - width)
            js = np.arange(lo, lo + width)
            c = fornberg(x[i], ext[js], 2)
            cols[i] = node[js]
            w1[i] = c[1]
            w2[i] = c[2]
        self.x = x
        self.n = n
        self.cols = cols
        self.w1 = w1
        self.w2 = w2
        self.bw = int(np.abs(cols - np.arange(n)[:, None]).max())
        # banded images of the two operators and the row index of each slot
        self.ab1 = self.to_banded(w1)
        self.ab2 = self.to_banded(w2)
        k = np.arange(2 * self.bw + 1)[:, None]
        j = np.arange(n)[None, :]
        self.slot_row = np.clip(j + k - self.bw, 0, n - 1)

    def d1(self, y):
        return (self.w1 * y[self.cols]).sum(axis=1)

    def d2(self, y):
        return (self.w2 * y[self.cols]).sum(axis=1)

    def to_banded(self, rowweights: np.ndarray, diag: np.ndarray | None = None) -> np.ndarray:
        """Banded storage (solve_banded layout) of sum_j rowweights[i, j] e_{cols[i, j]}."""
        n, bw = self.n, self.bw
        ab = np.zeros((2 * bw + 1, n))
        rows = np.repeat(np.arange(n), self.cols.shape[1])
        cols = self.cols.ravel()
        np.add.at(ab, (bw + rows - cols, cols), rowweights.ravel())
        if diag is not None:
            ab[bw] += diag
        return ab


def scaled_banded(st: "EvenStencil", c1: np.ndarray, c2: np.ndarray) -> np.ndarray:
    """Banded storage of diag(c2) D2 + diag(c1) D1."""
    return st.ab2 * c2[st.slot_row] + st.ab1 * c1[st.slot_row]


class BandedLU:
    """LU factorization of a banded matrix given in solve_banded layout."""

    def __init__(self, ab: np.ndarray, lu: tuple[int, int]):
        l, u = lu
        n = ab.shape[1]
        a = np.zeros((2 * l + u + 1, n), order="F")
        a[l:, :] = ab
        self.l, self.u = l, u
        self.lub, self.piv, info = dgbtrf(a, l, u, overwrite_ab=1)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded factorization failed (info={info})")

    def solve(self, b: np.ndarray) -> np.ndarray:
        x, info = dgbtrs(self.lub, self.l, self.u, b, self.piv)
        if info != 0:
            raise np.linalg.LinAlgError(f"banded solve failed (info={info})")
        return x


def banded_identity_minus(ab_J: np.ndarray, lu: tuple[int, int], fac: float) -> np.ndarray:
    """Banded storage of I - fac * J."""
    ab = -fac * ab_J
    ab[lu[1]] += 1.0
    return ab


def ros2_step(problem, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One step of the second-order Rosenbrock W-method (gamma = 1 + 1/sqrt 2).

    problem.rhs_jac(t, y) returns (F, ab_J, (l, u)) with the Jacobian in
    banded storage.  The method is second order for any Jacobian
    approximation, so no time derivative of F is needed.
    """
    F, abJ, lu = problem.rhs_jac(t, y)
    fac = BandedLU(banded_identity_minus(abJ, lu, ROS_GAMMA * h), lu)
    k1 = fac.solve(F)
    F2 = problem.rhs(t + h, y + h * k1)
    k2 = fac.solve(F2 - 2.0 * k1)
    return y + 1.5 * h * k1 + 0.5 * h * k2


def richardson_step(problem, t: float, y: np.ndarray, h: float):
    """Extrapolated step from one full and two half ROS2 steps.

    Returns (y_new, err) with err = max |y_half - y_full| componentwise, an
    estimate of the local error of the unextrapolated half-step solution.
    """
    yf = ros2_step(problem, t, y, h)
    ym = ros2_step(problem, t, y, 0.5 * h)
    yh = ros2_step(problem, t + 0.5 * h, ym, 0.5 * h)
    diff = yh - yf
    return yh + diff / 3.0, diff


def error_norm(diff: np.ndarray, y: np.ndarray, atol: float, rtol: float) -> float:
    return float(np.max(np.abs(diff) / (atol + rtol * np.abs(y))))


def next_step(h: float, err: float, order: int = 3, safety: float = 0.9,
              grow: float = 2.0, shrink: float = 0.2) -> float:
    if err == 0.0:
        return h * grow
    return h * min(grow, max(shrink, safety * err ** (-1.0 / order)))
