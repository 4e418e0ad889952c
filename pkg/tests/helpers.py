"""Toy problems and independent reference implementations used by the tests.

Nothing here calls into the code under test beyond the problem hooks, so a
bug in the package cannot cancel out against the same bug in its check.
"""

import math
import os
from fractions import Fraction

import numpy as np

from pnpbo.model import BilevelProblem
from pnpbo.theory import SmoothnessParams


# -- toy problems -----------------------------------------------------------------
class ScalarToy(BilevelProblem):
    """Scalar x and y with ``F_i = y^2/2 + s_i y + t_i x`` and ``G_j = w_j (y - x)^2 / 2``.

    With the defaults (one sample, ``s = t = 0``, ``w = 1``) this is the
    worked case ``f = y^2/2``, ``g = (y - x)^2/2``, where ``y* = z* = x`` and
    ``grad H(x) = x``.
    """

    quadratic_ll = True
    dim_x = 1
    dim_y = 1

    def __init__(self, s=(0.0,), t=None, w=(1.0,)):
        self.s = np.asarray(s, dtype=float)
        self.t = np.zeros_like(self.s) if t is None else np.asarray(t, dtype=float)
        self.w = np.asarray(w, dtype=float)
        self.n, self.m = len(self.s), len(self.w)
        wbar = float(self.w.mean())
        self.smoothness = SmoothnessParams(Lf=1.0, Lg1=float(self.w.max()), Lg2=1.0, mu=wbar, Cf=1.0)

    def _grad1_f(self, idx, x, y):
        return self.t[idx][:, None] + 0.0 * x

    def _grad2_f(self, idx, x, y):
        return (y[0] + self.s[idx])[:, None]

    def _grad2_g(self, idx, x, y):
        return (self.w[idx] * (y[0] - x[0]))[:, None]

    def _hvp22_g(self, idx, x, y, v):
        return (self.w[idx] * v[0])[:, None]

    def _jvp12_g(self, idx, x, y, v):
        return (-self.w[idx] * v[0])[:, None]

    def _value_f(self, idx, x, y):
        return 0.5 * y[0] ** 2 + self.s[idx] * y[0] + self.t[idx] * x[0]

    def _value_g(self, idx, x, y):
        return 0.5 * self.w[idx] * (y[0] - x[0]) ** 2

    def solve_lower_closed_form(self, x):
        # mean_j w_j (y - x) = 0
        return np.array([x[0]])


def vec(*v):
    return np.array(v, dtype=float)


# -- dense reference for any problem with small dimensions ---------------------------
def dense_blocks(problem, x, y):
    """Averaged ``d22 g``, ``d12 g`` (as dim_x x dim_y) by probing the per-sample hooks."""
    J = np.arange(problem.m)
    eye_y = np.eye(problem.dim_y)
    H22 = np.column_stack([problem.hvp22_g(J, x, y, e).mean(axis=0) for e in eye_y])
    H12 = np.column_stack([problem.jvp12_g(J, x, y, e).mean(axis=0) for e in eye_y])
    return H22, H12


def dense_quadratic_hypergradient(problem, x):
    """``(y*, z*, grad H)`` for a quadratic lower level via dense factorisations.

    ``y*`` solves ``d22 g y = d22 g y0 - grad_2 g(x, y0)`` at ``y0 = 0``,
    which is exact because ``grad_2 g`` is affine in ``y``.
    """
    y0 = np.zeros(problem.dim_y)
    I, J = np.arange(problem.n), np.arange(problem.m)
    H22, H12 = dense_blocks(problem, x, y0)
    g0 = problem.grad2_g(J, x, y0).mean(axis=0)
    y = np.linalg.solve(H22, -g0)
    rhs = problem.grad2_f(I, x, y).mean(axis=0)
    z = np.linalg.solve(H22, rhs)
    grad = problem.grad1_f(I, x, y).mean(axis=0) - H12 @ z
    return y, z, grad


def central_difference(func, x, h):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (func(x + e) - func(x - e)) / (2 * h)
    return g


# -- ledger constants in exact rational arithmetic -------------------------------------
def ledger_exact(Lf, Lg1, Lg2, mu, Cf, n, m):
    """Every ledger constant, evaluated term by term from the closed forms.

    Inputs are converted to :class:`Fraction` so the result is exact up to
    the final rounding to float.
    """
    Lf, Lg1, Lg2, mu, Cf = (Fraction(v) for v in (Lf, Lg1, Lg2, mu, Cf))
    R = Cf / mu
    Ly = Lg1 / mu
    Lz = (Lf / mu + Cf * Lg2 / mu**2) * (1 + Lg1 / mu)
    LH = (Lf + (2 * Lf * Lg2 + Cf**2 * Lg2) / mu
          + (Lf * Lg1**2 + 2 * Cf * Lg1 * Lg2) / mu**2 + Cf * Lg1**2 * Lg2 / mu**3)
    c1 = Lf**2 + (Lg2 * R) ** 2
    c2 = Lg1**2
    cbar = min((mu + Lg1) / (mu * Lg1), 1 / (mu + Lg1))
    c3 = mu * Lg1 / (2 * (mu + Lg1))
    c4 = 6 * (mu + Lg1) / (mu * Lg1)
    c5 = 2 * (mu + Lg1) * Ly**2 / (mu * Lg1)
    c6 = 2 * Ly**2 / mu
    c7 = Lz**2 / c3
    c8 = 8 * c1 / mu
    c9 = 3 * Lz**2 / mu
    Lzsq = max(3 * Lg1**2, 3 * R**2 * Lg2**2 + 3 * Lf**2)
    Lpp = max(4 * Lf**2, 8 * Lg2**2 * R**2, 8 * Lg1**2)
    M1 = min(1 / (64 * c1), c3**2 / (288 * c1 * c2), c3**2 / (192 * c2 * Lzsq),
             Fraction(1, 32) / c2, Ly**2 / (96 * c1), Lz**2 / (96 * c1))
    M2 = min(mu / (264 * c1 * c2), 11 * c8**2 / (24 * c2 * Lzsq * mu), 1 / (384 * c1),
             11 * c8 / (120 * c2 * Lzsq), 11 * c8 / (384 * c2 * mu))
    M3 = min(M2, c6 / (4 * c1))
    exact = dict(R=R, L_ystar=Ly, L_zstar=Lz, L_H=LH, c_bar=cbar, c1=c1, c2=c2, c3=c3, c4=c4,
                 c5=c5, c6=c6, c7=c7, c8=c8, c9=c9, Lz_sq=Lzsq, L_pp=Lpp, M1=M1, M2=M2, M3=M3)
    out = {k: float(v) for k, v in exact.items()}
    out["tau"] = max(n, m)
    return out


# -- biased-regime inequality system, scanned on a grid ---------------------------------
def biased_system(C, algorithm, N, b=None):
    """Return ``feasible(alpha, beta, gamma)`` for SFFBA, MSEBA or SPABA from a ledger dict ``C``."""
    b = math.ceil(math.sqrt(N)) if b is None else b
    p = b / (N + b)
    rb = b / (2 * N)
    tau, Lpp, c1, c2 = C["tau"], C["L_pp"], C["c1"], C["c2"]
    den = 16 * c1 + 3 * Lpp
    c_beta = min(C["c_bar"], math.sqrt(c1 / (4 * c2 * den)),
                 math.sqrt(c1 * C["c3"] ** 2 / (18 * c2**2 * den)),
                 math.sqrt(c1 * C["L_ystar"] ** 2 / (12 * c2 * den)))
    # coefficient brackets per unit step: A*eta + A'*etahat
    zs_eta, zs_hat1, zs_hat2 = 2 / b, 3 * tau / (4 * c1 * b), 3 * tau / (4 * c2 * b)
    sarah_x = (1 / rb) * zs_eta + 2 * rb * Lpp * zs_hat1
    sarah_z = (1 / rb) * zs_eta + 2 * rb * Lpp * zs_hat2
    page = (1 / p) * (1 - p) / b
    if algorithm == "SFFBA":
        ax, by, cz = sarah_x, sarah_x, sarah_z
        c_ab = c_gb = math.sqrt(4 * c1 * C["M1"] / den)
    elif algorithm == "MSEBA":
        ax, by, cz = page, sarah_x, page
        c_ab = c_gb = C["M1"]
    elif algorithm == "SPABA":
        ax = by = cz = page
        c_beta = c_ab = c_gb = math.inf
    else:
        raise ValueError(algorithm)

    def feasible(a, be, g):
        return all([
            a <= 1 / (2 * C["L_H"]), be <= C["c_bar"], g <= C["c_bar"],
            by * be * be <= min(1 / (16 * c2), C["c3"] ** 2 / (72 * c2**2), C["L_ystar"] ** 2 / (48 * c2)),
            a <= 3 * be / (4 * C["L_ystar"] ** 2), a <= C["c3"] ** 2 * be / (108 * c1),
            a <= 3 * g / (8 * C["L_zstar"] ** 2), a <= C["c3"] ** 2 * g / (36 * c2),
            g <= 2 * be / 3,
            ax * a * be <= C["M1"], cz * g * be <= C["M1"],
            be <= c_beta, a * be <= c_ab, g * be <= c_gb,
        ])

    return feasible


def grid_scan_max(pred, hi, levels=12, points=201):
    """Largest ``t`` in ``[0, hi]`` with ``pred(t)``, by successively finer uniform grids."""
    lo, top = 0.0, hi
    best = 0.0
    for _ in range(levels):
        grid = np.linspace(lo, top, points)
        ok = [t for t in grid if pred(t)]
        if not ok:
            break
        best = max(ok)
        step = grid[1] - grid[0]
        lo, top = best, min(hi, best + step)
        if top <= lo:
            break
    return best


# -- estimators from point memories -------------------------------------------------------
class PointMemorySAGA:
    """SAGA storing the iterate each component was last evaluated at."""

    def __init__(self, evaluate_f, evaluate_g, n, m, it0):
        self.ef, self.eg = evaluate_f, evaluate_g
        self.wf = [it0] * n
        self.wg = [it0] * m

    def estimate(self, it, I, J):
        n, m = len(self.wf), len(self.wg)
        avg_f = sum(self.ef(i, self.wf[i]) for i in range(n)) / n
        avg_g = sum(self.eg(j, self.wg[j]) for j in range(m)) / m
        vf = np.mean([self.ef(i, it) - self.ef(i, self.wf[i]) for i in I], axis=0) + avg_f
        vg = np.mean([self.eg(j, it) - self.eg(j, self.wg[j]) for j in J], axis=0) + avg_g
        for i in I:
            self.wf[i] = it
        for j in J:
            self.wg[j] = it
        return vf, vg


# -- parser fixtures: file name -> (line, byte offset) of the expected error -----------------
FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")
MALFORMED_LIBSVM = {
    "bad_value.libsvm": (2, 12),
    "bad_index.libsvm": (1, 2),
    "bad_label.libsvm": (2, 6),
}
MALFORMED_IDX = {
    "truncated_header.idx": 4,
    "bad_magic.idx": 0,
    "truncated_data.idx": 13,
}
THREE_LIBSVM_ROWS = [[0.5, 0, 2, 0], [0, -1.25, 0, 0], [1, 2, 0, 4]]
THREE_LIBSVM_LABELS = [1.0, -1.0, 0.0]


def fixture(name):
    return os.path.join(FIXTURE_DIR, name)
