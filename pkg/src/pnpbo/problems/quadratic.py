"""Random quadratic bilevel instances with closed-form y*, z* and grad H.

    G_j(x, y) = 1/2 y'A_j y - y'(B_j x + c_j)
    F_i(x, y) = 1/2 y'P_i y - y'd_i + 1/2 x'E_i x + x'K_i y

The per-sample blocks are a shared mean plus zero-mean noise, so the averaged
lower-level Hessian is exactly the mean block, whose spectrum is placed in
``[mu, L]``. A diagonal shift on the mean ``E`` makes ``H`` strongly convex
so the upper level has a unique stationary point.
"""

import numpy as np

from .._validation import check_int, check_scalar
from ..model import BilevelProblem
from ..theory import SmoothnessParams

# Hessians of a quadratic are constant; the declared Lipschitz constant of
# the lower-level Hessian must still be positive for the ledger
LG2_FLOOR = 1e-12


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _zero_mean(rng, shape, scale):
    w = rng.standard_normal(shape)
    return scale * (w - w.mean(axis=0))


class QuadraticBilevel(BilevelProblem):
    quadratic_ll = True

    def __init__(self, A, B, c, P, d, E, K, x_radius=None):
        self.A, self.B, self.c = A, B, c
        self.P, self.d, self.E, self.K = P, d, E, K
        self.m, self.dim_y, self.dim_x = B.shape
        self.n = P.shape[0]
        self.A_bar, self.B_bar, self.c_bar = A.mean(0), B.mean(0), c.mean(0)
        self.P_bar, self.d_bar = P.mean(0), d.mean(0)
        self.E_bar, self.K_bar = E.mean(0), K.mean(0)

        # y*(x) = Dy x + y0, grad_2 f(x, y*) = Mz x + vz
        self.Dy = np.linalg.solve(self.A_bar, self.B_bar)
        self.y0 = np.linalg.solve(self.A_bar, self.c_bar)
        self.Mz = self.P_bar @ self.Dy + self.K_bar.T
        self.vz = self.P_bar @ self.y0 - self.d_bar
        # grad H(x) = Hxx x + hx
        self.Hxx = self.E_bar + self.K_bar @ self.Dy + self.Dy.T @ self.K_bar.T + self.Dy.T @ self.P_bar @ self.Dy
        self.Hxx = _sym(self.Hxx)
        self.hx = self.K_bar @ self.y0 + self.Dy.T @ self.vz
        self.x_opt = np.linalg.solve(self.Hxx, -self.hx)
        if x_radius is None:
            x_radius = max(1.0, 2.0 * np.linalg.norm(self.x_opt))
        self.x_radius = float(x_radius)
        self.smoothness = self._declare()
        self._stack()

    def _stack(self):
        # each batched mean is one gather-and-sum of flattened affine maps
        # acting on [x, y, 1], so a minibatch costs one small matvec
        n, m = self.n, self.m
        self._S1f = np.concatenate([self.E, self.K], axis=2).reshape(n, -1)
        self._S2f = np.concatenate([np.swapaxes(self.K, 1, 2), self.P, -self.d[..., None]], axis=2).reshape(n, -1)
        self._S2g = np.concatenate([-self.B, self.A, -self.c[..., None]], axis=2).reshape(m, -1)
        self._S22 = self.A.reshape(m, -1)
        self._S12 = -np.swapaxes(self.B, 1, 2).reshape(m, -1)

    def _avg(self, S, idx, rows, v):
        return (np.add.reduce(S[idx]) / len(idx)).reshape(rows, -1) @ v

    # -- declared constants ------------------------------------------
    def _declare(self):
        dy, dx = self.dim_y, self.dim_x
        Lf = 0.0
        for i in range(self.n):
            blk = np.block([[self.E[i], self.K[i]], [self.K[i].T, self.P[i]]])
            Lf = max(Lf, np.linalg.norm(blk, 2))
        Lg1 = 0.0
        for j in range(self.m):
            blk = np.block([[np.zeros((dx, dx)), -self.B[j].T], [-self.B[j], self.A[j]]])
            Lg1 = max(Lg1, np.linalg.norm(blk, 2))
        eig = np.linalg.eigvalsh(self.A_bar)
        mu = float(eig[0])
        Lg1 = max(Lg1, float(eig[-1]))
        Cf = np.linalg.norm(self.Mz, 2) * self.x_radius + np.linalg.norm(self.vz)
        return SmoothnessParams(Lf=float(Lf), Lg1=float(Lg1), Lg2=LG2_FLOOR, mu=mu, Cf=float(Cf))

    # -- batched hooks -------------------------------------------------
    def _grad1_f(self, idx, x, y):
        return self.E[idx] @ x + self.K[idx] @ y

    def _grad2_f(self, idx, x, y):
        return self.P[idx] @ y - self.d[idx] + np.einsum("kab,a->kb", self.K[idx], x)

    def _grad2_g(self, idx, x, y):
        return self.A[idx] @ y - self.B[idx] @ x - self.c[idx]

    def _hvp22_g(self, idx, x, y, v):
        return self.A[idx] @ v

    def _jvp12_g(self, idx, x, y, v):
        return -np.einsum("kab,a->kb", self.B[idx], v)

    def _mean_grad1_f(self, idx, x, y):
        return self._avg(self._S1f, idx, self.dim_x, np.concatenate([x, y]))

    def _mean_grad2_f(self, idx, x, y):
        return self._avg(self._S2f, idx, self.dim_y, np.concatenate([x, y, [1.0]]))

    def _mean_grad2_g(self, idx, x, y):
        return self._avg(self._S2g, idx, self.dim_y, np.concatenate([x, y, [1.0]]))

    def _mean_hvp22_g(self, idx, x, y, v):
        return self._avg(self._S22, idx, self.dim_y, v)

    def _mean_jvp12_g(self, idx, x, y, v):
        return self._avg(self._S12, idx, self.dim_x, v)

    def _value_f(self, idx, x, y):
        P, K, E = self.P[idx], self.K[idx], self.E[idx]
        return (
            0.5 * np.einsum("a,kab,b->k", y, P, y)
            - self.d[idx] @ y
            + 0.5 * np.einsum("a,kab,b->k", x, E, x)
            + np.einsum("a,kab,b->k", x, K, y)
        )

    def _value_g(self, idx, x, y):
        return 0.5 * np.einsum("a,kab,b->k", y, self.A[idx], y) - (self.B[idx] @ x + self.c[idx]) @ y

    # -- closed forms ----------------------------------------------------
    def solve_lower_closed_form(self, x):
        return self.Dy @ x + self.y0

    def y_star(self, x):
        return self.solve_lower_closed_form(x)

    def z_star(self, x):
        return np.linalg.solve(self.A_bar, self.Mz @ x + self.vz)

    def hypergradient_closed_form(self, x):
        return self.Hxx @ x + self.hx

    def H(self, x):
        return self.f(x, self.y_star(x))

    def H_star(self):
        return self.H(self.x_opt)


def make_quadratic(seed, n, m, dim_x, dim_y, mu=0.5, L=2.0, noise=1.0, vec_noise=None, h_mu=0.1,
                   x_radius=None):
    """Random :class:`QuadraticBilevel` with averaged LL Hessian spectrum in ``[mu, L]``.

    ``noise`` scales the zero-mean per-sample perturbations of the matrix
    blocks and ``vec_noise`` (default: ``noise``) those of the linear terms
    ``c_j`` and ``d_i``. Only the matrix part enters the Lipschitz constants.
    ``h_mu`` is the smallest eigenvalue forced on the Hessian of ``H``.
    """
    n = check_int(n, "n", lo=1)
    m = check_int(m, "m", lo=1)
    dim_x = check_int(dim_x, "dim_x", lo=1)
    dim_y = check_int(dim_y, "dim_y", lo=1)
    mu = check_scalar(mu, "mu", lo=0.0, lo_open=True)
    L = check_scalar(L, "L", lo=mu)
    noise = check_scalar(noise, "noise", lo=0.0)
    vec_noise = noise if vec_noise is None else check_scalar(vec_noise, "vec_noise", lo=0.0)
    h_mu = check_scalar(h_mu, "h_mu", lo=0.0, lo_open=True)
    rng = np.random.default_rng(seed)

    q, _ = np.linalg.qr(rng.standard_normal((dim_y, dim_y)))
    if mu == L:
        A_bar = mu * np.eye(dim_y)
    else:
        A_bar = _sym((q * np.linspace(mu, L, dim_y)) @ q.T)
    A = A_bar + _sym(_zero_mean(rng, (m, dim_y, dim_y), noise / np.sqrt(dim_y)))
    B = rng.standard_normal((dim_y, dim_x)) / np.sqrt(dim_x) + _zero_mean(rng, (m, dim_y, dim_x), noise / np.sqrt(dim_x))
    c = rng.standard_normal(dim_y) + _zero_mean(rng, (m, dim_y), vec_noise)

    P_bar = rng.standard_normal((dim_y, dim_y)) / np.sqrt(dim_y)
    P = _sym(P_bar @ P_bar.T / dim_y + _zero_mean(rng, (n, dim_y, dim_y), noise / np.sqrt(dim_y)))
    d = rng.standard_normal(dim_y) + _zero_mean(rng, (n, dim_y), vec_noise)
    K = 0.5 * rng.standard_normal((dim_x, dim_y)) / np.sqrt(dim_y) + _zero_mean(rng, (n, dim_x, dim_y), noise / np.sqrt(dim_y))
    E = _sym(_zero_mean(rng, (n, dim_x, dim_x), noise / np.sqrt(dim_x)))

    # shift the mean of E so that the Hessian of H has smallest eigenvalue h_mu
    probe = QuadraticBilevel(A, B, c, P, d, E, K, x_radius=1.0)
    lam = np.linalg.eigvalsh(probe.Hxx)[0]
    E = E + (h_mu - lam) * np.eye(dim_x)
    return QuadraticBilevel(A, B, c, P, d, E, K, x_radius=x_radius)
