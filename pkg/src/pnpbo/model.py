"""Bilevel problem abstraction and the three decoupled update directions.

A finite-sum bilevel problem has upper-level components ``F_i`` (``i < n``)
and lower-level components ``G_j`` (``j < m``). Solvers only ever touch the
problem through per-sample first derivatives and Hessian/Jacobian-vector
products, so subclasses implement those five batched oracles and nothing
dense.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_index_set, check_scalar, check_vector


class BilevelProblem:
    """Per-sample oracle for ``min_x f(x, y*(x))``, ``y*(x) = argmin_y g(x, y)``.

    Subclasses set ``n``, ``m``, ``dim_x``, ``dim_y`` and implement the
    batched hooks ``_grad1_f``, ``_grad2_f``, ``_grad2_g``, ``_hvp22_g``,
    ``_jvp12_g``, ``_value_f`` and ``_value_g``. Each hook receives a 1-D
    index array and returns one row per index.

    The public accessors accept either a single index (returning a vector)
    or an index array (returning a stacked array). The ``_mean_*`` hooks
    average a hook over an index array; problems may override them with a
    cheaper direct product.

    ``smoothness`` holds the declared constants as a
    :class:`pnpbo.theory.SmoothnessParams` when the problem knows them.
    ``clip_radius`` is the declared bound on ``||z*(x)||`` or ``None``.
    """

    n = 0
    m = 0
    dim_x = 0
    dim_y = 0
    smoothness = None
    quadratic_ll = False

    # -- batched hooks -------------------------------------------------
    def _grad1_f(self, idx, x, y):
        raise NotImplementedError

    def _grad2_f(self, idx, x, y):
        raise NotImplementedError

    def _grad2_g(self, idx, x, y):
        raise NotImplementedError

    def _hvp22_g(self, idx, x, y, v):
        raise NotImplementedError

    def _jvp12_g(self, idx, x, y, v):
        raise NotImplementedError

    def _value_f(self, idx, x, y):
        raise NotImplementedError

    def _value_g(self, idx, x, y):
        raise NotImplementedError

    # -- batched means; override when a direct product is cheaper -------
    def _mean_grad1_f(self, idx, x, y):
        return self._grad1_f(idx, x, y).sum(axis=0) / len(idx)

    def _mean_grad2_f(self, idx, x, y):
        return self._grad2_f(idx, x, y).sum(axis=0) / len(idx)

    def _mean_grad2_g(self, idx, x, y):
        return self._grad2_g(idx, x, y).sum(axis=0) / len(idx)

    def _mean_hvp22_g(self, idx, x, y, v):
        return self._hvp22_g(idx, x, y, v).sum(axis=0) / len(idx)

    def _mean_jvp12_g(self, idx, x, y, v):
        return self._jvp12_g(idx, x, y, v).sum(axis=0) / len(idx)

    # -- public accessors ----------------------------------------------
    def grad1_f(self, i, x, y):
        return self._call(self._grad1_f, i, self.n, x, y)

    def grad2_f(self, i, x, y):
        return self._call(self._grad2_f, i, self.n, x, y)

    def grad2_g(self, j, x, y):
        return self._call(self._grad2_g, j, self.m, x, y)

    def hvp22_g(self, j, x, y, v):
        return self._call(self._hvp22_g, j, self.m, x, y, v)

    def jvp12_g(self, j, x, y, v):
        return self._call(self._jvp12_g, j, self.m, x, y, v)

    def value_f(self, i, x, y):
        return self._call(self._value_f, i, self.n, x, y)

    def value_g(self, j, x, y):
        return self._call(self._value_g, j, self.m, x, y)

    @staticmethod
    def _call(hook, idx, size, *args):
        if np.ndim(idx) == 0:
            return hook(check_index_set(idx, size), *args)[0]
        return hook(check_index_set(idx, size), *args)

    # -- full-batch helpers ----------------------------------------------
    def f(self, x, y):
        return float(np.mean(self._value_f(np.arange(self.n), x, y)))

    def g(self, x, y):
        return float(np.mean(self._value_g(np.arange(self.m), x, y)))

    def grad_y_g(self, x, y):
        return self._mean_grad2_g(np.arange(self.m), x, y)

    def hvp_yy_g(self, x, y, v):
        return self._mean_hvp22_g(np.arange(self.m), x, y, v)

    def jvp_xy_g(self, x, y, v):
        return self._mean_jvp12_g(np.arange(self.m), x, y, v)

    def grad_x_f(self, x, y):
        return self._mean_grad1_f(np.arange(self.n), x, y)

    def grad_y_f(self, x, y):
        return self._mean_grad2_f(np.arange(self.n), x, y)

    def solve_lower_closed_form(self, x):
        """Exact ``y*(x)`` for problems with a quadratic lower level."""
        raise NotImplementedError

    def initial_iterate(self):
        return Iterate(np.zeros(self.dim_x), np.zeros(self.dim_y), np.zeros(self.dim_y))

    def test_metric(self, x, y):
        """Held-out metric reported in traces; ``None`` when not defined."""
        return None

    @property
    def clip_radius(self):
        if self.smoothness is None:
            return None
        return self.smoothness.Cf / self.smoothness.mu


@dataclass
class Iterate:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def copy(self):
        return Iterate(self.x.copy(), self.y.copy(), self.z.copy())

    def validate(self, problem):
        check_vector(self.x, problem.dim_x, "x")
        check_vector(self.y, problem.dim_y, "y")
        check_vector(self.z, problem.dim_y, "z")
        return self

    def is_finite(self):
        return bool(
            np.all(np.isfinite(self.x))
            and np.all(np.isfinite(self.y))
            and np.all(np.isfinite(self.z))
        )


@dataclass(frozen=True)
class SampleDraw:
    """Index sets for one iteration: ``I`` for f-components, ``J`` for g."""

    I: np.ndarray
    J: np.ndarray

    @classmethod
    def full(cls, problem):
        return cls(np.arange(problem.n), np.arange(problem.m))

    def validate(self, problem):
        return SampleDraw(
            check_index_set(self.I, problem.n, "I"),
            check_index_set(self.J, problem.m, "J"),
        )


def direction_x(problem, iterate, I, J):
    """Minibatch upper-level direction ``mean_I grad1 F_i - mean_J d12 G_j z``."""
    I = check_index_set(I, problem.n, "I")
    J = check_index_set(J, problem.m, "J")
    x, y, z = iterate.x, iterate.y, iterate.z
    return problem._mean_grad1_f(I, x, y) - problem._mean_jvp12_g(J, x, y, z)


def direction_y(problem, iterate, J):
    """Minibatch lower-level gradient ``mean_J grad2 G_j``."""
    J = check_index_set(J, problem.m, "J")
    return problem._mean_grad2_g(J, iterate.x, iterate.y)


def direction_z(problem, iterate, I, J):
    """Minibatch residual of the linear system, ``mean_J d22 G_j z - mean_I grad2 F_i``."""
    I = check_index_set(I, problem.n, "I")
    J = check_index_set(J, problem.m, "J")
    x, y, z = iterate.x, iterate.y, iterate.z
    return problem._mean_hvp22_g(J, x, y, z) - problem._mean_grad2_f(I, x, y)


def clip(z, R):
    """Radial projection of ``z`` onto the ball of radius ``R``."""
    R = check_scalar(R, "R", lo=0.0, lo_open=True)
    return project_ball(np.asarray(z, dtype=float), R)


def project_ball(z, R):
    """:func:`clip` without argument checks, for the solver loop."""
    with np.errstate(over="ignore"):
        norm = math.sqrt(float(z @ z))
    if math.isinf(norm):
        # rescale before squaring when the plain norm overflows
        top = float(np.abs(z).max())
        w = z / top
        norm = top * math.sqrt(float(w @ w))
    if norm <= R:
        return z.copy()
    return z * (R / norm)


# -- oracle self-checks ------------------------------------------------------
def hvp_symmetry_gap(problem, j, x, y, rng):
    """Relative asymmetry ``|<u, Hv> - <v, Hu>|`` of one LL Hessian on random probes."""
    u = rng.standard_normal(problem.dim_y)
    v = rng.standard_normal(problem.dim_y)
    a = u @ problem.hvp22_g(j, x, y, v)
    b = v @ problem.hvp22_g(j, x, y, u)
    return abs(a - b) / max(1.0, abs(a), abs(b))


def strong_convexity_ratio(problem, x, y, rng):
    """Rayleigh quotient of the averaged LL Hessian at a random direction."""
    v = rng.standard_normal(problem.dim_y)
    return float(v @ problem.hvp_yy_g(x, y, v) / (v @ v))
