"""Reference solves: y*(x), z*(x), the exact hypergradient and finite differences.

These are the ground truth used by metrics and tests. They are expensive
(full passes, inner iterations) and are never called inside a solver step.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg

from ._validation import check_int, check_scalar, check_vector
from .exceptions import NoConvergenceError


@dataclass(frozen=True)
class OracleConfig:
    """Tolerances for the reference solves.

    ``method`` selects the lower-level solver: ``"gd"`` (fixed step
    ``2/(mu+Lg1)``) or ``"newton-cg"``. Problems with a quadratic lower level
    always use their direct solve.
    """

    ll_tol: float = 1e-10
    lin_tol: float = 1e-10
    max_iters: int = 100_000
    fd_step: float | None = None
    method: str = "gd"

    def __post_init__(self):
        check_scalar(self.ll_tol, "ll_tol", lo=0.0, lo_open=True)
        check_scalar(self.lin_tol, "lin_tol", lo=0.0, lo_open=True)
        check_int(self.max_iters, "max_iters", lo=1)
        if self.method not in ("gd", "newton-cg"):
            raise ValueError(f"method must be 'gd' or 'newton-cg', got {self.method!r}")


DEFAULT = OracleConfig()


def _ll_constants(problem):
    s = problem.smoothness
    if s is None:
        raise ValueError("gradient descent needs declared mu and Lg1 on the problem")
    return s.mu, s.Lg1


def solve_lower(problem, x, config=DEFAULT, y0=None):
    """``argmin_y g(x, y)`` to gradient norm ``config.ll_tol``."""
    x = check_vector(x, problem.dim_x, "x")
    if problem.quadratic_ll:
        y = problem.solve_lower_closed_form(x)
        res = np.linalg.norm(problem.grad_y_g(x, y))
        if res > config.ll_tol * max(1.0, np.linalg.norm(y)):
            raise NoConvergenceError("lower-level direct solve", 1, res)
        return y
    y = np.zeros(problem.dim_y) if y0 is None else np.array(y0, dtype=float)
    if config.method == "newton-cg":
        return _newton_cg(problem, x, y, config)
    mu, L = _ll_constants(problem)
    step = 2.0 / (mu + L)
    for it in range(config.max_iters):
        grad = problem.grad_y_g(x, y)
        res = np.linalg.norm(grad)
        if res <= config.ll_tol:
            return y
        y = y - step * grad
    raise NoConvergenceError("lower-level gradient descent", config.max_iters, res)


def _newton_cg(problem, x, y, config):
    out = minimize(
        lambda v: problem.g(x, v),
        y,
        jac=lambda v: problem.grad_y_g(x, v),
        hessp=lambda v, p: problem.hvp_yy_g(x, v, p),
        method="Newton-CG",
        options={"xtol": 1e-14, "maxiter": config.max_iters},
    )
    y = out.x
    # Newton-CG stops on step size; finish with a few exact Newton steps
    for _ in range(20):
        grad = problem.grad_y_g(x, y)
        res = np.linalg.norm(grad)
        if res <= config.ll_tol:
            return y
        y = y - _cg_solve(lambda v: problem.hvp_yy_g(x, y, v), grad, config.lin_tol * 1e-2, config)
    raise NoConvergenceError("lower-level Newton-CG", config.max_iters, res)


def _cg_solve(matvec, rhs, tol, config):
    n = rhs.size
    op = LinearOperator((n, n), matvec=matvec, dtype=float)
    sol, info = cg(op, rhs, rtol=0.0, atol=tol, maxiter=min(config.max_iters, 50 * n + 100))
    if info != 0:
        res = np.linalg.norm(matvec(sol) - rhs)
        raise NoConvergenceError("conjugate gradient", info, res)
    return sol


def solve_implicit(problem, x, y_star, config=DEFAULT):
    """``z* = [d22 g(x, y*)]^{-1} grad_2 f(x, y*)`` by matrix-free CG.

    The residual target is ``lin_tol * max(1, ||grad_2 f||)``.
    """
    rhs = problem.grad_y_f(x, y_star)
    # the tolerance is absolute for |rhs| <= 1 and relative beyond
    tol = config.lin_tol * max(1.0, np.linalg.norm(rhs))
    z = _cg_solve(lambda v: problem.hvp_yy_g(x, y_star, v), rhs, tol, config)
    res = np.linalg.norm(problem.hvp_yy_g(x, y_star, z) - rhs)
    if not res <= tol:
        raise NoConvergenceError("implicit linear system", 0, res)
    return z


def solve_all(problem, x, config=DEFAULT, y0=None):
    """``(y*, z*, grad H)`` at ``x`` from one lower-level solve."""
    y = solve_lower(problem, x, config, y0=y0)
    z = solve_implicit(problem, x, y, config)
    grad = problem.grad_x_f(x, y) - problem.jvp_xy_g(x, y, z)
    return y, z, grad


def hypergradient(problem, x, config=DEFAULT):
    return solve_all(problem, x, config)[2]


def stationarity_metric(problem, x, config=DEFAULT):
    """Squared hypergradient norm."""
    g = hypergradient(problem, x, config)
    return float(g @ g)


def value(problem, x, config=DEFAULT):
    """``H(x) = f(x, y*(x))``."""
    return problem.f(x, solve_lower(problem, x, config))


def fd_step(x, config=DEFAULT):
    if config.fd_step is not None:
        return config.fd_step
    return np.finfo(float).eps ** (1.0 / 3.0) * (1.0 + np.linalg.norm(x))


def fd_gradient(func, x, h=None):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = np.finfo(float).eps ** (1.0 / 3.0) * (1.0 + np.linalg.norm(x))
    grad = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        grad[k] = (func(x + e) - func(x - e)) / (2 * h)
    return grad


def fd_hypergradient(problem, x, config=DEFAULT):
    return fd_gradient(lambda v: value(problem, v, config), x, fd_step(x, config))
