"""Pluggable stochastic estimators for the x, y and z update channels.

Every channel direction is a signed combination of a mean of f-components
and a mean of g-components:

========  ==============================  ==============================  ======
channel   f-part (per i)                  g-part (per j)                  signs
========  ==============================  ==============================  ======
x         grad_1 F_i(x, y)                d12 G_j(x, y) z                 +, -
y         (none)                          grad_2 G_j(x, y)                0, +
z         grad_2 F_i(x, y)                d22 G_j(x, y) z                 -, +
========  ==============================  ==============================  ======

Estimators work on those parts through a :class:`ChannelEvaluator`, which
also counts every per-sample component evaluation. Memory-based estimators
(SAGA, ZeroSARAH) keep tables of evaluated component vectors rather than the
points they were evaluated at; the values are what the recursions consume.
"""

import numpy as np

from .exceptions import EstimatorStateError
from .model import SampleDraw
from .rng import draw_without_replacement

_SIGNS = {"x": (1.0, -1.0), "y": (0.0, 1.0), "z": (-1.0, 1.0)}


class ChannelEvaluator:
    """Evaluates one channel's per-sample parts and counts the calls.

    ``n_f`` and ``n_g`` are cumulative counts of per-sample f- and
    g-component evaluations made through this evaluator.
    """

    def __init__(self, problem, channel):
        if channel not in _SIGNS:
            raise ValueError(f"channel must be one of 'x', 'y', 'z', got {channel!r}")
        self.problem = problem
        self.channel = channel
        self.f_sign, self.g_sign = _SIGNS[channel]
        self.uses_f = channel != "y"
        self.dim = problem.dim_x if channel == "x" else problem.dim_y
        self.n_f = 0
        self.n_g = 0

    @property
    def evaluations(self):
        return self.n_f + self.n_g

    def eval_component_f(self, I, it):
        """Rows of f-parts at ``it`` for indices ``I`` (empty for the y channel)."""
        if not self.uses_f:
            return np.zeros((len(I), self.dim))
        self.n_f += len(I)
        p = self.problem
        if self.channel == "x":
            return p._grad1_f(I, it.x, it.y)
        return p._grad2_f(I, it.x, it.y)

    def eval_component_g(self, J, it):
        self.n_g += len(J)
        p = self.problem
        if self.channel == "x":
            return p._jvp12_g(J, it.x, it.y, it.z)
        if self.channel == "y":
            return p._grad2_g(J, it.x, it.y)
        return p._hvp22_g(J, it.x, it.y, it.z)

    def mean_f(self, I, it):
        """Mean f-part over ``I`` without materialising the rows."""
        self.n_f += len(I)
        p = self.problem
        if self.channel == "x":
            return p._mean_grad1_f(I, it.x, it.y)
        return p._mean_grad2_f(I, it.x, it.y)

    def mean_g(self, J, it):
        self.n_g += len(J)
        p = self.problem
        if self.channel == "x":
            return p._mean_jvp12_g(J, it.x, it.y, it.z)
        if self.channel == "y":
            return p._mean_grad2_g(J, it.x, it.y)
        return p._mean_hvp22_g(J, it.x, it.y, it.z)

    def combine(self, mean_f, mean_g):
        if not self.uses_f:
            return self.g_sign * mean_g
        return self.f_sign * mean_f + self.g_sign * mean_g

    def eval_at(self, it, I, J):
        mean_f = self.mean_f(I, it) if self.uses_f else 0.0
        return self.combine(mean_f, self.mean_g(J, it))

    def full(self, it):
        p = self.problem
        return self.eval_at(it, np.arange(p.n), np.arange(p.m))


class Estimator:
    """Base class. Subclasses keep their own state between calls.

    ``unbiased`` follows the classification used to decide whether the
    x-channel moving average applies.
    """

    name = "base"
    unbiased = True

    def initialize(self, evaluator, iterate, rng=None):
        """Prepare state at the starting iterate. Default: nothing to do."""

    def estimate(self, evaluator, iterate, draw, rng=None):
        raise NotImplementedError

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({params})"

    def get_params(self):
        return {}


class SGD(Estimator):
    """Plain minibatch direction."""

    name = "sgd"

    def estimate(self, evaluator, iterate, draw, rng=None):
        return evaluator.eval_at(iterate, draw.I, draw.J)


class _TableMixin:
    def _fill_tables(self, evaluator, iterate):
        p = evaluator.problem
        self.table_g = evaluator.eval_component_g(np.arange(p.m), iterate).copy()
        self.avg_g = self.table_g.mean(axis=0)
        if evaluator.uses_f:
            self.table_f = evaluator.eval_component_f(np.arange(p.n), iterate).copy()
            self.avg_f = self.table_f.mean(axis=0)
        else:
            self.table_f = None
            self.avg_f = 0.0

    def _zero_tables(self, evaluator):
        p = evaluator.problem
        self.table_g = np.zeros((p.m, evaluator.dim))
        self.avg_g = np.zeros(evaluator.dim)
        if evaluator.uses_f:
            self.table_f = np.zeros((p.n, evaluator.dim))
            self.avg_f = np.zeros(evaluator.dim)
        else:
            self.table_f = None
            self.avg_f = 0.0

    def _refresh(self, I, fresh_f, J, fresh_g):
        # running means are corrected incrementally; rows overwritten after
        if self.table_f is not None:
            self.avg_f = self.avg_f + (fresh_f - self.table_f[I]).sum(axis=0) / len(self.table_f)
            self.table_f[I] = fresh_f
        self.avg_g = self.avg_g + (fresh_g - self.table_g[J]).sum(axis=0) / len(self.table_g)
        self.table_g[J] = fresh_g

    def _check_ready(self):
        if self.table_g is None:
            raise EstimatorStateError(f"{self.name}: call initialize() before estimate()")


class SAGA(_TableMixin, Estimator):
    """SAGA: fresh minus stored component plus the table average, per part."""

    name = "saga"

    def __init__(self):
        self.table_f = self.table_g = None
        self.avg_f = self.avg_g = None

    def initialize(self, evaluator, iterate, rng=None):
        self._fill_tables(evaluator, iterate)

    def estimate(self, evaluator, iterate, draw, rng=None):
        self._check_ready()
        I, J = draw.I, draw.J
        fresh_g = evaluator.eval_component_g(J, iterate)
        part_g = fresh_g.mean(axis=0) - self.table_g[J].mean(axis=0) + self.avg_g
        if evaluator.uses_f:
            fresh_f = evaluator.eval_component_f(I, iterate)
            part_f = fresh_f.mean(axis=0) - self.table_f[I].mean(axis=0) + self.avg_f
        else:
            fresh_f, part_f = None, 0.0
        v = evaluator.combine(part_f, part_g)
        self._refresh(I, fresh_f, J, fresh_g)
        return v


class ZeroSARAH(_TableMixin, Estimator):
    """ZeroSARAH recursion with component memories.

    ``v_k = (1 - r)(v_{k-1} - D_{k-1;I,J}) + D_{k;I,J}
    + r (Dhat_{k-1;[n],[m]} - Dhat_{k-1;I,J})`` where ``D`` are fresh
    minibatch directions at the current and previous iterate (same draw) and
    ``Dhat`` read the memory tables before they are refreshed with this
    step's components.

    ``rho_bar`` may be a constant or a callable ``k -> rho_bar_k``.
    With ``full_init=False`` the tables start at zero and no full pass is
    ever made; the early estimates are then biased by the empty memory.
    """

    name = "zerosarah"
    unbiased = False

    def __init__(self, rho_bar, full_init=True, batch=None):
        self.rho_bar = rho_bar
        self.full_init = full_init
        self.batch = batch
        self.table_f = self.table_g = None
        self.avg_f = self.avg_g = None
        self.v_prev = None
        self.prev_iterate = None
        self.prev_draw = None
        self.k = 0

    def get_params(self):
        return {"rho_bar": self.rho_bar, "full_init": self.full_init, "batch": self.batch}

    def _rho(self):
        r = self.rho_bar(self.k) if callable(self.rho_bar) else self.rho_bar
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"rho_bar must lie in [0, 1], got {r}")
        return r

    def initialize(self, evaluator, iterate, rng=None):
        if self.full_init:
            self._fill_tables(evaluator, iterate)
            self.v_prev = evaluator.combine(self.avg_f, self.avg_g)
        else:
            self._zero_tables(evaluator)
            p = evaluator.problem
            if rng is None:
                raise ValueError("minibatch initialisation needs a random generator")
            b = p.m if self.batch is None else self.batch
            draw = SampleDraw(
                draw_without_replacement(rng, p.n, min(b, p.n)),
                draw_without_replacement(rng, p.m, min(b, p.m)),
            )
            self.v_prev = evaluator.eval_at(iterate, draw.I, draw.J)
        self.prev_iterate = iterate.copy()
        self.k = 0

    def estimate(self, evaluator, iterate, draw, rng=None):
        if self.v_prev is None:
            raise EstimatorStateError("zerosarah: call initialize() before estimate()")
        I, J = draw.I, draw.J
        r = self._rho()
        fresh_g = evaluator.eval_component_g(J, iterate)
        prev_g = evaluator.eval_component_g(J, self.prev_iterate)
        if evaluator.uses_f:
            fresh_f = evaluator.eval_component_f(I, iterate)
            prev_f = evaluator.eval_component_f(I, self.prev_iterate)
            d_now = evaluator.combine(fresh_f.mean(axis=0), fresh_g.mean(axis=0))
            d_prev = evaluator.combine(prev_f.mean(axis=0), prev_g.mean(axis=0))
            mem_sampled = evaluator.combine(
                self.table_f[I].mean(axis=0), self.table_g[J].mean(axis=0)
            )
        else:
            fresh_f = None
            d_now = evaluator.combine(0.0, fresh_g.mean(axis=0))
            d_prev = evaluator.combine(0.0, prev_g.mean(axis=0))
            mem_sampled = evaluator.combine(0.0, self.table_g[J].mean(axis=0))
        mem_full = evaluator.combine(self.avg_f, self.avg_g)

        v = (1.0 - r) * (self.v_prev - d_prev) + d_now + r * (mem_full - mem_sampled)

        self._refresh(I, fresh_f, J, fresh_g)
        self.v_prev = v
        self.prev_iterate = iterate.copy()
        self.prev_draw = draw
        self.k += 1
        return v


class PAGE(Estimator):
    """PAGE: a full direction with probability ``p``, else a SARAH-type correction.

    The correction evaluates the same draw at the current and previous
    iterate. The very first call always takes the full direction.
    """

    name = "page"
    unbiased = False

    def __init__(self, p):
        if not 0.0 < p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {p}")
        self.p = p
        self.v_prev = None
        self.prev_iterate = None
        self.prev_draw = None
        self.n_full = 0
        self.n_steps = 0

    def get_params(self):
        return {"p": self.p}

    def initialize(self, evaluator, iterate, rng=None):
        self.v_prev = None
        self.prev_iterate = None
        self.n_full = 0
        self.n_steps = 0

    def estimate(self, evaluator, iterate, draw, rng=None, coin=None):
        if self.v_prev is None:
            heads = True
        elif coin is not None:
            heads = bool(coin)
        else:
            heads = rng.random() < self.p
        if heads:
            v = evaluator.full(iterate)
            self.n_full += 1
        else:
            v = (
                self.v_prev
                + evaluator.eval_at(iterate, draw.I, draw.J)
                - evaluator.eval_at(self.prev_iterate, draw.I, draw.J)
            )
        self.n_steps += 1
        self.v_prev = v
        self.prev_iterate = iterate.copy()
        self.prev_draw = draw
        return v


class STORM(Estimator):
    """STORM momentum: ``v_k = D_k + (1 - a)(v_{k-1} - D_{k-1})`` on one draw."""

    name = "storm"

    def __init__(self, a):
        if not 0.0 < a <= 1.0:
            raise ValueError(f"a must lie in (0, 1], got {a}")
        self.a = a
        self.v_prev = None
        self.prev_iterate = None

    def get_params(self):
        return {"a": self.a}

    def initialize(self, evaluator, iterate, rng=None):
        self.v_prev = None
        self.prev_iterate = None

    def estimate(self, evaluator, iterate, draw, rng=None):
        d_now = evaluator.eval_at(iterate, draw.I, draw.J)
        if self.v_prev is None or self.a == 1.0:
            v = d_now
        else:
            d_prev = evaluator.eval_at(self.prev_iterate, draw.I, draw.J)
            v = d_now + (1.0 - self.a) * (self.v_prev - d_prev)
        self.v_prev = v
        self.prev_iterate = iterate.copy()
        return v


ESTIMATORS = {
    "sgd": SGD,
    "saga": SAGA,
    "page": PAGE,
    "zerosarah": ZeroSARAH,
    "storm": STORM,
}


def make_estimator(name, **params):
    """Build an estimator by name, passing only the parameters it takes."""
    key = str(name).lower()
    if key not in ESTIMATORS:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(ESTIMATORS)}")
    cls = ESTIMATORS[key]
    if key == "page":
        return cls(params["p"])
    if key == "zerosarah":
        return cls(
            params["rho_bar"],
            full_init=params.get("full_init", True),
            batch=params.get("batch"),
        )
    if key == "storm":
        return cls(params["a"])
    return cls()
