"""The single-loop solver: three channels, one shared draw per step.

Each step draws ``I`` and ``J`` once, asks the x, y and z estimators for
their direction estimates at the current iterate, optionally averages the
x estimate (when its estimator is unbiased), and then moves all three
variables at once. The implicit variable is clipped to a ball.
"""

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from . import oracle as _oracle
from ._validation import check_int, check_scalar
from .estimators import ChannelEvaluator, make_estimator
from .exceptions import DivergedError, NoConvergenceError
from .model import Iterate, SampleDraw, clip, project_ball
from .rng import draw_without_replacement, make_streams

CHANNELS = ("x", "y", "z")
TRACE_COLUMNS = ("iter", "samples_f", "samples_g", "gradH_sq", "f_val", "g_val", "test_metric", "wall_ms")
DEFAULT_R = 1.0


@dataclass(frozen=True)
class InverseDecay:
    """Step schedule ``base / (1 + k/k0)``; a picklable callable."""

    base: float
    k0: float

    def __call__(self, k):
        return self.base / (1.0 + k / self.k0)


def _at(schedule, k):
    return schedule(k) if callable(schedule) else schedule


@dataclass(frozen=True)
class EstimatorSpec:
    name: str
    params: dict = field(default_factory=dict)

    def build(self):
        return make_estimator(self.name, **self.params)


@dataclass(frozen=True)
class SolverConfig:
    """Everything a run needs besides the problem.

    ``alpha``, ``beta``, ``gamma`` and ``rho`` may be constants or callables
    of the iteration index. ``R=None`` uses the problem's declared bound on
    ``||z*||`` when it has one, else 1. ``batch_f`` / ``batch_g`` default to
    ``batch``. ``cadence=None`` records metrics every ``ceil(K/200)`` steps.
    ``stop_below`` ends the run at the first recorded ``gradH_sq`` at or below it.
    """

    alpha: object = 0.0
    beta: object = 0.0
    gamma: object = 0.0
    rho: object = 1.0
    R: float | None = None
    batch: int = 1
    batch_f: int | None = None
    batch_g: int | None = None
    K: int = 0
    estimator_x: EstimatorSpec = EstimatorSpec("sgd")
    estimator_y: EstimatorSpec = EstimatorSpec("sgd")
    estimator_z: EstimatorSpec = EstimatorSpec("sgd")
    seed: int = 0
    cadence: int | None = None
    gradH: bool = True
    stop_below: float | None = None
    timing: bool = False
    name: str = "custom"

    def replace(self, **changes):
        return replace(self, **changes)

    def estimator_spec(self, channel):
        return getattr(self, f"estimator_{channel}")

    def validate(self, problem):
        for s in ("alpha", "beta", "gamma"):
            v = getattr(self, s)
            if not callable(v):
                check_scalar(v, s, lo=0.0)
        if not callable(self.rho):
            check_scalar(self.rho, "rho", lo=0.0, hi=1.0, lo_open=True)
        if self.R is not None:
            check_scalar(self.R, "R", lo=0.0, lo_open=True)
        check_int(self.batch, "batch", lo=1, hi=min(problem.n, problem.m))
        if self.batch_f is not None:
            check_int(self.batch_f, "batch_f", lo=1, hi=problem.n)
        if self.batch_g is not None:
            check_int(self.batch_g, "batch_g", lo=1, hi=problem.m)
        check_int(self.K, "K", lo=0)
        if self.cadence is not None:
            check_int(self.cadence, "cadence", lo=1)
        return self

    def radius(self, problem):
        if self.R is not None:
            return float(self.R)
        r = problem.clip_radius
        return DEFAULT_R if r is None else float(r)

    def metric_cadence(self):
        if self.cadence is not None:
            return self.cadence
        return max(1, math.ceil(self.K / 200))


PRESETS = {
    "SOBA": ("sgd", "sgd", "sgd", False),
    "MA-SOBA": ("sgd", "sgd", "sgd", True),
    "SABA": ("saga", "saga", "saga", False),
    "MA-SABA": ("saga", "saga", "saga", True),
    "SPABA": ("page", "page", "page", False),
    "SFFBA": ("zerosarah", "zerosarah", "zerosarah", False),
    "MSEBA": ("page", "zerosarah", "page", False),
    "SRMBA": ("storm", "storm", "storm", True),
}
DEFAULT_MA_RHO = 0.5
DEFAULT_STORM_A = 0.1


def default_batch(N):
    return math.ceil(math.sqrt(N))


def preset(name, N=None, batch=None, p=None, rho_bar=None, a=None, rho=None):
    """Estimator wiring for a named algorithm, with default parameters.

    ``N`` is ``n + m``. Batch size defaults to ``ceil(sqrt(N))``, the PAGE
    probability to ``b/(N+b)``, the ZeroSARAH momentum to ``b/(2N)``.
    Step sizes are left at zero for the caller to set.
    """
    key = str(name).upper()
    if key not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    ex, ey, ez, ma = PRESETS[key]
    if N is None and batch is None:
        raise ValueError("preset needs N or an explicit batch size")
    b = default_batch(N) if batch is None else check_int(batch, "batch", lo=1)
    params = {}
    if "page" in (ex, ey, ez):
        if p is None:
            if N is None:
                raise ValueError("PAGE default probability needs N")
            p = b / (N + b)
        params["page"] = {"p": float(p)}
    if "zerosarah" in (ex, ey, ez):
        if rho_bar is None:
            if N is None:
                raise ValueError("ZeroSARAH default momentum needs N")
            rho_bar = b / (2 * N)
        params["zerosarah"] = {"rho_bar": float(rho_bar)}
    if "storm" in (ex, ey, ez):
        params["storm"] = {"a": DEFAULT_STORM_A if a is None else float(a)}
    if rho is None:
        rho = DEFAULT_MA_RHO if ma else 1.0
    spec = lambda e: EstimatorSpec(e, dict(params.get(e, {})))  # noqa: E731
    return SolverConfig(
        rho=rho, batch=b,
        estimator_x=spec(ex), estimator_y=spec(ey), estimator_z=spec(ez),
        name=key,
    )


# -- state and stepping ---------------------------------------------------------
@dataclass
class SolverState:
    iterate: Iterate
    estimators: dict
    evaluators: dict
    streams: object
    v_x: np.ndarray | None = None
    k: int = 0
    R: float = DEFAULT_R

    @property
    def samples_f(self):
        return sum(e.n_f for e in self.evaluators.values())

    @property
    def samples_g(self):
        return sum(e.n_g for e in self.evaluators.values())


def init_state(problem, config, iterate=None):
    """Fresh state: streams, estimator memories, and the averaged x buffer."""
    config.validate(problem)
    it = problem.initial_iterate() if iterate is None else iterate.copy()
    it.validate(problem)
    R = config.radius(problem)
    it.z = clip(it.z, R)
    streams = make_streams(config.seed)
    evaluators = {c: ChannelEvaluator(problem, c) for c in CHANNELS}
    estimators = {c: config.estimator_spec(c).build() for c in CHANNELS}
    for c in CHANNELS:
        estimators[c].initialize(evaluators[c], it, rng=streams.channel(c))
    v_x = None
    if estimators["x"].unbiased:
        # the average starts from the full direction at the first iterate
        v_x = evaluators["x"].full(it)
    return SolverState(it, estimators, evaluators, streams, v_x, 0, R)


def draw_samples(problem, config, rng):
    bf = config.batch_f or config.batch
    bg = config.batch_g or config.batch
    return SampleDraw(
        draw_without_replacement(rng, problem.n, bf),
        draw_without_replacement(rng, problem.m, bg),
    )


def step(state, config, problem):
    """One iteration; all channels read the pre-step iterate."""
    k = state.k
    it = state.iterate
    draw = draw_samples(problem, config, state.streams.sampling)
    est, ev, streams = state.estimators, state.evaluators, state.streams
    with np.errstate(over="ignore", invalid="ignore"):
        v_hat = est["x"].estimate(ev["x"], it, draw, rng=streams.x)
        if est["x"].unbiased:
            rho = _at(config.rho, k - 1)
            v_x = (1.0 - rho) * state.v_x + rho * v_hat
        else:
            v_x = v_hat
        v_y = est["y"].estimate(ev["y"], it, draw, rng=streams.y)
        v_z = est["z"].estimate(ev["z"], it, draw, rng=streams.z)
        x = it.x - _at(config.alpha, k) * v_x
        y = it.y - _at(config.beta, k) * v_y
        z = it.z - _at(config.gamma, k) * v_z
        # a sum is non-finite whenever any entry is (or when it overflows)
        for name, v in (("x", x), ("y", y), ("z", z)):
            if not math.isfinite(v.sum()):
                raise DivergedError(k, name)
    state.iterate = Iterate(x, y, project_ball(z, state.R))
    if est["x"].unbiased:
        state.v_x = v_x
    state.k = k + 1
    return state


# -- traces ---------------------------------------------------------------------
def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class RunTrace:
    """Recorded metrics, one row per recorded step, plus the final state."""

    algorithm: str = "custom"
    rows: list = field(default_factory=list)
    final: Iterate | None = None
    diverged_at: int | None = None

    def append(self, **row):
        self.rows.append(tuple(row.get(c) for c in TRACE_COLUMNS))

    def column(self, name):
        k = TRACE_COLUMNS.index(name)
        return np.array([np.nan if r[k] is None else r[k] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def last(self, name):
        return self.rows[-1][TRACE_COLUMNS.index(name)] if self.rows else None

    def samples(self):
        return self.column("samples_f") + self.column("samples_g")

    def first_reaching(self, name, target):
        """Index of the first row whose ``name`` column is ``<= target``, else ``None``."""
        col = self.column(name)
        hit = np.flatnonzero(col <= target)
        return int(hit[0]) if hit.size else None

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _record(trace, state, problem, config, t0, oracle_config):
    it = state.iterate
    grad = None
    if config.gradH:
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                grad = _oracle.stationarity_metric(problem, it.x, oracle_config)
        except NoConvergenceError:
            grad = math.inf
        if not math.isfinite(grad):
            raise DivergedError(state.k, "x")
    with np.errstate(over="ignore", invalid="ignore"):
        f_val, g_val = problem.f(it.x, it.y), problem.g(it.x, it.y)
        metric = problem.test_metric(it.x, it.y)
    trace.append(
        iter=state.k,
        samples_f=state.samples_f,
        samples_g=state.samples_g,
        gradH_sq=grad,
        f_val=f_val,
        g_val=g_val,
        test_metric=metric,
        wall_ms=(time.perf_counter() - t0) * 1e3 if config.timing else None,
    )
    return grad


def run(problem, config, callbacks=(), iterate=None, oracle_config=_oracle.DEFAULT):
    """Run ``config.K`` steps and return the :class:`RunTrace`.

    Each callback is called as ``cb(state, trace)`` whenever a row is
    recorded. On divergence the partial trace rides on the raised
    :class:`DivergedError`.
    """
    trace = RunTrace(algorithm=config.name)
    if config.K == 0:
        trace.final = (problem.initial_iterate() if iterate is None else iterate).copy()
        return trace
    t0 = time.perf_counter()
    state = init_state(problem, config, iterate)
    cadence = config.metric_cadence()
    grad = _record(trace, state, problem, config, t0, oracle_config)
    for cb in callbacks:
        cb(state, trace)
    while state.k < config.K:
        if config.stop_below is not None and grad is not None and grad <= config.stop_below:
            break
        try:
            step(state, config, problem)
            if state.k % cadence == 0 or state.k == config.K:
                grad = _record(trace, state, problem, config, t0, oracle_config)
                for cb in callbacks:
                    cb(state, trace)
        except DivergedError as err:
            trace.final = state.iterate
            trace.diverged_at = err.iteration
            err.trace = trace
            raise
    trace.final = state.iterate
    return trace


# -- estimator-style wrapper ------------------------------------------------------
class PnPBO(BaseEstimator):
    """Scikit-learn style front end: ``PnPBO(algorithm="SPABA", ...).fit(problem)``.

    After ``fit``, ``x_``, ``y_``, ``z_`` hold the final iterate and
    ``trace_`` the recorded :class:`RunTrace`.
    """

    def __init__(self, algorithm="SPABA", alpha=0.01, beta=0.01, gamma=0.01, rho=None,
                 batch=None, max_iter=1000, R=None, p=None, rho_bar=None, a=None,
                 cadence=None, seed=0, gradH=True):
        self.algorithm = algorithm
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.rho = rho
        self.batch = batch
        self.max_iter = max_iter
        self.R = R
        self.p = p
        self.rho_bar = rho_bar
        self.a = a
        self.cadence = cadence
        self.seed = seed
        self.gradH = gradH

    def make_config(self, problem):
        cfg = preset(self.algorithm, N=problem.n + problem.m, batch=self.batch,
                     p=self.p, rho_bar=self.rho_bar, a=self.a, rho=self.rho)
        return cfg.replace(alpha=self.alpha, beta=self.beta, gamma=self.gamma, K=self.max_iter,
                           R=self.R, cadence=self.cadence, seed=self.seed, gradH=self.gradH)

    def fit(self, problem, y=None):
        self.config_ = self.make_config(problem)
        self.trace_ = run(problem, self.config_)
        self.x_, self.y_, self.z_ = self.trace_.final.x, self.trace_.final.y, self.trace_.final.z
        return self

    def score(self, problem, y=None):
        """Negative squared hypergradient norm at the fitted ``x_``."""
        return -_oracle.stationarity_metric(problem, self.x_)
