"""Grid search over step sizes (and estimator parameters) on a worker pool.

Cell ``i`` of the Cartesian product runs with seed ``base_seed ^ i``, so
results do not depend on the number of workers or on completion order.
"""

import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..exceptions import DivergedError
from ..rng import derive_seed
from ..solver import EstimatorSpec, run

LEADERBOARD_COLUMNS = (
    "rank", "cell", "alpha", "beta", "gamma", "one_minus_p", "rho_bar", "seed",
    "status", "metric", "samples", "iterations",
)
DEFAULT_ALPHA = list(np.logspace(-3, 0, 11))
DEFAULT_PHI = list(np.logspace(-5, 0, 11))


@dataclass(frozen=True)
class GridSpec:
    """Search ranges: ``beta = alpha/phi`` and ``gamma = alpha/kappa``.

    Empty ``one_minus_p`` / ``rho_bar`` lists keep the base config's value.
    """

    alpha: tuple = tuple(DEFAULT_ALPHA)
    phi: tuple = tuple(DEFAULT_PHI)
    kappa: tuple = tuple(DEFAULT_PHI)
    one_minus_p: tuple = ()
    rho_bar: tuple = ()
    metric: str = "gradH_sq"

    def __post_init__(self):
        for name in ("alpha", "phi", "kappa"):
            vals = getattr(self, name)
            if not vals:
                raise ValueError(f"grid {name} must not be empty")
            if any(v <= 0 for v in vals):
                raise ValueError(f"grid {name} values must be positive")
        if any(not 0 < v < 1 for v in self.one_minus_p):
            raise ValueError("one_minus_p values must lie in (0, 1)")
        if any(not 0 < v <= 1 for v in self.rho_bar):
            raise ValueError("rho_bar values must lie in (0, 1]")

    def cells(self):
        extra_p = self.one_minus_p or (None,)
        extra_r = self.rho_bar or (None,)
        return list(itertools.product(self.alpha, self.phi, self.kappa, extra_p, extra_r))


def cell_config(base, index, cell, base_seed):
    alpha, phi, kappa, omp, rb = cell
    changes = dict(alpha=alpha, beta=alpha / phi, gamma=alpha / kappa, seed=derive_seed(base_seed, index))
    for ch in ("x", "y", "z"):
        spec = base.estimator_spec(ch)
        if spec.name == "page" and omp is not None:
            changes[f"estimator_{ch}"] = EstimatorSpec("page", {"p": 1.0 - omp})
        if spec.name == "zerosarah" and rb is not None:
            changes[f"estimator_{ch}"] = EstimatorSpec("zerosarah", {"rho_bar": rb})
    return base.replace(**changes)


_PROBLEM = None


def _init_worker(builder, payload):
    global _PROBLEM
    _PROBLEM = builder(payload)


def _run_cell(args):
    index, cell, config = args
    return run_cell(_PROBLEM, index, cell, config)


def run_cell(problem, index, cell, config):
    alpha, phi, kappa, omp, rb = cell
    row = dict(cell=index, alpha=alpha, beta=alpha / phi, gamma=alpha / kappa,
               one_minus_p=omp, rho_bar=rb, seed=config.seed)
    try:
        trace = run(problem, config)
        status = "ok"
    except DivergedError as err:
        trace = err.trace
        status = "diverged"
    row.update(status=status, trace=trace.to_csv() if trace is not None else "")
    if trace is not None and len(trace):
        row.update(
            samples=int(trace.last("samples_f") + trace.last("samples_g")),
            iterations=int(trace.last("iter")),
            final={"gradH_sq": trace.last("gradH_sq"), "test_metric": trace.last("test_metric"),
                   "f_val": trace.last("f_val")},
            min_f=float(np.nanmin(trace.column("f_val"))),
        )
    else:
        row.update(samples=0, iterations=0, final={}, min_f=math.inf)
    return row


def run_grid(builder, payload, base_config, spec, workers=1):
    """Run every cell; returns rows sorted into a leaderboard.

    ``builder(payload)`` constructs the problem (once per worker process).
    """
    cells = spec.cells()
    jobs = [(i, c, cell_config(base_config, i, c, base_config.seed)) for i, c in enumerate(cells)]
    if workers <= 1:
        problem = builder(payload)
        rows = [run_cell(problem, *job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(builder, payload)) as pool:
            rows = list(pool.map(_run_cell, jobs))
    return rank(rows, spec.metric)


def rank(rows, metric):
    """Attach the selection metric and sort: finished cells by metric then index."""
    if metric == "suboptimality":
        ref = min((r["min_f"] for r in rows if r["status"] == "ok"), default=math.nan)
    for r in rows:
        val = None
        if r["status"] == "ok":
            if metric == "suboptimality":
                val = r["final"]["f_val"] - ref
            else:
                val = r["final"].get(metric)
        r["metric"] = val
    ok = sorted((r for r in rows if r["metric"] is not None and math.isfinite(r["metric"])),
                key=lambda r: (r["metric"], r["cell"]))
    rest = sorted((r for r in rows if r not in ok), key=lambda r: r["cell"])
    ordered = ok + rest
    for k, r in enumerate(ordered, start=1):
        r["rank"] = k
        if r["status"] == "ok" and r not in ok:
            r["status"] = "no-metric"
    return ordered


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, str)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def leaderboard_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LEADERBOARD_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in LEADERBOARD_COLUMNS])
    return buf.getvalue()
