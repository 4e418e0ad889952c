"""INI run configurations: parsing, schema checks, problem and solver construction.

A config has up to five sections. ``[problem]`` picks and sizes the problem,
``[solver]`` the algorithm and step sizes, ``[grid]`` the search ranges,
``[theory]`` declared constants for certificate checks, and ``[output]`` the
output directory. Unknown sections and keys are rejected with their line.
"""

import configparser
import hashlib
import json
import re

import numpy as np

from ..exceptions import ParseError
from ..problems.datasets import data_path, load_idx, load_libsvm
from ..problems.hypercleaning import make_hypercleaning
from ..problems.quadratic import make_quadratic
from ..problems.regpath import make_regpath
from ..solver import DEFAULT_STORM_A, EstimatorSpec, preset
from ..theory import SmoothnessParams, build_ledger, suggest_steps

INT, FLOAT, STR, BOOL, FLOATS, STEP = "int", "float", "str", "bool", "floats", "step"

SCHEMA = {
    "problem": {
        "kind": STR, "seed": INT,
        # quadratic
        "n": INT, "m": INT, "dim_x": INT, "dim_y": INT, "mu": FLOAT, "L": FLOAT,
        "noise": FLOAT, "vec_noise": FLOAT, "h_mu": FLOAT, "x_radius": FLOAT,
        # hyper-cleaning and regpath
        "n_train": INT, "n_val": INT, "n_test": INT, "p_tilde": FLOAT, "C_r": FLOAT,
        "images": STR, "labels": STR,
        "layout": STR, "n_features": INT, "n_classes": INT, "libsvm": STR,
    },
    "solver": {
        "algorithm": STR, "alpha": STEP, "beta": STEP, "gamma": STEP, "rho": FLOAT,
        "R": FLOAT, "batch": INT, "p": FLOAT, "rho_bar": FLOAT, "a": FLOAT,
        "K": INT, "seed": INT, "cadence": INT, "stop_below": FLOAT, "gradH": BOOL,
        "timing": BOOL, "estimator_x": STR, "estimator_y": STR, "estimator_z": STR,
    },
    "grid": {
        "alpha": FLOATS, "phi": FLOATS, "kappa": FLOATS, "one_minus_p": FLOATS,
        "rho_bar": FLOATS, "metric": STR,
    },
    "theory": {
        "Lf": FLOAT, "Lg1": FLOAT, "Lg2": FLOAT, "mu": FLOAT, "Cf": FLOAT, "n": INT, "m": INT,
        "algorithm": STR, "alpha": STEP, "beta": STEP, "gamma": STEP, "rho": FLOAT,
        "batch": INT, "p": FLOAT, "rho_bar": FLOAT,
    },
    "output": {"dir": STR},
}

PROBLEM_KINDS = ("quadratic", "hypercleaning", "regpath")
METRICS = ("gradH_sq", "test_metric", "suboptimality", "f_val")
_SPACE = re.compile(r"^\s*(logspace|linspace)\(\s*([^,]+),\s*([^,]+),\s*([^)]+)\)\s*$")


class RunConfig:
    """Typed view of a parsed config. ``sections[name][key]`` holds values."""

    def __init__(self, sections, path=None, lines=None):
        self.sections = sections
        self.path = path
        self._lines = lines or {}

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def has(self, section):
        return section in self.sections

    def line_of(self, section, key):
        return self._lines.get((section, key))

    def canonical(self):
        return json.dumps(self.sections, sort_keys=True, default=str)

    def hash(self):
        """Hash of every parsed field; any change to a value changes it."""
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def error(self, section, key, message):
        line = self.line_of(section, key)
        return ParseError(f"[{section}] {key}: {message}", path=self.path, line=line, column=1)


def _key_lines(text):
    """Map ``(section, key)`` to its 1-based line number."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines.setdefault((section, None), no)
        elif section is not None:
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip()
            lines.setdefault((section, key), no)
    return lines


def _convert(kind, value):
    if kind == INT:
        return int(value)
    if kind == FLOAT:
        return float(value)
    if kind == BOOL:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if kind == STEP:
        return "suggest" if value.strip().lower() == "suggest" else float(value)
    if kind == FLOATS:
        m = _SPACE.match(value)
        if m:
            fn, a, b, k = m.groups()
            return [float(v) for v in getattr(np, fn)(float(a), float(b), int(k))]
        vals = [float(v) for v in value.replace(",", " ").split()]
        if not vals:
            raise ValueError("empty list")
        return vals
    return value.strip()


def parse_config(text, path=None):
    """Parse INI text into a :class:`RunConfig`; raises :class:`ParseError`."""
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None, default_section="__none__"
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path or "<config>"))
    except configparser.MissingSectionHeaderError as err:
        raise ParseError("expected a [section] header", path=path, line=err.lineno, column=1) from err
    except configparser.DuplicateOptionError as err:
        raise ParseError(f"duplicate key {err.option!r}", path=path, line=err.lineno, column=1) from err
    except configparser.DuplicateSectionError as err:
        raise ParseError(f"duplicate section {err.section!r}", path=path, line=err.lineno, column=1) from err
    except configparser.ParsingError as err:
        lineno = err.errors[0][0] if err.errors else None
        raise ParseError("malformed line", path=path, line=lineno, column=1) from err
    lines = _key_lines(text)
    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ParseError(f"unknown section [{name}]", path=path, line=lines.get((name, None)), column=1)
        out = {}
        for key, raw in parser.items(name):
            if key not in SCHEMA[name]:
                raise ParseError(f"unknown key {key!r} in [{name}]", path=path,
                                 line=lines.get((name, key)), column=1)
            raw_line = text.splitlines()[lines[(name, key)] - 1] if (name, key) in lines else ""
            # 1-based column of the first character of the value
            sep = re.search(r"[=:]\s*", raw_line)
            col = sep.end() + 1 if sep else 1
            try:
                out[key] = _convert(SCHEMA[name][key], raw)
            except ValueError as err:
                raise ParseError(f"bad value for {key!r}: {err}", path=path,
                                 line=lines.get((name, key)), column=col) from err
        sections[name] = out
    return RunConfig(sections, path=path, lines=lines)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as err:
        raise ParseError(str(err), path=path) from err
    return parse_config(text, path=path)


# -- construction -------------------------------------------------------------------
def build_problem(cfg):
    p = cfg.sections.get("problem", {})
    kind = p.get("kind", "quadratic")
    if kind not in PROBLEM_KINDS:
        raise cfg.error("problem", "kind", f"must be one of {', '.join(PROBLEM_KINDS)}")
    seed = p.get("seed", 0)
    if kind == "quadratic":
        return make_quadratic(
            seed, p.get("n", 100), p.get("m", 100), p.get("dim_x", 5), p.get("dim_y", 5),
            mu=p.get("mu", 0.5), L=p.get("L", 2.0), noise=p.get("noise", 0.01),
            vec_noise=p.get("vec_noise", 0.1), h_mu=p.get("h_mu", 0.1), x_radius=p.get("x_radius"),
        )
    if kind == "hypercleaning":
        images = labels = None
        if "images" in p or "labels" in p:
            if not ("images" in p and "labels" in p):
                raise cfg.error("problem", "images", "images and labels must be given together")
            images = load_idx(data_path(p["images"]))
            labels = load_idx(data_path(p["labels"]), scale=False)
        return make_hypercleaning(
            seed, n_train=p.get("n_train", 1000), n_val=p.get("n_val", 500),
            n_test=p.get("n_test", 1000), p_tilde=p.get("p_tilde", 0.5),
            C_r=p.get("C_r", 0.2), images=images, labels=labels,
        )
    layout = p.get("layout", "per-feature")
    X = labels = None
    if "libsvm" in p:
        X, labels = load_libsvm(data_path(p["libsvm"]), n_features=p.get("n_features"))
        if layout == "per-class":
            labels = labels.astype(int) - int(labels.min())
    return make_regpath(
        seed, kind=layout, n_train=p.get("n_train", 400), n_val=p.get("n_val", 200),
        n_test=p.get("n_test", 400), n_features=p.get("n_features", 20),
        n_classes=p.get("n_classes", 3), X=X, labels=labels,
    )


def solver_config(cfg, problem, seed=None, cadence=None):
    """:class:`SolverConfig` from the ``[solver]`` section.

    Step sizes given as ``suggest`` come from the certificate-backed
    suggestion for the problem's declared constants.
    """
    s = cfg.sections.get("solver", {})
    algorithm = s.get("algorithm", "SPABA")
    N = problem.n + problem.m
    try:
        base = preset(algorithm, N=N, batch=s.get("batch"), p=s.get("p"),
                      rho_bar=s.get("rho_bar"), a=s.get("a"), rho=s.get("rho"))
    except ValueError as err:
        raise cfg.error("solver", "algorithm", str(err)) from err
    # explicit per-channel wiring overrides the preset's estimators
    defaults = {
        "page": {"p": s.get("p", base.batch / (N + base.batch))},
        "zerosarah": {"rho_bar": s.get("rho_bar", base.batch / (2 * N))},
        "storm": {"a": s.get("a", DEFAULT_STORM_A)},
    }
    wiring = {}
    for ch in ("x", "y", "z"):
        name = s.get(f"estimator_{ch}")
        if name is not None:
            wiring[f"estimator_{ch}"] = EstimatorSpec(name, dict(defaults.get(name, {})))
    steps = {k: s.get(k, 0.0) for k in ("alpha", "beta", "gamma")}
    if "suggest" in steps.values():
        if problem.smoothness is None:
            raise cfg.error("solver", "alpha", "problem declares no constants to suggest steps from")
        ledger = build_ledger(problem.smoothness, problem.n, problem.m)
        sug = suggest_steps(ledger, algorithm, N, batch=base.batch)
        for k in steps:
            if steps[k] == "suggest":
                steps[k] = getattr(sug, k)
    kw = dict(steps, K=s.get("K", 1000), seed=s.get("seed", 0) if seed is None else seed,
              gradH=s.get("gradH", problem.quadratic_ll), timing=s.get("timing", False),
              stop_below=s.get("stop_below"), R=s.get("R"), **wiring)
    if cadence is not None or "cadence" in s:
        kw["cadence"] = cadence if cadence is not None else s["cadence"]
    return base.replace(**kw)


def theory_inputs(cfg, problem=None):
    """``(SmoothnessParams, n, m)`` from ``[theory]``, falling back to the problem's."""
    t = cfg.sections.get("theory", {})
    keys = ("Lf", "Lg1", "Lg2", "mu", "Cf")
    if all(k in t for k in keys):
        params = SmoothnessParams(**{k: t[k] for k in keys})
    elif problem is not None and problem.smoothness is not None:
        params = problem.smoothness
    else:
        missing = [k for k in keys if k not in t]
        raise ParseError(f"[theory] is missing {', '.join(missing)}", path=cfg.path)
    n = t.get("n", problem.n if problem is not None else None)
    m = t.get("m", problem.m if problem is not None else None)
    if n is None or m is None:
        raise ParseError("[theory] needs n and m", path=cfg.path)
    return params, n, m
