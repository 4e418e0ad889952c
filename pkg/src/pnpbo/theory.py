"""Smoothness constants and step-size certificates.

Given the declared smoothness parameters of a problem, :func:`build_ledger`
evaluates every derived constant the convergence conditions refer to.
:func:`check_biased` and :func:`check_unbiased` evaluate those conditions for
a concrete step-size triple and an estimator's coefficient substitution, and
:func:`suggest_steps` finds the largest constant upper-level step that the
conditions certify.

Everything here is plain double-precision arithmetic on closed forms.
"""

import json
import math
from dataclasses import asdict, dataclass, field

from ._validation import check_int, check_scalar
from .exceptions import InfeasibleError


@dataclass(frozen=True)
class SmoothnessParams:
    """Declared constants of a bilevel problem.

    ``Lf``: Lipschitz constant of every ``grad F_i``; ``Lg1`` and ``Lg2``:
    of every ``grad G_j`` and ``hess G_j``; ``mu``: strong convexity of
    ``g(x, .)``; ``Cf``: bound on ``||grad_2 f(x, y*(x))||``.
    """

    Lf: float
    Lg1: float
    Lg2: float
    mu: float
    Cf: float

    def __post_init__(self):
        for name in ("Lf", "Lg1", "Lg2", "mu", "Cf"):
            check_scalar(getattr(self, name), name, lo=0.0, lo_open=True)
        if self.mu > self.Lg1:
            raise ValueError(f"mu ({self.mu}) cannot exceed Lg1 ({self.Lg1})")


@dataclass(frozen=True)
class ConstantsLedger:
    params: SmoothnessParams
    n: int
    m: int
    R: float
    L_ystar: float
    L_zstar: float
    L_H: float
    c_bar: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c8: float
    c9: float
    Lz_sq: float
    L_pp: float
    tau: int
    M1: float
    M2: float
    M3: float

    def as_dict(self):
        d = asdict(self)
        d.update(d.pop("params"))
        return d

    def spread(self):
        """log10 of the ratio between the largest and smallest constant."""
        vals = [abs(v) for k, v in self.as_dict().items() if k not in ("n", "m") and v]
        return math.log10(max(vals) / min(vals))


def build_ledger(params, n, m):
    """Evaluate every derived constant from ``params`` for an ``n``/``m`` finite sum."""
    if not isinstance(params, SmoothnessParams):
        params = SmoothnessParams(**params)
    n = check_int(n, "n", lo=1)
    m = check_int(m, "m", lo=1)
    Lf, Lg1, Lg2, mu, Cf = params.Lf, params.Lg1, params.Lg2, params.mu, params.Cf

    R = Cf / mu
    L_ystar = Lg1 / mu
    L_zstar = (Lf / mu + Cf * Lg2 / mu**2) * (1 + Lg1 / mu)
    L_H = (
        Lf
        + (2 * Lf * Lg2 + Cf**2 * Lg2) / mu
        + (Lf * Lg1**2 + 2 * Cf * Lg1 * Lg2) / mu**2
        + Cf * Lg1**2 * Lg2 / mu**3
    )
    c1 = Lf**2 + (Lg2 * R) ** 2
    c2 = Lg1**2
    c_bar = min((mu + Lg1) / (mu * Lg1), 1 / (mu + Lg1))
    c3 = mu * Lg1 / (2 * (mu + Lg1))
    c4 = 6 * (mu + Lg1) / (mu * Lg1)
    c5 = 2 * (mu + Lg1) * L_ystar**2 / (mu * Lg1)
    c6 = 2 * L_ystar**2 / mu
    c7 = L_zstar**2 / c3
    c8 = 8 * c1 / mu
    c9 = 3 * L_zstar**2 / mu
    Lz_sq = max(3 * Lg1**2, 3 * R**2 * Lg2**2 + 3 * Lf**2)
    L_pp = max(4 * Lf**2, 8 * Lg2**2 * R**2, 8 * Lg1**2)
    tau = max(n, m)
    M1 = min(
        1 / (64 * c1),
        c3**2 / (288 * c1 * c2),
        c3**2 / (192 * c2 * Lz_sq),
        1 / (32 * c2),
        L_ystar**2 / (96 * c1),
        L_zstar**2 / (96 * c1),
    )
    M2 = min(
        mu / (264 * c1 * c2),
        11 * c8**2 / (24 * c2 * Lz_sq * mu),
        1 / (384 * c1),
        11 * c8 / (120 * c2 * Lz_sq),
        11 * c8 / (384 * c2 * mu),
    )
    M3 = min(M2, c6 / (4 * c1))
    return ConstantsLedger(
        params=params, n=n, m=m, R=R, L_ystar=L_ystar, L_zstar=L_zstar, L_H=L_H,
        c_bar=c_bar, c1=c1, c2=c2, c3=c3, c4=c4, c5=c5, c6=c6, c7=c7, c8=c8, c9=c9,
        Lz_sq=Lz_sq, L_pp=L_pp, tau=tau, M1=M1, M2=M2, M3=M3,
    )


# -- estimator coefficient substitutions -----------------------------------
@dataclass(frozen=True)
class EstimatorCoefficients:
    """Explicit Lyapunov-coefficient substitution for one algorithm.

    All substitutions used here are linear in the step sizes, so each
    bracketed product is stored as a factor:

    * ``x_factor * alpha`` is ``A_{k+1} eta^A + A'_{k+1} etahat^A``
    * ``y_factor * beta`` is the same bracket for the y channel
    * ``z_factor * gamma`` is the same bracket for the z channel
    * ``a_pp_factor * alpha / rho`` is ``A''_{k+1}`` (moving-average regime)
    * ``eta_x`` is ``eta^A`` itself

    ``extra`` lists algorithm-specific rows as ``(name, kind, bound)`` with
    ``kind`` one of ``"alpha"``, ``"beta"``, ``"gamma"``, ``"alpha*beta"``,
    ``"gamma*beta"``.
    """

    algorithm: str
    regime: str
    x_factor: float
    y_factor: float
    z_factor: float
    a_pp_factor: float = 0.0
    eta_x: float = 0.0
    extra: tuple = ()
    aux: dict = field(default_factory=dict)


def _zerosarah_factors(ledger, b, rho_bar):
    # eta = 2/b, etahat = 3 tau/(4 c b) with c = c1 (x, y) or c2 (z)
    base = 2.0 / (b * rho_bar)
    xy = base + 3.0 * rho_bar * ledger.tau * ledger.L_pp / (2.0 * ledger.c1 * b)
    z = base + 3.0 * rho_bar * ledger.tau * ledger.L_pp / (2.0 * ledger.c2 * b)
    return xy, z


def _page_factor(b, p):
    return (1.0 - p) / (p * b)


def _c_beta_bound(ledger):
    L = ledger
    den = 16 * L.c1 + 3 * L.L_pp
    return min(
        L.c_bar,
        math.sqrt(L.c1 / (4 * L.c2 * den)),
        math.sqrt(L.c1 * L.c3**2 / (18 * L.c2**2 * den)),
        math.sqrt(L.c1 * L.L_ystar**2 / (12 * L.c2 * den)),
    )


def coefficients_sffba(ledger, b, rho_bar):
    """ZeroSARAH on all three channels with ``A = alpha/rho_bar``, ``A' = 2 alpha rho_bar L''``."""
    xy, z = _zerosarah_factors(ledger, b, rho_bar)
    c_ab = math.sqrt(4 * ledger.c1 * ledger.M1 / (16 * ledger.c1 + 3 * ledger.L_pp))
    c_beta = _c_beta_bound(ledger)
    extra = (
        ("gamma <= c_bar", "gamma", ledger.c_bar),
        ("beta <= c_beta", "beta", c_beta),
        ("alpha*beta <= c_alphabeta", "alpha*beta", c_ab),
        ("gamma*beta <= c_gammabeta", "gamma*beta", c_ab),
    )
    return EstimatorCoefficients(
        "SFFBA", "biased", xy, xy, z, extra=extra,
        aux={"b": b, "rho_bar": rho_bar, "c_beta": c_beta, "c_alphabeta": c_ab},
    )


def coefficients_mseba(ledger, b, p, rho_bar):
    """PAGE on x and z (``A = alpha/p``, ``A' = 0``), ZeroSARAH on y."""
    xy, _ = _zerosarah_factors(ledger, b, rho_bar)
    page = _page_factor(b, p)
    c_beta = _c_beta_bound(ledger)
    extra = (
        ("gamma <= c_bar", "gamma", ledger.c_bar),
        ("beta <= c_beta", "beta", c_beta),
        ("alpha*beta <= M1", "alpha*beta", ledger.M1),
        ("gamma*beta <= M1", "gamma*beta", ledger.M1),
    )
    return EstimatorCoefficients(
        "MSEBA", "biased", page, xy, page, extra=extra,
        aux={"b": b, "p": p, "rho_bar": rho_bar, "c_beta": c_beta},
    )


def coefficients_spaba(ledger, b, p):
    """PAGE on all three channels, each with ``coef = step/p`` and no memory term."""
    page = _page_factor(b, p)
    return EstimatorCoefficients("SPABA", "biased", page, page, page, aux={"b": b, "p": p})


def coefficients_sgd_ma(ledger, b, rho, algorithm="MA-SOBA"):
    """Minibatch SGD on all channels with the x-channel moving average.

    SGD has no variance recursion (``theta = eta = 0``), so the brackets vanish;
    ``A'' = alpha/(2 rho)`` is the smallest value meeting the moving-average
    coefficient condition at constant steps.
    """
    return EstimatorCoefficients(
        algorithm, "unbiased", 0.0, 0.0, 0.0, a_pp_factor=0.5, eta_x=0.0,
        aux={"b": b, "rho": rho},
    )


# -- certificates -------------------------------------------------------------
@dataclass(frozen=True)
class ConstraintRow:
    name: str
    lhs: float
    rhs: float

    @property
    def satisfied(self):
        return self.lhs <= self.rhs

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def ratio(self):
        if self.lhs == 0.0:
            return 0.0
        return self.lhs / self.rhs if self.rhs > 0 else math.inf


@dataclass(frozen=True)
class StepSizeCertificate:
    """Outcome of checking one step-size triple.

    ``binding`` is the first violated row when infeasible, otherwise the row
    closest to equality (largest ``lhs/rhs``).
    """

    regime: str
    algorithm: str
    steps: tuple
    rows: tuple
    feasible: bool
    binding: str
    spread: float

    def table(self):
        width = max(len(r.name) for r in self.rows)
        out = [f"{'constraint':<{width}}  {'lhs':>12}  {'rhs':>12}  ok"]
        for r in self.rows:
            out.append(f"{r.name:<{width}}  {r.lhs:12.4e}  {r.rhs:12.4e}  {'yes' if r.satisfied else 'NO'}")
        verdict = "feasible" if self.feasible else "infeasible"
        out.append(f"{self.regime} regime: {verdict}; binding: {self.binding}")
        out.append(f"ledger spread: 1e{self.spread:.1f}")
        return "\n".join(out)

    def json_lines(self):
        lines = [
            json.dumps({"name": r.name, "lhs": r.lhs, "rhs": r.rhs, "ok": r.satisfied})
            for r in self.rows
        ]
        lines.append(json.dumps({
            "regime": self.regime, "algorithm": self.algorithm,
            "alpha": self.steps[0], "beta": self.steps[1], "gamma": self.steps[2],
            "feasible": self.feasible, "binding": self.binding, "spread": self.spread,
        }))
        return lines


def _certificate(regime, algorithm, steps, rows, ledger):
    rows = tuple(rows)
    feasible = all(r.satisfied for r in rows)
    if feasible:
        binding = max(rows, key=lambda r: r.ratio).name
    else:
        binding = next(r.name for r in rows if not r.satisfied)
    return StepSizeCertificate(regime, algorithm, tuple(steps), rows, feasible, binding, ledger.spread())


def _extra_rows(coeffs, alpha, beta, gamma):
    value = {
        "alpha": alpha, "beta": beta, "gamma": gamma,
        "alpha*beta": alpha * beta, "gamma*beta": gamma * beta,
    }
    return [ConstraintRow(name, value[kind], bound) for name, kind, bound in coeffs.extra]


def _steps(steps):
    alpha, beta, gamma = (float(s) for s in steps)
    for name, s in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        check_scalar(s, name, lo=0.0)
    return alpha, beta, gamma


def check_biased(ledger, steps, coeffs):
    """Certify ``(alpha, beta, gamma)`` when all three estimators are biased."""
    alpha, beta, gamma = _steps(steps)
    L = ledger
    rows = [
        ConstraintRow("alpha <= 1/(2*L_H)", alpha, 1 / (2 * L.L_H)),
        ConstraintRow("beta <= c_bar", beta, L.c_bar),
        ConstraintRow("gamma <= c_bar", gamma, L.c_bar),
        ConstraintRow(
            "y-bracket*beta <= min(1/(16c2), c3^2/(72c2^2), Ly*^2/(48c2))",
            coeffs.y_factor * beta * beta,
            min(1 / (16 * L.c2), L.c3**2 / (72 * L.c2**2), L.L_ystar**2 / (48 * L.c2)),
        ),
        ConstraintRow("alpha <= 3 beta/(4 Ly*^2)", alpha, 3 * beta / (4 * L.L_ystar**2)),
        ConstraintRow("alpha <= c3^2 beta/(108 c1)", alpha, L.c3**2 * beta / (108 * L.c1)),
        ConstraintRow("alpha <= 3 gamma/(8 Lz*^2)", alpha, 3 * gamma / (8 * L.L_zstar**2)),
        ConstraintRow("alpha <= c3^2 gamma/(36 c2)", alpha, L.c3**2 * gamma / (36 * L.c2)),
        ConstraintRow("gamma <= 2 beta/3", gamma, 2 * beta / 3),
        ConstraintRow("x-bracket*beta <= M1", coeffs.x_factor * alpha * beta, L.M1),
        ConstraintRow("z-bracket*beta <= M1", coeffs.z_factor * gamma * beta, L.M1),
    ]
    rows += _extra_rows(coeffs, alpha, beta, gamma)
    return _certificate("biased", coeffs.algorithm, (alpha, beta, gamma), rows, L)


def check_unbiased(ledger, steps, rho, coeffs):
    """Certify ``(alpha, beta, gamma)`` and momentum ``rho`` for unbiased estimators."""
    alpha, beta, gamma = _steps(steps)
    rho = check_scalar(rho, "rho", lo=0.0, hi=1.0, lo_open=True)
    L = ledger
    mu = L.params.mu
    a_pp = coeffs.a_pp_factor * alpha / rho
    rows = [
        ConstraintRow("alpha <= 1/(2*L_H)", alpha, 1 / (2 * L.L_H)),
        ConstraintRow("beta <= min(1/4, 1/(mu+Lg1))", beta, min(0.25, 1 / (mu + L.params.Lg1))),
        ConstraintRow("gamma <= min(1/4, 1/(10 mu))", gamma, min(0.25, 1 / (10 * mu))),
        ConstraintRow(
            "y-bracket*beta <= min(1/(8c2), mu/(22c2^2), c6/c2)",
            coeffs.y_factor * beta * beta,
            min(1 / (8 * L.c2), mu / (22 * L.c2**2), L.c6 / L.c2),
        ),
        ConstraintRow("alpha <= beta/(32 c6)", alpha, beta / (32 * L.c6)),
        ConstraintRow("alpha <= gamma/(32 c9)", alpha, gamma / (32 * L.c9)),
        ConstraintRow("gamma <= mu beta/(11 c8)", gamma, mu * beta / (11 * L.c8)),
        ConstraintRow("rho A'' <= mu beta/(99 c1)", rho * a_pp, mu * beta / (99 * L.c1)),
        ConstraintRow("rho A'' <= mu gamma/(45 c2)", rho * a_pp, mu * gamma / (45 * L.c2)),
        ConstraintRow("(alpha/rho) A'' <= 1/(96 L_H^2)", alpha / rho * a_pp, 1 / (96 * L.L_H**2)),
        ConstraintRow("rho beta A'' <= M3", rho * beta * a_pp, L.M3),
        ConstraintRow("rho^2 A'' eta_A beta <= M3", rho**2 * a_pp * coeffs.eta_x * beta, L.M3),
        ConstraintRow("x-bracket*beta <= M2", coeffs.x_factor * alpha * beta, L.M2),
        ConstraintRow("z-bracket*beta <= M2", coeffs.z_factor * gamma * beta, L.M2),
    ]
    rows += _extra_rows(coeffs, alpha, beta, gamma)
    return _certificate("unbiased", coeffs.algorithm, (alpha, beta, gamma), rows, L)


# -- step suggestion ------------------------------------------------------------
@dataclass(frozen=True)
class SuggestedSteps:
    alpha: float
    beta: float
    gamma: float
    batch: int
    p: float | None
    rho_bar: float | None
    rho: float | None
    coefficients: EstimatorCoefficients
    certificate: StepSizeCertificate


SUGGESTABLE = ("SPABA", "SFFBA", "MSEBA", "SOBA", "MA-SOBA")


def coefficients_for(ledger, algorithm, N, batch=None, p=None, rho_bar=None, rho=None):
    """Default parameters and coefficient substitution for a named algorithm.

    Batch size defaults to ``ceil(sqrt(N))``, ``p`` to ``b/(N+b)`` and
    ``rho_bar`` to ``b/(2N)``.
    """
    name = algorithm.upper()
    if name not in SUGGESTABLE:
        raise ValueError(
            f"no explicit coefficient substitution for {algorithm!r}; "
            f"supported: {', '.join(SUGGESTABLE)}"
        )
    N = check_int(N, "N", lo=1)
    b = math.ceil(math.sqrt(N)) if batch is None else check_int(batch, "batch", lo=1)
    if p is None:
        p = b / (N + b)
    if rho_bar is None:
        rho_bar = b / (2 * N)
    if name == "SFFBA":
        return coefficients_sffba(ledger, b, rho_bar), b, None, rho_bar, None
    if name == "MSEBA":
        return coefficients_mseba(ledger, b, p, rho_bar), b, p, rho_bar, None
    if name == "SPABA":
        return coefficients_spaba(ledger, b, p), b, p, None, None
    if rho is None:
        rho = 1.0 if name == "SOBA" else 0.5
    return coefficients_sgd_ma(ledger, b, rho, name), b, None, None, rho


TIE_MARGIN = 1e-9


def step_ties(ledger, regime):
    """``(k_beta, k_gamma)`` with ``beta = k_beta*alpha``, ``gamma = k_gamma*alpha``.

    Each factor makes the tightest alpha-versus-beta (or gamma) coupling row
    hold with equality; beta is then raised if the gamma-versus-beta row
    would fail.
    """
    L = ledger
    # the margin keeps tied rows strictly satisfied after rounding
    up = 1.0 + TIE_MARGIN
    if regime == "biased":
        k_beta = up / min(3 / (4 * L.L_ystar**2), L.c3**2 / (108 * L.c1))
        k_gamma = up / min(3 / (8 * L.L_zstar**2), L.c3**2 / (36 * L.c2))
        k_beta = max(k_beta, 1.5 * k_gamma * up)
    else:
        mu = L.params.mu
        k_beta = 32 * L.c6 * up
        k_gamma = 32 * L.c9 * up
        k_beta = max(k_beta, 11 * L.c8 * k_gamma / mu * up)
    return k_beta, k_gamma


def _check(ledger, coeffs, rho, alpha, k_beta, k_gamma):
    steps = (alpha, k_beta * alpha, k_gamma * alpha)
    if coeffs.regime == "biased":
        return check_biased(ledger, steps, coeffs)
    return check_unbiased(ledger, steps, rho, coeffs)


ALPHA_FLOOR = 1e-30


def max_feasible_alpha(ledger, coeffs, rho=None, rtol=1e-13):
    """Bisection for the largest certified alpha along the tied step family."""
    k_beta, k_gamma = step_ties(ledger, coeffs.regime)
    hi = 1 / (2 * ledger.L_H)
    if _check(ledger, coeffs, rho, hi, k_beta, k_gamma).feasible:
        return hi
    lo, floor = 0.0, hi * ALPHA_FLOOR
    while hi - lo > rtol * hi:
        if hi < floor:
            # quadratic rows underflow below here, so a hit would not be a real certificate
            return 0.0
        mid = 0.5 * (lo + hi)
        if _check(ledger, coeffs, rho, mid, k_beta, k_gamma).feasible:
            lo = mid
        else:
            hi = mid
    return lo


def suggest_steps(ledger, algorithm, N, target="max-alpha", batch=None, p=None, rho_bar=None, rho=None):
    """Largest constant alpha (with tied beta, gamma) that certifies feasible."""
    if target != "max-alpha":
        raise ValueError(f"unsupported target {target!r}")
    coeffs, b, p, rho_bar, rho = coefficients_for(ledger, algorithm, N, batch, p, rho_bar, rho)
    k_beta, k_gamma = step_ties(ledger, coeffs.regime)
    alpha = max_feasible_alpha(ledger, coeffs, rho)
    # with no positive step, certify the smallest one probed so the failing row is visible
    probe = alpha if alpha > 0.0 else ALPHA_FLOOR / (2 * ledger.L_H)
    cert = _check(ledger, coeffs, rho, probe, k_beta, k_gamma)
    if alpha <= 0.0 or not cert.feasible:
        raise InfeasibleError(f"no positive certified step for {algorithm}", cert)
    return SuggestedSteps(alpha, k_beta * alpha, k_gamma * alpha, b, p, rho_bar, rho, coeffs, cert)
