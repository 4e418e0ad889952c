import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pnpbo.model import clip
from pnpbo.rng import derive_seed
from pnpbo.theory import (
    SmoothnessParams, build_ledger, check_biased, coefficients_for, max_feasible_alpha, step_ties,
)

from helpers import biased_system, ledger_exact

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, 4, elements=finite)
radii = st.floats(1e-3, 1e3)
positive = st.floats(1e-2, 1e2)


@given(vectors, radii)
def test_clip_is_idempotent_and_bounded(z, R):
    c = clip(z, R)
    assert np.linalg.norm(c) <= R * (1 + 1e-12)
    assert np.allclose(clip(c, R), c, rtol=1e-12, atol=0)


@given(vectors, vectors, radii)
def test_clip_is_non_expansive(a, b, R):
    assert np.linalg.norm(clip(a, R) - clip(b, R)) <= np.linalg.norm(a - b) * (1 + 1e-9) + 1e-9


@given(vectors, radii)
def test_clip_keeps_direction(z, R):
    c = clip(z, R)
    assert np.allclose(c * np.linalg.norm(z), z * np.linalg.norm(c), rtol=1e-9, atol=1e-6)


@st.composite
def smoothness(draw):
    Lg1 = draw(positive)
    mu = draw(st.floats(1e-2, 1.0)) * Lg1
    return dict(Lf=draw(positive), Lg1=Lg1, Lg2=draw(positive), mu=mu, Cf=draw(positive))


@settings(max_examples=100)
@given(smoothness(), st.integers(1, 10_000), st.integers(1, 10_000))
def test_ledger_matches_exact_evaluator(params, n, m):
    led = build_ledger(SmoothnessParams(**params), n, m).as_dict()
    for k, v in ledger_exact(*params.values(), n, m).items():
        assert led[k] == pytest.approx(v, rel=1e-12), k


@settings(max_examples=100)
@given(smoothness(), st.integers(1, 10_000))
def test_ledger_c3_below_both_curvatures(params, n):
    led = build_ledger(SmoothnessParams(**params), n, n)
    assert 0 < led.c3 < min(params["mu"], params["Lg1"])
    assert led.L_H >= params["Lf"]


log_step = st.floats(-14, 0).map(lambda e: 10.0**e)


@settings(max_examples=300)
@given(st.sampled_from(["SFFBA", "MSEBA", "SPABA"]), smoothness(), st.integers(4, 2000),
       log_step, log_step, log_step)
def test_biased_checker_agrees_with_reference(alg, params, N, a, b, g):
    n = N // 2
    led = build_ledger(SmoothnessParams(**params), n, N - n)
    coeffs = coefficients_for(led, alg, N)[0]
    want = biased_system(ledger_exact(*params.values(), n, N - n), alg, N)(a, b, g)
    cert = check_biased(led, (a, b, g), coeffs)
    # skip draws within rounding of a row boundary
    assume(all(abs(r.lhs - r.rhs) > 1e-9 * max(abs(r.rhs), 1e-300) for r in cert.rows))
    assert cert.feasible == want


@settings(max_examples=300)
@given(st.sampled_from(["SFFBA", "MSEBA", "SPABA"]), smoothness(), st.integers(4, 2000),
       st.floats(-1.5, 0.5), st.floats(-1, 1), st.floats(-1, 1))
def test_biased_checker_agrees_near_the_boundary(alg, params, N, ea, eb, eg):
    # sample around the certified tied step so both outcomes occur often
    n = N // 2
    led = build_ledger(SmoothnessParams(**params), n, N - n)
    coeffs = coefficients_for(led, alg, N)[0]
    kb, kg = step_ties(led, "biased")
    a = max_feasible_alpha(led, coeffs) * 10.0**ea
    steps = (a, kb * a * 10.0**eb, kg * a * 10.0**eg)
    want = biased_system(ledger_exact(*params.values(), n, N - n), alg, N)(*steps)
    cert = check_biased(led, steps, coeffs)
    assume(all(abs(r.lhs - r.rhs) > 1e-9 * max(abs(r.rhs), 1e-300) for r in cert.rows))
    assert cert.feasible == want


@given(st.integers(0, 2**32), st.integers(0, 10_000), st.integers(0, 10_000))
def test_derived_seeds_differ_per_index(base, i, j):
    assume(i != j)
    assert derive_seed(base, i) != derive_seed(base, j)
    assert derive_seed(base, i) == derive_seed(base, i)
