import numpy as np
import pytest

from pnpbo.estimators import PAGE, SAGA, SGD, STORM, ChannelEvaluator, ZeroSARAH, make_estimator
from pnpbo.exceptions import EstimatorStateError
from pnpbo.model import Iterate, SampleDraw
from pnpbo.problems.quadratic import make_quadratic

from helpers import PointMemorySAGA, ScalarToy, vec


def it_(x, y, z=0.0):
    return Iterate(vec(x), vec(y), vec(z))


def draw(I, J):
    return SampleDraw(np.asarray(I), np.asarray(J))


@pytest.fixture(scope="module")
def quad():
    return make_quadratic(5, 7, 6, 3, 4, noise=0.5)


def rand_iterate(problem, rng):
    return Iterate(rng.standard_normal(problem.dim_x), rng.standard_normal(problem.dim_y),
                   rng.standard_normal(problem.dim_y))


# -- evaluator ---------------------------------------------------------------------
@pytest.mark.parametrize("channel", ["x", "y", "z"])
def test_eval_at_is_signed_mean_of_parts(quad, channel):
    rng = np.random.default_rng(0)
    it = rand_iterate(quad, rng)
    ev = ChannelEvaluator(quad, channel)
    I, J = np.array([0, 3, 5]), np.array([1, 2])
    f = ev.eval_component_f(I, it).mean(axis=0)
    g = ev.eval_component_g(J, it).mean(axis=0)
    sign = {"x": (1, -1), "y": (0, 1), "z": (-1, 1)}[channel]
    want = sign[0] * f + sign[1] * g
    assert np.allclose(ev.eval_at(it, I, J), want, rtol=1e-14, atol=1e-14)


def test_evaluator_counts(quad):
    ev = ChannelEvaluator(quad, "x")
    ev.eval_at(quad.initial_iterate(), np.arange(3), np.arange(2))
    assert (ev.n_f, ev.n_g) == (3, 2)
    ev_y = ChannelEvaluator(quad, "y")
    ev_y.eval_at(quad.initial_iterate(), np.arange(3), np.arange(2))
    assert (ev_y.n_f, ev_y.n_g) == (0, 2)


def test_evaluator_rejects_unknown_channel(quad):
    with pytest.raises(ValueError):
        ChannelEvaluator(quad, "w")


# -- SGD ------------------------------------------------------------------------------
def test_sgd_full_batch_is_full_direction(quad):
    it = rand_iterate(quad, np.random.default_rng(1))
    ev = ChannelEvaluator(quad, "z")
    v = SGD().estimate(ev, it, SampleDraw.full(quad))
    assert np.array_equal(v, ev.full(it))


def test_sgd_single_sample_problem_is_full():
    p = ScalarToy(s=[0.7], t=[0.2], w=[1.5])
    ev = ChannelEvaluator(p, "x")
    it = it_(1.0, 2.0, 3.0)
    assert np.array_equal(SGD().estimate(ev, it, draw([0], [0])), ev.full(it))


def test_sgd_brute_force_mean():
    # x-channel f-parts are t_i; the g-part vanishes at z = 0
    p = ScalarToy(s=[0, 0, 0, 0], t=[1, 2, 3, 4], w=[1.0])
    ev = ChannelEvaluator(p, "x")
    assert SGD().estimate(ev, it_(0.5, 0.1, 0.0), draw([0, 3], [0])) == pytest.approx([2.5])


# -- ZeroSARAH ----------------------------------------------------------------------
def test_zerosarah_init_single_sample():
    p = ScalarToy(s=[0.5], w=[2.0])
    ev = ChannelEvaluator(p, "z")
    it = it_(1.0, 2.0, 3.0)
    est = ZeroSARAH(0.3)
    est.initialize(ev, it)
    assert est.table_f[0] == pytest.approx(ev.eval_component_f([0], it)[0])
    assert est.table_g[0] == pytest.approx(ev.eval_component_g([0], it)[0])
    assert np.array_equal(est.v_prev, ev.full(it))


def test_zerosarah_init_tables_match_recomputed(quad):
    it = rand_iterate(quad, np.random.default_rng(2))
    ev = ChannelEvaluator(quad, "x")
    est = ZeroSARAH(0.2)
    est.initialize(ev, it)
    for i in range(quad.n):
        assert np.allclose(est.table_f[i], quad.grad1_f(i, it.x, it.y), rtol=0, atol=1e-15)
    for j in range(quad.m):
        assert np.allclose(est.table_g[j], quad.jvp12_g(j, it.x, it.y, it.z), rtol=0, atol=1e-15)
    assert np.array_equal(est.avg_f, est.table_f.mean(axis=0))
    assert np.array_equal(est.avg_g, est.table_g.mean(axis=0))


def test_zerosarah_rho_zero_full_batch_is_sarah(quad):
    rng = np.random.default_rng(3)
    it0, it1 = rand_iterate(quad, rng), rand_iterate(quad, rng)
    ev = ChannelEvaluator(quad, "z")
    est = ZeroSARAH(0.0)
    est.initialize(ev, it0)
    v0 = est.v_prev.copy()
    full = SampleDraw.full(quad)
    v1 = est.estimate(ev, it1, full)
    want = v0 - ev.full(it0) + ev.full(it1)
    assert np.allclose(v1, want, rtol=1e-13, atol=1e-13)


def test_zerosarah_stationary_iterate(quad):
    rng = np.random.default_rng(4)
    it = rand_iterate(quad, rng)
    ev = ChannelEvaluator(quad, "x")
    est = ZeroSARAH(0.25)
    est.initialize(ev, it)
    est.v_prev = rng.standard_normal(quad.dim_x)
    v_prev = est.v_prev.copy()
    v = est.estimate(ev, it, draw([1, 4], [0, 5]))
    assert np.allclose(v, 0.75 * v_prev + 0.25 * ev.full(it), rtol=1e-13, atol=1e-13)


def test_zerosarah_two_steps_hand_unrolled():
    # y channel of G_j = w_j (y - x)^2 / 2: component g_j(x, y) = w_j (y - x)
    w = np.array([1.0, 3.0])
    p = ScalarToy(s=[0.0, 0.0], w=w)
    ev = ChannelEvaluator(p, "y")
    r = 0.25
    (x0, y0), (x1, y1), (x2, y2) = (0.0, 1.0), (0.5, 2.0), (1.0, -1.0)
    est = ZeroSARAH(r)
    est.initialize(ev, it_(x0, y0))
    v0 = w.mean() * (y0 - x0)
    # step 1 draws J = {0}; memories all at point 0
    v1 = (1 - r) * (v0 - w[0] * (y0 - x0)) + w[0] * (y1 - x1) + r * (v0 - w[0] * (y0 - x0))
    got1 = est.estimate(ev, it_(x1, y1), draw([0], [0]))
    # step 2 draws J = {1}; memory 0 now at point 1, memory 1 still at point 0
    mem_full = 0.5 * (w[0] * (y1 - x1) + w[1] * (y0 - x0))
    v2 = (1 - r) * (v1 - w[1] * (y1 - x1)) + w[1] * (y2 - x2) + r * (mem_full - w[1] * (y0 - x0))
    got2 = est.estimate(ev, it_(x2, y2), draw([1], [1]))
    assert got1 == pytest.approx([v1], abs=1e-15)
    assert got2 == pytest.approx([v2], abs=1e-15)
    # by hand: v1 = 0.75*(2-1) + 1.5 + 0.25*(2-1), v2 = 0.75*(2.5-4.5) - 6 + 0.25*(2.25-3)
    assert v1 == pytest.approx(2.5)
    assert v2 == pytest.approx(-7.6875)


def test_zerosarah_uninitialised_raises(quad):
    with pytest.raises(EstimatorStateError):
        ZeroSARAH(0.1).estimate(ChannelEvaluator(quad, "y"), quad.initial_iterate(), SampleDraw.full(quad))


def test_zerosarah_minibatch_init_makes_no_full_pass(quad):
    ev = ChannelEvaluator(quad, "x")
    est = ZeroSARAH(0.1, full_init=False, batch=2)
    est.initialize(ev, quad.initial_iterate(), rng=np.random.default_rng(0))
    assert ev.n_f == 2 and ev.n_g == 2


@pytest.mark.parametrize("cls", [lambda: SAGA(), lambda: ZeroSARAH(0.3)])
def test_table_average_coherence(quad, cls):
    rng = np.random.default_rng(5)
    ev = ChannelEvaluator(quad, "z")
    est = cls()
    est.initialize(ev, rand_iterate(quad, rng))
    for _ in range(1000):
        I = rng.choice(quad.n, 3, replace=False)
        J = rng.choice(quad.m, 2, replace=False)
        est.estimate(ev, rand_iterate(quad, rng), draw(I, J))
    assert np.allclose(est.avg_f, est.table_f.mean(axis=0), rtol=0, atol=1e-10)
    assert np.allclose(est.avg_g, est.table_g.mean(axis=0), rtol=0, atol=1e-10)


# -- PAGE -------------------------------------------------------------------------------
def test_page_heads_is_full(quad):
    rng = np.random.default_rng(6)
    ev = ChannelEvaluator(quad, "x")
    est = PAGE(0.5)
    est.initialize(ev, None)
    est.estimate(ev, rand_iterate(quad, rng), draw([0], [0]))
    it = rand_iterate(quad, rng)
    assert np.array_equal(est.estimate(ev, it, draw([0], [0]), coin=True), ev.full(it))


def test_page_tails_same_iterate_keeps_direction(quad):
    rng = np.random.default_rng(7)
    ev = ChannelEvaluator(quad, "z")
    est = PAGE(0.5)
    it = rand_iterate(quad, rng)
    v0 = est.estimate(ev, it, draw([0], [0]))
    v1 = est.estimate(ev, it, draw([1, 2], [3]), coin=False)
    assert np.allclose(v1, v0, rtol=0, atol=1e-15)


def test_page_three_steps_hand_unrolled():
    w = np.array([1.0, 3.0])
    p = ScalarToy(s=[0.0, 0.0], w=w)
    ev = ChannelEvaluator(p, "y")
    est = PAGE(0.5)
    pts = [(0.0, 1.0), (0.5, 2.0), (1.0, -1.0)]
    draws = [[0], [1], [0]]
    coins = [True, False, False]
    got = None
    for (x, y), J, c in zip(pts, draws, coins):
        got = est.estimate(ev, it_(x, y), draw([0], J), coin=c)
    v0 = w.mean() * (1.0 - 0.0)
    v1 = v0 + w[1] * (2.0 - 0.5) - w[1] * (1.0 - 0.0)
    v2 = v1 + w[0] * (-1.0 - 1.0) - w[0] * (2.0 - 0.5)
    assert got == pytest.approx([v2], abs=1e-15)
    assert v2 == pytest.approx(0.0)


def test_page_rejects_bad_probability():
    for p in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            PAGE(p)


# -- SAGA -------------------------------------------------------------------------------
def test_saga_tables_at_iterate_give_full(quad):
    it = rand_iterate(quad, np.random.default_rng(8))
    ev = ChannelEvaluator(quad, "x")
    est = SAGA()
    est.initialize(ev, it)
    v = est.estimate(ev, it, draw([0, 1], [2]))
    assert np.allclose(v, ev.full(it), rtol=1e-13, atol=1e-13)


def test_saga_single_sample_is_full():
    p = ScalarToy(s=[0.3], t=[0.4], w=[2.0])
    ev = ChannelEvaluator(p, "x")
    est = SAGA()
    est.initialize(ev, it_(0.0, 0.0, 1.0))
    it = it_(1.0, 2.0, 3.0)
    assert est.estimate(ev, it, draw([0], [0])) == pytest.approx(ev.full(it), abs=1e-15)


def test_saga_matches_point_memory_simulation():
    p = ScalarToy(s=[0.5, -1.0, 2.0], t=[1.0, 0.0, -2.0], w=[1.0, 2.0, 0.5])
    ev = ChannelEvaluator(p, "z")
    ef = lambda i, it: -(it[1] + p.s[i])  # noqa: E731  (z-channel f-part is -grad2 F_i)
    eg = lambda j, it: p.w[j] * it[2]  # noqa: E731
    it0 = (0.1, 0.2, 0.3)
    sim = PointMemorySAGA(ef, eg, 3, 3, it0)
    est = SAGA()
    est.initialize(ev, it_(*it0))
    rng = np.random.default_rng(9)
    for _ in range(20):
        pt = tuple(rng.standard_normal(3))
        I = rng.choice(3, 2, replace=False)
        J = rng.choice(3, 1, replace=False)
        vf, vg = sim.estimate(pt, I, J)
        got = est.estimate(ev, it_(*pt), draw(I, J))
        assert got == pytest.approx([vf + vg], abs=1e-13)


def test_saga_uninitialised_raises(quad):
    with pytest.raises(EstimatorStateError):
        SAGA().estimate(ChannelEvaluator(quad, "y"), quad.initial_iterate(), SampleDraw.full(quad))


# -- STORM --------------------------------------------------------------------------------
def test_storm_a_one_is_sgd(quad):
    rng = np.random.default_rng(10)
    ev = ChannelEvaluator(quad, "x")
    est = STORM(1.0)
    est.estimate(ev, rand_iterate(quad, rng), draw([0], [0]))
    it = rand_iterate(quad, rng)
    d = draw([1, 2], [0, 3])
    assert np.array_equal(est.estimate(ev, it, d), ev.eval_at(it, d.I, d.J))


def test_storm_fixed_point(quad):
    it = rand_iterate(quad, np.random.default_rng(11))
    ev = ChannelEvaluator(quad, "z")
    est = STORM(0.3)
    d = draw([1], [2])
    v0 = est.estimate(ev, it, d)
    assert np.allclose(est.estimate(ev, it, d), v0, rtol=0, atol=1e-14)


def test_storm_two_steps_hand_unrolled():
    w = np.array([1.0, 3.0])
    p = ScalarToy(s=[0.0, 0.0], w=w)
    ev = ChannelEvaluator(p, "y")
    est = STORM(0.5)
    v0 = est.estimate(ev, it_(0.0, 1.0), draw([0], [1]))
    v1 = est.estimate(ev, it_(0.5, 2.0), draw([0], [0]))
    assert v0 == pytest.approx([3.0])
    assert v1 == pytest.approx([1.5 + 0.5 * (3.0 - 1.0)])


def test_make_estimator_filters_params():
    assert isinstance(make_estimator("PAGE", p=0.2, rho_bar=0.1), PAGE)
    with pytest.raises(ValueError):
        make_estimator("sarah")
