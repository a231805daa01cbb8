from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unisgd import estimators as E
from unisgd import problems as P
from unisgd import theory as T


@pytest.fixture(scope="module")
def lsq():
    return P.make_heterogeneous_lsq(seed=11, d=5, m=1, n=16, condition_number=6, noise=0.3)


def z_scores(G, target):
    se = G.std(0, ddof=1) / np.sqrt(len(G))
    diff = np.abs(G.mean(0) - target)
    return np.where(se > 0, diff / np.where(se > 0, se, 1), np.where(diff > 1e-10, np.inf, 0))


def test_gd_step(lsq):
    assert np.allclose(E.gd_step(P.make_sin_pl(), [0.0]), 0.0)
    assert np.allclose(E.gd_step(lsq, lsq.x_star), 0.0, atol=1e-10)
    x = np.ones(lsq.d)
    assert np.array_equal(E.gd_step(lsq, x), P.eval_grad(lsq, x))


def test_sgd_single_component_is_exact():
    obj = P.make_heterogeneous_lsq(seed=0, d=3, m=1, n=1)
    x = np.arange(3.0)
    g = E.sgd_step(obj, x, 4, np.random.default_rng(0))
    assert np.allclose(g, obj.grad(x), rtol=1e-14)


def test_sgd_invalid_batch(lsq):
    with pytest.raises(ValueError):
        E.sgd_step(lsq, np.zeros(lsq.d), 0, np.random.default_rng(0))


@pytest.mark.parametrize("method", ["sgd:2", "lsvrg:2,0.3", "saga:3"])
def test_unbiased_at_random_states(lsq, method):
    m = E.parse_method(method)
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = lsq.x_star + rng.standard_normal(lsq.d)
        st_ = E.random_state(m, lsq, x, rng)
        G, _ = E.batch_draws(st_, lsq, x, 100_000, rng)
        assert np.all(z_scores(G, lsq.grad(x)) <= 4)


def test_lsvrg_at_anchor_has_zero_variance(lsq):
    x = np.full(lsq.d, 0.3)
    st_ = E.init_state("lsvrg:1,0.5", lsq, x)
    G, _ = E.batch_draws(st_, lsq, x, 1000, np.random.default_rng(0))
    assert np.allclose(G, lsq.grad(x), rtol=1e-12, atol=1e-14)


def test_saga_with_full_table_at_x_is_exact(lsq):
    x = np.full(lsq.d, -0.7)
    st_ = E.init_state("saga:2", lsq, x)
    G, _ = E.batch_draws(st_, lsq, x, 500, np.random.default_rng(0))
    assert np.allclose(G, lsq.grad(x), rtol=1e-12, atol=1e-14)


def test_lsvrg_step_flips_anchor(lsq):
    x0 = np.zeros(lsq.d)
    st_ = E.init_state("lsvrg:1,1", lsq, x0)
    x = np.ones(lsq.d)
    g, st_ = E.lsvrg_step(st_, lsq, x, 0.1, np.random.default_rng(0))
    assert np.array_equal(st_.anchor, x)
    assert np.allclose(st_.anchor_full_grad, lsq.grad(x))
    assert E.sigma_of(st_, x) == 0.0


def test_lsvrg_sigma_tracking(lsq):
    st_ = E.init_state("lsvrg:2,0.2", lsq, np.zeros(lsq.d))
    rng = np.random.default_rng(1)
    x = np.zeros(lsq.d)
    for _ in range(50):
        g, _ = E.lsvrg_step(st_, lsq, x, 0.05, rng)
        x = x - 0.05 * g
        r = x - st_.anchor
        assert E.sigma_of(st_, x) == pytest.approx(r @ r, rel=1e-9, abs=1e-15)


def test_saga_table_and_average_after_updates(lsq):
    view = lsq.flat_view()
    st_ = E.init_state("saga:3", lsq, np.zeros(lsq.d))
    rng = np.random.default_rng(2)
    x = np.zeros(lsq.d)
    for _ in range(250):
        g, _ = E.saga_step(st_, lsq, x, 0.05, rng)
        x = x - 0.05 * g
    full = view.grads_at(np.arange(view.n), st_.saga_points).mean(0)
    assert np.allclose(st_.saga_grad_avg, full, rtol=1e-9, atol=1e-12)
    direct = np.mean(np.sum((x - st_.saga_points) ** 2, axis=1))
    assert E.sigma_of(st_, x) == pytest.approx(direct, rel=1e-12)


def test_saga_detects_corrupted_average(lsq):
    st_ = E.init_state("saga:1", lsq, np.zeros(lsq.d))
    st_.saga_grad_avg = st_.saga_grad_avg + 1.0
    st_.steps = 99
    with pytest.raises(E.StateInvariantError):
        E.saga_step(st_, lsq, np.zeros(lsq.d), 0.1, np.random.default_rng(0))


def test_gd_certificate():
    c = E.certificate("gd", P.make_sin_pl(), 0.1)
    assert (c.A1, c.C1, c.D1, c.A2, c.B2, c.C2) == (0, 0, 0, 0, 0, 0)
    assert c.B1 == 1 and c.rho == 1 and c.sigma_def == "zero"


def test_lsvrg_certificate_values(lsq):
    n = lsq.n
    eta = 0.5 * np.sqrt(1 / (4 * n)) / lsq.L_bar_flat
    c = E.certificate(E.MethodSpec("lsvrg", 1, 1 / n), lsq, eta)
    assert c.D1 == pytest.approx(lsq.L_bar_flat ** 2)
    assert c.B2 == pytest.approx(2 * eta ** 2 * n - eta ** 2)
    assert c.rho == pytest.approx(1 / (2 * n) + 1 / (2 * n * n) - eta ** 2 * lsq.L_bar_flat ** 2)


def test_lsvrg_certificate_rejects_large_step(lsq):
    eta = 2 * np.sqrt(1 / (4 * lsq.n)) / lsq.L_bar_flat
    with pytest.raises(E.CertificateUnavailable, match="p/4"):
        E.certificate(E.MethodSpec("lsvrg", 1, 1 / lsq.n), lsq, eta)


def test_saga_certificate_values(lsq):
    b, n = 4, lsq.n
    eta = 0.1 / lsq.L_bar_flat
    c = E.certificate(E.MethodSpec("saga", b), lsq, eta)
    q = b / n
    assert c.rho == pytest.approx(q / 2 + q * q / 2 - eta ** 2 * lsq.L_bar_flat ** 2 / b)
    assert c.B2 == pytest.approx(2 * eta ** 2 / q - eta ** 2)
    with pytest.raises(E.CertificateUnavailable, match="b/\\(4n\\)"):
        E.certificate(E.MethodSpec("saga", 1), lsq, 1.0 / lsq.L_bar_flat)


def test_sgd_certificate_is_empirical_and_sound(lsq):
    rng = np.random.default_rng(3)
    c = E.certificate("sgd:2", lsq, 0.1, rng=rng)
    assert c.empirical and c.B1 >= 1 and c.D1 == 0 and c.rho == 1
    for _ in range(200):
        x = lsq.x_star + rng.standard_normal(lsq.d) * 10 ** rng.uniform(-2, 2)
        g = lsq.grad(x)
        rhs = c.rhs1(lsq.f_gap(x), g @ g, 0.0)
        assert E.sgd_second_moment(lsq, x, 2) <= rhs * (1 + 1e-9)


def test_sgd_second_moment_exact_by_enumeration():
    obj = P.make_heterogeneous_lsq(seed=4, d=2, m=1, n=3)
    view = obj.flat_view()
    x = np.array([0.4, -1.1])
    b = 2
    tot = 0.0
    for i in range(3):
        for j in range(3):
            g = (view.grads([i], x)[0] + view.grads([j], x)[0]) / 2
            tot += g @ g
    assert E.sgd_second_moment(obj, x, b) == pytest.approx(tot / 9, rel=1e-12)


def test_saga_exact_second_moment_enumeration():
    obj = P.make_heterogeneous_lsq(seed=8, d=2, m=1, n=4)
    view = obj.flat_view()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2)
    st_ = E.random_state("saga:1", obj, x, rng)
    gw = view.grads_at(np.arange(4), st_.saga_points)
    exact = np.mean([np.sum((view.grads([j], x)[0] - gw[j] + gw.mean(0)) ** 2) for j in range(4)])
    G, _ = E.batch_draws(st_, obj, x, 100_000, rng)
    mc = np.mean(np.sum(G * G, axis=1))
    assert mc == pytest.approx(exact, rel=0.02)
    eta = T.resolve_eta_rho("saga", view.L_bar, 1, 1 / 4)[0]
    cert = E.certificate("saga:1", obj, eta)
    g = obj.grad(x)
    assert exact <= cert.rhs1(obj.f_gap(x), g @ g, E.sigma_of(st_, x))


def test_saga_minibatch_sigma_enumeration():
    # without-replacement minibatches: each subset equally likely
    obj = P.make_heterogeneous_lsq(seed=9, d=2, m=1, n=4)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(2)
    st_ = E.random_state("saga:2", obj, x, rng)
    eta = 0.05
    view = obj.flat_view()
    gw = view.grads_at(np.arange(4), st_.saga_points)
    exact_g, exact_s = 0.0, 0.0
    subsets = list(combinations(range(4), 2))
    for S in subsets:
        S = list(S)
        g = (view.grads(S, x) - gw[S]).mean(0) + gw.mean(0)
        pts = st_.saga_points.copy()
        pts[S] = x
        xn = x - eta * g
        exact_g += g @ g
        exact_s += np.mean(np.sum((xn - pts) ** 2, axis=1))
    exact_g /= len(subsets)
    exact_s /= len(subsets)
    G, nxt = E.batch_draws(st_, obj, x, 200_000, rng)
    assert np.mean(np.sum(G * G, axis=1)) == pytest.approx(exact_g, rel=0.02)
    assert np.mean(nxt(-eta * G)) == pytest.approx(exact_s, rel=0.02)


@pytest.mark.parametrize("prob", ["lsq", "sinpl"])
@pytest.mark.parametrize("method", ["gd", "sgd:2", "lsvrg:1,1/4", "saga:2"])
def test_verify_assumption1_passes(prob, method):
    obj = (P.make_heterogeneous_lsq(seed=2, d=4, m=1, n=12, noise=0.2) if prob == "lsq"
           else P.make_sin_pl(d=4, split=True))
    view = obj.flat_view()
    m = E.parse_method(method, n=view.n)
    rng = np.random.default_rng(5)
    if m.variance_reduced:
        q = m.p if m.name == "lsvrg" else m.b / view.n
        eta = T.resolve_eta_rho(m.name, view.L_bar, m.b, q)[0]
    else:
        eta = 1 / obj.L
    pts = []
    for _ in range(8):
        x = obj.x_star + rng.standard_normal(obj.d)
        pts.append((x, E.random_state(m, obj, x, rng)))
    rep = E.verify_assumption1(m, obj, pts, 20_000, rng, eta)
    assert rep.passed, [c for c in rep.checks if not c.ok]
    assert rep.empirical == (m.name == "sgd")


def test_gd_check_is_equality(lsq):
    x = np.ones(lsq.d)
    rep = E.verify_assumption1("gd", lsq, [(x, None)], 1000, np.random.default_rng(0), 0.1)
    c = rep.checks[0]
    assert c.lhs1 == pytest.approx(c.rhs1, rel=1e-12) and rep.passed


def test_lsvrg_sigma_recursion_at_anchor(lsq):
    x = np.ones(lsq.d)
    n = lsq.n
    eta = T.resolve_eta_rho("lsvrg", lsq.L_bar_flat, 1, 1 / n)[0]
    rep = E.verify_assumption1(E.MethodSpec("lsvrg", 1, 1 / n), lsq, [(x, None)], 20_000,
                               np.random.default_rng(1), eta)
    c = rep.checks[0]
    assert c.sigma_sq == 0 and rep.passed


def test_verify_detects_wrong_certificate(lsq):
    x = lsq.x_star + 1.0
    st_ = E.random_state("lsvrg:1,0.5", lsq, x, np.random.default_rng(0), spread=2.0)
    bogus = E.UnifiedParams(A1=0, B1=1, C1=0, D1=0, rho=1)
    rep = E.verify_assumption1("lsvrg:1,0.5", lsq, [(x, st_)], 20_000, np.random.default_rng(1),
                               0.01, params=bogus)
    assert not rep.passed


def test_parse_method():
    assert E.parse_method("gd") == E.MethodSpec("gd")
    assert E.parse_method("sgd:4").b == 4
    assert E.parse_method("lsvrg:2,1/8").p == 0.125
    assert E.parse_method("lsvrg:1,1/n", n=32).p == 1 / 32
    assert E.parse_method("saga:3").spec == "saga:3"
    for bad in ["adam", "gd:1", "lsvrg:1,2"]:
        with pytest.raises(ValueError):
            E.parse_method(bad)


def test_params_validation():
    with pytest.raises(ValueError):
        E.UnifiedParams(A1=-1, B1=1, C1=0, D1=0, rho=1)
    assert not E.UnifiedParams(A1=0, B1=1, C1=0, D1=0, rho=0).usable


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), b=st.integers(1, 4), p=st.floats(0.05, 1.0))
def test_vr_fixed_point_property(seed, b, p):
    obj = P.make_heterogeneous_lsq(seed=seed % 50, d=3, m=1, n=6)
    x = np.random.default_rng(seed).standard_normal(3)
    for method in (E.MethodSpec("lsvrg", b, p), E.MethodSpec("saga", min(b, 6))):
        st_ = E.init_state(method, obj, x)
        G, _ = E.batch_draws(st_, obj, x, 64, np.random.default_rng(seed))
        assert np.allclose(G, obj.grad(x), rtol=1e-10, atol=1e-12)
