import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unisgd import estimators as E
from unisgd import federated as F
from unisgd import problems as P
from unisgd.compression import Compressor


@pytest.fixture(scope="module")
def het():
    return P.make_heterogeneous_lsq(seed=21, d=6, m=4, n=8, heterogeneity=0.6, noise=0.2)


def test_dc_identity_gd_is_gd(het):
    x = np.ones(het.d)
    cl = F.build_cluster(het, "gd", Compressor("identity", het.d), x)
    g, tr, _ = F.dc_round(cl, x, np.random.default_rng(0))
    assert np.allclose(g, het.grad(x), rtol=1e-13)
    assert tr.floats_sent == het.m * het.d


def test_dc_single_worker_full_randk():
    obj = P.make_heterogeneous_lsq(seed=1, d=4, m=1, n=5)
    x = np.arange(4.0)
    cl = F.build_cluster(obj, "gd", Compressor("randk", 4, k=4), x)
    g, _, _ = F.dc_round(cl, x, np.random.default_rng(0))
    assert np.allclose(g, obj.grad(x), rtol=1e-14)


def z_ok(G, target, z=4.0):
    se = G.std(0, ddof=1) / np.sqrt(len(G))
    return np.all(np.abs(G.mean(0) - target) <= z * se + 1e-12)


@pytest.mark.parametrize("fw", ["dc", "diana"])
@pytest.mark.parametrize("method", ["gd", "sgd:2", "lsvrg:1,1/4", "saga:2"])
def test_global_unbiasedness(het, fw, method):
    rng = np.random.default_rng(3)
    x = het.x_star + rng.standard_normal(het.d)
    cl = F.random_cluster(het, method, Compressor("randk", het.d, k=2), x, rng)
    G, _ = F.cluster_batch_draws(cl, het, x, fw, 0.1, 100_000, rng)
    assert z_ok(G, het.grad(x))


def test_dc_round_unbiased_by_rounds(het):
    # sequential rounds at a frozen state; gd locals keep the state trivial
    x = np.zeros(het.d)
    cl = F.build_cluster(het, "gd", Compressor("randk", het.d, k=1), x)
    gs = np.array([F.dc_round(cl, x, np.random.default_rng(s))[0] for s in range(20_000)])
    assert z_ok(gs, het.grad(x))


def test_diana_fixed_point(het):
    x = np.full(het.d, 0.5)
    cl = F.build_cluster(het, "gd", Compressor("randk", het.d, k=2), x)
    for w in cl.workers:
        w.shift = w.view.grad(x)
    cl.server_shift = np.mean([w.shift for w in cl.workers], axis=0)
    for s in range(20):
        g, tr, _ = F.diana_round(cl, x, 1 / 3, np.random.default_rng(s))
        assert np.allclose(g, het.grad(x), rtol=1e-12, atol=1e-14)
        assert max(tr.payload_norms) == 0


def test_diana_identity_alpha_one_tracks(het):
    x = np.full(het.d, -0.3)
    cl = F.build_cluster(het, "gd", Compressor("identity", het.d), x)
    F.diana_round(cl, x, 1.0, np.random.default_rng(0))
    for w in cl.workers:
        assert np.allclose(w.shift, w.view.grad(x), rtol=1e-13)


def test_diana_alpha_range(het):
    cl = F.build_cluster(het, "gd", Compressor("randk", het.d, k=2), np.zeros(het.d))
    for alpha in (0.0, 0.5, -0.1):
        with pytest.raises(P.InvalidInput):
            F.diana_round(cl, np.zeros(het.d), alpha, np.random.default_rng(0))


def test_shift_mean_invariant(het):
    rng = np.random.default_rng(4)
    x = np.zeros(het.d)
    cl = F.build_cluster(het, "lsvrg:1,0.5", Compressor("randk", het.d, k=2), x)
    for k in range(200):
        g, _, _ = F.diana_round(cl, x, 1 / 3, rng, eta=0.05)
        x = x - 0.05 * g
        assert F.shift_mean_gap(cl) <= 1e-12 * (1 + np.linalg.norm(cl.server_shift))


def test_mixed_omega_rejected(het):
    comps = [Compressor("randk", het.d, k=1)] + [Compressor("randk", het.d, k=2)] * (het.m - 1)
    with pytest.raises(P.InvalidInput):
        F.build_cluster(het, "gd", comps, np.zeros(het.d))


def test_randk_floats_accounting(het):
    cl = F.build_cluster(het, "gd", Compressor("randk", het.d, k=2), np.zeros(het.d))
    _, tr, _ = F.diana_round(cl, np.ones(het.d), 1 / 3, np.random.default_rng(0))
    assert tr.floats == [2] * het.m


def gd_locals(m):
    return [E.UnifiedParams(A1=0, B1=1, C1=0, D1=0, rho=1) for _ in range(m)]


def test_compose_dc_identity_gd_identical():
    c = F.compose_dc(gd_locals(3), [0.0] * 3, 3, [2.0] * 3, 0.0)
    assert (c.A1, c.B1, c.C1, c.rho) == (0, 1, 0, 1)
    assert c.D1 == pytest.approx(1 / 3)


def test_compose_dc_gd_constants():
    om, L = 3.0, np.array([1.0, 2.0, 4.0])
    c = F.compose_dc(gd_locals(3), [om] * 3, 3, L, 0.25)
    A = max(L - L / (1 + om))
    assert c.A1 == pytest.approx((1 + om) * A / 3)
    assert c.C1 == pytest.approx((1 + om) * 2 * A * 0.25 / 3)


def vr_local(eta, q=0.25, Lb=1.5, b=1):
    gamma = q / 2
    return E.UnifiedParams(A1=0, B1=1, C1=0, D1=Lb ** 2 / b, rho=q + q * gamma - gamma,
                           B2=(1 - q) * eta ** 2 / gamma, D2=eta ** 2)


def test_dc_paths_agree_for_identical_workers():
    lp = vr_local(0.05)
    m = 4
    a = F.compose_dc([lp] * m, [3.0] * m, m, [1.2] * m, 0.0)
    b = F.compose_dc_shared([lp] * m, lp, [3.0] * m, m, [1.2] * m, 0.0)
    for k in ("A1", "B1", "C1", "D1", "rho", "A2", "B2", "C2"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-12, abs=1e-15)


def test_diana_paths_agree_for_identical_workers():
    lp = vr_local(0.05)
    m = 4
    a = F.compose_diana([lp] * m, [3.0] * m, m, 1.2, 0.05, 0.1, 20.0)
    b = F.compose_diana_shared([lp] * m, lp, 3.0, m, 1.2, 0.05, 0.1, 20.0)
    for k in ("A1", "B1", "C1", "D1", "rho", "A2", "B2", "C2"):
        assert getattr(a, k) == pytest.approx(getattr(b, k), rel=1e-12, abs=1e-15)


def test_diana_gd_has_no_floor():
    c = F.compose_diana(gd_locals(4), 3.0, 4, 1.0, 0.1, 0.25, 8.0, L_workers=[1, 2, 3, 1], delta_f_star=0.5)
    assert c.A1 == 0 and c.C1 == 0


def test_diana_identity_reduces_to_centralized():
    lp = vr_local(0.05)
    m = 4
    c = F.compose_diana_shared([lp] * m, lp, 0.0, m, 1.0, 0.05, 1.0, 1e12)
    tau = lp.D1 * lp.D2 / m
    assert c.rho == pytest.approx(min(lp.rho - tau, 1 - tau), rel=1e-9)


def test_composition_infeasible_names_branch():
    lp = vr_local(0.05)
    with pytest.raises(F.CompositionInfeasible, match="shift branch|local-variance branch"):
        F.compose_diana_shared([lp] * 2, lp, 3.0, 2, 1.0, 0.05, 0.25, 8.0)


def test_default_knobs():
    assert F.default_diana_knobs(0.0) == (1.0, 2.0)
    assert F.default_diana_knobs(3.0) == (0.25, 8.0)
    for om in np.linspace(0, 100, 1001):
        a, b = F.default_diana_knobs(om)
        assert F.shift_branch(a, b) > a * a * 0.5


def test_shift_branch_alpha_beta_inverse():
    for om in np.linspace(0, 8, 81):
        a = 1 / (1 + om)
        assert F.shift_branch(a, 1 / a) > 0


def test_parse_framework():
    assert F.parse_framework("dc").name == "dc"
    assert F.parse_framework("diana:auto").alpha is None
    assert F.parse_framework("diana:1/4").alpha == 0.25
    with pytest.raises(ValueError):
        F.parse_framework("fedavg")


@pytest.mark.parametrize("fw", ["dc", "diana"])
@pytest.mark.parametrize("method", ["gd", "lsvrg:1,1/4", "saga:2"])
def test_composed_certificates_verify(het, fw, method):
    comp = Compressor("randk", het.d, k=2)
    m = E.parse_method(method, n=het.n)
    eta = 0.02
    params = F.composed_certificate(het, m, comp, fw, eta)
    alpha = None
    if fw == "diana":
        alpha = F.default_diana_knobs(comp.omega, F.local_rho_at_zero(m, het.n))[0]
    rng = np.random.default_rng(8)
    pts = []
    for _ in range(5):
        x = het.x_star + rng.standard_normal(het.d)
        pts.append((x, F.random_cluster(het, m, comp, x, rng)))
    rep = F.verify_composed(het, None, fw, params, eta, alpha, 20_000, rng, points=pts)
    assert rep.passed, [c for c in rep.checks if not c.ok]


def test_dc_compression_floor(het):
    # at the optimum DC keeps a positive second moment
    x = het.x_star
    comp = Compressor("randk", het.d, k=1)
    cl = F.build_cluster(het, "gd", comp, x)
    G, _ = F.cluster_batch_draws(cl, het, x, "dc", None, 50_000, np.random.default_rng(0))
    floor = comp.omega / het.m ** 2 * np.sum(het.worker_grads(x) ** 2)
    assert np.mean(np.sum(G * G, axis=1)) >= 0.5 * floor


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(1, 6), alpha=st.floats(0.01, 1.0))
def test_shift_mean_property(seed, k, alpha):
    obj = P.make_heterogeneous_lsq(seed=seed % 30, d=6, m=3, n=4, heterogeneity=0.5)
    comp = Compressor("randk", 6, k=k)
    alpha = min(alpha, 1 / (1 + comp.omega))
    rng = np.random.default_rng(seed)
    cl = F.build_cluster(obj, "gd", comp, np.zeros(6))
    x = rng.standard_normal(6)
    for _ in range(10):
        F.diana_round(cl, x, alpha, rng)
    assert F.shift_mean_gap(cl) <= 1e-12 * (1 + np.linalg.norm(cl.server_shift))
