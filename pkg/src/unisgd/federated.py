"""Compressed federated frameworks and certificate composition.

Two frameworks are simulated in one process:

* DC: every worker compresses its local estimate, the server averages.
* DIANA: every worker keeps a shift h_i and compresses ``g_i - h_i``; the
  server keeps ``h = mean(h_i)`` and returns ``h + mean(compressed)``.

Local estimator certificates (with an extra ``D2 * E||g||^2`` term in the
sigma recursion, ``g`` being the aggregated estimate) are composed into a
global ``UnifiedParams``.  Two composition paths exist: one where every worker
carries its own sigma_i (used for SAGA), and one where all workers share a
single sigma (GD, SGD, L-SVRG with a common anchor).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .compression import Compressor
from .estimators import MethodSpec, UnifiedParams
from .problems import FiniteSumObjective, InvalidInput


class CompositionInfeasible(ValueError):
    """Composed rho is not positive."""


# ---------------------------------------------------------------------------
# workers and rounds
# ---------------------------------------------------------------------------

@dataclass
class WorkerNode:
    index: int
    view: object
    state: est.EstimatorState
    compressor: Compressor
    shift: np.ndarray


@dataclass
class Cluster:
    """All workers plus the server-side shift (DIANA) and the method in use."""

    workers: list
    method: MethodSpec
    server_shift: np.ndarray
    rounds: int = 0

    @property
    def m(self) -> int:
        return len(self.workers)

    @property
    def compressor(self) -> Compressor:
        return self.workers[0].compressor

    @property
    def omega(self) -> float:
        return self.compressor.omega


@dataclass
class RoundTrace:
    g: np.ndarray
    floats: list
    payload_norms: list = field(default_factory=list)

    @property
    def floats_sent(self) -> int:
        return int(sum(self.floats))


def build_cluster(obj: FiniteSumObjective, method, compressors, x0) -> Cluster:
    """One worker per local objective, all anchors at ``x0`` and zero shifts.

    ``compressors`` is either one compressor shared by every worker or a list;
    a list with differing omega values is rejected.
    """
    method = est._as_method(method)
    if isinstance(compressors, Compressor):
        compressors = [compressors] * obj.m
    if len(compressors) != obj.m:
        raise InvalidInput("need one compressor per worker")
    omegas = {round(c.omega, 15) for c in compressors}
    if len(omegas) > 1:
        raise InvalidInput("all workers must share the same compression omega")
    if any(c.d != obj.d for c in compressors):
        raise InvalidInput("compressor dimension does not match the problem")
    x0 = np.asarray(x0, dtype=float)
    workers = [WorkerNode(i, obj.worker_view(i), est.init_state(method, obj.worker_view(i), x0),
                          compressors[i], np.zeros(obj.d))
               for i in range(obj.m)]
    return Cluster(workers, method, np.zeros(obj.d))


def _round_rngs(rng, m: int):
    """Per-worker sampling and compression generators plus the shared anchor coin.

    ``rng`` is either a ``numpy.random.Generator`` (children are spawned in a
    fixed order) or a callable ``rng(purpose, worker)``.
    """
    if callable(rng) and not isinstance(rng, np.random.Generator):
        return ([rng("sample", i) for i in range(m)],
                [rng("compress", i) for i in range(m)],
                rng("anchor", 0))
    kids = rng.spawn(2 * m + 1)
    return kids[:m], kids[m:2 * m], kids[2 * m]


def _local_estimates(cluster: Cluster, x, eta, rng):
    m = cluster.m
    srng, crng, arng = _round_rngs(rng, m)
    flip = None
    if cluster.method.name == "lsvrg":
        flip = bool(arng.random() < cluster.method.p)
    locals_ = [est.step(w.state, w.view, x, eta, srng[i], flip=flip)
               for i, w in enumerate(cluster.workers)]
    return locals_, crng


def dc_round(cluster: Cluster, x, rng, eta: float | None = None):
    """Server average of independently compressed local estimates."""
    x = np.asarray(x, dtype=float)
    locals_, crng = _local_estimates(cluster, x, eta, rng)
    total = np.zeros_like(x)
    floats, norms = [], []
    for i, (w, gi) in enumerate(zip(cluster.workers, locals_)):
        c = w.compressor.compress(gi, crng[i])
        total += c
        floats.append(w.compressor.floats_sent)
        norms.append(float(np.linalg.norm(c)))
    g = total / cluster.m
    cluster.rounds += 1
    return g, RoundTrace(g, floats, norms), cluster


def diana_round(cluster: Cluster, x, alpha: float, rng, eta: float | None = None):
    """Compress shifted local estimates and update every shift by ``alpha``."""
    omega = cluster.omega
    if not 0.0 < alpha <= 1.0 / (1.0 + omega) * (1 + 1e-12):
        raise InvalidInput(f"alpha must lie in (0, 1/(1+omega)] = (0, {1 / (1 + omega):.6g}]")
    x = np.asarray(x, dtype=float)
    locals_, crng = _local_estimates(cluster, x, eta, rng)
    total = np.zeros_like(x)
    floats, norms = [], []
    for i, (w, gi) in enumerate(zip(cluster.workers, locals_)):
        delta = w.compressor.compress(gi - w.shift, crng[i])
        w.shift = w.shift + alpha * delta
        total += delta
        floats.append(w.compressor.floats_sent)
        norms.append(float(np.linalg.norm(delta)))
    mean_delta = total / cluster.m
    g = cluster.server_shift + mean_delta
    cluster.server_shift = cluster.server_shift + alpha * mean_delta
    cluster.rounds += 1
    return g, RoundTrace(g, floats, norms), cluster


def shift_mean_gap(cluster: Cluster) -> float:
    """``||h - mean(h_i)||``; zero up to rounding."""
    mean = np.mean([w.shift for w in cluster.workers], axis=0)
    return float(np.linalg.norm(cluster.server_shift - mean))


# ---------------------------------------------------------------------------
# local certificates and composition
# ---------------------------------------------------------------------------

def default_gamma(method: MethodSpec, n: int) -> float:
    """Free constant of the local L-SVRG / SAGA recursion; recovers the single-node rho."""
    if method.name == "lsvrg":
        return method.p / 2
    if method.name == "saga":
        return method.b / (2 * n)
    return 0.0


def local_certificate(method, view, eta: float, gamma: float | None = None, rng=None,
                      L_bar: float | None = None) -> UnifiedParams:
    """Per-worker constants including ``D2``.

    The first recursion is in terms of the local function; the sigma recursion
    is in terms of the global function plus ``D2 * E||g||^2``.
    """
    m = est._as_method(method)
    if m.name == "gd":
        return UnifiedParams(A1=0.0, B1=1.0, C1=0.0, D1=0.0, rho=1.0)
    if m.name == "sgd":
        if rng is None:
            rng = np.random.default_rng(0)
        A, B, C = est.fit_es_certificate(view, m.b, rng)
        return UnifiedParams(A1=A, B1=B, C1=C, D1=0.0, rho=1.0, empirical=True)
    Lb = view.L_bar if L_bar is None else L_bar
    if gamma is None:
        gamma = default_gamma(m, view.n)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    q = m.p if m.name == "lsvrg" else m.b / view.n
    if m.name == "saga" and m.b > view.n:
        raise est.CertificateUnavailable("SAGA minibatch larger than the local component count")
    return UnifiedParams(A1=0.0, B1=1.0, C1=0.0, D1=Lb ** 2 / m.b,
                         rho=q + q * gamma - gamma,
                         B2=(1 - q) * eta ** 2 / gamma, D2=eta ** 2,
                         sigma_def="anchor_dist" if m.name == "lsvrg" else "saga_table_dist")


def _check_omegas(omegas) -> float:
    om = np.atleast_1d(np.asarray(omegas, dtype=float))
    if om.size == 0 or np.any(om != om[0]):
        raise InvalidInput("all workers must share one omega")
    return float(om[0])


def _first_block(local_params, omega, m, L_workers, delta_f_star, A):
    C = float(np.mean([lp.C1 for lp in local_params])) + 2 * A * delta_f_star
    C = max(C, 0.0)
    return dict(A1=(1 + omega) * A / m, B1=1.0, C1=(1 + omega) * C / m,
                D1=(1 + omega) / m), C


def compose_dc(local_params, omegas, m: int, L_workers, delta_f_star: float) -> UnifiedParams:
    """DC composition with a separate sigma_i per worker.

    Global sigma^2 is ``mean_i(D1_i * sigma_i^2)``.
    """
    omega = _check_omegas(omegas)
    L_workers = np.asarray(L_workers, dtype=float)
    if len(local_params) != m or L_workers.size != m:
        raise InvalidInput("need one local certificate and one L_i per worker")
    A = max(0.0, max(lp.A1 + lp.B1 * Li - Li / (1 + omega) for lp, Li in zip(local_params, L_workers)))
    first, C = _first_block(local_params, omega, m, L_workers, delta_f_star, A)
    DA = np.mean([lp.D1 * lp.A2 for lp in local_params])
    DB = np.mean([lp.D1 * lp.B2 for lp in local_params])
    DD = np.mean([lp.D1 * lp.D2 for lp in local_params])
    DC = np.mean([lp.D1 * lp.C2 for lp in local_params])
    tau = (1 + omega) * DD / m
    rho = min(lp.rho for lp in local_params) - tau
    if rho <= 0:
        raise CompositionInfeasible(f"composed rho = {rho:.6g} <= 0 (min local rho minus tau = {tau:.6g})")
    return UnifiedParams(**first, rho=rho, A2=DA + tau * A, B2=DB + DD, C2=DC + tau * C,
                         sigma_def="composed_dc",
                         empirical=any(lp.empirical for lp in local_params))


def compose_dc_shared(local_params, shared: UnifiedParams, omegas, m: int, L_workers,
                      delta_f_star: float) -> UnifiedParams:
    """DC composition when all workers share one sigma (``shared`` carries its constants).

    Only ``A1, B1, C1`` of ``local_params`` are used.  Global sigma^2 is
    ``shared.D1 * sigma_shared^2``.
    """
    omega = _check_omegas(omegas)
    L_workers = np.asarray(L_workers, dtype=float)
    A = max(0.0, max(lp.A1 + lp.B1 * Li - Li / (1 + omega) for lp, Li in zip(local_params, L_workers)))
    first, C = _first_block(local_params, omega, m, L_workers, delta_f_star, A)
    Dp = shared.D1
    tau = (1 + omega) * Dp * shared.D2 / m
    rho = shared.rho - tau
    if rho <= 0:
        raise CompositionInfeasible(f"composed rho = {rho:.6g} <= 0 (local rho minus tau = {tau:.6g})")
    return UnifiedParams(**first, rho=rho, A2=Dp * shared.A2 + tau * A,
                         B2=Dp * shared.B2 + Dp * shared.D2, C2=Dp * shared.C2 + tau * C,
                         sigma_def="composed_dc",
                         empirical=shared.empirical or any(lp.empirical for lp in local_params))


def _diana_common(local_params, omega, m, L_workers, delta_f_star):
    L_workers = np.asarray(L_workers, dtype=float)
    A = max(0.0, max(lp.A1 + (lp.B1 - 1) * Li for lp, Li in zip(local_params, L_workers)))
    first, C = _first_block(local_params, omega, m, L_workers, delta_f_star, A)
    return A, C, first


def _diana_rho(local_rho, alpha, beta, tau):
    b1 = local_rho - tau
    b2 = 2 * alpha - (1 - alpha) / beta - alpha ** 2 - tau
    rho = min(b1, b2)
    if rho <= 0:
        which = "local-variance branch" if b1 <= b2 else "shift branch"
        raise CompositionInfeasible(f"composed rho = {rho:.6g} <= 0; binding: {which}")
    return rho


def compose_diana(local_params, omega: float, m: int, L: float, eta: float, alpha: float,
                  beta: float, L_workers=None, delta_f_star: float = 0.0) -> UnifiedParams:
    """DIANA composition with a separate sigma_i per worker.

    Global sigma^2 is ``mean_i(D1_i sigma_i^2) + omega/((1+omega) m) * sum_i ||grad f_i - h_i||^2``.
    """
    if beta <= 0:
        raise InvalidInput("beta must be positive")
    omega = _check_omegas(omega)
    if L_workers is None:
        L_workers = np.full(m, L)
    A, C, first = _diana_common(local_params, omega, m, L_workers, delta_f_star)
    DA = np.mean([lp.D1 * lp.A2 for lp in local_params])
    DB = np.mean([lp.D1 * lp.B2 for lp in local_params])
    DD = np.mean([lp.D1 * lp.D2 for lp in local_params])
    DC = np.mean([lp.D1 * lp.C2 for lp in local_params])
    B = omega * (1 + beta) * L ** 2 * eta ** 2 / (1 + omega) + DD
    tau = alpha ** 2 * omega + (1 + omega) * B / m
    rho = _diana_rho(min(lp.rho for lp in local_params), alpha, beta, tau)
    return UnifiedParams(**first, rho=rho, A2=DA + tau * A, B2=DB + B, C2=DC + tau * C,
                         sigma_def="composed_diana",
                         empirical=any(lp.empirical for lp in local_params))


def compose_diana_shared(local_params, shared: UnifiedParams, omega: float, m: int, L: float,
                         eta: float, alpha: float, beta: float, L_workers=None,
                         delta_f_star: float = 0.0) -> UnifiedParams:
    """DIANA composition when all workers share one sigma."""
    if beta <= 0:
        raise InvalidInput("beta must be positive")
    omega = _check_omegas(omega)
    if L_workers is None:
        L_workers = np.full(m, L)
    A, C, first = _diana_common(local_params, omega, m, L_workers, delta_f_star)
    Dp = shared.D1
    B = omega * (1 + beta) * L ** 2 * eta ** 2 / (1 + omega) + Dp * shared.D2
    tau = alpha ** 2 * omega + (1 + omega) * B / m
    rho = _diana_rho(shared.rho, alpha, beta, tau)
    return UnifiedParams(**first, rho=rho, A2=Dp * shared.A2 + tau * A,
                         B2=Dp * shared.B2 + B, C2=Dp * shared.C2 + tau * C,
                         sigma_def="composed_diana",
                         empirical=shared.empirical or any(lp.empirical for lp in local_params))


def shift_branch(alpha: float, beta: float) -> float:
    """``2 alpha - (1 - alpha)/beta - alpha^2`` (before subtracting tau)."""
    return 2 * alpha - (1 - alpha) / beta - alpha ** 2


def default_diana_knobs(omega: float, local_rho: float | None = None):
    """Default ``(alpha, beta)``: ``alpha = 1/(1+omega)`` and ``beta = 2/alpha``.

    When the local estimator has its own contraction ``local_rho < 1`` (L-SVRG,
    SAGA) the shift-noise term ``alpha^2 omega`` must stay below it, so alpha is
    capped at ``sqrt(local_rho / (2 omega))``; this keeps half of the local
    contraction available.
    """
    if omega < 0:
        raise InvalidInput("omega must be non-negative")
    alpha = 1.0 / (1.0 + omega)
    if local_rho is not None and omega > 0:
        alpha = min(alpha, float(np.sqrt(local_rho / (2.0 * omega))))
    beta = 2.0 / alpha
    assert shift_branch(alpha, beta) > 0
    return alpha, beta


def local_rho_at_zero(method: MethodSpec, n: int, gamma: float | None = None) -> float | None:
    """Local contraction of L-SVRG / SAGA in the limit ``eta -> 0``; None for GD and SGD."""
    if method.name not in ("lsvrg", "saga"):
        return None
    q = method.p if method.name == "lsvrg" else method.b / n
    if gamma is None:
        gamma = default_gamma(method, n)
    return q + q * gamma - gamma


# ---------------------------------------------------------------------------
# whole-framework certificates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Framework:
    name: str                 # "none" | "dc" | "diana"
    alpha: float | None = None  # None means the default 1/(1+omega)

    @property
    def spec(self) -> str:
        if self.name == "diana":
            return "diana:auto" if self.alpha is None else f"diana:{self.alpha!r}"
        return self.name


def parse_framework(spec: str) -> Framework:
    """``"none"``, ``"dc"`` or ``"diana:<alpha|auto>"``."""
    name, _, arg = spec.strip().partition(":")
    if name in ("none", "dc") and not arg:
        return Framework(name)
    if name == "diana":
        if not arg or arg == "auto":
            return Framework("diana")
        return Framework("diana", est._number(arg))
    raise ValueError(f"bad framework spec {spec!r}")


def uses_shared_sigma(method: MethodSpec) -> bool:
    return method.name != "saga"


def composed_certificate(obj: FiniteSumObjective, method, compressor: Compressor, framework,
                         eta: float, alpha: float | None = None, beta: float | None = None,
                         gamma: float | None = None, rng=None,
                         local_params=None) -> UnifiedParams:
    """Global certificate for a framework/method/compressor combination.

    ``local_params`` lets callers reuse per-worker certificates that do not
    depend on ``eta`` (GD, fitted SGD) across repeated calls.
    """
    method = est._as_method(method)
    fw = parse_framework(framework) if isinstance(framework, str) else framework
    omega = compressor.omega
    m = obj.m
    if rng is None:
        rng = np.random.default_rng(0)
    if local_params is not None:
        locals_ = list(local_params)
    else:
        locals_ = [local_certificate(method, obj.worker_view(i), eta, gamma, rng=rng,
                                     L_bar=obj.L_bar if uses_shared_sigma(method) else None)
                   for i in range(m)]
    if fw.name == "dc":
        if uses_shared_sigma(method):
            return compose_dc_shared(locals_, locals_[0], [omega] * m, m, obj.L_workers, obj.delta_f_star)
        return compose_dc(locals_, [omega] * m, m, obj.L_workers, obj.delta_f_star)
    if fw.name == "diana":
        a_def, b_def = default_diana_knobs(omega, local_rho_at_zero(method, obj.n, gamma))
        if alpha is None:
            alpha = fw.alpha if fw.alpha is not None else a_def
        if beta is None:
            beta = b_def
        if uses_shared_sigma(method):
            return compose_diana_shared(locals_, locals_[0], omega, m, obj.L, eta, alpha, beta,
                                        obj.L_workers, obj.delta_f_star)
        return compose_diana(locals_, [omega] * m, m, obj.L, eta, alpha, beta,
                             obj.L_workers, obj.delta_f_star)
    raise InvalidInput("framework 'none' has no composed certificate")


def _sigma_weights(cluster: Cluster, obj: FiniteSumObjective):
    """Per-worker weights of the local sigmas inside the composed sigma."""
    m = cluster.method
    if m.name in ("gd", "sgd"):
        return np.zeros(cluster.m)
    if uses_shared_sigma(m):
        # one shared anchor: weight it once
        w = np.zeros(cluster.m)
        w[0] = obj.L_bar ** 2 / m.b
        return w
    return np.array([wk.view.L_bar ** 2 / m.b for wk in cluster.workers]) / cluster.m


def composed_sigma(cluster: Cluster, obj: FiniteSumObjective, x, framework) -> float:
    """The composed sigma^2 at ``x`` for the current cluster state."""
    fw = parse_framework(framework) if isinstance(framework, str) else framework
    x = np.asarray(x, dtype=float)
    wts = _sigma_weights(cluster, obj)
    s = sum(wt * est.sigma_of(w.state, x) for wt, w in zip(wts, cluster.workers) if wt)
    if fw.name == "diana":
        om = cluster.omega
        gaps = [w.view.grad(x) - w.shift for w in cluster.workers]
        s += om / ((1 + om) * cluster.m) * sum(float(g @ g) for g in gaps)
    return float(s)


def cluster_batch_draws(cluster: Cluster, obj: FiniteSumObjective, x, framework, alpha,
                        S: int, rng):
    """``S`` independent realizations of one framework round at a frozen state."""
    fw = parse_framework(framework) if isinstance(framework, str) else framework
    x = np.asarray(x, dtype=float)
    m = cluster.m
    flip = None
    if cluster.method.name == "lsvrg":
        flip = rng.random(S) < cluster.method.p
    wts = _sigma_weights(cluster, obj)
    locs, nexts = [], []
    for w in cluster.workers:
        G, ns = est.batch_draws(w.state, w.view, x, S, rng, flip=flip)
        locs.append(G)
        nexts.append(ns)
    if fw.name == "dc":
        G = sum(w.compressor.compress_many(Gi, rng) for w, Gi in zip(cluster.workers, locs)) / m

        def next_sigma(delta):
            return sum(wt * ns(delta) for wt, ns in zip(wts, nexts) if wt) + np.zeros(delta.shape[0])
        return G, next_sigma
    deltas = [w.compressor.compress_many(Gi - w.shift, rng) for w, Gi in zip(cluster.workers, locs)]
    G = cluster.server_shift + sum(deltas) / m
    om = cluster.omega

    def next_sigma(delta):
        out = sum(wt * ns(delta) for wt, ns in zip(wts, nexts) if wt) + np.zeros(delta.shape[0])
        Xn = x + delta
        for w, Dl in zip(cluster.workers, deltas):
            r = w.view.grad_many(Xn) - (w.shift + alpha * Dl)
            out = out + om / ((1 + om) * m) * np.einsum("ij,ij->i", r, r)
        return out
    return G, next_sigma


def verify_composed(obj: FiniteSumObjective, cluster: Cluster, framework, params: UnifiedParams,
                    eta: float, alpha: float | None, samples: int, rng,
                    points=None, chunk: int = 20000) -> est.AssumptionReport:
    """Monte Carlo check of the composed recursions for the aggregated estimator.

    ``points`` is a list of ``(x, cluster)`` pairs; by default the current
    cluster state at its own anchor is not meaningful, so callers pass points.
    """
    checks = []
    for x, cl in points:
        x = np.asarray(x, dtype=float)
        g = obj.grad(x)
        f_gap = max(obj.f_gap(x), 0.0)

        def sampler(S, r, cl=cl, x=x):
            return cluster_batch_draws(cl, obj, x, framework, alpha, S, r)
        checks.append(est.mc_check(sampler, params, f_gap, float(g @ g),
                                   composed_sigma(cl, obj, x, framework), eta, samples, rng, chunk))
    return est.AssumptionReport(checks, samples, params.empirical)


def random_cluster(obj: FiniteSumObjective, method, compressor: Compressor, x, rng,
                   spread: float = 1.0, shift_spread: float = 1.0) -> Cluster:
    """A cluster whose anchors and shifts sit at random offsets around ``x``."""
    method = est._as_method(method)
    x = np.asarray(x, dtype=float)
    cl = build_cluster(obj, method, compressor, x)
    shared_anchor = x + spread * rng.standard_normal(obj.d)
    for w in cl.workers:
        if method.name == "lsvrg":
            w.state = est.state_from_anchors(method, w.view, anchor=shared_anchor)
        elif method.name == "saga":
            w.state = est.state_from_anchors(
                method, w.view, table=x + spread * rng.standard_normal((w.view.n, obj.d)))
        w.shift = w.view.grad(x) + shift_spread * rng.standard_normal(obj.d)
    cl.server_shift = np.mean([w.shift for w in cl.workers], axis=0)
    return cl
