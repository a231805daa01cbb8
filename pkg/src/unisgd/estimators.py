"""Single-node gradient estimators and their unified-recursion certificates.

Each estimator g_k of grad f(x_k) is described by two inequalities

    E||g_k||^2        <= 2 A1 (f - f*) + B1 ||grad f||^2 + D1 sigma_k^2 + C1
    E[sigma_{k+1}^2]  <= (1 - rho) sigma_k^2 + 2 A2 (f - f*) + B2 ||grad f||^2 + C2

with method-specific meaning for sigma_k^2.  ``UnifiedParams`` holds the eight
constants; ``certificate`` returns them for GD, minibatch SGD, L-SVRG and SAGA,
and ``verify_assumption1`` checks both inequalities by Monte Carlo.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import nnls

from .problems import ComponentView, FiniteSumObjective

METHODS = ("gd", "sgd", "lsvrg", "saga")
SIGMA_DEFS = ("zero", "anchor_dist", "saga_table_dist", "composed_dc", "composed_diana")


class CertificateUnavailable(ValueError):
    """The requested stepsize violates a certificate precondition."""


class StateInvariantError(AssertionError):
    """Incrementally maintained estimator state drifted from its definition."""


@dataclass(frozen=True)
class UnifiedParams:
    """Constants of the two coupled recursions.

    ``D2`` is only used by local (per-worker) certificates inside the federated
    frameworks, where the sigma recursion also carries a ``D2 * E||g||^2`` term
    in the aggregated estimator.  It is zero for every single-node certificate.
    """

    A1: float
    B1: float
    C1: float
    D1: float
    rho: float
    A2: float = 0.0
    B2: float = 0.0
    C2: float = 0.0
    D2: float = 0.0
    sigma_def: str = "zero"
    empirical: bool = False

    def __post_init__(self):
        for name in ("A1", "B1", "C1", "D1", "A2", "B2", "C2", "D2"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if not np.isfinite(self.rho):
            raise ValueError("rho must be finite")
        if self.sigma_def not in SIGMA_DEFS:
            raise ValueError(f"unknown sigma definition {self.sigma_def!r}")

    @property
    def usable(self) -> bool:
        return 0.0 < self.rho <= 1.0

    def rhs1(self, f_gap: float, grad_sq: float, sigma_sq: float) -> float:
        return 2 * self.A1 * f_gap + self.B1 * grad_sq + self.D1 * sigma_sq + self.C1

    def rhs2(self, f_gap: float, grad_sq: float, sigma_sq: float, g_sq: float = 0.0) -> float:
        return ((1 - self.rho) * sigma_sq + 2 * self.A2 * f_gap + self.B2 * grad_sq
                + self.D2 * g_sq + self.C2)

    def replace(self, **kw) -> "UnifiedParams":
        return dataclasses.replace(self, **kw)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# ---------------------------------------------------------------------------
# method specs and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    name: str
    b: int = 1
    p: float = 1.0

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}")
        if self.b < 1:
            raise ValueError("minibatch size must be >= 1")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("anchor probability must lie in (0, 1]")

    @property
    def spec(self) -> str:
        if self.name == "gd":
            return "gd"
        if self.name == "lsvrg":
            return f"lsvrg:{self.b},{self.p!r}"
        return f"{self.name}:{self.b}"

    @property
    def variance_reduced(self) -> bool:
        return self.name in ("lsvrg", "saga")


def _number(text: str) -> float:
    return float(Fraction(text.strip()))


def parse_method(spec: str, n: int | None = None) -> MethodSpec:
    """``"gd"``, ``"sgd:<b>"``, ``"lsvrg:<b>,<p>"`` or ``"saga:<b>"``.

    ``p`` accepts fractions such as ``1/64``; the token ``1/n`` is resolved
    against ``n`` when given.
    """
    name, _, arg = spec.strip().partition(":")
    if name == "gd":
        if arg:
            raise ValueError("gd takes no arguments")
        return MethodSpec("gd")
    if name in ("sgd", "saga"):
        return MethodSpec(name, b=int(arg) if arg else 1)
    if name == "lsvrg":
        parts = [t for t in arg.split(",") if t] if arg else []
        b = int(parts[0]) if parts else 1
        if len(parts) > 1:
            ptxt = parts[1].strip()
            if "n" in ptxt:
                if n is None:
                    raise ValueError("probability refers to n but n is unknown")
                ptxt = ptxt.replace("n", str(n))
            p = _number(ptxt)
        else:
            if n is None:
                raise ValueError("lsvrg needs a probability")
            p = 1.0 / n
        return MethodSpec("lsvrg", b=b, p=p)
    raise ValueError(f"bad method spec {spec!r}")


def _as_method(method, b=None, p=None) -> MethodSpec:
    if isinstance(method, str):
        if ":" in method or method == "gd":
            m = parse_method(method)
        else:
            m = MethodSpec(method)
    else:
        m = method
    kw = {}
    if b is not None:
        kw["b"] = int(b)
    if p is not None:
        kw["p"] = float(p)
    return dataclasses.replace(m, **kw) if kw else m


def _view(obj) -> ComponentView:
    return obj.flat_view() if isinstance(obj, FiniteSumObjective) else obj


@dataclass
class EstimatorState:
    method: MethodSpec
    anchor: np.ndarray | None = None
    anchor_full_grad: np.ndarray | None = None
    saga_points: np.ndarray | None = None
    saga_grads: np.ndarray | None = field(default=None, repr=False)
    saga_grad_avg: np.ndarray | None = None
    sigma_sq: float = 0.0
    steps: int = 0

    def copy(self) -> "EstimatorState":
        def c(a):
            return None if a is None else a.copy()
        return EstimatorState(self.method, c(self.anchor), c(self.anchor_full_grad),
                              c(self.saga_points), c(self.saga_grads), c(self.saga_grad_avg),
                              self.sigma_sq, self.steps)


def init_state(method, obj, x0) -> EstimatorState:
    """State with every anchor at ``x0`` (so sigma_0 = 0)."""
    method = _as_method(method)
    view = _view(obj)
    x0 = np.asarray(x0, dtype=float)
    st = EstimatorState(method)
    if method.name == "lsvrg":
        st.anchor = x0.copy()
        st.anchor_full_grad = view.grad(x0)
    elif method.name == "saga":
        st.saga_points = np.tile(x0, (view.n, 1))
        st.saga_grads = view.all_grads(x0)
        st.saga_grad_avg = st.saga_grads.mean(0)
    return st


def state_from_anchors(method, obj, anchor=None, table=None) -> EstimatorState:
    """State with explicitly chosen anchors, used to probe off-trajectory points."""
    method = _as_method(method)
    view = _view(obj)
    st = EstimatorState(method)
    if method.name == "lsvrg":
        st.anchor = np.asarray(anchor, dtype=float).copy()
        st.anchor_full_grad = view.grad(st.anchor)
    elif method.name == "saga":
        st.saga_points = np.asarray(table, dtype=float).copy()
        st.saga_grads = view.grads_at(np.arange(view.n), st.saga_points)
        st.saga_grad_avg = st.saga_grads.mean(0)
    return st


def sigma_of(state: EstimatorState, x) -> float:
    """The method's sigma^2 at ``x`` recomputed from scratch."""
    x = np.asarray(x, dtype=float)
    if state.method.name == "lsvrg":
        r = x - state.anchor
        return float(r @ r)
    if state.method.name == "saga":
        R = x - state.saga_points
        return float(np.einsum("ij,ij->", R, R) / R.shape[0])
    return 0.0


def sample_indices(rng, n: int, b: int, replace: bool, size: int | None = None) -> np.ndarray:
    """Minibatch index draw.  Without replacement requires ``b <= n``."""
    if size is None:
        if replace:
            return rng.integers(0, n, b)
        return rng.choice(n, b, replace=False)
    if replace:
        return rng.integers(0, n, (size, b))
    if b > n:
        raise ValueError("cannot draw more than n indices without replacement")
    return np.argpartition(rng.random((size, n)), b - 1, axis=1)[:, :b]


# ---------------------------------------------------------------------------
# one-step estimators
# ---------------------------------------------------------------------------

def gd_step(obj, x) -> np.ndarray:
    return _view(obj).grad(np.asarray(x, dtype=float))


def sgd_step(obj, x, b: int, rng) -> np.ndarray:
    """Minibatch of ``b`` components drawn uniformly with replacement."""
    view = _view(obj)
    if b < 1:
        raise ValueError("minibatch size must be >= 1")
    idx = sample_indices(rng, view.n, b, replace=True)
    return view.grads(idx, np.asarray(x, dtype=float)).mean(0)


def lsvrg_step(state: EstimatorState, obj, x, eta: float | None, rng, flip: bool | None = None):
    """Loopless SVRG: correction around the anchor, then an anchor coin flip.

    On a successful flip the anchor moves to the current (pre-update) point.
    ``flip`` lets callers share one coin across several workers.
    """
    view = _view(obj)
    x = np.asarray(x, dtype=float)
    m = state.method
    state.sigma_sq = sigma_of(state, x)
    idx = sample_indices(rng, view.n, m.b, replace=True)
    g = (view.grads(idx, x) - view.grads(idx, state.anchor)).mean(0) + state.anchor_full_grad
    if flip is None:
        flip = bool(rng.random() < m.p)
    if flip:
        state.anchor = x.copy()
        state.anchor_full_grad = view.grad(x)
    state.steps += 1
    return g, state


def saga_step(state: EstimatorState, obj, x, eta: float | None, rng, check_every: int = 100):
    """SAGA with a minibatch drawn without replacement; table rows in the batch move to x."""
    view = _view(obj)
    x = np.asarray(x, dtype=float)
    m = state.method
    state.sigma_sq = sigma_of(state, x)
    idx = sample_indices(rng, view.n, m.b, replace=False)
    gx = view.grads(idx, x)
    diff = gx - state.saga_grads[idx]
    g = diff.mean(0) + state.saga_grad_avg
    state.saga_grad_avg = state.saga_grad_avg + diff.sum(0) / view.n
    state.saga_grads[idx] = gx
    state.saga_points[idx] = x
    state.steps += 1
    if check_every and state.steps % check_every == 0:
        fresh = view.grads_at(np.arange(view.n), state.saga_points).mean(0)
        err = np.linalg.norm(fresh - state.saga_grad_avg)
        if err > 1e-9 * (1.0 + np.linalg.norm(fresh)):
            raise StateInvariantError(f"SAGA running average drifted by {err:.3e}")
        state.saga_grad_avg = fresh
    return g, state


def step(state: EstimatorState, obj, x, eta, rng, flip=None) -> np.ndarray:
    """Dispatch one estimator call and advance ``state`` in place."""
    name = state.method.name
    if name == "gd":
        state.sigma_sq = 0.0
        state.steps += 1
        return gd_step(obj, x)
    if name == "sgd":
        state.sigma_sq = 0.0
        state.steps += 1
        return sgd_step(obj, x, state.method.b, rng)
    if name == "lsvrg":
        return lsvrg_step(state, obj, x, eta, rng, flip=flip)[0]
    return saga_step(state, obj, x, eta, rng)[0]


# ---------------------------------------------------------------------------
# batched draws for Monte Carlo
# ---------------------------------------------------------------------------

def _mean_rows(M: np.ndarray, idx: np.ndarray) -> np.ndarray:
    out = np.zeros((idx.shape[0], M.shape[1]))
    for c in range(idx.shape[1]):
        out += M[idx[:, c]]
    return out / idx.shape[1]


def batch_draws(state: EstimatorState, obj, x, S: int, rng, flip: np.ndarray | None = None):
    """``S`` independent realizations of one estimator call at a frozen state.

    Returns ``(G, next_sigma)`` where ``G`` has shape ``(S, d)`` and
    ``next_sigma(delta)`` maps the per-draw displacement ``x_next - x`` to the
    method's sigma^2 at the next iterate, accounting for the state update that
    accompanied each draw.
    """
    view = _view(obj)
    x = np.asarray(x, dtype=float)
    m = state.method
    d = x.size
    if m.name == "gd":
        G = np.broadcast_to(view.grad(x), (S, d)).copy()
        return G, lambda delta: np.zeros(delta.shape[0])
    if m.name == "sgd":
        idx = sample_indices(rng, view.n, m.b, replace=True, size=S)
        return _mean_rows(view.all_grads(x), idx), lambda delta: np.zeros(delta.shape[0])
    if m.name == "lsvrg":
        D = view.all_grads(x) - view.all_grads(state.anchor)
        idx = sample_indices(rng, view.n, m.b, replace=True, size=S)
        G = _mean_rows(D, idx) + state.anchor_full_grad
        if flip is None:
            flip = rng.random(S) < m.p
        u = x - state.anchor
        e = float(u @ u)

        def next_sigma(delta):
            dd = np.einsum("ij,ij->i", delta, delta)
            stay = e + 2.0 * (delta @ u) + dd
            return np.where(flip, dd, stay)
        return G, next_sigma
    # saga
    n = view.n
    D = view.all_grads(x) - state.saga_grads
    idx = sample_indices(rng, n, m.b, replace=False, size=S)
    G = _mean_rows(D, idx) + state.saga_grad_avg
    U = x - state.saga_points
    e = np.einsum("ij,ij->i", U, U)
    e_tot = e.sum()
    U_tot = U.sum(0)
    e_sel = e[idx].sum(1)
    U_sel = _mean_rows(U, idx) * m.b

    def next_sigma(delta):
        dd = np.einsum("ij,ij->i", delta, delta)
        keep = (e_tot - e_sel) + 2.0 * np.einsum("ij,ij->i", delta, U_tot - U_sel) + (n - m.b) * dd
        return (keep + m.b * dd) / n
    return G, next_sigma


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def sgd_second_moment(obj, x, b: int) -> float:
    """Exact ``E||g||^2`` of with-replacement minibatch SGD."""
    view = _view(obj)
    CG = view.all_grads(np.asarray(x, dtype=float))
    full = CG.mean(0)
    fs = float(full @ full)
    per = float(np.einsum("ij,ij->", CG, CG) / CG.shape[0])
    return fs + (per - fs) / b


def fit_es_certificate(obj, b: int, rng, points: int = 200, inflate: float = 0.10,
                       center=None, radii=(1e-2, 1e2)):
    """Empirical ``(A, B, C)`` with ``E||g||^2 <= 2A(f-f*) + B||grad f||^2 + C``.

    The exact second moment is evaluated at ``points`` locations around
    ``center`` (a known minimizer by default) with log-uniform radii.  A
    non-negative least-squares fit on relative residuals is inflated by
    ``inflate`` and ``B`` is raised to at least one.  If some fit point still
    violates the bound, all three constants are scaled up by the worst ratio.
    """
    view = _view(obj)
    d = view.d
    if center is None:
        center = getattr(view, "x_star", None)
    if center is None:
        center = np.zeros(d)
    center = np.asarray(center, dtype=float)
    scale = 1.0 + np.linalg.norm(center)
    rows, ys = [], []
    for _ in range(points):
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        r = scale * np.exp(rng.uniform(np.log(radii[0]), np.log(radii[1])))
        x = center + r * u
        gap = max(view.value(x) - view.f_star, 0.0)
        g = view.grad(x)
        rows.append((2.0 * gap, float(g @ g), 1.0))
        ys.append(sgd_second_moment(view, x, b))
    M = np.array(rows)
    y = np.array(ys)
    w = 1.0 / np.maximum(y, 1e-300)
    coef, _ = nnls(M * w[:, None], y * w)
    A, B, C = coef * (1.0 + inflate)
    B = max(B, 1.0)
    if C == 0.0:
        C = 1e-12 * float(y.min())
    pred = M @ np.array([A, B, C])
    t = max(1.0, float(np.max(y / pred)))
    return float(A * t), float(B * t), float(C * t)


def certificate(method, obj, eta: float, b: int | None = None, p: float | None = None,
                rng=None) -> UnifiedParams:
    """Recursion constants for a single-node estimator at stepsize ``eta``."""
    m = _as_method(method, b, p)
    view = _view(obj)
    if m.name == "gd":
        return UnifiedParams(A1=0.0, B1=1.0, C1=0.0, D1=0.0, rho=1.0, sigma_def="zero")
    if m.name == "sgd":
        if rng is None:
            rng = np.random.default_rng(0)
        A, B, C = fit_es_certificate(view, m.b, rng)
        return UnifiedParams(A1=A, B1=B, C1=C, D1=0.0, rho=1.0, sigma_def="zero", empirical=True)
    Lb2 = view.L_bar ** 2
    load = eta ** 2 * Lb2 / m.b
    if m.name == "lsvrg":
        p_ = m.p
        if load > p_ / 4:
            raise CertificateUnavailable(
                f"eta^2 * L_bar^2 / b = {load:.6g} exceeds p/4 = {p_ / 4:.6g}")
        return UnifiedParams(A1=0.0, B1=1.0, C1=0.0, D1=Lb2 / m.b,
                             rho=p_ / 2 + p_ ** 2 / 2 - load,
                             B2=2 * eta ** 2 / p_ - eta ** 2, sigma_def="anchor_dist")
    q = m.b / view.n
    if m.b > view.n:
        raise CertificateUnavailable("SAGA minibatch larger than the number of components")
    if load > q / 4:
        raise CertificateUnavailable(
            f"eta^2 * L_bar^2 / b = {load:.6g} exceeds b/(4n) = {q / 4:.6g}")
    return UnifiedParams(A1=0.0, B1=1.0, C1=0.0, D1=Lb2 / m.b,
                         rho=q / 2 + q ** 2 / 2 - load,
                         B2=2 * eta ** 2 / q - eta ** 2, sigma_def="saga_table_dist")


# ---------------------------------------------------------------------------
# Monte Carlo verification
# ---------------------------------------------------------------------------

@dataclass
class PointCheck:
    f_gap: float
    grad_sq: float
    sigma_sq: float
    lhs1: float
    rhs1: float
    lhs2: float
    rhs2: float
    ok1: bool
    ok2: bool

    @property
    def ok(self) -> bool:
        return self.ok1 and self.ok2

    @property
    def margin(self) -> float:
        """Smallest relative slack ``(rhs - lhs) / rhs`` of the two inequalities."""
        def rel(l, r):
            return (r - l) / r if r > 0 else (0.0 if l <= 0 else -np.inf)
        return min(rel(self.lhs1, self.rhs1), rel(self.lhs2, self.rhs2))


@dataclass
class AssumptionReport:
    checks: list
    samples: int
    empirical: bool = False

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def worst_margin(self) -> float:
        return min((c.margin for c in self.checks), default=np.inf)

    def __bool__(self):
        return self.passed


def _within(lhs, rhs, samples) -> bool:
    slack = 1.0 + 5.0 / np.sqrt(samples)
    return lhs <= rhs * slack + 1e-12 * (1.0 + abs(rhs))


def mc_check(sampler, params: UnifiedParams, f_gap: float, grad_sq: float, sigma_sq: float,
             eta: float, samples: int, rng, chunk: int = 20000) -> PointCheck:
    """Estimate ``E||g||^2`` and ``E[sigma_next^2]`` from ``sampler(S, rng)`` draws."""
    s_g = 0.0
    s_sig = 0.0
    done = 0
    while done < samples:
        t = min(chunk, samples - done)
        G, next_sigma = sampler(t, rng)
        s_g += float(np.einsum("ij,ij->", G, G))
        s_sig += float(next_sigma(-eta * G).sum())
        done += t
    lhs1 = s_g / samples
    lhs2 = s_sig / samples
    rhs1 = params.rhs1(f_gap, grad_sq, sigma_sq)
    rhs2 = params.rhs2(f_gap, grad_sq, sigma_sq, g_sq=lhs1)
    return PointCheck(f_gap, grad_sq, sigma_sq, lhs1, rhs1, lhs2, rhs2,
                      _within(lhs1, rhs1, samples), _within(lhs2, rhs2, samples))


def random_state(method, obj, x, rng, spread: float = 1.0) -> EstimatorState:
    """A state whose anchors sit at random offsets of size ``spread`` from ``x``."""
    m = _as_method(method)
    view = _view(obj)
    x = np.asarray(x, dtype=float)
    if m.name == "lsvrg":
        return state_from_anchors(m, view, anchor=x + spread * rng.standard_normal(x.size))
    if m.name == "saga":
        table = x + spread * rng.standard_normal((view.n, x.size))
        return state_from_anchors(m, view, table=table)
    return EstimatorState(m)


def verify_assumption1(method, obj, points, samples: int, rng, eta: float,
                       params: UnifiedParams | None = None, chunk: int = 20000) -> AssumptionReport:
    """Check both recursions at each ``(x, state)`` point by Monte Carlo.

    A point passes when each estimate is at most ``rhs * (1 + 5/sqrt(samples))``.
    """
    m = _as_method(method)
    view = _view(obj)
    if params is None:
        params = certificate(m, view, eta, rng=rng)
    checks = []
    for x, state in points:
        x = np.asarray(x, dtype=float)
        if state is None:
            state = init_state(m, view, x)
        g = view.grad(x)
        f_gap = max(view.value(x) - view.f_star, 0.0)

        def sampler(S, r, state=state, x=x):
            return batch_draws(state, view, x, S, r)
        checks.append(mc_check(sampler, params, f_gap, float(g @ g), sigma_of(state, x),
                               eta, samples, rng, chunk))
    return AssumptionReport(checks, samples, params.empirical)
