"""Finite-sum and federated objectives with exact constants.

An objective has the form

    f(x) = (1/m) sum_i f_i(x),    f_i(x) = (1/n) sum_j f_ij(x)

where ``m`` is the number of workers and ``n`` the number of components held
by each worker.  Every objective exposes its smoothness constants, optimum
values and (when available) a Polyak-Lojasiewicz constant, all computed in
closed form so that theoretical bounds can be evaluated exactly.

Estimators never touch the objective directly.  They see a ``ComponentView``:
either one worker's local sum, or the whole problem flattened into a single
sum of ``m * n`` components (the single-node setting).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm


class InvalidInput(ValueError):
    """Raised for dimension or index mismatches."""


def _as_point(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 and d == 1:
        x = x.reshape(1)
    if x.shape != (d,):
        raise InvalidInput(f"expected a point of shape ({d},), got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# component views
# ---------------------------------------------------------------------------

class ComponentView:
    """A finite sum ``(1/n) sum_j f_j`` as seen by one gradient estimator.

    Attributes
    ----------
    n, d : sizes
    L : smoothness constant of the average
    L_bar : mean-square smoothness constant, i.e. the smallest value with
        ``(1/n) sum_j ||grad f_j(x) - grad f_j(y)||^2 <= L_bar^2 ||x - y||^2``
    """

    n: int
    d: int
    L: float
    L_bar: float
    f_star: float = 0.0
    x_star: np.ndarray | None = None   # a minimizer, when known

    def grads(self, idx, x) -> np.ndarray:
        raise NotImplementedError

    def all_grads(self, x) -> np.ndarray:
        return self.grads(np.arange(self.n), x)

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def grads_at(self, idx, X) -> np.ndarray:
        """Gradient of component ``idx[r]`` at point ``X[r]`` for every row r."""
        raise NotImplementedError

    def grad_many(self, X) -> np.ndarray:
        """Full gradient at every row of ``X``."""
        raise NotImplementedError

    def values(self, idx, x) -> np.ndarray:
        raise NotImplementedError

    def value(self, x) -> float:
        raise NotImplementedError


class LeastSquaresView(ComponentView):
    """Components ``f_j(x) = 0.5 (a_j^T x - y_j)^2``."""

    def __init__(self, A: np.ndarray, y: np.ndarray, L: float, L_bar: float):
        self.A = A
        self.y = y
        self.n, self.d = A.shape
        self.L = float(L)
        self.L_bar = float(L_bar)
        self.H = A.T @ A / self.n
        self.q = A.T @ y / self.n

    def grads(self, idx, x):
        a = self.A[idx]
        return a * (a @ x - self.y[idx])[:, None]

    def grad(self, x):
        return self.H @ x - self.q

    def grads_at(self, idx, X):
        a = self.A[idx]
        return a * (np.einsum("ij,ij->i", a, X) - self.y[idx])[:, None]

    def grad_many(self, X):
        return X @ self.H - self.q

    def values(self, idx, x):
        r = self.A[idx] @ x - self.y[idx]
        return 0.5 * r * r

    def value(self, x):
        r = self.A @ x - self.y
        return 0.5 * float(r @ r) / self.n


class SinPLView(ComponentView):
    """Separable ``sum_l (x_l^2 + 3 sin^2 x_l)``, optionally split by coordinate.

    With ``split`` the j-th component is ``d * (x_j^2 + 3 sin^2 x_j)`` so that
    the component average equals the full function.
    """

    def __init__(self, d: int, split: bool):
        self.d = d
        self.split = split
        self.n = d if split else 1
        self.L = 8.0
        self.L_bar = 8.0 * np.sqrt(d) if split else 8.0

    @staticmethod
    def _coord_grad(x):
        return 2.0 * x + 3.0 * np.sin(2.0 * x)

    def grads(self, idx, x):
        idx = np.asarray(idx)
        if not self.split:
            return np.broadcast_to(self._coord_grad(x), (idx.size, self.d)).copy()
        out = np.zeros((idx.size, self.d))
        out[np.arange(idx.size), idx] = self.d * self._coord_grad(x[idx])
        return out

    def grad(self, x):
        return self._coord_grad(x)

    def grads_at(self, idx, X):
        idx = np.asarray(idx)
        if not self.split:
            return self._coord_grad(X)
        out = np.zeros((idx.size, self.d))
        rows = np.arange(idx.size)
        out[rows, idx] = self.d * self._coord_grad(X[rows, idx])
        return out

    def grad_many(self, X):
        return self._coord_grad(X)

    def values(self, idx, x):
        idx = np.asarray(idx)
        per = x * x + 3.0 * np.sin(x) ** 2
        if not self.split:
            return np.full(idx.size, per.sum())
        return self.d * per[idx]

    def value(self, x):
        return float(np.sum(x * x + 3.0 * np.sin(x) ** 2))


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FiniteSumObjective:
    """Federated finite-sum objective with exact constants.

    ``L_workers[i]`` is the smoothness of ``f_i``; ``L`` follows the
    root-mean-square convention ``L^2 = mean(L_i^2)``.  ``L_bar`` is the
    largest per-worker mean-square smoothness constant and ``L_bar_flat`` the
    constant of the flattened ``m * n`` component sum.
    """

    name: str
    d: int
    m: int
    n: int
    L_workers: np.ndarray
    L_bar: float
    L_bar_flat: float
    f_star: float
    f_star_workers: np.ndarray
    mu: float | None
    x_star: np.ndarray | None
    _views: list = field(repr=False, default_factory=list)
    _flat: ComponentView | None = field(repr=False, default=None)

    @property
    def L(self) -> float:
        return float(np.sqrt(np.mean(self.L_workers ** 2)))

    @property
    def delta_f_star(self) -> float:
        """``f* - mean(f_i*)``, the heterogeneity gap of the optima."""
        return float(self.f_star - np.mean(self.f_star_workers))

    # views --------------------------------------------------------------
    def worker_view(self, i: int) -> ComponentView:
        self._check_worker(i)
        return self._views[i]

    def flat_view(self) -> ComponentView:
        return self._flat

    # oracles ------------------------------------------------------------
    def value(self, x) -> float:
        x = _as_point(x, self.d)
        return float(np.mean([v.value(x) for v in self._views]))

    def worker_value(self, i: int, x) -> float:
        return self.worker_view(i).value(_as_point(x, self.d))

    def component_value(self, i: int, j: int, x) -> float:
        self._check_component(i, j)
        return float(self._views[i].values(np.array([j]), _as_point(x, self.d))[0])

    def grad(self, x) -> np.ndarray:
        x = _as_point(x, self.d)
        return self._flat.grad(x)

    def worker_grad(self, i: int, x) -> np.ndarray:
        return self.worker_view(i).grad(_as_point(x, self.d))

    def component_grad(self, i: int, j: int, x) -> np.ndarray:
        self._check_component(i, j)
        return self._views[i].grads(np.array([j]), _as_point(x, self.d))[0]

    def worker_grads(self, x) -> np.ndarray:
        """Stack of local gradients, shape ``(m, d)``."""
        x = _as_point(x, self.d)
        return np.stack([v.grad(x) for v in self._views])

    def all_component_grads(self, x) -> np.ndarray:
        """Every component gradient, shape ``(m, n, d)``."""
        x = _as_point(x, self.d)
        return np.stack([v.all_grads(x) for v in self._views])

    def f_gap(self, x) -> float:
        return self.value(x) - self.f_star

    def _check_worker(self, i):
        if not 0 <= i < self.m:
            raise InvalidInput(f"worker index {i} outside [0, {self.m})")

    def _check_component(self, i, j):
        self._check_worker(i)
        if not 0 <= j < self.n:
            raise InvalidInput(f"component index {j} outside [0, {self.n})")


# aliases mirroring the operation names
def eval_f(obj: FiniteSumObjective, x) -> float:
    return obj.value(x)


def eval_grad(obj: FiniteSumObjective, x) -> np.ndarray:
    return obj.grad(x)


def eval_worker_grad(obj: FiniteSumObjective, i: int, x) -> np.ndarray:
    return obj.worker_grad(i, x)


def eval_component_grad(obj: FiniteSumObjective, i: int, j: int, x) -> np.ndarray:
    return obj.component_grad(i, j, x)


# ---------------------------------------------------------------------------
# least squares
# ---------------------------------------------------------------------------

def _mean_square_smoothness(A: np.ndarray) -> float:
    # (1/n) sum ||a a^T v||^2 = v^T [(1/n) sum ||a||^2 a a^T] v
    w = np.einsum("ij,ij->i", A, A)
    M = (A * w[:, None]).T @ A / A.shape[0]
    return float(np.sqrt(max(np.linalg.eigvalsh(M)[-1], 0.0)))


def _lstsq_value(A, y):
    sol = np.linalg.lstsq(A, y, rcond=None)[0]
    r = A @ sol - y
    return 0.5 * float(r @ r) / A.shape[0], sol


def least_squares(A, y, name: str = "lsq") -> FiniteSumObjective:
    """Build a least-squares objective from data ``A`` (m,n,d) and ``y`` (m,n)."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 3 or y.shape != A.shape[:2]:
        raise InvalidInput("expected A of shape (m, n, d) and y of shape (m, n)")
    m, n, d = A.shape
    L_workers = np.array([np.linalg.eigvalsh(A[i].T @ A[i] / n)[-1] for i in range(m)])
    L_bars = [_mean_square_smoothness(A[i]) for i in range(m)]
    A_flat = A.reshape(m * n, d)
    y_flat = y.reshape(m * n)
    f_star, x_star = _lstsq_value(A_flat, y_flat)
    local_opt = [_lstsq_value(A[i], y[i]) for i in range(m)]
    f_star_workers = np.array([v for v, _ in local_opt])
    H = A_flat.T @ A_flat / (m * n)
    evals = np.linalg.eigvalsh(H)
    mu = float(evals[0]) if evals[0] > 1e-12 * max(evals[-1], 1e-300) else None
    L_flat = float(evals[-1])

    obj = FiniteSumObjective(
        name=name, d=d, m=m, n=n,
        L_workers=L_workers,
        L_bar=float(max(L_bars)),
        L_bar_flat=_mean_square_smoothness(A_flat),
        f_star=f_star,
        f_star_workers=f_star_workers,
        mu=mu,
        x_star=x_star,
    )
    obj._views = [LeastSquaresView(A[i], y[i], L_workers[i], L_bars[i]) for i in range(m)]
    for i, v in enumerate(obj._views):
        v.f_star = float(f_star_workers[i])
        v.x_star = local_opt[i][1]
    obj._flat = LeastSquaresView(A_flat, y_flat, max(L_flat, 0.0), obj.L_bar_flat)
    obj._flat.f_star = f_star
    obj._flat.x_star = x_star
    # keep the stored L conservative for single-node use
    obj._flat.L = obj.L
    return obj


def _skew(rng, d):
    K = rng.standard_normal((d, d))
    return (K - K.T) / np.sqrt(2.0 * d)


def make_heterogeneous_lsq(seed: int, d: int, m: int, n: int,
                           condition_number: float = 10.0,
                           heterogeneity: float = 0.0,
                           noise: float = 0.1) -> FiniteSumObjective:
    """Synthetic non-IID least squares.

    A shared design ``Z`` with a prescribed spectrum in ``[1/condition_number, 1]``
    is rotated per worker by ``expm(heterogeneity * K_i)`` with ``K_i`` skew,
    which keeps every local Hessian spectrum (hence every ``L_i``) identical.
    Labels come from per-worker planted solutions ``x* + heterogeneity * u_i``
    plus a noise vector shared by all workers.  ``heterogeneity = 0`` gives
    identical workers.
    """
    if min(d, m, n) < 1 or condition_number < 1 or heterogeneity < 0:
        raise InvalidInput("need d, m, n >= 1, condition_number >= 1, heterogeneity >= 0")
    rng = np.random.default_rng(seed)
    lam = np.geomspace(1.0 / condition_number, 1.0, d)[::-1]
    if n >= d:
        Q, _ = np.linalg.qr(rng.standard_normal((n, d)))
        V, _ = np.linalg.qr(rng.standard_normal((d, d)))
        Z = np.sqrt(n) * (Q * np.sqrt(lam)) @ V.T
    else:
        Z = rng.standard_normal((n, d)) * np.sqrt(lam.mean())
    x_base = rng.standard_normal(d)
    shared_noise = noise * rng.standard_normal(n)
    A = np.empty((m, n, d))
    y = np.empty((m, n))
    for i in range(m):
        R = expm(heterogeneity * _skew(rng, d))
        u = rng.standard_normal(d)
        A[i] = Z @ R
        y[i] = A[i] @ (x_base + heterogeneity * u) + shared_noise
    if heterogeneity == 0.0:
        A[:] = A[0]
        y[:] = y[0]
    return least_squares(A, y, name="lsq")


# ---------------------------------------------------------------------------
# sin-PL
# ---------------------------------------------------------------------------

def make_sin_pl(d: int = 1, split: bool = False) -> FiniteSumObjective:
    """``f(x) = sum_l (x_l^2 + 3 sin^2 x_l)``: nonconvex, PL with mu = 1/32, L = 8.

    ``d = 1`` is the scalar example.  ``split`` exposes the d coordinates as d
    components so that stochastic estimators have something to sample.
    """
    if d < 1:
        raise InvalidInput("d must be positive")
    view = SinPLView(d, split)
    obj = FiniteSumObjective(
        name="sinpl", d=d, m=1, n=view.n,
        L_workers=np.array([8.0]),
        L_bar=view.L_bar,
        L_bar_flat=view.L_bar,
        f_star=0.0,
        f_star_workers=np.array([0.0]),
        mu=1.0 / 32.0,
        x_star=np.zeros(d),
    )
    view.x_star = np.zeros(d)
    obj._views = [view]
    obj._flat = view
    return obj


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def estimate_smoothness(obj, samples: int, rng, radius: float = 5.0) -> float:
    """Largest observed ``||grad f(x) - grad f(y)|| / ||x - y||`` over random pairs.

    Half the pairs are far apart, half are close (relative offset 1e-3) so the
    estimate also probes local curvature.
    """
    if samples < 2:
        raise InvalidInput("samples must be >= 2")
    d = obj.d
    best = 0.0
    for s in range(samples):
        x = rng.uniform(-radius, radius, d)
        scale = radius if s % 2 == 0 else 1e-3
        y = x + scale * rng.standard_normal(d)
        dx = np.linalg.norm(x - y)
        if dx == 0.0:
            continue
        best = max(best, float(np.linalg.norm(obj.grad(x) - obj.grad(y)) / dx))
    return best


def pl_holds(obj: FiniteSumObjective, x) -> bool:
    """Check ``||grad f(x)||^2 >= 2 mu (f(x) - f*)`` at one point."""
    if obj.mu is None:
        raise InvalidInput("objective has no PL constant")
    g = obj.grad(x)
    return float(g @ g) >= 2.0 * obj.mu * obj.f_gap(x) - 1e-12 * (1.0 + abs(obj.f_gap(x)))


def parse_problem(spec: str) -> FiniteSumObjective:
    """Parse ``"lsq:d=20,m=1,n=64,cond=10,het=0,seed=1,noise=0.1"`` or ``"sinpl:d=1,split=0"``."""
    kind, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise InvalidInput(f"bad problem option {item!r}")
        opts[key.strip()] = val.strip()
    if kind == "lsq":
        allowed = {"d", "m", "n", "cond", "het", "seed", "noise"}
        if set(opts) - allowed:
            raise InvalidInput(f"unknown lsq options {sorted(set(opts) - allowed)}")
        return make_heterogeneous_lsq(
            seed=int(opts.get("seed", 0)),
            d=int(opts.get("d", 10)), m=int(opts.get("m", 1)), n=int(opts.get("n", 32)),
            condition_number=float(opts.get("cond", 10.0)),
            heterogeneity=float(opts.get("het", 0.0)),
            noise=float(opts.get("noise", 0.1)),
        )
    if kind == "sinpl":
        allowed = {"d", "split"}
        if set(opts) - allowed:
            raise InvalidInput(f"unknown sinpl options {sorted(set(opts) - allowed)}")
        return make_sin_pl(d=int(opts.get("d", 1)), split=opts.get("split", "0") in ("1", "true", "yes"))
    raise InvalidInput(f"unknown problem kind {kind!r}")
