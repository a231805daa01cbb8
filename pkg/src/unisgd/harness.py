"""End-to-end runs, traces, empirical bound checks and grid sweeps.

A run is configured by a flat ``key=value`` mapping (``RunConfig``).  One run
iterates ``x_{k+1} = x_k - eta_k g_k`` where ``g_k`` comes from a single-node
estimator (framework ``none``) or from a compressed federated round (``dc`` or
``diana``).  Every random draw is taken from a stream keyed by
``(seed, purpose, worker, iteration)``, so a config fully determines its trace.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from . import federated as fed
from . import theory
from .compression import parse_compressor
from .problems import InvalidInput, parse_problem
from .rng import Streams

CSV_HEADER = ("k", "f_gap", "grad_norm", "sigma_sq", "eta_k", "floats_sent")
STEPSIZE_MODES = ("auto-thm1", "auto-thm2", "auto-thm5")


class DivergenceError(RuntimeError):
    """f(x_k) - f* exceeded 1e6 times its initial value."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    problem: str = "lsq:d=10,m=1,n=32,seed=0"
    method: str = "gd"
    framework: str = "none"
    compressor: str = "identity"
    stepsize: str = "auto-thm1"
    epsilon: float = 1e-2
    max_iters: int = 100000
    seed: int = 0
    record_every: int = 1
    output: str = ""
    x0: str = "random:1"        # "random:<scale>", "zeros" or comma-separated coordinates
    target: str = "auto"        # "auto" | "grad" | "gap"
    alpha: float | None = None  # DIANA shift rate; overrides the framework spec
    beta: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if not (self.stepsize in STEPSIZE_MODES or self.stepsize.startswith("manual:")):
            raise InvalidInput(f"stepsize must be one of {STEPSIZE_MODES} or manual:<eta>")
        if self.stepsize.startswith("manual:"):
            eta = est._number(self.stepsize[7:])
            if not eta > 0:
                raise InvalidInput("manual stepsize must be positive")
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if self.max_iters < 0 or self.record_every < 1:
            raise InvalidInput("max_iters must be >= 0 and record_every >= 1")
        if self.target not in ("auto", "grad", "gap"):
            raise InvalidInput("target must be auto, grad or gap")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidInput("seed must be a 64-bit unsigned integer")

    @property
    def pl_mode(self) -> bool:
        if self.target == "auto":
            return self.stepsize in ("auto-thm2", "auto-thm5")
        return self.target == "gap"

    def replace(self, **kw) -> "RunConfig":
        return from_mapping({**self.as_mapping(), **kw})

    def as_mapping(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_KEYS = {"max_iters", "seed", "record_every"}
_FLOAT_KEYS = {"epsilon", "alpha", "beta", "gamma"}


def _coerce(key, value):
    if key not in _FIELDS:
        raise InvalidInput(f"unknown config key {key!r}")
    if value is None:
        return None
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        if isinstance(value, str) and value.strip().lower() in ("", "none", "auto"):
            return None
        return est._number(value) if isinstance(value, str) else float(value)
    return str(value).strip()


def from_mapping(mapping: dict) -> RunConfig:
    return RunConfig(**{k: _coerce(k, v) for k, v in mapping.items()})


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, val = line.partition("=")
        if not eq:
            raise InvalidInput(f"line {lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = val.strip()
    return out


def load_config(path: str | None = None, overrides=None) -> RunConfig:
    mapping = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                mapping.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    for item in overrides or ():
        key, eq, val = item.partition("=")
        if not eq:
            raise InvalidInput(f"override must be key=value, got {item!r}")
        mapping[key.strip()] = val.strip()
    return from_mapping(mapping)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.as_mapping().items():
        if v is None:
            continue
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    k: int
    f_gap: float
    grad_norm: float
    sigma_sq: float
    eta_k: float
    floats_sent: int

    def row(self):
        return (str(self.k), repr(self.f_gap), repr(self.grad_norm), repr(self.sigma_sq),
                repr(self.eta_k), str(self.floats_sent))


class Trace(list):
    """List of ``IterationRecord`` plus run metadata."""

    def __init__(self, records=(), **meta):
        super().__init__(records)
        self.stop_k: int | None = meta.get("stop_k")
        self.eta: float = meta.get("eta", float("nan"))
        self.params = meta.get("params")
        self.bound: theory.Bound | None = meta.get("bound")
        self.iterations: int = meta.get("iterations", 0)
        self.min_grad_norm: float = meta.get("min_grad_norm", float("inf"))
        self.initial_f_gap: float = meta.get("initial_f_gap", float("nan"))

    @property
    def stopped(self) -> bool:
        return self.stop_k is not None


def export_csv(records, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(csv_text(records))
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc.strerror}") from exc


def csv_text(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: missing or wrong header")
    return [IterationRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), int(r[5]))
            for r in rows[1:]]


# ---------------------------------------------------------------------------
# setup
# ---------------------------------------------------------------------------

@dataclass
class Setup:
    cfg: RunConfig
    obj: object
    method: est.MethodSpec
    framework: fed.Framework
    compressor: object
    x0: np.ndarray
    L: float
    alpha: float | None
    beta: float | None
    streams: Streams
    _fixed_locals: list | None = field(default=None, repr=False)

    @property
    def federated(self) -> bool:
        return self.framework.name != "none"

    def make_params(self, eta: float) -> est.UnifiedParams:
        cfg = self.cfg
        if not self.federated:
            if self.method.name == "sgd":
                if self._fixed_locals is None:
                    self._fixed_locals = [est.certificate(self.method, self.obj, eta,
                                                          rng=self.streams("fit"))]
                return self._fixed_locals[0]
            return est.certificate(self.method, self.obj, eta)
        locals_ = None
        if self.method.name in ("gd", "sgd"):
            if self._fixed_locals is None:
                frng = self.streams("fit")
                self._fixed_locals = [fed.local_certificate(self.method, self.obj.worker_view(i), eta,
                                                            cfg.gamma, rng=frng)
                                      for i in range(self.obj.m)]
            locals_ = self._fixed_locals
        return fed.composed_certificate(self.obj, self.method, self.compressor, self.framework, eta,
                                        self.alpha, self.beta, cfg.gamma, local_params=locals_)


def _initial_point(cfg: RunConfig, obj, streams) -> np.ndarray:
    spec = cfg.x0.strip()
    if spec == "zeros":
        return np.zeros(obj.d)
    if spec.startswith("random:"):
        scale = float(spec[7:])
        base = obj.x_star if obj.x_star is not None else np.zeros(obj.d)
        return base + scale * streams("init").standard_normal(obj.d)
    vals = [float(t) for t in spec.split(",") if t.strip()]
    if len(vals) == 1:
        return np.full(obj.d, vals[0])
    if len(vals) != obj.d:
        raise InvalidInput(f"x0 has {len(vals)} coordinates, problem has d={obj.d}")
    return np.array(vals)


def prepare(cfg: RunConfig) -> Setup:
    obj = parse_problem(cfg.problem)
    n_flat = obj.m * obj.n
    fw = fed.parse_framework(cfg.framework)
    method = est.parse_method(cfg.method, n=obj.n if fw.name != "none" else n_flat)
    comp = parse_compressor(cfg.compressor, obj.d)
    if fw.name == "none" and comp.kind != "identity":
        raise InvalidInput("a compressor needs framework dc or diana")
    streams = Streams(cfg.seed)
    alpha = beta = None
    if fw.name == "diana":
        a_def, b_def = fed.default_diana_knobs(comp.omega, fed.local_rho_at_zero(method, obj.n, cfg.gamma))
        alpha = cfg.alpha if cfg.alpha is not None else (fw.alpha if fw.alpha is not None else a_def)
        beta = cfg.beta if cfg.beta is not None else b_def
    return Setup(cfg, obj, method, fw, comp, _initial_point(cfg, obj, streams), obj.L,
                 alpha, beta, streams)


def initial_sigma(setup: Setup) -> float:
    """sigma_0^2: zero for anchors and tables at x0, nonzero for DIANA's zero shifts."""
    if not setup.federated:
        return 0.0
    cl = fed.build_cluster(setup.obj, setup.method, setup.compressor, setup.x0)
    return fed.composed_sigma(cl, setup.obj, setup.x0, setup.framework)


def resolve_stepsize(setup: Setup):
    """``(schedule, K_cap, params, bound)`` for the configured stepsize mode."""
    cfg, obj = setup.cfg, setup.obj
    L = setup.L
    delta0 = max(obj.f_gap(setup.x0), 0.0)
    if cfg.stepsize.startswith("manual:"):
        eta = est._number(cfg.stepsize[7:])
        try:
            params = setup.make_params(eta)
        except (est.CertificateUnavailable, fed.CompositionInfeasible) as exc:
            raise InvalidInput(f"certificate infeasible at eta={eta!r}: {exc}") from exc
        return (lambda k: eta), cfg.max_iters, params, None
    mode = {"auto-thm1": "nonconvex", "auto-thm2": "pl-decreasing", "auto-thm5": "pl-constant"}[cfg.stepsize]
    mu = obj.mu
    if mode != "nonconvex" and mu is None:
        raise InvalidInput("PL stepsize modes need a problem with a PL constant")
    eta, params, bound = theory.self_consistent_stepsize(
        setup.make_params, L, delta0, initial_sigma(setup), cfg.epsilon, mode=mode, mu=mu)
    K = bound.K
    if mode == "pl-decreasing":
        sched = theory.thm2_schedule(params, L, mu, K, eta=eta)
    else:
        def sched(k, eta=eta):
            return eta
    return sched, min(K, cfg.max_iters), params, bound


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _sigma(setup: Setup, state_or_cluster, x) -> float:
    if setup.federated:
        return fed.composed_sigma(state_or_cluster, setup.obj, x, setup.framework)
    return est.sigma_of(state_or_cluster, x)


def run(cfg: RunConfig, write: bool = True) -> Trace:
    """Execute one configured run and return its trace.

    The run stops at the first ``k`` whose target metric (``||grad f(x_k)||``
    or, in PL mode, ``f(x_k) - f*``) is at most ``epsilon``.  Otherwise it
    performs the theoretical iteration count (auto modes) or ``max_iters``
    (manual mode), whichever is smaller.
    """
    setup = prepare(cfg)
    sched, K, params, bound = resolve_stepsize(setup)
    obj, x = setup.obj, setup.x0.copy()
    streams = setup.streams
    if setup.federated:
        holder = fed.build_cluster(obj, setup.method, setup.compressor, x)
    else:
        holder = est.init_state(setup.method, obj, x)
    pl = cfg.pl_mode
    f0 = max(obj.f_gap(x), 0.0)
    records = []
    floats = 0
    stop_k = None
    min_g = math.inf
    k = 0
    while True:
        f_gap = obj.f_gap(x)
        if not np.isfinite(f_gap) or (f0 > 0 and f_gap > 1e6 * f0):
            raise DivergenceError(f"f_gap = {f_gap:.6g} exceeded 1e6 x initial {f0:.6g} at k={k}")
        gn = float(np.linalg.norm(obj.grad(x)))
        min_g = min(min_g, gn)
        hit = (f_gap if pl else gn) <= cfg.epsilon
        last = hit or k >= K
        eta_k = float(sched(k))
        if k % cfg.record_every == 0 or last:
            records.append(IterationRecord(k, float(f_gap), gn, _sigma(setup, holder, x),
                                           eta_k, floats))
        if hit:
            stop_k = k
            break
        if k >= K:
            break
        if setup.federated:
            rng = _iteration_streams(streams, k)
            if setup.framework.name == "dc":
                g, tr, _ = fed.dc_round(holder, x, rng, eta=eta_k)
            else:
                g, tr, _ = fed.diana_round(holder, x, setup.alpha, rng, eta=eta_k)
            floats += tr.floats_sent
        else:
            flip = None
            if setup.method.name == "lsvrg":
                flip = bool(streams("anchor", 0, k).random() < setup.method.p)
            g = est.step(holder, obj, x, eta_k, streams("sample", 0, k), flip=flip)
        x = x - eta_k * g
        k += 1
    trace = Trace(records, stop_k=stop_k, eta=float(sched(0)), params=params, bound=bound,
                  iterations=k, min_grad_norm=min_g, initial_f_gap=f0)
    if write and cfg.output:
        export_csv(trace, cfg.output)
    return trace


def _iteration_streams(streams: Streams, k: int):
    def rng(purpose, worker):
        return streams(purpose, worker, k)
    return rng


# ---------------------------------------------------------------------------
# bound verification
# ---------------------------------------------------------------------------

@dataclass
class BoundReport:
    K_theory: float
    k_empirical: int | None
    passed: bool
    min_grad_norm: float
    eta: float
    empirical_certificate: bool
    source: str

    @property
    def margin(self) -> float:
        if self.k_empirical is None:
            return -math.inf
        return self.K_theory / max(self.k_empirical, 1)

    def __bool__(self):
        return self.passed

    def summary(self) -> str:
        tag = " [empirical certificate]" if self.empirical_certificate else ""
        k = "not reached" if self.k_empirical is None else str(self.k_empirical)
        return (f"{'PASS' if self.passed else 'FAIL'} {self.source}: K_theory={self.K_theory:.6g} "
                f"k_empirical={k} ratio={self.margin:.3g} eta={self.eta:.6g} "
                f"min_grad_norm={self.min_grad_norm:.3e}{tag}")


def verify_bound(cfg: RunConfig, K_theory: float | None = None, scale: float = 1.0) -> BoundReport:
    """Run with an automatic stepsize and compare the stopping index with the bound.

    ``K_theory`` overrides the bound (e.g. a closed-form count); ``scale``
    multiplies it, which tests use to exercise the failure path.
    """
    if cfg.stepsize not in STEPSIZE_MODES:
        raise InvalidInput("verify_bound needs an automatic stepsize mode")
    setup = prepare(cfg)
    _, _, params, bound = resolve_stepsize(setup)
    K_th = (bound.raw if K_theory is None else float(K_theory)) * scale
    budget = cfg.max_iters if K_th == math.inf else min(cfg.max_iters, math.ceil(K_th) + 1)
    trace = run(cfg.replace(max_iters=budget), write=bool(cfg.output))
    k_emp = trace.stop_k
    ok = k_emp is not None and k_emp <= K_th
    return BoundReport(K_th, k_emp, ok, trace.min_grad_norm, trace.eta, params.empirical,
                       bound.source if K_theory is None else "supplied bound")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def expand_values(value: str) -> list:
    """``"randk:1..4"`` expands to four specs; anything else is returned as is."""
    head, sep, tail = value.rpartition(":")
    rng_part = tail if sep else value
    if ".." in rng_part:
        lo, _, hi = rng_part.partition("..")
        if lo.isdigit() and hi.isdigit():
            prefix = head + ":" if sep else ""
            return [f"{prefix}{i}" for i in range(int(lo), int(hi) + 1)]
    return [value]


def parse_grid(items) -> dict:
    """``["framework=dc", "framework=diana", "compressor=randk:1..8"]`` into a grid dict."""
    grid: dict = {}
    for item in items:
        key, eq, val = item.partition("=")
        if not eq:
            raise InvalidInput(f"grid entry must be key=value, got {item!r}")
        key = key.strip()
        if key not in _FIELDS:
            raise InvalidInput(f"unknown config key {key!r}")
        for v in val.split("|"):
            grid.setdefault(key, []).extend(expand_values(v.strip()))
    return grid


SUMMARY_HEADER = ("cell", "status", "stop_k", "iterations", "final_f_gap", "final_grad_norm",
                  "eta", "K_theory", "floats_sent", "csv")


def _run_cell(i, cfg, out_dir):
    path = os.path.join(out_dir, f"cell_{i:04d}.csv")
    try:
        trace = run(cfg.replace(output=path))
    except DivergenceError:
        return ("diverged", "", "", "", "", "", "", "", os.path.basename(path))
    except (InvalidInput, est.CertificateUnavailable, fed.CompositionInfeasible, ValueError) as exc:
        return (f"infeasible: {exc}".replace(",", ";"), "", "", "", "", "", "", "", "")
    last = trace[-1]
    K_th = "" if trace.bound is None else repr(trace.bound.raw)
    return ("reached" if trace.stopped else "budget", "" if trace.stop_k is None else str(trace.stop_k),
            str(trace.iterations), repr(last.f_gap), repr(last.grad_norm), repr(trace.eta), K_th,
            str(last.floats_sent), os.path.basename(path))


def sweep(base: RunConfig, grid: dict, out_dir: str, threads: int = 1) -> str:
    """Run every cell of the cartesian grid; write one CSV per cell and ``summary.csv``.

    Returns the summary path.  Cells are independent so results do not depend
    on ``threads``.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create sweep directory {out_dir}: {exc.strerror}") from exc
    keys = list(grid)
    cells = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    cfgs = [base.replace(**c) for c in cells]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, range(len(cfgs)), cfgs, [out_dir] * len(cfgs)))
    else:
        results = [_run_cell(i, c, out_dir) for i, c in enumerate(cfgs)]
    summary = os.path.join(out_dir, "summary.csv")
    try:
        with open(summary, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_HEADER[:1] + tuple(keys) + SUMMARY_HEADER[1:])
            for i, (cell, res) in enumerate(zip(cells, results)):
                w.writerow((str(i),) + tuple(cell[k] for k in keys) + res)
    except OSError as exc:
        raise OSError(f"cannot write sweep summary {summary}: {exc.strerror}") from exc
    return summary


# ---------------------------------------------------------------------------
# estimator checks and bound tables
# ---------------------------------------------------------------------------

def verify_estimator(cfg: RunConfig, points: int = 20, samples: int = 100000,
                     spread: float = 1.0, eta: float | None = None, chunk: int = 20000):
    """Monte Carlo check of the configured estimator against its certificate.

    Iterates, anchors, tables and shifts are drawn at random around the
    optimum (or the origin).  Returns an ``AssumptionReport``.
    """
    setup = prepare(cfg)
    obj = setup.obj
    if eta is None:
        sched, _, params, _ = resolve_stepsize(setup)
        eta = float(sched(0))
    else:
        params = setup.make_params(eta)
    rng = setup.streams("verify")
    base = obj.x_star if obj.x_star is not None else np.zeros(obj.d)
    xs = [base + spread * rng.standard_normal(obj.d) for _ in range(points)]
    if not setup.federated:
        pts = [(x, est.random_state(setup.method, obj, x, rng, spread)) for x in xs]
        return est.verify_assumption1(setup.method, obj, pts, samples, rng, eta, params, chunk)
    pts = [(x, fed.random_cluster(obj, setup.method, setup.compressor, x, rng, spread, spread))
           for x in xs]
    return fed.verify_composed(obj, None, setup.framework, params, eta, setup.alpha, samples, rng,
                               points=pts, chunk=chunk)


def corollary_name(setup: Setup, pl: bool = False) -> str:
    name = setup.method.name
    if setup.federated:
        name = f"{setup.framework.name}-{name}"
    return name + ("-pl" if pl else "")


def corollary_inputs(setup: Setup, eta: float, params: est.UnifiedParams, pl: bool = False) -> dict:
    """Constants needed by ``theory.corollary_bound`` for the configured method."""
    obj, m = setup.obj, setup.method
    spec = dict(name=corollary_name(setup, pl), delta0=max(obj.f_gap(setup.x0), 0.0),
                L=setup.L, eps=setup.cfg.epsilon, b=m.b, eta=eta, empirical=params.empirical)
    if pl:
        spec["mu"] = obj.mu
    if m.name == "lsvrg":
        spec["p"] = m.p
    n = obj.n if setup.federated else obj.m * obj.n
    spec["n"] = n
    if not setup.federated:
        spec["L_bar"] = obj.L_bar_flat
        if m.name == "sgd":
            spec.update(A=params.A1, B=params.B1, C=params.C1)
        return spec
    om = setup.compressor.omega
    spec.update(omega=om, m=obj.m, L_bar=obj.L_bar, delta_f_star=obj.delta_f_star)
    if setup.cfg.gamma is not None:
        spec["gamma"] = setup.cfg.gamma
    if setup.framework.name == "diana":
        spec.update(alpha=setup.alpha, beta=setup.beta)
    # worker-level A and C recovered from the composed first recursion
    spec["A"] = params.A1 * obj.m / (1 + om)
    spec["C"] = params.C1 * obj.m / (1 + om)
    return spec


def bound_table(cfg: RunConfig) -> list:
    """Rows ``(label, value)``: certificate, stepsizes and every applicable iteration count."""
    setup = prepare(cfg)
    obj, L, eps = setup.obj, setup.L, cfg.epsilon
    delta0 = max(obj.f_gap(setup.x0), 0.0)
    rows = [("problem", cfg.problem), ("method", setup.method.spec),
            ("framework", setup.framework.spec), ("compressor", setup.compressor.spec),
            ("L", repr(L)), ("mu", repr(obj.mu)), ("delta0", repr(delta0)), ("epsilon", repr(eps))]
    sigma0 = initial_sigma(setup)
    rows.append(("sigma0_sq", repr(sigma0)))
    eta, params, b1 = theory.self_consistent_stepsize(setup.make_params, L, delta0, sigma0, eps)
    cert = ", ".join(f"{k}={v:.6g}" for k, v in params.as_dict().items() if isinstance(v, float))
    rows.append(("certificate", cert + (" [empirical]" if params.empirical else "")))
    rows.append(("eta_nonconvex", repr(eta)))
    rows.append(("K_nonconvex", f"{b1.K} (raw {b1.raw:.6g})"))
    try:
        rows.append(("K_closed_form", _closed(setup, eta, params, False)))
    except (KeyError, est.CertificateUnavailable, TypeError) as exc:
        rows.append(("K_closed_form", f"n/a ({exc})"))
    if obj.mu is not None:
        mu = obj.mu
        pl_eta, pl_params = eta, params
        for mode, label in (("pl-decreasing", "pl_decreasing"), ("pl-constant", "pl_constant")):
            try:
                e, _, b = theory.self_consistent_stepsize(setup.make_params, L, delta0, sigma0, eps,
                                                          mode=mode, mu=mu)
                if mode == "pl-decreasing":
                    pl_eta, pl_params = e, setup.make_params(e)
                rows.append((f"eta_{label}", repr(e)))
                rows.append((f"K_{label}", f"{b.K} (raw {b.raw:.6g})"))
            except est.CertificateUnavailable as exc:
                rows.append((f"K_{label}", f"n/a ({exc})"))
        try:
            rows.append(("K_closed_form_pl", _closed(setup, pl_eta, pl_params, True)))
        except (KeyError, est.CertificateUnavailable, TypeError) as exc:
            rows.append(("K_closed_form_pl", f"n/a ({exc})"))
    return rows


def _closed(setup, eta, params, pl):
    b = theory.corollary_bound(corollary_inputs(setup, eta, params, pl))
    tag = " [empirical]" if b.empirical else ""
    return f"{b.K} (raw {b.raw:.6g}, {b.source}){tag}"
