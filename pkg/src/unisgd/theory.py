"""Stepsize rules and iteration bounds driven by a ``UnifiedParams`` certificate.

Three regimes are covered:

* nonconvex, constant stepsize, target ``E||grad f(x_hat)|| <= eps``;
* PL with a stepsize that is constant for the first half of the run and then
  decays like ``2 eta / (2 + (k - K/2) mu eta)``;
* PL with a constant stepsize.

Each bound is returned as a ``Bound`` holding the raw real value and its
ceiling.  Certificates fitted from data carry an ``empirical`` flag which is
propagated to every bound computed from them.

A per-method table of closed-form iteration counts (``corollary_bound``) and a
checker for the two-phase recursion lemma (``check_prop1``) complete the module.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimators import CertificateUnavailable, UnifiedParams


@dataclass(frozen=True)
class Bound:
    raw: float
    empirical: bool = False
    source: str = ""

    @property
    def K(self) -> int:
        if not np.isfinite(self.raw):
            raise OverflowError("bound is infinite")
        return int(math.ceil(self.raw - 1e-9 * max(1.0, abs(self.raw))))

    def __int__(self):
        return self.K

    def label(self) -> str:
        tag = " (empirical certificate)" if self.empirical else ""
        return f"{self.source}: K = {self.K} (raw {self.raw:.6g}){tag}"


def _require_rho(params: UnifiedParams):
    if not params.rho > 0:
        raise ValueError(f"certificate has rho = {params.rho} <= 0")


def _nc_terms(p: UnifiedParams):
    """Effective (B, A, C) of the nonconvex bound."""
    _require_rho(p)
    r = p.D1 / p.rho
    return p.B1 + r * p.B2, p.A1 + r * p.A2, p.C1 + r * p.C2


def _pl_terms(p: UnifiedParams):
    """Effective (B, A, C) of the PL bounds (sigma weighted twice as heavily)."""
    _require_rho(p)
    r = 2 * p.D1 / p.rho
    return p.B1 + r * p.B2, p.A1 + r * p.A2, p.C1 + r * p.C2


def _log_term(delta0_prime: float, epsilon: float) -> float:
    return max(math.log(2 * delta0_prime / epsilon), 0.0)


# ---------------------------------------------------------------------------
# initial gap corrections
# ---------------------------------------------------------------------------

def delta0_prime_nonconvex(delta0: float, L: float, eta: float, params: UnifiedParams,
                           sigma0_sq: float) -> float:
    """``Delta_0 + L eta^2 D1 sigma_0^2 / (2 rho)``."""
    if params.D1 == 0 or sigma0_sq == 0:
        return delta0
    return delta0 + 0.5 * L * eta ** 2 * params.D1 * sigma0_sq / params.rho


def delta0_prime_pl(delta0: float, L: float, eta: float, params: UnifiedParams,
                    sigma0_sq: float) -> float:
    """``Delta_0 + L eta^2 D1 sigma_0^2 / rho``."""
    if params.D1 == 0 or sigma0_sq == 0:
        return delta0
    return delta0 + L * eta ** 2 * params.D1 * sigma0_sq / params.rho


# ---------------------------------------------------------------------------
# nonconvex
# ---------------------------------------------------------------------------

def thm1_stepsize(params: UnifiedParams, L: float, K: float, epsilon: float) -> float:
    """Three-way minimum; branches whose denominator vanishes are dropped."""
    Bt, At, Ct = _nc_terms(params)
    cands = [1.0 / (L * Bt)]
    if At > 0:
        cands.append(math.sqrt(math.log(2) / (L * At * K)))
    if Ct > 0:
        cands.append(epsilon ** 2 / (2 * L * Ct))
    return min(cands)


def thm1_iters(params: UnifiedParams, L: float, delta0_prime: float, epsilon: float) -> Bound:
    """``(8 D L / eps^2) * max{B, 12 D A / eps^2, 2 C / eps^2}`` with D the corrected gap."""
    Bt, At, Ct = _nc_terms(params)
    e2 = epsilon ** 2
    raw = 8 * delta0_prime * L / e2 * max(Bt, 12 * delta0_prime * At / e2, 2 * Ct / e2)
    return Bound(raw, params.empirical, "nonconvex")


# ---------------------------------------------------------------------------
# PL
# ---------------------------------------------------------------------------

def pl_stepsize_cap(params: UnifiedParams, L: float, mu: float) -> float:
    Bt, At, _ = _pl_terms(params)
    return 1.0 / (L * Bt + L * At / mu)


def thm2_schedule(params: UnifiedParams, L: float, mu: float, K: float,
                  eta: float | None = None) -> Callable[[float], float]:
    """``k -> eta_k``: constant up to ``K/2``, then ``2 eta / (2 + (k - K/2) mu eta)``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    cap = pl_stepsize_cap(params, L, mu)
    eta = cap if eta is None else eta
    half = K / 2.0

    def schedule(k):
        if k <= half:
            return eta
        return 2 * eta / (2 + (k - half) * mu * eta)
    schedule.eta = eta
    schedule.K = K
    return schedule


def thm2_iters(params: UnifiedParams, L: float, mu: float, delta0_prime: float,
               epsilon: float) -> Bound:
    """Decreasing-stepsize PL bound.

    ``K = max{2 (B + A/mu) kappa log(2 D/eps), 10 C kappa / (mu eps)}`` with
    ``(B, A, C)`` the PL-effective constants; equivalently ``2/(mu eta_cap)``
    times the log factor for the first branch.
    """
    Bt, At, Ct = _pl_terms(params)
    kappa = L / mu
    first = 2 * (Bt + At / mu) * kappa * _log_term(delta0_prime, epsilon)
    second = 10 * Ct * kappa / (mu * epsilon)
    return Bound(max(first, second), params.empirical, "PL decreasing step")


def thm5_constant_pl(params: UnifiedParams, L: float, mu: float, delta0_prime: float,
                     epsilon: float):
    """Constant-stepsize PL rule: returns ``(eta, Bound)`` with ``K = log(2D/eps) / (mu eta)``."""
    Bt, At, Ct = _pl_terms(params)
    kappa = L / mu
    cands = [1.0 / (L * Bt + L * At / mu)]
    if Ct > 0:
        cands.append(mu * epsilon / (L * Ct))
    eta = min(cands)
    raw = max(Bt + At / mu, Ct / (mu * epsilon)) * kappa * _log_term(delta0_prime, epsilon)
    return eta, Bound(raw, params.empirical, "PL constant step")


# ---------------------------------------------------------------------------
# stepsize-dependent certificates
# ---------------------------------------------------------------------------

def _feasible_cert(make_params, eta):
    try:
        p = make_params(eta)
    except (CertificateUnavailable, ValueError):
        return None
    return p if p.usable else None


def _bisect_largest(ok: Callable[[float], bool], hi: float, iters: int = 80) -> float:
    if ok(hi):
        return hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def self_consistent_stepsize(make_params: Callable[[float], UnifiedParams], L: float,
                             delta0: float, sigma0_sq: float, epsilon: float,
                             mode: str = "nonconvex", mu: float | None = None,
                             eta_max: float | None = None):
    """Largest ``eta`` that satisfies the stepsize rule of its own certificate.

    Variance-reduced and compressed certificates depend on ``eta`` (through
    rho and the sigma recursion) while every stepsize rule depends on the
    certificate.  This helper bisects on ``eta``: a value is accepted when the
    certificate built at ``eta`` is usable and ``eta`` does not exceed the
    rule evaluated on that certificate.  Returns ``(eta, params, bound)``.
    """
    if mode != "nonconvex" and (mu is None or mu <= 0):
        raise ValueError("PL modes need mu > 0")
    hi = eta_max if eta_max is not None else 1.0 / L

    def evaluate(eta):
        p = _feasible_cert(make_params, eta)
        if p is None:
            return None
        if mode == "nonconvex":
            d0 = delta0_prime_nonconvex(delta0, L, eta, p, sigma0_sq)
            bound = thm1_iters(p, L, d0, epsilon)
            rule = thm1_stepsize(p, L, max(bound.raw, 1.0), epsilon)
        elif mode == "pl-decreasing":
            d0 = delta0_prime_pl(delta0, L, eta, p, sigma0_sq)
            bound = thm2_iters(p, L, mu, d0, epsilon)
            rule = pl_stepsize_cap(p, L, mu)
        elif mode == "pl-constant":
            d0 = delta0_prime_pl(delta0, L, eta, p, sigma0_sq)
            rule, _ = thm5_constant_pl(p, L, mu, d0, epsilon)
            # the bound uses the stepsize actually run
            bound = Bound(_log_term(d0, epsilon) / (mu * eta), p.empirical, "PL constant step")
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return p, bound, rule

    def ok(eta):
        r = evaluate(eta)
        return r is not None and eta <= r[2] * (1 + 1e-12)

    eta = _bisect_largest(ok, hi)
    if eta <= 0:
        raise CertificateUnavailable("no positive stepsize satisfies its own certificate")
    p, bound, _ = evaluate(eta)
    return eta, p, bound


def resolve_eta_rho(method: str, L_bar: float, b: int, q: float, target: str = "nonconvex"):
    """Stepsize at the closed-form cap of a variance-reduced method and the resulting rho.

    ``q`` is the anchor probability ``p`` for ``"lsvrg"`` and the sampled fraction
    ``b/n`` for ``"saga"``.  The cap is ``1/(L(1 + c * factor))`` with ``c = 2``
    (nonconvex) or ``3`` (PL) and factor ``b^{-1/3} p^{-2/3}`` (L-SVRG) or
    ``n^{2/3}/b`` (SAGA), where the mean-square constant stands in for ``L``.
    rho must then be at least ``q/4``.
    """
    c = {"nonconvex": 2.0, "pl": 3.0}[target]
    if method == "lsvrg":
        factor = b ** (-1 / 3) * q ** (-2 / 3)
    elif method == "saga":
        n = b / q
        factor = n ** (2 / 3) / b
    else:
        raise ValueError("resolve_eta_rho applies to lsvrg and saga")
    eta = 1.0 / (L_bar * (1 + c * factor))
    rho = q / 2 + q ** 2 / 2 - eta ** 2 * L_bar ** 2 / b
    if rho < q / 4 * (1 - 1e-12):
        raise CertificateUnavailable(f"rho = {rho:.6g} below q/4 = {q / 4:.6g}")
    return eta, rho


# ---------------------------------------------------------------------------
# recursion lemma
# ---------------------------------------------------------------------------

@dataclass
class Prop1Result:
    holds: bool
    M_K: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.M_K

    def __bool__(self):
        return self.holds


def prop1_schedule(b: float, a: float, K: int, k: int) -> float:
    if k <= K / 2:
        return b
    return 2 * b / (2 + (k - K / 2) * a * b)


def check_prop1(a: float, c: float, b: float, M0: float, K: int, rng=None) -> Prop1Result:
    """Run ``M_k = (1 - a b_k) M_{k-1} + c b_k^2`` for k = 1..K with equality and
    compare with ``(1 - ab)^{K/2} M0 + 10 c / (a^2 K)``.

    The exponent is the number of constant-step iterations, ``K // 2``.  For
    odd K the real exponent ``K/2`` can fail when ``ab`` is close to 1
    (a = b = 1, c = 0, K = 1 gives M_1 = 0.2 against a bound of 0).

    Equality is the worst case of the inequality recursion.  ``rng`` is
    accepted for interface symmetry and unused.
    """
    if a < 0 or c < 0 or b < 0 or M0 < 0:
        raise ValueError("a, b, c, M0 must be non-negative")
    if a * b > 1:
        raise ValueError("need a*b <= 1")
    if K < 1:
        raise ValueError("K must be positive")
    M = M0
    for k in range(1, K + 1):
        bk = prop1_schedule(b, a, K, k)
        M = (1 - a * bk) * M + c * bk * bk
    if a == 0:
        bound = math.inf if c > 0 else M0
    else:
        bound = (1 - a * b) ** (K // 2) * M0 + 10 * c / (a * a * K)
    tol = 1e-12 * max(1.0, abs(bound)) if np.isfinite(bound) else 0.0
    return Prop1Result(M <= bound + tol, M, bound)


# ---------------------------------------------------------------------------
# closed-form per-method iteration counts
# ---------------------------------------------------------------------------

def _q(spec) -> float:
    if "p" in spec:
        return spec["p"]
    return spec["b"] / spec["n"]


def _dc_vr(s):
    L, Lb, eta, b, om, m = s["L"], s["L_bar"], s["eta"], s["b"], s["omega"], s["m"]
    q = _q(s)
    gamma = s.get("gamma", q / 2)
    B = Lb ** 2 * ((1 - q) * eta ** 2 / gamma + eta ** 2)
    tau = (1 + om) * Lb ** 2 * eta ** 2 / (m * b)
    rho = q + q * gamma - gamma - tau
    if rho <= 0:
        raise CertificateUnavailable(f"rho = {rho:.6g} <= 0")
    return B, tau, rho


def _diana_rho(s, local_rho, B):
    om, a, beta, m = s["omega"], s["alpha"], s["beta"], s["m"]
    tau = a ** 2 * om + (1 + om) * B / m
    rho = min(local_rho - tau, 2 * a - (1 - a) / beta - a ** 2 - tau)
    if rho <= 0:
        raise CertificateUnavailable(f"rho = {rho:.6g} <= 0")
    return tau, rho


def _diana_plain(s):
    L, eta, om = s["L"], s["eta"], s["omega"]
    B = om * (1 + s["beta"]) * L ** 2 * eta ** 2 / (1 + om)
    tau, rho = _diana_rho(s, 1.0, B)
    return B, tau, rho


def _diana_vr(s):
    L, Lb, eta, om, b = s["L"], s["L_bar"], s["eta"], s["omega"], s["b"]
    q = _q(s)
    gamma = s.get("gamma", q / 2)
    B = om * (1 + s["beta"]) * L ** 2 * eta ** 2 / (1 + om) + Lb ** 2 * eta ** 2 / b
    tau, rho = _diana_rho(s, q + q * gamma - gamma, B)
    Bp = (1 - q) * Lb ** 2 * eta ** 2 / gamma + B * b
    return Bp, tau, rho


def _nonconvex_cor(s):
    d0, L, e = s["delta0"], s["L"], s["eps"]
    return 8 * d0 * L / e ** 2


def _pl_log(s):
    return (s["L"] / s["mu"]) * _log_term(s["delta0"], s["eps"])


def _cor_gd(s):
    return _nonconvex_cor(s)


def _cor_sgd(s):
    d0, e = s["delta0"], s["eps"]
    return _nonconvex_cor(s) * max(s["B"], 12 * d0 * s["A"] / e ** 2, 2 * s["C"] / e ** 2)


def _cor_lsvrg(s):
    return _nonconvex_cor(s) * (1 + 2 / (s["b"] ** (1 / 3) * s["p"] ** (2 / 3)))


def _cor_saga(s):
    return _nonconvex_cor(s) * (1 + 2 * s["n"] ** (2 / 3) / s["b"])


def _cor_dc_plain(s):
    d0, e, om, m = s["delta0"], s["eps"], s["omega"], s["m"]
    C = s.get("C", 2 * s["A"] * s.get("delta_f_star", 0.0))
    return _nonconvex_cor(s) * max(1.0, 12 * (1 + om) * d0 * s["A"] / (e ** 2 * m),
                                   2 * (1 + om) * C / (e ** 2 * m))


def _cor_dc_vr(s):
    d0, e, om, m, b = s["delta0"], s["eps"], s["omega"], s["m"], s["b"]
    B, tau, rho = _dc_vr(s)
    C = s.get("C", 2 * s["A"] * s.get("delta_f_star", 0.0))
    f = (1 + om) * (1 + tau / rho) / m
    return _nonconvex_cor(s) * max(1 + (1 + om) * B / (m * b * rho),
                                   12 * f * d0 * s["A"] / e ** 2, 2 * f * C / e ** 2)


def _cor_diana_gd(s):
    B, tau, rho = _diana_plain(s)
    return _nonconvex_cor(s) * (1 + (1 + s["omega"]) * B / (s["m"] * rho))


def _cor_diana_sgd(s):
    d0, e, om, m = s["delta0"], s["eps"], s["omega"], s["m"]
    B, tau, rho = _diana_plain(s)
    f = (1 + om) * (1 + tau / rho) / m
    return _nonconvex_cor(s) * max(1 + (1 + om) * B / (m * rho),
                                   12 * f * d0 * s["A"] / e ** 2, 2 * f * s["C"] / e ** 2)


def _cor_diana_vr(s):
    Bp, tau, rho = _diana_vr(s)
    return _nonconvex_cor(s) * (1 + (1 + s["omega"]) * Bp / (s["m"] * s["b"] * rho))


def _cor_gd_pl(s):
    return _pl_log(s)


def _cor_sgd_pl(s):
    L, mu = s["L"], s["mu"]
    first = 2 * (s["B"] + s["A"] / mu) * _pl_log(s)
    second = 10 * L * s["C"] / (mu ** 2 * s["eps"])
    return max(first, second)


def _cor_lsvrg_pl(s):
    return (1 + 3 / (s["b"] ** (1 / 3) * s["p"] ** (2 / 3))) * _pl_log(s)


def _cor_saga_pl(s):
    return (1 + 3 * s["n"] ** (2 / 3) / s["b"]) * _pl_log(s)


def _cor_dc_plain_pl(s):
    L, mu, om, m = s["L"], s["mu"], s["omega"], s["m"]
    C = s.get("C", 2 * s["A"] * s.get("delta_f_star", 0.0))
    first = 2 * (1 + (1 + om) * s["A"] / (m * mu)) * _pl_log(s)
    second = 10 * (1 + om) * L * C / (m * mu ** 2 * s["eps"])
    return max(first, second)


def _cor_dc_vr_pl(s):
    L, mu, om, m, b = s["L"], s["mu"], s["omega"], s["m"], s["b"]
    B, tau, rho = _dc_vr(s)
    C = s.get("C", 2 * s["A"] * s.get("delta_f_star", 0.0))
    w = 1 + 2 * tau / rho
    first = (1 + (1 + om) / m * (w * s["A"] / mu + 2 * B / (b * rho))) * 2 * _pl_log(s)
    second = 10 * (1 + om) * w * L * C / (m * mu ** 2 * s["eps"])
    return max(first, second)


def _cor_diana_gd_pl(s):
    B, tau, rho = _diana_plain(s)
    return (1 + 2 * (1 + s["omega"]) * B / (s["m"] * rho)) * _pl_log(s)


def _cor_diana_sgd_pl(s):
    L, mu, om, m = s["L"], s["mu"], s["omega"], s["m"]
    B, tau, rho = _diana_plain(s)
    w = 1 + 2 * tau / rho
    first = (1 + (1 + om) / m * (w * s["A"] / mu + 2 * B / rho)) * 2 * _pl_log(s)
    second = 10 * (1 + om) * w * L * s["C"] / (m * mu ** 2 * s["eps"])
    return max(first, second)


def _cor_diana_vr_pl(s):
    Bp, tau, rho = _diana_vr(s)
    return (1 + 2 * (1 + s["omega"]) * Bp / (s["m"] * s["b"] * rho)) * _pl_log(s)


COROLLARIES = {
    "gd": (_cor_gd, ("delta0", "L", "eps")),
    "sgd": (_cor_sgd, ("delta0", "L", "eps", "A", "B", "C")),
    "lsvrg": (_cor_lsvrg, ("delta0", "L", "eps", "b", "p")),
    "saga": (_cor_saga, ("delta0", "L", "eps", "b", "n")),
    "dc-gd": (_cor_dc_plain, ("delta0", "L", "eps", "omega", "m", "A")),
    "dc-sgd": (_cor_dc_plain, ("delta0", "L", "eps", "omega", "m", "A", "C")),
    "dc-lsvrg": (_cor_dc_vr, ("delta0", "L", "eps", "omega", "m", "A", "L_bar", "eta", "b", "p")),
    "dc-saga": (_cor_dc_vr, ("delta0", "L", "eps", "omega", "m", "A", "L_bar", "eta", "b", "n")),
    "diana-gd": (_cor_diana_gd, ("delta0", "L", "eps", "omega", "m", "eta", "alpha", "beta")),
    "diana-sgd": (_cor_diana_sgd, ("delta0", "L", "eps", "omega", "m", "eta", "alpha", "beta", "A", "C")),
    "diana-lsvrg": (_cor_diana_vr, ("delta0", "L", "eps", "omega", "m", "eta", "alpha", "beta",
                                    "L_bar", "b", "p")),
    "diana-saga": (_cor_diana_vr, ("delta0", "L", "eps", "omega", "m", "eta", "alpha", "beta",
                                   "L_bar", "b", "n")),
    "gd-pl": (_cor_gd_pl, ("delta0", "L", "mu", "eps")),
    "sgd-pl": (_cor_sgd_pl, ("delta0", "L", "mu", "eps", "A", "B", "C")),
    "lsvrg-pl": (_cor_lsvrg_pl, ("delta0", "L", "mu", "eps", "b", "p")),
    "saga-pl": (_cor_saga_pl, ("delta0", "L", "mu", "eps", "b", "n")),
    "dc-gd-pl": (_cor_dc_plain_pl, ("delta0", "L", "mu", "eps", "omega", "m", "A")),
    "dc-sgd-pl": (_cor_dc_plain_pl, ("delta0", "L", "mu", "eps", "omega", "m", "A", "C")),
    "dc-lsvrg-pl": (_cor_dc_vr_pl, ("delta0", "L", "mu", "eps", "omega", "m", "A", "L_bar",
                                    "eta", "b", "p")),
    "dc-saga-pl": (_cor_dc_vr_pl, ("delta0", "L", "mu", "eps", "omega", "m", "A", "L_bar",
                                   "eta", "b", "n")),
    "diana-gd-pl": (_cor_diana_gd_pl, ("delta0", "L", "mu", "eps", "omega", "m", "eta", "alpha", "beta")),
    "diana-sgd-pl": (_cor_diana_sgd_pl, ("delta0", "L", "mu", "eps", "omega", "m", "eta", "alpha",
                                         "beta", "A", "C")),
    "diana-lsvrg-pl": (_cor_diana_vr_pl, ("delta0", "L", "mu", "eps", "omega", "m", "eta", "alpha",
                                          "beta", "L_bar", "b", "p")),
    "diana-saga-pl": (_cor_diana_vr_pl, ("delta0", "L", "mu", "eps", "omega", "m", "eta", "alpha",
                                         "beta", "L_bar", "b", "n")),
}


def corollary_bound(spec: dict) -> Bound:
    """Closed-form iteration count for one named method/setting.

    ``spec["name"]`` is e.g. ``"lsvrg"``, ``"dc-saga"`` or ``"diana-gd-pl"``;
    the remaining keys supply the constants listed in ``COROLLARIES``.
    Optional keys: ``gamma`` (default ``q/2``), ``C`` for DC variants
    (default ``2 A delta_f_star``), ``delta_f_star``.
    """
    name = spec.get("name")
    if name not in COROLLARIES:
        raise KeyError(f"unknown corollary {name!r}; choose from {sorted(COROLLARIES)}")
    fn, needed = COROLLARIES[name]
    missing = [k for k in needed if k not in spec]
    if missing:
        raise KeyError(f"{name} needs {missing}")
    return Bound(float(fn(spec)), bool(spec.get("empirical", False)), f"closed form {name}")
