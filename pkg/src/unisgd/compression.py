"""Unbiased compression operators with a known variance factor omega.

An omega-compressor C satisfies E[C(x)] = x and E||C(x) - x||^2 <= omega ||x||^2.
Three kinds are provided: the identity, random-k sparsification and
norm-scaled random dithering.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np


@dataclass(frozen=True)
class Compressor:
    kind: str          # "identity" | "randk" | "dither"
    d: int
    k: int = 0         # randk support size
    s: int = 0         # dithering levels

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.kind == "randk" and not 1 <= self.k <= self.d:
            raise ValueError(f"randk needs 1 <= k <= d, got k={self.k}, d={self.d}")
        if self.kind == "dither" and self.s < 1:
            raise ValueError("dithering needs s >= 1")
        if self.kind not in ("identity", "randk", "dither"):
            raise ValueError(f"unknown compressor kind {self.kind!r}")

    @property
    def omega(self) -> float:
        return omega_of(self)

    @property
    def floats_sent(self) -> int:
        """Idealized payload per message: k index/value pairs for randk, d otherwise."""
        return self.k if self.kind == "randk" else self.d

    @property
    def spec(self) -> str:
        if self.kind == "randk":
            return f"randk:{self.k}"
        if self.kind == "dither":
            return f"dither:{self.s}"
        return "identity"

    def compress(self, x, rng) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"expected shape ({self.d},), got {x.shape}")
        return self.compress_many(x[None, :], rng)[0]

    def compress_many(self, X, rng) -> np.ndarray:
        """Independent draws, one per row of ``X``."""
        X = np.asarray(X, dtype=float)
        S, d = X.shape
        if self.kind == "identity":
            return X.copy()
        if self.kind == "randk":
            if self.k == d:
                return X.copy()
            keep = np.argpartition(rng.random((S, d)), self.k - 1, axis=1)[:, : self.k]
            out = np.zeros_like(X)
            rows = np.arange(S)[:, None]
            out[rows, keep] = X[rows, keep] * (d / self.k)
            return out
        # dithering
        norms = np.linalg.norm(X, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        level = self.s * np.abs(X) / safe[:, None]
        low = np.floor(level)
        q = low + (rng.random(X.shape) < (level - low))
        out = np.sign(X) * q * (safe[:, None] / self.s)
        out[norms == 0] = 0.0
        return out


def parse_compressor(spec: str, d: int) -> Compressor:
    """``"identity"``, ``"randk:<k>"`` or ``"dither:<s>"``."""
    kind, _, arg = spec.strip().partition(":")
    if kind == "identity" and not arg:
        return Compressor("identity", d)
    if kind == "randk" and arg:
        return Compressor("randk", d, k=int(arg))
    if kind == "dither" and arg:
        return Compressor("dither", d, s=int(arg))
    raise ValueError(f"bad compressor spec {spec!r}")


def omega_of(op: Compressor) -> float:
    if op.kind == "identity":
        return 0.0
    if op.kind == "randk":
        return op.d / op.k - 1.0
    # standard conservative certificate for norm-scaled dithering
    return float(min(op.d / op.s ** 2, np.sqrt(op.d) / op.s))


def compress(op: Compressor, x, rng) -> np.ndarray:
    return op.compress(x, rng)


def randk_exact_moments(x, k: int):
    """Exact ``E[C(x)]`` and ``E||C(x) - x||^2`` for randk by enumerating all k-subsets."""
    x = np.asarray(x, dtype=float)
    d = x.size
    mean = np.zeros(d)
    var = 0.0
    subsets = list(combinations(range(d), k))
    for sub in subsets:
        c = np.zeros(d)
        idx = list(sub)
        c[idx] = x[idx] * d / k
        mean += c
        var += float(np.sum((c - x) ** 2))
    return mean / len(subsets), var / len(subsets)


@dataclass
class CompressorReport:
    max_bias_z: float
    max_variance_ratio: float
    omega: float
    threshold: float
    variance_ratios: np.ndarray

    @property
    def violation(self) -> bool:
        return self.max_variance_ratio > self.threshold

    @property
    def ok(self) -> bool:
        return not self.violation


def verify_compressor(op: Compressor, trial_vectors, samples: int, rng,
                      chunk: int = 20000) -> CompressorReport:
    """Monte Carlo check of unbiasedness and the variance bound.

    For each trial vector the per-coordinate z-score of the sample mean against
    the vector and the ratio ``mean ||C(x) - x||^2 / ||x||^2`` are computed.
    A violation is flagged when a ratio exceeds ``omega * (1 + 5/sqrt(samples))``.
    """
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    omega = omega_of(op)
    zmax = 0.0
    ratios = []
    for x in np.atleast_2d(np.asarray(trial_vectors, dtype=float)):
        s1 = np.zeros(op.d)
        s2 = np.zeros(op.d)
        err = 0.0
        done = 0
        while done < samples:
            t = min(chunk, samples - done)
            C = op.compress_many(np.broadcast_to(x, (t, op.d)), rng)
            s1 += C.sum(0)
            s2 += (C * C).sum(0)
            err += float(np.sum((C - x) ** 2))
            done += t
        mean = s1 / samples
        var = np.maximum(s2 / samples - mean ** 2, 0.0) * samples / (samples - 1)
        se = np.sqrt(var / samples)
        diff = np.abs(mean - x)
        tol = 1e-12 * (1.0 + np.abs(x))
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > tol, np.inf, 0.0))
        zmax = max(zmax, float(z.max()))
        nx = float(x @ x)
        ratios.append(err / samples / nx if nx > 0 else 0.0)
    ratios = np.array(ratios)
    return CompressorReport(
        max_bias_z=zmax,
        max_variance_ratio=float(ratios.max()) if ratios.size else 0.0,
        omega=omega,
        threshold=omega * (1.0 + 5.0 / np.sqrt(samples)),
        variance_ratios=ratios,
    )
