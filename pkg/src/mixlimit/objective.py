"""Quadratic distortion objective built from per-channel attenuation rates.

The distortion product ``g(x) = prod x_n ** w_n`` is expanded to second order
around unit gain, and the QP minimises ``f = 1 - h``::

    Q = diag(w) - w w'
    c = (sum(w) - 2) w
    d = 1/2 1'Q1 + sum(w)

``Q`` is positive semi-definite exactly when the rates sum to at most one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AttenuationRates:
    w: np.ndarray
    scale: float = 1.0  # factor applied by normalize(); 1.0 means untouched

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if w.size == 0 or np.any(~(w > 0)):
            raise ValueError("attenuation rates must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n: int) -> "AttenuationRates":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def normalized(cls, w) -> "AttenuationRates":
        """Scale down to sum one when the sum exceeds one; keep smaller sums."""
        w = np.asarray(w, dtype=float).reshape(-1)
        total = float(w.sum())
        if total > 1.0:
            log.info("normalizing attenuation rates: sum %.6g -> 1", total)
            return cls(w / total, scale=1.0 / total)
        return cls(w)

    def __len__(self):
        return self.w.size


@dataclass(frozen=True)
class QuadraticObjective:
    Q: np.ndarray
    c: np.ndarray
    d: float
    rates: AttenuationRates

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.d)

    def gradient(self, x) -> np.ndarray:
        return self.Q @ np.asarray(x, dtype=float) + self.c


def _rates(w) -> np.ndarray:
    return w.w if isinstance(w, AttenuationRates) else np.asarray(w, dtype=float).reshape(-1)


def distortion_g(x, w) -> float:
    """Product of gains raised to their rates; 0 if any gain is 0."""
    x = np.asarray(x, dtype=float)
    w = _rates(w)
    if np.any(x < 0):
        raise ValueError("gains must be non-negative")
    if np.any(x == 0):
        return 0.0
    return float(np.exp(w @ np.log(x)))


def distortion_db(x, w) -> float:
    """Weighted sum of per-channel gain changes in dB (-inf for a muted channel)."""
    x = np.asarray(x, dtype=float)
    w = _rates(w)
    if np.any(x == 0):
        return -np.inf
    return float(w @ (20.0 * np.log10(x)))


def build_objective(w) -> QuadraticObjective:
    rates = w if isinstance(w, AttenuationRates) else AttenuationRates.normalized(w)
    if float(rates.w.sum()) > 1.0 + 1e-12:
        rates = AttenuationRates.normalized(rates.w)
    w = rates.w
    s = float(w.sum())
    Q = np.diag(w) - np.outer(w, w)
    c = (s - 2.0) * w
    d = 0.5 * float(Q.sum()) + s
    Q.setflags(write=False)
    c.setflags(write=False)
    return QuadraticObjective(Q, c, d, rates)


def critical_point(w) -> np.ndarray | None:
    """Stationary point ``(2 + q) 1`` with ``q = sum(w) / (1 - sum(w))``.

    Raw rates are used as given (no normalization). Returns None when the rates
    sum to one: Q is singular and the stationary point sits at infinity.
    """
    w = _rates(w)
    s = float(w.sum())
    if s == 1.0:
        return None
    q = s / (1.0 - s)
    return np.full(w.size, 2.0 + q)


def secular_function(lam, w) -> float:
    w = _rates(w)
    return float(1.0 - np.sum(w * w / (w - lam)))


def secular_eigs(w) -> np.ndarray:
    """Eigenvalues of diag(w) - w w' from the roots of the secular function.

    Repeated rates are deflated first: a value shared by m channels is an
    eigenvalue of multiplicity m - 1, and the group enters the secular sum once
    with weight m * w^2.
    """
    w = _rates(w)
    if np.any(~(w > 0)):
        raise ValueError("rates must be positive")
    vals, counts = np.unique(w, return_counts=True)
    weights = counts * vals * vals
    eigs = [v for v, m in zip(vals, counts) for _ in range(m - 1)]

    def S(lam):
        return 1.0 - np.sum(weights / (vals - lam))

    # every eigenvalue of D - ww' lies in [min(w) - |w|^2, max(w)]
    lower = vals[0] - float(w @ w) - 1.0
    edges = [lower, *vals]
    for a, b in zip(edges[:-1], edges[1:]):
        width = b - a
        lo, hi = a + 1e-15 * max(1.0, abs(a)), b - 1e-15 * max(1.0, abs(b))
        if a == lower:
            lo = a
        f_lo, f_hi = S(lo), S(hi)
        if f_lo == 0:
            eigs.append(lo)
        elif f_hi == 0 or f_lo * f_hi > 0:
            # root hugs the pole at b beyond float resolution
            eigs.append(hi if abs(f_hi) < abs(f_lo) else lo)
        else:
            eigs.append(brentq(S, lo, hi, xtol=1e-15 * max(1.0, width), rtol=4 * np.finfo(float).eps,
                               maxiter=500))
    return np.sort(np.asarray(eigs, dtype=float))


def curvature_matrix(w) -> np.ndarray:
    """``diag(w) - w w'`` for the rates exactly as given (no normalization)."""
    w = _rates(w)
    return np.diag(w) - np.outer(w, w)
