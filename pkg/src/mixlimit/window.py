"""Smooth causal COLA windows with attack/hold/release dynamics.

Window samples are indexed 1..M in the docstrings (0..M-1 in arrays), with
implicit zeros at 0 and M+1. With first differences ``d(t) = w(t+1) - w(t)``
the dynamics are::

    attack   d(t) >= 0   1 <= t <= T_A
    hold     d(t) == 0   T_A < t < T_R
    release  d(t) <= 0   T_R <= t < M

so the flat top spans samples T_A+1..T_R and onsets with T_A = M - T_R give an
exactly mirror-symmetric problem.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .qp import QpProblem, SolverConfig, Status, solve

VELOCITY = {0: -1.0, 1: 1.0}
ACCELERATION = {-1: 1.0, 0: -2.0, 1: 1.0}


def convolve_kernels(k1: Mapping[int, float], k2: Mapping[int, float]) -> dict[int, float]:
    out: dict[int, float] = {}
    for t1, v1 in k1.items():
        for t2, v2 in k2.items():
            out[t1 + t2] = out.get(t1 + t2, 0.0) + v1 * v2
    return out


SMOOTHNESS = convolve_kernels(ACCELERATION, ACCELERATION)


def comb_kernel(F: int) -> Callable[[int], float]:
    return lambda t: 1.0 if t % F == 0 else 0.0


class WindowInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    M: int
    F: int
    T_A: int
    T_R: int

    def __post_init__(self):
        M, F, ta, tr = self.M, self.F, self.T_A, self.T_R
        if not (1 <= F <= M):
            raise ValueError(f"need 1 <= F <= M, got F={F}, M={M}")
        if not (1 <= ta <= tr <= M):
            raise ValueError(f"need 1 <= T_A <= T_R <= M, got T_A={ta}, T_R={tr}, M={M}")

    @property
    def hold_bound(self) -> int:
        return (self.M // self.F) * self.F

    def check_feasible(self):
        if self.T_R - self.T_A > self.hold_bound:
            raise WindowInfeasible(
                f"hold size T_R - T_A = {self.T_R - self.T_A} exceeds "
                f"floor(M/F)*F = {self.hold_bound}")


@dataclass(frozen=True)
class ColaWindow:
    spec: WindowSpec
    samples: np.ndarray
    cola_residual: float
    smoothness: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)


def toeplitz_op(kernel, a: int, b: int, M: int) -> np.ndarray:
    """Truncated Toeplitz operator, shape (b - a, M).

    ``T[i, j] = kernel(j - i - a)`` for ``j - i <= b`` (1-based i, j), else 0.
    ``kernel`` is a mapping offset -> value or a callable.
    """
    rows = b - a
    if rows <= 0:
        return np.zeros((0, M))
    i = np.arange(1, rows + 1)[:, None]
    j = np.arange(1, M + 1)[None, :]
    lag = j - i - a
    if callable(kernel):
        vals = np.vectorize(kernel, otypes=[float])(lag)
    else:
        vals = np.zeros(lag.shape)
        for t, v in kernel.items():
            vals[lag == t] = v
    vals[(j - i) > b] = 0.0
    return vals


def smoothness_matrix(M: int) -> np.ndarray:
    """Pentadiagonal (1, -4, 6, -4, 1) operator; w' S w is the squared acceleration."""
    return toeplitz_op(SMOOTHNESS, 0, M, M)


def psd_check_stencil(M: int) -> float:
    """Smallest eigenvalue of the decomposition T_a @ T_a + e1 e1' + eM eM'."""
    if M < 3:
        raise ValueError("M must be >= 3")
    Ta = toeplitz_op(ACCELERATION, 0, M, M)
    S = Ta @ Ta
    S[0, 0] += 1.0
    S[-1, -1] += 1.0
    return float(np.linalg.eigvalsh(S).min())


def cola_matrix(M: int, F: int) -> np.ndarray:
    """Row t sums w(t), w(t+F), w(t+2F), ... (every shift inside the support)."""
    C = np.zeros((F, M))
    for t in range(F):
        C[t, t::F] = 1.0
    return C


def _difference_rows(M: int, t_first: int, t_last: int) -> np.ndarray:
    """Rows of d(t) = w(t+1) - w(t) for 1-based t in [t_first, t_last], t < M."""
    t_last = min(t_last, M - 1)
    if t_last < t_first:
        return np.zeros((0, M))
    return toeplitz_op(VELOCITY, t_first - 1, t_last, M)


def _regions(spec: WindowSpec):
    M, ta, tr = spec.M, spec.T_A, spec.T_R
    return {
        "attack": (1, ta),
        "hold": (ta + 1, tr - 1),
        "release": (max(tr, ta + 1), M - 1),
    }


def smoothness(samples) -> float:
    w = np.asarray(samples, dtype=float)
    return float(w @ smoothness_matrix(w.size) @ w)


def _smoothness_fast(w: np.ndarray) -> float:
    padded = np.concatenate([[0.0], w, [0.0]])
    acc = padded[2:] - 2 * padded[1:-1] + padded[:-2]
    return float(acc @ acc + w[0] ** 2 + w[-1] ** 2)


def trapezoid_window(spec: WindowSpec) -> np.ndarray | None:
    """Linear-ramp baseline with the same onsets, or None when it is not COLA."""
    M, F = spec.M, spec.F
    t = np.arange(1, M + 1, dtype=float)
    top0, top1 = spec.T_A + 1, spec.T_R
    up = t / top0
    down = (M + 1 - t) / (M + 1 - top1)
    w = np.minimum(np.minimum(up, down), 1.0)
    sums = cola_matrix(M, F) @ w
    if sums.min() <= 0 or np.ptp(sums) > 1e-9 * sums.max():
        return None
    return w / sums[0]


def design_window(spec: WindowSpec, cfg: SolverConfig | None = None) -> ColaWindow:
    """Minimum squared-acceleration COLA window satisfying the onset dynamics."""
    spec.check_feasible()
    M, F = spec.M, spec.F
    reg = _regions(spec)
    attack = _difference_rows(M, *reg["attack"])
    hold = _difference_rows(M, *reg["hold"])
    release = _difference_rows(M, *reg["release"])
    A_eq = np.vstack([cola_matrix(M, F), hold])
    b_eq = np.concatenate([np.ones(F), np.zeros(hold.shape[0])])
    A_in = np.vstack([attack, release])
    lo = np.concatenate([np.zeros(attack.shape[0]), np.full(release.shape[0], -np.inf)])
    hi = np.concatenate([np.full(attack.shape[0], np.inf), np.zeros(release.shape[0])])
    prob = QpProblem(2.0 * smoothness_matrix(M), np.zeros(M), 0.0, A_ineq=A_in,
                     lo_ineq=lo, hi_ineq=hi, A_eq=A_eq, b_eq=b_eq,
                     lower=np.zeros(M), upper=np.ones(M))
    sol = solve(prob, cfg, x0=trapezoid_window(spec))
    if sol.status is Status.INFEASIBLE:
        raise WindowInfeasible(f"no COLA window satisfies {spec}")
    if sol.status is not Status.OPTIMAL:
        raise RuntimeError(f"window QP did not converge: {sol.diagnostics()}")
    w = np.clip(sol.x, 0.0, 1.0)
    return ColaWindow(spec, w, cola_residual(w, F), _smoothness_fast(w))


def cola_residual(samples, F: int) -> float:
    w = np.asarray(samples, dtype=float)
    return float(np.abs(cola_matrix(w.size, F) @ w - 1.0).max())


@dataclass
class ColaReport:
    cola_residual: float
    attack_violation: float
    hold_violation: float
    release_violation: float
    max_sample: float
    min_sample: float

    @property
    def monotonicity_violation(self) -> float:
        return max(self.attack_violation, self.hold_violation, self.release_violation)

    def ok(self, cola_tol: float = 1e-6, mono_tol: float = 1e-9) -> bool:
        return (self.cola_residual <= cola_tol and self.monotonicity_violation <= mono_tol
                and self.min_sample >= -mono_tol and self.max_sample <= 1 + mono_tol)


def validate_cola(w: ColaWindow) -> ColaReport:
    x = np.asarray(w.samples, dtype=float)
    spec = w.spec
    d = np.diff(x)  # d[t-1] = w(t+1) - w(t)

    def seg(lo, hi):
        hi = min(hi, spec.M - 1)
        return d[lo - 1:hi] if hi >= lo else np.zeros(0)

    reg = _regions(spec)
    return ColaReport(
        cola_residual=cola_residual(x, spec.F),
        attack_violation=float(np.max(-seg(*reg["attack"]), initial=0.0)),
        hold_violation=float(np.max(np.abs(seg(*reg["hold"])), initial=0.0)),
        release_violation=float(np.max(seg(*reg["release"]), initial=0.0)),
        max_sample=float(x.max()),
        min_sample=float(x.min()),
    )


def rectangle(M: int, F: int) -> ColaWindow:
    spec = WindowSpec(M, F, 1, M)
    w = np.ones(M)
    return ColaWindow(spec, w, cola_residual(w, F), _smoothness_fast(w))


def save_window(w: ColaWindow, path) -> Path:
    """Raw little-endian float64 samples plus ``<path>.json`` sidecar."""
    path = Path(path)
    np.asarray(w.samples, dtype="<f8").tofile(path)
    meta = {"M": w.spec.M, "F": w.spec.F, "T_A": w.spec.T_A, "T_R": w.spec.T_R,
            "cola_residual": w.cola_residual}
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))
    return path


def load_window(path) -> ColaWindow:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    x = np.fromfile(path, dtype="<f8")
    spec = WindowSpec(meta["M"], meta["F"], meta["T_A"], meta["T_R"])
    if x.size != spec.M:
        raise ValueError(f"{path}: expected {spec.M} samples, found {x.size}")
    return ColaWindow(spec, x, cola_residual(x, spec.F), _smoothness_fast(x))
