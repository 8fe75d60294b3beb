"""Streaming mixer-limiter.

Input streams are tensors ``Y[t, j, k, m]`` (band j, content k, mixer m).
Gains ``x[j + k*n_bands]`` are shared across mixers. Each frame of ``F + L``
samples becomes a QP; solutions are overlap-added through a COLA window into
per-channel envelopes ``v[t, n]`` and the output is ``y_m = sum Y[..., m] v``.

Frame k covers samples ``[k*F, k*F + F + L)``. Warm-up frames with negative k
make the envelope weights sum to one from sample 0 on. Output sample t is
final once every frame containing t is solved, i.e. after input sample
``t + L`` arrived (or at flush).
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import kernels
from .objective import AttenuationRates, QuadraticObjective, build_objective, distortion_g
from .qp import QpProblem, QpSolution, SolverConfig, Status, solve
from .reduction import (ConstraintSet, PreMixer, PremixKind, build_premixer, cull_occluded,
                        implied_bounds, tighten_bounds)
from .window import ColaWindow, WindowSpec, design_window, rectangle, validate_cola

log = logging.getLogger(__name__)


def dbfs_to_linear(db: float) -> float:
    return float(10.0 ** (db / 20.0))


def _parse_threshold(v) -> float:
    """Linear amplitude, or a string such as ``"-1 dBFS"``."""
    if isinstance(v, str):
        s = v.strip()
        if s.lower().endswith("dbfs"):
            return dbfs_to_linear(float(s[:-4]))
        return float(s)
    return float(v)


@dataclass(frozen=True)
class EngineConfig:
    frame_size: int
    lookahead: int
    thresholds: tuple
    upper_bounds: tuple | None = None  # one per gain variable, default all 1
    rates: tuple | None = None  # default uniform
    attack: int | None = None  # window onsets; default symmetric with hold F
    release: int | None = None
    premixer: str = "full"
    alpha: float | None = None
    culling: bool = True
    n_bands: int = 1
    n_contents: int = 1
    sample_rate: float = 48000.0
    lane_map: tuple | None = None  # input channel of lane j + k*NB + m*NB*NC

    def __post_init__(self):
        if self.frame_size < 1 or self.lookahead < 0:
            raise ValueError("need frame_size >= 1 and lookahead >= 0")
        taus = tuple(_parse_threshold(t) for t in np.atleast_1d(self.thresholds).tolist())
        if not taus or min(taus) < 0:
            raise ValueError("thresholds must be non-negative")
        object.__setattr__(self, "thresholds", taus)
        n = self.n_vars
        u = (1.0,) * n if self.upper_bounds is None else tuple(float(x) for x in self.upper_bounds)
        if len(u) != n or min(u) < 0 or max(u) > 1:
            raise ValueError(f"upper_bounds must be {n} values in [0, 1]")
        object.__setattr__(self, "upper_bounds", u)
        if self.rates is not None:
            r = tuple(float(x) for x in self.rates)
            if len(r) != n:
                raise ValueError(f"need {n} rates, got {len(r)}")
            object.__setattr__(self, "rates", r)
        PremixKind(self.premixer)
        if self.lane_map is not None:
            lm = tuple(int(i) for i in self.lane_map)
            if len(lm) != self.n_lanes:
                raise ValueError(f"lane_map needs {self.n_lanes} entries")
            object.__setattr__(self, "lane_map", lm)
        self.window_spec.check_feasible()

    @property
    def window_length(self) -> int:
        return self.frame_size + self.lookahead

    @property
    def n_mixers(self) -> int:
        return len(self.thresholds)

    @property
    def n_vars(self) -> int:
        return self.n_bands * self.n_contents

    @property
    def n_lanes(self) -> int:
        return self.n_vars * self.n_mixers

    @property
    def window_spec(self) -> WindowSpec:
        M, F = self.window_length, self.frame_size
        t_a = self.attack if self.attack is not None else max((M - F) // 2, 1)
        t_r = self.release if self.release is not None else M - t_a + (1 if M == F else 0)
        return WindowSpec(M, F, t_a, min(t_r, M))

    def objective(self) -> QuadraticObjective:
        w = AttenuationRates.uniform(self.n_vars) if self.rates is None else self.rates
        return build_objective(w)

    def make_premixer(self) -> PreMixer:
        return build_premixer(self.premixer, self.n_bands, self.n_contents, self.alpha)

    @classmethod
    def from_dict(cls, d: dict) -> "EngineConfig":
        d = dict(d)
        win = d.pop("window", None) or {}
        pm = d.pop("premixer", None) or {}
        if isinstance(pm, str):
            pm = {"kind": pm}
        layout = d.pop("layout", None) or {}
        thresholds = d.pop("thresholds")
        if "thresholds_dbfs" in d:
            raise ValueError("give either thresholds or thresholds_dbfs")
        n_bands = int(layout.get("bands", d.pop("n_bands", 1)))
        n_contents = layout.get("contents", d.pop("n_contents", None))
        if n_contents is None:
            n = len(d.get("upper_bounds") or d.get("rates") or [None])
            n_contents = max(n // n_bands, 1)
        return cls(frame_size=int(d.pop("frame_size")), lookahead=int(d.pop("lookahead", 0)),
                   thresholds=tuple(thresholds), upper_bounds=d.pop("upper_bounds", None),
                   rates=d.pop("rates", None), attack=win.get("attack"), release=win.get("release"),
                   premixer=pm.get("kind", "full"), alpha=pm.get("alpha"),
                   culling=bool(d.pop("culling", True)), n_bands=n_bands,
                   n_contents=int(n_contents), sample_rate=float(d.pop("sample_rate", 48000.0)),
                   lane_map=d.pop("lane_map", None))

    @classmethod
    def from_json(cls, path) -> "EngineConfig":
        d = json.loads(Path(path).read_text())
        if "thresholds_dbfs" in d:
            d["thresholds"] = [dbfs_to_linear(float(v)) for v in d.pop("thresholds_dbfs")]
        return cls.from_dict(d)


@lru_cache(maxsize=16)
def _cached_window(spec: WindowSpec) -> ColaWindow:
    if spec.M == spec.F:
        return rectangle(spec.M, spec.F)
    w = design_window(spec)
    rep = validate_cola(w)
    if not rep.ok():
        raise RuntimeError(f"window design failed COLA check: {rep}")
    return w


def window_for(cfg: EngineConfig) -> ColaWindow:
    return _cached_window(cfg.window_spec)


@dataclass(frozen=True)
class FrameTensor:
    S: np.ndarray  # (F + L, n_bands, n_contents, n_mixers)
    index: int

    def mixture_rows(self, m: int) -> np.ndarray:
        """Rows of mixer m over variables stacked band-fastest."""
        S = self.S[..., m]
        return S.reshape(S.shape[0], -1, order="F")


def _as_tensor(stream) -> np.ndarray:
    """(T,) and (T, N) are one band with N contents; (T, NB, NC) is one mixer."""
    Y = np.asarray(stream, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim == 2:
        Y = Y[:, None, :, None]
    elif Y.ndim == 3:
        Y = Y[..., None]
    if Y.ndim != 4:
        raise ValueError("stream must be (T,), (T, N), (T, NB, NC) or (T, NB, NC, NM)")
    return Y


def _slice_padded(Y: np.ndarray, start: int, length: int) -> np.ndarray:
    out = np.zeros((length,) + Y.shape[1:])
    a, b = max(start, 0), min(start + length, Y.shape[0])
    if b > a:
        out[a - start:b - start] = Y[a:b]
    return out


def frame_stream(stream, F: int, L: int, warmup: bool = False):
    """Yield frames of ``F + L`` samples at hop F, zero padded past the end.

    Frame k starts at sample ``k*F``. With ``warmup`` the sequence starts at
    the negative index whose window still reaches sample 0.
    """
    Y = _as_tensor(stream)
    M = F + L
    T = Y.shape[0]
    k0 = -((M - 1) // F) if warmup else 0
    n_frames = -(-T // F)
    for k in range(k0, n_frames):
        yield FrameTensor(_slice_padded(Y, k * F, M), k)


@dataclass
class FrameQp:
    """A frame's reduced QP over pre-mixer variables y, with x = P y."""

    problem: QpProblem
    premixer: PreMixer
    constraints: list  # ConstraintSet per mixer, in y space
    counts: dict
    upper: np.ndarray  # tightened bounds on x

    def expand(self, y) -> np.ndarray:
        return self.premixer.expand(y)


def assemble_frame_qp(ft: FrameTensor, cfg: EngineConfig, obj: QuadraticObjective | None = None,
                      premixer: PreMixer | None = None, culling: bool | None = None) -> FrameQp:
    """Mixture limits of every mixer, presolved, pre-mixed, then culled."""
    obj = obj or cfg.objective()
    pm = premixer or cfg.make_premixer()
    culling = cfg.culling if culling is None else culling
    N = cfg.n_vars
    u = np.asarray(cfg.upper_bounds, dtype=float)
    n_rows = 2 * ft.S.shape[0]
    sets = [implied_bounds(ConstraintSet.from_mixture(ft.mixture_rows(m), tau, m), u)
            for m, tau in enumerate(cfg.thresholds)]
    n_implied = sum(cs.count() for cs in sets)
    for i, cs in enumerate(sets):
        sets[i] = cs = tighten_bounds(cs, u)
        u = np.minimum(u, cs.upper)
    # bounds tightened by a later mixer can retire rows of an earlier one
    sets = [implied_bounds(cs, u) for cs in sets]
    counts = {"original": n_rows * len(sets), "implied": n_implied,
              "tightened": sum(cs.count() for cs in sets)}
    ylo, yhi = pm.y_bounds(np.zeros(N), u)
    ysets = []
    for cs in sets:
        ycs = cs.transformed(pm.P, yhi)
        if culling:
            ycs = cull_occluded(ycs, yhi)
        ysets.append(ycs)
    counts["nonoccluded"] = sum(cs.count() for cs in ysets)
    rows = [cs.S[cs.active()] for cs in ysets]
    taus = [cs.tau[cs.active()] for cs in ysets]
    A = np.vstack(rows) if rows else np.zeros((0, pm.n_vars))
    hi = np.concatenate(taus) if taus else np.zeros(0)
    if pm.coupled:
        A = np.vstack([A, pm.P])
        hi = np.concatenate([hi, u])
    Qy = pm.P.T @ obj.Q @ pm.P
    prob = QpProblem(0.5 * (Qy + Qy.T), pm.P.T @ obj.c, obj.d, A_ineq=A,
                     lo_ineq=np.full(hi.size, -np.inf), hi_ineq=hi, lower=ylo, upper=yhi)
    counts["qp_rows"] = int(hi.size)
    return FrameQp(prob, pm, ysets, counts, u)


def feasible_scale(problem: QpProblem, y) -> float:
    """Largest s in [0, 1] with s*y satisfying the one-sided rows (0 is feasible)."""
    y = np.asarray(y, dtype=float)
    vals = problem.A_ineq @ y
    hi = problem.hi_ineq
    over = vals > hi
    if not np.any(over):
        return 1.0
    return float(max(0.0, np.min(hi[over] / vals[over])))


def warm_start(problem: QpProblem, y_prev) -> np.ndarray:
    """Previous solution clipped into the box and scaled back to feasibility."""
    y = np.clip(np.asarray(y_prev, dtype=float), problem.lower, problem.upper)
    s = feasible_scale(problem, y)
    # shave a hair so the start is strictly inside on the binding rows
    return y * (s * (1.0 - 1e-12) if s < 1.0 else 1.0)


@dataclass
class FrameRecord:
    index: int
    start: int
    status: str
    objective: float
    distortion: float
    counts: dict
    iterations: int
    wall_time: float
    degraded: bool
    x: np.ndarray = field(repr=False, default=None)
    y: np.ndarray = field(repr=False, default=None)  # pre-mixer variables
    diagnostics: dict | None = field(repr=False, default=None)

    def row(self) -> dict:
        r = {"frame": self.index, "start": self.start, "status": self.status,
             "f": self.objective, "g": self.distortion}
        for k in ("original", "implied", "tightened", "nonoccluded", "qp_rows"):
            r[f"n_{k}"] = self.counts.get(k, "")
        r.update(iterations=self.iterations, wall_time=self.wall_time, degraded=int(self.degraded))
        return r


def solve_frame(ft: FrameTensor, cfg: EngineConfig, obj: QuadraticObjective, pm: PreMixer,
                y_prev=None, solver: SolverConfig | None = None,
                culling: bool | None = None, keep_diagnostics: bool = False) -> FrameRecord:
    t0 = time.perf_counter()
    fq = assemble_frame_qp(ft, cfg, obj, pm, culling)
    p = fq.problem
    x0 = None if y_prev is None else warm_start(p, y_prev)
    sol: QpSolution = solve(p, solver, x0=x0)
    degraded = sol.status is not Status.OPTIMAL
    y = sol.x
    if degraded:
        base = y_prev if y_prev is not None else np.zeros(p.n)
        y = warm_start(p, base)
        log.warning("frame %d: solver returned %s; using scaled previous solution",
                    ft.index, sol.status.value)
    x = np.clip(pm.expand(y), 0.0, None)
    return FrameRecord(ft.index, 0, sol.status.value, obj(x), distortion_g(x, obj.rates),
                       fq.counts, sol.iterations, time.perf_counter() - t0, degraded, x, y,
                       sol.diagnostics() if keep_diagnostics else None)


def synthesize_envelopes(solutions, window, F: int, T: int, first_index: int = 0) -> np.ndarray:
    """``v[t, n] = sum_k W(t - kF) x_k[n]`` for t in [0, T).

    ``solutions[i]`` belongs to frame ``first_index + i``. ``window`` is one
    array shared by all channels or an (N, M) array with one row per channel.
    """
    X = np.atleast_2d(np.asarray(solutions, dtype=float))
    W = np.asarray(getattr(window, "samples", window), dtype=float)
    starts = (np.arange(X.shape[0]) + first_index) * F
    v = np.zeros((T, X.shape[1]))
    if W.ndim == 1:
        return kernels.overlap_add(v, 0, starts, X, W)
    for n in range(X.shape[1]):
        kernels.overlap_add(v[:, n:n + 1], 0, starts, X[:, n:n + 1], W[n])
    return v


def mix_output(stream, v, thresholds=None, guard=None):
    """``y[t, m] = sum_{j,k} Y[t, j, k, m] v[t, j + k*NB]``.

    ``guard`` marks samples whose frames degraded; those (and only those) are
    clipped to +-threshold. Returns ``(y, n_clipped)``.
    """
    Y = _as_tensor(stream)
    T, nb, nc, nm = Y.shape
    V = np.asarray(v, dtype=float).reshape(T, nc, nb).transpose(0, 2, 1)
    y = np.einsum("tjkm,tjk->tm", Y, V)
    n_clipped = 0
    if guard is not None and thresholds is not None and np.any(guard):
        tau = np.asarray(thresholds, dtype=float)
        g = np.asarray(guard, dtype=bool)
        over = g[:, None] & (np.abs(y) > tau[None, :])
        n_clipped = int(over.sum())
        y[g] = np.clip(y[g], -tau, tau)
    return y, n_clipped


class MixerLimiter:
    """Single-owner streaming processor: ``push`` blocks, then ``flush``."""

    def __init__(self, cfg: EngineConfig, window: ColaWindow | None = None,
                 solver: SolverConfig | None = None, keep_diagnostics: bool = False):
        self.cfg = cfg
        self.window = window or window_for(cfg)
        if self.window.samples.size != cfg.window_length:
            raise ValueError("window length must equal frame_size + lookahead")
        self.obj = cfg.objective()
        self.pm = cfg.make_premixer()
        self.solver = solver
        self.keep_diagnostics = keep_diagnostics
        F, M = cfg.frame_size, cfg.window_length
        self._next_k = -((M - 1) // F)
        self._t_in = 0
        self._emitted = 0
        self._buf = np.zeros((0, cfg.n_bands, cfg.n_contents, cfg.n_mixers))
        self._buf_t0 = 0
        self._env = np.zeros((0, cfg.n_vars))
        self._guard = np.zeros(0, dtype=bool)
        self._y_prev = None
        self.records: list[FrameRecord] = []
        self.clip_events = 0

    def _ensure_env(self, t_end: int):
        need = t_end - self._emitted
        if need > self._env.shape[0]:
            pad = need - self._env.shape[0]
            self._env = np.vstack([self._env, np.zeros((pad, self.cfg.n_vars))])
            self._guard = np.concatenate([self._guard, np.zeros(pad, dtype=bool)])

    def _solve_next(self):
        cfg = self.cfg
        F, M = cfg.frame_size, cfg.window_length
        k = self._next_k
        start = k * F
        frame = _slice_padded(self._buf, start - self._buf_t0, M)
        # samples past the received input are zero (only reached at flush)
        frame[max(self._t_in - start, 0):] = 0.0
        rec = solve_frame(FrameTensor(frame, k), cfg, self.obj, self.pm, self._y_prev,
                          self.solver, keep_diagnostics=self.keep_diagnostics)
        rec.start = start
        self._y_prev = rec.y
        self.records.append(rec)
        self._ensure_env(start + M)
        kernels.overlap_add(self._env, self._emitted, np.array([start]), rec.x[None, :],
                            self.window.samples)
        if rec.degraded:
            a = max(start - self._emitted, 0)
            self._guard[a:start + M - self._emitted] = True
        self._next_k += 1

    def _emit(self, t_end: int):
        n = t_end - self._emitted
        if n <= 0:
            return np.zeros((0, self.cfg.n_mixers)), np.zeros((0, self.cfg.n_vars))
        self._ensure_env(t_end)
        Y = self._buf[self._emitted - self._buf_t0:t_end - self._buf_t0]
        v = self._env[:n]
        y, clipped = mix_output(Y, v, self.cfg.thresholds, self._guard[:n])
        self.clip_events += clipped
        self._env = self._env[n:]
        self._guard = self._guard[n:]
        self._emitted = t_end
        keep_from = min(self._emitted, self._next_k * self.cfg.frame_size)
        if keep_from > self._buf_t0:
            self._buf = self._buf[keep_from - self._buf_t0:]
            self._buf_t0 = keep_from
        return y, v.copy()

    def _lanes(self, block) -> np.ndarray:
        cfg = self.cfg
        B = np.asarray(block, dtype=float)
        if B.ndim == 3:
            B = B[..., None]
        if B.ndim == 4:
            if B.shape[1:] != (cfg.n_bands, cfg.n_contents, cfg.n_mixers):
                raise ValueError(f"stream layout {B.shape[1:]} does not match config")
            return B
        if B.ndim == 1:
            B = B[:, None]
        if cfg.lane_map is not None:
            B = B[:, list(cfg.lane_map)]
        elif B.shape[1] != cfg.n_lanes:
            raise ValueError(f"expected {cfg.n_lanes} lanes, got {B.shape[1]}")
        return B.reshape(B.shape[0], cfg.n_mixers, cfg.n_contents, cfg.n_bands).transpose(0, 3, 2, 1)

    def push(self, block):
        """Feed samples; return ``(y, v)`` for every sample that became final."""
        B = self._lanes(block)
        self._buf = np.concatenate([self._buf, B])
        self._t_in += B.shape[0]
        F, M = self.cfg.frame_size, self.cfg.window_length
        while self._next_k * F + M <= self._t_in:
            self._solve_next()
        return self._emit(min(self._next_k * F, self._t_in))

    def flush(self):
        """Solve the zero-padded tail frames and emit everything left."""
        F = self.cfg.frame_size
        while self._next_k * F < self._t_in:
            self._solve_next()
        return self._emit(self._t_in)

    @property
    def latency(self) -> int:
        return self.cfg.lookahead


@dataclass
class ProcessResult:
    y: np.ndarray
    envelopes: np.ndarray
    records: list
    clip_events: int
    wall_time: float

    @property
    def degraded_frames(self) -> int:
        return sum(r.degraded for r in self.records)


def process(stream, cfg: EngineConfig, block_size: int | None = None, **kw) -> ProcessResult:
    """Run a whole stream through a fresh limiter (optionally in blocks)."""
    t0 = time.perf_counter()
    lim = MixerLimiter(cfg, **kw)
    Y = lim._lanes(stream)
    T = Y.shape[0]
    step = block_size or max(T, 1)
    ys, vs = [], []
    for a in range(0, T, step):
        y, v = lim.push(Y[a:a + step])
        ys.append(y)
        vs.append(v)
    y, v = lim.flush()
    ys.append(y)
    vs.append(v)
    return ProcessResult(np.vstack(ys), np.vstack(vs), lim.records, lim.clip_events,
                         time.perf_counter() - t0)


def write_stats(records, path):
    import csv

    rows = [r.row() for r in records]
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
