"""Synthetic-signal studies: distortion across pre-mixers, and constraint
counts through each reduction stage.

Both write plain CSV. Everything is deterministic given the config.
"""
from __future__ import annotations

import csv
import enum
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .engine import EngineConfig, frame_stream, process
from .reduction import ConstraintSet, cull_occluded, implied_bounds, lp_supports, tighten_bounds

AM_CARRIERS = (101.0, 443.0, 1627.0)
AM_MESSAGES = (2.0, 5.0, 11.0)
TONES = (101.0, 443.0, 1627.0, 4153.0, 8747.0, 15733.0)

# reference means and standard deviations of the QP objective per pre-mixer
PREMIX_REFERENCE = {
    "single": (0.23, 0.23),
    "multiband": (0.20, 0.21),
    "multicontent": (0.20, 0.21),
    "concatenation": (0.19, 0.20),
    "full": (0.16, 0.18),
}

# reference (mean, std) per tone count: implied, tightened, non-occluded, convex
REDUCTION_REFERENCE = {
    2: ((384.7, 52.0), (374.1, 50.5), (10.0, 4.3), (7.3, 2.6)),
    3: ((805.8, 103.7), (799.0, 102.8), (41.8, 14.7), (25.9, 7.5)),
    4: ((1167.0, 149.4), (1164.0, 149.0), (99.1, 22.9), (58.5, 14.0)),
    5: ((1442.0, 184.5), (1441.0, 184.3), (226.3, 64.0), (130.1, 35.7)),
    6: ((1636.0, 209.3), (1636.0, 209.2), (381.5, 78.6), (202.8, 41.8)),
}
REFERENCE_RATIO_RANGES = {"presolved": (8.07, 51.24), "nonoccluded": (1.37, 1.88)}


class SignalKind(str, enum.Enum):
    AM_TENSOR = "am"
    SINE_BANK = "sines"


@dataclass(frozen=True)
class SignalSpec:
    kind: SignalKind = SignalKind.AM_TENSOR
    carriers: tuple = AM_CARRIERS
    messages: tuple = AM_MESSAGES
    phases: tuple | None = None  # (NB, NC) nested; default staggered offsets
    tones: tuple = TONES
    duration: float = 1.0
    sample_rate: float = 48000.0
    amplitude: float = 1.0

    def __post_init__(self):
        nyq = self.sample_rate / 2
        freqs = self.carriers + self.messages if self.kind is SignalKind.AM_TENSOR else self.tones
        if any(not (0 < f < nyq) for f in freqs):
            raise ValueError(f"frequencies must lie in (0, {nyq})")
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def time(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate


def default_phases(n_bands: int, n_contents: int) -> np.ndarray:
    """``phi[j, k] = (k * NB + j + 1) / (NB * NC)`` for zero-based j, k."""
    j = np.arange(n_bands)[:, None]
    k = np.arange(n_contents)[None, :]
    return (k * n_bands + j + 1) / (n_bands * n_contents)


def gen_am_tensor(spec: SignalSpec = SignalSpec()) -> np.ndarray:
    """``S[t, j, k] = A sin(2 pi a_j t) sin(2 pi (b_k t + phi_jk))``."""
    if spec.kind is not SignalKind.AM_TENSOR:
        raise ValueError("spec is not an AM tensor")
    t = spec.time()[:, None, None]
    a = np.asarray(spec.carriers)[None, :, None]
    b = np.asarray(spec.messages)[None, None, :]
    phi = default_phases(a.size, b.size) if spec.phases is None else np.asarray(spec.phases, float)
    return spec.amplitude * np.sin(2 * np.pi * a * t) * np.sin(2 * np.pi * (b * t + phi[None]))


def gen_tone_bank(spec: SignalSpec = SignalSpec(SignalKind.SINE_BANK), n: int | None = None) -> np.ndarray:
    """First n tones as a (T, n) array, one lane per tone."""
    if spec.kind is not SignalKind.SINE_BANK:
        raise ValueError("spec is not a sine bank")
    n = len(spec.tones) if n is None else n
    if not 2 <= n <= len(spec.tones):
        raise ValueError(f"need 2 <= n <= {len(spec.tones)}")
    f = np.asarray(spec.tones[:n])[None, :]
    return spec.amplitude * np.sin(2 * np.pi * f * spec.time()[:, None])


@dataclass(frozen=True)
class ExperimentConfig:
    frame: int = 256
    lookahead: int = 768
    duration: float = 1.0
    sample_rate: float = 48000.0
    threshold: float = 1.0
    upper: float = 1.0
    alpha: float = 0.5
    premixers: tuple = ("single", "multiband", "multicontent", "concatenation", "full")
    tone_counts: tuple = (2, 3, 4, 5, 6)
    culling: bool = True
    check_presolve_equivalence: bool = True


@dataclass
class PremixResult:
    f: dict  # premixer -> per-frame objective
    g: dict  # premixer -> per-frame distortion product
    frames: np.ndarray
    peaks: dict  # premixer -> max |y|
    clip_events: dict
    degraded: dict
    wall_time: dict

    def summary(self) -> dict:
        return {k: (float(np.mean(v)), float(np.std(v))) for k, v in self.f.items()}


def run_premixer_experiment(cfg: ExperimentConfig = ExperimentConfig(), out_dir=None,
                            signal: np.ndarray | None = None) -> PremixResult:
    """Limit the summed AM tensor with each pre-mixer; per-frame f and g."""
    if signal is None:
        signal = gen_am_tensor(SignalSpec(duration=cfg.duration, sample_rate=cfg.sample_rate))
    nb, nc = signal.shape[1:3]
    res = PremixResult({}, {}, None, {}, {}, {}, {})
    for kind in cfg.premixers:
        ecfg = EngineConfig(cfg.frame, cfg.lookahead, (cfg.threshold,),
                            upper_bounds=(cfg.upper,) * (nb * nc), premixer=kind,
                            alpha=cfg.alpha if kind == "concatenation" else None,
                            culling=cfg.culling, n_bands=nb, n_contents=nc,
                            sample_rate=cfg.sample_rate)
        out = process(signal, ecfg)
        recs = [r for r in out.records if r.index >= 0]
        res.frames = np.array([r.index for r in recs])
        res.f[kind] = np.array([r.objective for r in recs])
        res.g[kind] = np.array([r.distortion for r in recs])
        res.peaks[kind] = float(np.abs(out.y).max())
        res.clip_events[kind] = out.clip_events
        res.degraded[kind] = out.degraded_frames
        res.wall_time[kind] = out.wall_time
    if out_dir is not None:
        write_premix_csv(res, out_dir)
    return res


def write_premix_csv(res: PremixResult, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = out_dir / "premix_frames.csv"
    kinds = list(res.f)
    with open(series, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"f_{k}" for k in kinds] + [f"g_{k}" for k in kinds])
        for i, k in enumerate(res.frames):
            w.writerow([int(k)] + [repr(float(res.f[p][i])) for p in kinds]
                       + [repr(float(res.g[p][i])) for p in kinds])
    summary = out_dir / "premix_summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["premixer", "f_mean", "f_std", "ref_mean", "ref_std", "peak", "clip_events",
                    "degraded_frames", "wall_time"])
        for k, (m, s) in res.summary().items():
            ref = PREMIX_REFERENCE.get(k, ("", ""))
            w.writerow([k, repr(m), repr(s), ref[0], ref[1], repr(res.peaks[k]), res.clip_events[k],
                        res.degraded[k], f"{res.wall_time[k]:.3f}"])
    return series, summary


@dataclass
class FrameCounts:
    frame_index: int
    n_original: int
    n_implied: int
    n_presolved: int
    n_nonoccluded: int
    n_convex_support: int
    presolve_equivalent: bool | None
    wall_times: dict = field(default_factory=dict)

    def chain_ok(self) -> bool:
        return (self.n_convex_support <= self.n_nonoccluded <= self.n_presolved
                <= self.n_implied <= self.n_original)


def count_frame(S: np.ndarray, tau: float, u: np.ndarray, index: int = 0,
                check_equivalence: bool = False) -> FrameCounts:
    """Row counts of one single-mixer frame through each reduction stage."""
    times = {}
    t0 = time.perf_counter()
    cs = implied_bounds(ConstraintSet.from_mixture(S, tau), u)
    n_implied = cs.count()
    cs = tighten_bounds(cs, u)
    times["presolve"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    culled = cull_occluded(cs, cs.upper)
    times["cull"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    n_convex = lp_supports(culled, cs.upper).size
    times["convex"] = time.perf_counter() - t0
    same = None
    if check_equivalence:
        # culling the raw rows against the same box must keep the same rows
        raw = cull_occluded(ConstraintSet.from_mixture(S, tau), cs.upper)
        same = bool(np.array_equal(raw.active(), culled.active()))
    return FrameCounts(index, 2 * S.shape[0], n_implied, cs.count(), culled.count(), n_convex,
                       same, times)


@dataclass
class ReductionResult:
    counts: dict  # N -> list[FrameCounts]

    def stats(self, n: int) -> dict:
        fc = self.counts[n]
        out = {}
        for name, attr in (("implied", "n_implied"), ("tightened", "n_presolved"),
                           ("nonoccluded", "n_nonoccluded"), ("convex", "n_convex_support")):
            v = np.array([getattr(c, attr) for c in fc], dtype=float)
            out[name] = (float(v.mean()), float(v.std()))
        return out

    def ratio_ranges(self) -> dict:
        pre, occ = [], []
        for n in self.counts:
            s = self.stats(n)
            pre.append(s["tightened"][0] / s["convex"][0])
            occ.append(s["nonoccluded"][0] / s["convex"][0])
        return {"presolved": (min(pre), max(pre)), "nonoccluded": (min(occ), max(occ))}

    def chain_ok(self) -> bool:
        return all(c.chain_ok() for fc in self.counts.values() for c in fc)


def run_reduction_experiment(cfg: ExperimentConfig = ExperimentConfig(), out_dir=None,
                             stride: int = 1) -> ReductionResult:
    """Constraint counts per frame for tone banks of each size."""
    spec = SignalSpec(SignalKind.SINE_BANK, duration=cfg.duration, sample_rate=cfg.sample_rate)
    res = ReductionResult({})
    for n in cfg.tone_counts:
        Y = gen_tone_bank(spec, n)
        u = np.full(n, cfg.upper)
        fc = []
        for ft in frame_stream(Y, cfg.frame, cfg.lookahead):
            if ft.index % stride:
                continue
            fc.append(count_frame(ft.mixture_rows(0), cfg.threshold, u, ft.index,
                                  cfg.check_presolve_equivalence))
        res.counts[n] = fc
    if out_dir is not None:
        write_reduction_csv(res, out_dir)
    return res


def write_reduction_csv(res: ReductionResult, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = out_dir / "reduction_frames.csv"
    with open(frames, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_tones", "frame_index", "n_original", "n_implied", "n_presolved",
                    "n_nonoccluded", "n_convex_support", "presolve_equivalent",
                    "t_presolve", "t_cull", "t_convex"])
        for n, fc in res.counts.items():
            for c in fc:
                w.writerow([n, c.frame_index, c.n_original, c.n_implied, c.n_presolved,
                            c.n_nonoccluded, c.n_convex_support,
                            "" if c.presolve_equivalent is None else int(c.presolve_equivalent),
                            f"{c.wall_times['presolve']:.6f}", f"{c.wall_times['cull']:.6f}",
                            f"{c.wall_times['convex']:.6f}"])
    summary = out_dir / "reduction_summary.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_tones", "stage", "mean", "std", "ref_mean", "ref_std"])
        for n in res.counts:
            st = res.stats(n)
            ref = REDUCTION_REFERENCE.get(n)
            for i, stage in enumerate(("implied", "tightened", "nonoccluded", "convex")):
                r = ref[i] if ref else ("", "")
                w.writerow([n, stage, f"{st[stage][0]:.3f}", f"{st[stage][1]:.3f}", r[0], r[1]])
        rr = res.ratio_ranges()
        for k, (lo, hi) in rr.items():
            ref = REFERENCE_RATIO_RANGES[k]
            w.writerow(["ratio", k, f"{lo:.3f}", f"{hi:.3f}", ref[0], ref[1]])
    return frames, summary
