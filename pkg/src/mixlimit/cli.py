"""Command line: ``mixlimit design-window | process | bench {premix,reduce}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("mixlimit")


def _design_window(args) -> int:
    from .window import WindowInfeasible, WindowSpec, design_window, save_window, validate_cola

    try:
        spec = WindowSpec(args.length, args.hop, args.attack, args.release)
        spec.check_feasible()
    except (ValueError, WindowInfeasible) as e:
        print(f"design-window: {e}", file=sys.stderr)
        return 2
    w = design_window(spec)
    rep = validate_cola(w)
    path = save_window(w, args.out)
    print(json.dumps({"out": str(path), "cola_residual": w.cola_residual,
                      "monotonicity_violation": rep.monotonicity_violation,
                      "smoothness": w.smoothness}))
    return 0 if rep.ok() else 1


def _process(args) -> int:
    from .audio_io import read_wav, write_wav
    from .engine import EngineConfig, MixerLimiter, write_stats

    cfg = EngineConfig.from_json(args.config)
    x, rate = read_wav(args.input)
    if int(cfg.sample_rate) != rate:
        log.warning("config sample_rate %s differs from file rate %d", cfg.sample_rate, rate)
    need = cfg.n_lanes if cfg.lane_map is None else max(cfg.lane_map) + 1
    if x.shape[1] < need:
        print(f"process: input has {x.shape[1]} channels, config needs {need}", file=sys.stderr)
        return 2
    if cfg.lane_map is None:
        x = x[:, :cfg.n_lanes]
    lim = MixerLimiter(cfg, keep_diagnostics=args.diagnostics is not None)
    ys = []
    for a in range(0, x.shape[0], args.block):
        ys.append(lim.push(x[a:a + args.block])[0])
    ys.append(lim.flush()[0])
    y = np.vstack(ys)
    write_wav(args.output, y, rate)
    if args.stats:
        write_stats(lim.records, args.stats)
    if args.diagnostics:
        diag = [{"frame": r.index, **(r.diagnostics or {})} for r in lim.records]
        Path(args.diagnostics).write_text(json.dumps(diag, indent=1))
    degraded = sum(r.degraded for r in lim.records)
    print(json.dumps({"frames": len(lim.records), "degraded_frames": degraded,
                      "clip_events": lim.clip_events, "peak": float(np.abs(y).max(initial=0.0))}))
    return 0


def _bench(args) -> int:
    from .experiments import ExperimentConfig, run_premixer_experiment, run_reduction_experiment

    cfg = ExperimentConfig(frame=args.frame, lookahead=args.lookahead, duration=args.duration,
                           sample_rate=args.sample_rate)
    out = Path(args.out)
    if args.which == "premix":
        res = run_premixer_experiment(cfg, out)
        for k, (m, s) in res.summary().items():
            print(f"{k:14s} f = {m:.4f} +- {s:.4f}  peak {res.peaks[k]:.6f}")
    else:
        res = run_reduction_experiment(cfg, out, stride=args.stride)
        for n in res.counts:
            st = res.stats(n)
            print(f"N={n}  " + "  ".join(f"{k} {m:.1f}+-{s:.1f}" for k, (m, s) in st.items()))
        print("ratio ranges", res.ratio_ranges(), "chain", res.chain_ok())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixlimit", description="Multichannel mixer-limiter tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    d = sub.add_parser("design-window", help="design a COLA limiter window")
    d.add_argument("--length", "-M", type=int, required=True)
    d.add_argument("--hop", "-F", type=int, required=True)
    d.add_argument("--attack", type=int, required=True, help="attack onset T_A (1-based)")
    d.add_argument("--release", type=int, required=True, help="release onset T_R (1-based)")
    d.add_argument("--out", required=True, help="raw float64 output; a .json sidecar is added")
    d.set_defaults(func=_design_window)

    r = sub.add_parser("process", help="limit a multichannel WAV")
    r.add_argument("--input", required=True)
    r.add_argument("--config", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--stats", help="per-frame CSV")
    r.add_argument("--diagnostics", help="per-frame QP diagnostics as JSON")
    r.add_argument("--block", type=int, default=4096, help="streaming block size")
    r.set_defaults(func=_process)

    b = sub.add_parser("bench", help="synthetic-signal studies")
    b.add_argument("which", choices=("premix", "reduce"))
    b.add_argument("--out", required=True)
    b.add_argument("--frame", type=int, default=256)
    b.add_argument("--lookahead", type=int, default=768)
    b.add_argument("--duration", type=float, default=1.0)
    b.add_argument("--sample-rate", type=float, default=48000.0)
    b.add_argument("--stride", type=int, default=1, help="use every n-th frame (reduce only)")
    b.set_defaults(func=_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
