"""Time the numba kernels against their numpy counterparts on limiter-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both paths run in one process (the compiled kernels are built whenever numba
imports, whatever MIXLIMIT_DISABLE_NUMBA says). Outputs are checked for
agreement before timing.
"""
import argparse
import json
import sys
from timeit import repeat

import numpy as np

from mixlimit import kernels as K
from mixlimit._accel import HAVE_NUMBA
from mixlimit.experiments import SignalKind, SignalSpec, gen_am_tensor, gen_tone_bank


def tone_rows(n, frame=40):
    Y = gen_tone_bank(SignalSpec(SignalKind.SINE_BANK), n)[frame * 256:frame * 256 + 1024]
    return np.ascontiguousarray(np.vstack([Y, -Y])), np.ones(2048), np.ones(n)


def am_rows(frame=40):
    Y = gen_am_tensor()[frame * 256:frame * 256 + 1024].reshape(1024, -1, order="F")
    return np.ascontiguousarray(np.vstack([Y, -Y])), np.ones(2048), np.ones(9)


def presolved(S, tau, u):
    keep = np.maximum(S * u, 0).sum(axis=1) > tau
    return np.ascontiguousarray(S[keep]), tau[keep], u


def cases():
    S4, t4, u4 = presolved(*tone_rows(4))
    S6, t6, u6 = presolved(*tone_rows(6))
    S9, t9, u9 = presolved(*am_rows())
    keep6, *_ = K.cull_fused(S6, t6, u6)
    Sk, tk = np.ascontiguousarray(S6[keep6]), t6[keep6]

    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, (190, 9))
    starts = (np.arange(190) - 3) * 256
    win = np.hanning(1024)

    def oa(fn):
        return lambda: fn(np.zeros((48000, 9)), 0, starts, X, win)

    return {
        "edge_vertices N=4": (lambda: K.edge_vertices_jit(S4, t4, u4),
                              lambda: K._edge_vertices_numpy(S4, t4, u4)),
        "edge_vertices N=6": (lambda: K.edge_vertices_jit(S6, t6, u6),
                              lambda: K._edge_vertices_numpy(S6, t6, u6)),
        "cull N=6": (lambda: K.cull_fused_jit(S6, t6, u6),
                     lambda: K._cull_fused_numpy(S6, t6, u6)),
        "cull N=9": (lambda: K.cull_fused_jit(S9, t9, u9),
                     lambda: K._cull_fused_numpy(S9, t9, u9)),
        "support LPs N=6": (lambda: [K.support_lp_jit(Sk, tk, u6, r, 1e-12, 10000) for r in range(0, Sk.shape[0], 8)],
                            lambda: [K._support_lp_highs(Sk, tk, u6, r) for r in range(0, Sk.shape[0], 8)]),
        "overlap_add 1 s x 9": (oa(K.overlap_add_jit), oa(K._overlap_add_numpy)),
    }


def _same(a, b):
    if isinstance(a, list) and a and isinstance(a[0], tuple):
        # LP optima: compare values only (vertices may differ on ties)
        return _same([x[0] for x in a], [y[0] for y in b])
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, list):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), rtol=1e-9, atol=1e-12,
                       equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    rows = []
    for name, (jit_fn, np_fn) in cases().items():
        ok = _same(jit_fn(), np_fn())  # also warms the JIT
        t_jit = min(repeat(jit_fn, number=1, repeat=args.repeat))
        t_np = min(repeat(np_fn, number=1, repeat=max(1, args.repeat // 2)))
        rows.append({"kernel": name, "numba_s": t_jit, "numpy_s": t_np,
                     "speedup": t_np / t_jit, "agree": bool(ok)})
        print(f"{name:22s} numba {t_jit * 1e3:9.2f} ms   numpy {t_np * 1e3:9.2f} ms   "
              f"x{t_np / t_jit:6.1f}   agree={ok}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
