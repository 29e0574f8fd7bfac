"""Compare the numba-compiled kernels with their numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5] [--end-to-end] [--json out.json]

Per kernel, reports the best-of-``repeat`` wall time of both implementations on
the same inputs and checks that their outputs agree. ``--end-to-end`` also
times one label-corruption run in a subprocess under each backend
(``SENTLAB_NUMBA=1`` vs ``SENTLAB_NUMBA=0``).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from sentlab import kernels


def make_inputs(n: int, k: int = 3, cap: int = 12, d: int = 64, seed: int = 0):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(k), size=n)
    labels = rng.integers(0, k, size=n)
    hist = rng.integers(0, k, size=(n, cap))
    lengths = rng.integers(1, cap + 1, size=n)
    scores = rng.random(n)
    thresholds = np.unique(np.concatenate([np.linspace(0, 1, 101), scores[:500]]))
    return {
        "ema_update": lambda: (np.zeros(n), np.zeros(n, dtype=bool), rng.random(n), 0.9),
        "instant_losses": lambda: (probs, labels),
        "history_entropies": lambda: (hist, lengths, k),
        "row_cosine": lambda: (rng.standard_normal((n, d)), rng.standard_normal((n, d))),
        "threshold_counts": lambda: (scores, scores > 0.3, thresholds),
        "sample_categorical": lambda: (np.cumsum(probs, axis=1), rng.random(n)),
        "confusion": lambda: (labels, rng.integers(0, k, size=n), k),
    }


def _best_time(fn, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        copies = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args)
        t0 = time.perf_counter()
        out = fn(*copies)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_kernels(n: int, repeat: int):
    rows = []
    for name, make in make_inputs(n).items():
        args = make()
        np_fn = getattr(kernels, "np_" + name)
        nb_fn = kernels.compiled.get(name)
        t_np, out_np = _best_time(np_fn, args, repeat)
        row = {"kernel": name, "n": n, "numpy_s": t_np, "numba_s": None, "speedup": None, "agree": None}
        if nb_fn is not None:
            nb_fn(*tuple(a.copy() if isinstance(a, np.ndarray) else a for a in args))  # compile
            t_nb, out_nb = _best_time(nb_fn, args, repeat)
            outs_np = out_np if isinstance(out_np, tuple) else (out_np,)
            outs_nb = out_nb if isinstance(out_nb, tuple) else (out_nb,)
            agree = all(np.allclose(a, b, rtol=1e-12, atol=1e-12) for a, b in zip(outs_np, outs_nb) if a is not None)
            row.update(numba_s=t_nb, speedup=t_np / t_nb if t_nb > 0 else None, agree=agree)
        rows.append(row)
    return rows


END_TO_END = """
import time
from sentlab.data import make_benchmark
from sentlab.noise import NoiseSpec
from sentlab.pipeline import RunConfig, run
splits = make_benchmark(0)
cfg = RunConfig(mode="sent_corruption", noise=NoiseSpec(kind="uniform", rate=0.4))
t0 = time.perf_counter()
rep = run(cfg, splits)
print(time.perf_counter() - t0, rep.final_test_metric)
"""


def bench_end_to_end():
    rows = []
    for flag in ("1", "0"):
        env = dict(os.environ, SENTLAB_NUMBA=flag)
        t0 = time.perf_counter()
        res = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
        total = time.perf_counter() - t0
        run_s, metric = res.stdout.split()
        rows.append({"backend": "numba" if flag == "1" else "numpy", "run_s": float(run_s),
                     "process_s": total, "test_metric": float(metric)})
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)

    rows = bench_kernels(args.n, args.repeat)
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}  agree")
    for r in rows:
        nb = "-" if r["numba_s"] is None else f"{1e3 * r['numba_s']:.3f}"
        sp = "-" if r["speedup"] is None else f"{r['speedup']:.1f}x"
        print(f"{r['kernel']:<20} {1e3 * r['numpy_s']:>10.3f} {nb:>10} {sp:>8}  {r['agree']}")
    result = {"kernels": rows}
    if args.end_to_end:
        e2e = bench_end_to_end()
        for r in e2e:
            print(f"end-to-end {r['backend']:<6} run {r['run_s']:.2f}s  process {r['process_s']:.2f}s  "
                  f"test {r['test_metric']:.4f}")
        result["end_to_end"] = e2e
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
