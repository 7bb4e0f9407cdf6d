"""Compare the Numba and pure-numpy check-node kernels.

Runs two measurements:

* the magnitude kernel alone, both backends in this process;
* one full DE iteration of a multi-edge ensemble, each backend in its own
  subprocess (the backend is chosen at import time by ``METEXIT_PURE_NUMPY``).

Usage: ``python benchmarks/bench_kernels.py [--repeat N] [--ensemble table1] [--warmup K]``
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from metexit import _kernels
from metexit.density import DEFAULT_GRID, bi_awgn_density, gaussian_density


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_magnitudes(repeat: int) -> dict:
    g = DEFAULT_GRID
    h = g.half
    K, G, H = g.check_table()
    out = {}
    for label, d in [("bi_awgn(1.0)", bi_awgn_density(1.0)), ("gauss(12)", gaussian_density(12.0))]:
        m = d.mass
        ap, an = m[h:].copy(), m[h::-1].copy()
        ap[0] = an[0] = 0.0
        if not _kernels.HAVE_NUMBA:
            raise SystemExit("numba is unavailable or disabled; unset METEXIT_PURE_NUMPY")
        _kernels.chk_magnitudes(ap, an, ap, an, K, G, H)  # compile
        t_nb = _best(lambda: _kernels.chk_magnitudes(ap, an, ap, an, K, G, H), repeat)
        t_np = _best(lambda: _kernels.chk_magnitudes_numpy(ap, an, ap, an, K, G, H), repeat)
        r1 = _kernels.chk_magnitudes(ap, an, ap, an, K, G, H)
        r2 = _kernels.chk_magnitudes_numpy(ap, an, ap, an, K, G, H)
        diff = max(float(np.abs(x - y).max()) for x, y in zip(r1, r2))
        out[label] = {"numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb, "max_abs_diff": diff}
    return out


_ITER_SCRIPT = """
import json, sys, time
from metexit import _kernels
from metexit.de import channel_vector, iterate_de
from metexit.ensemble import builtin_ensemble
spec = builtin_ensemble(sys.argv[1])
ch = channel_vector(spec, float(sys.argv[2]))
it = iterate_de(spec, ch)
for _ in range(int(sys.argv[4])):
    next(it)  # warm up: early iterations have narrow supports and are not representative
times = []
for _ in range(int(sys.argv[3])):
    t = time.perf_counter(); st = next(it); times.append(time.perf_counter() - t)
print(json.dumps({"backend": _kernels.BACKEND, "iter_s": min(times), "pe": st.pe}))
"""

_SIGMA = {"table1": 5.8, "table2": 3.6, "table3": 2.5, "table4": 0.95, "regular36": 0.85}


def bench_iteration(ensemble: str, repeat: int, warmup: int) -> list[dict]:
    res = []
    for flag in ("0", "1"):
        env = dict(os.environ, METEXIT_PURE_NUMPY=flag)
        p = subprocess.run(
            [sys.executable, "-c", _ITER_SCRIPT, ensemble, str(_SIGMA[ensemble]), str(repeat), str(warmup)],
            env=env, capture_output=True, text=True, check=True,
        )
        res.append(json.loads(p.stdout.strip().splitlines()[-1]))
    return res


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--ensemble", default="table1", choices=sorted(_SIGMA))
    ap.add_argument("--warmup", type=int, default=50, help="DE iterations run before timing")
    args = ap.parse_args(argv)

    print("check-node magnitude kernel, default grid")
    for label, r in bench_magnitudes(args.repeat).items():
        print(
            f"  {label:14s} numba {r['numba_s'] * 1e3:8.2f} ms   numpy {r['numpy_s'] * 1e3:8.2f} ms"
            f"   speedup {r['speedup']:5.1f}x   max|diff| {r['max_abs_diff']:.1e}"
        )
    print(f"one DE iteration, {args.ensemble}, after {args.warmup} warm-up iterations")
    rows = bench_iteration(args.ensemble, args.repeat, args.warmup)
    for r in rows:
        print(f"  {r['backend']:6s} {r['iter_s'] * 1e3:8.1f} ms   pe {r['pe']:.6e}")
    print(f"  speedup {rows[1]['iter_s'] / rows[0]['iter_s']:.1f}x")


if __name__ == "__main__":
    main()
