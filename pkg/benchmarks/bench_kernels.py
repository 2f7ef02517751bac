"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Numba compile time is excluded (one warm-up call per kernel). Each row also
checks that both backends agree.
"""
import argparse
import json
import timeit

import numpy as np

from nullboost import _accel, kernels
from nullboost.pipeline import LayerConfig, PipelineConfig, extract_features


def cases(rng):
    maps = rng.random((64, 1, 48, 48))
    filt = rng.normal(size=(32, 49))
    deep = rng.normal(size=(64, 16, 20, 20))
    n = 20_000
    a, b = rng.normal(size=n), rng.normal(size=n)
    imgs = rng.random((128, 48, 48))
    cfg = PipelineConfig(48, (LayerConfig(16, 7, pool_size=2, pool_stride=2),
                              LayerConfig(16, 3, pool_size=2, pool_stride=2)), grid=2)
    return {
        "ncc 64x48x48, 32 filters 7x7": lambda: kernels.ncc(maps, filt, 7, 1e-3),
        "pool l2 64x16x20x20, 3/2": lambda: kernels.pool_kernel(deep, 3, 2, "l2"),
        "pool max 64x16x20x20, 3/2": lambda: kernels.pool_kernel(deep, 3, 2, "max"),
        "line search n=20000": lambda: kernels.line_search(a, b, -1.0, 2.0, 1.0),
        "extract 128 images, 2 layers": lambda: extract_features(imgs, cfg, np.random.default_rng(0)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        times, outs = {}, {}
        for be in ("numba", "numpy"):
            _accel.set_backend(be)
            outs[be] = fn()  # warm-up (and numba compile)
            times[be] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
        agree = bool(np.allclose(outs["numba"], outs["numpy"], atol=1e-9))
        rows.append({"kernel": name, "numba_s": times["numba"], "numpy_s": times["numpy"],
                     "speedup": times["numpy"] / times["numba"], "agree": agree})

    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  agree")
    for r in rows:
        print(f"{r['kernel']:34s} {1e3 * r['numba_s']:10.2f} {1e3 * r['numpy_s']:10.2f} {r['speedup']:8.2f}  "
              f"{r['agree']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
