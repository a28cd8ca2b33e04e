"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--size 512] [--repeat 3]

Both backends run on identical inputs; outputs are checked for equality
before any timing is reported.
"""
import argparse
import timeit

import numpy as np

from cryoseg import kernels
from cryoseg.data import synthetic_instances
from cryoseg.postprocess import gaussian_smooth, make_markers


def inputs(size, seed=0):
    rng = np.random.default_rng(seed)
    inst = synthetic_instances(rng, size)
    noise = rng.normal(scale=0.05, size=inst.shape)
    prob = np.clip((inst > 0) * 0.9 + 0.05 + noise, 0, 1)
    smoothed = gaussian_smooth(prob)
    contours = kernels.BACKENDS["python"].label_boundaries(inst.astype(np.int64), 2)
    markers = make_markers(smoothed, contours.astype(float)).labels
    shifted = np.roll(inst, (2, 3), axis=(0, 1))
    return {
        "flood": (np.ascontiguousarray(-smoothed), np.ascontiguousarray(markers, dtype=np.int64)),
        "contingency": (inst.ravel().astype(np.int64), shifted.ravel().astype(np.int64),
                        int(inst.max()), int(shifted.max())),
        "label_boundaries": (inst.astype(np.int64), 2),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    cases = inputs(args.size)
    names = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(names)} (active: {kernels.BACKEND}); image {args.size}x{args.size}")
    print(f"{'kernel':<18}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}")
    for kernel, case in cases.items():
        results = {n: getattr(kernels.BACKENDS[n], kernel)(*case) for n in names}
        ref = results[names[0]]
        for n in names[1:]:
            if not np.array_equal(results[n], ref):
                raise SystemExit(f"{kernel}: {n} disagrees with {names[0]}")
        ms = {}
        for n in names:
            fn = getattr(kernels.BACKENDS[n], kernel)
            ms[n] = 1e3 * min(timeit.repeat(lambda: fn(*case), number=1, repeat=args.repeat))
        speed = ms["python"] / ms["cython"] if {"python", "cython"} <= set(ms) else float("nan")
        print(f"{kernel:<18}" + "".join(f"{ms[n]:>14.2f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
