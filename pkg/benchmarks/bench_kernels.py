"""Time the numba kernels against their pure-numpy fallbacks.

Arguments are recorded from real library calls on the bundled fixtures, so each
kernel is timed on the inputs it actually sees.  Run with

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from tilelab import _kernels
from tilelab.bratteli import Hierarchy, Law
from tilelab.cocycle import lyapunov_spectrum
from tilelab.ergodic import boundary_flags, packing_decomposition, root_tree
from tilelab.fixtures import load
from tilelab.geometry import Region

KERNELS = ("points_in_region", "classify", "expand", "qr_lyapunov", "boundary")


def record():
    """Run one workload per kernel and keep the largest argument tuple each kernel received."""
    seen = {}
    originals = {k: getattr(_kernels, k) for k in KERNELS}

    def spy(name):
        def call(*args):
            size = sum(np.size(a) for a in args)
            if name not in seen or size > seen[name][0]:
                seen[name] = (size, args)
            return originals[name](*args)
        return call

    for k in KERNELS:
        setattr(_kernels, k, spy(k))
    try:
        four, prod = load("four1d"), load("prod2d")
        Hierarchy(prod, [0] * 5).tree(5, 0).leaves()
        tree = root_tree(four, [0] * 12)
        packing_decomposition(tree, Region("box", [2000.5], half_widths=[1900.0]))
        prod_tree = root_tree(prod, [0] * 6)
        packing_decomposition(prod_tree, Region("disk", [32.0, 32.0], radius=30.0))
        lyapunov_spectrum(prod, Law.bernoulli([0.5, 0.5]), 2000, samples=1)
        boundary_flags(four, [0] * 28, 4096, seed=0, threads=1)
    finally:
        for k, fn in originals.items():
            setattr(_kernels, k, fn)
    return {k: v[1] for k, v in seen.items()}


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.numba_enabled():
        print("TILELAB_NO_NUMBA is set; timing the numpy path on both sides")
    inputs = record()
    print(f"{'kernel':<18}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    for name in KERNELS:
        if name not in inputs:
            continue
        fast = getattr(_kernels, name + "_numba")
        slow = getattr(_kernels, name + "_numpy")
        fast(*inputs[name])  # compile outside the timing
        tf = best_of(fast, inputs[name], args.repeat)
        ts = best_of(slow, inputs[name], args.repeat)
        print(f"{name:<18}{tf * 1e3:>12.2f}{ts * 1e3:>12.2f}{ts / tf:>9.1f}x")


if __name__ == "__main__":
    main()
