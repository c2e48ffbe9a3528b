"""Benchmark the pure-Python fabric kernel against the compiled one.

Runs the same lowered layer programs through both kernels and reports
wall time, simulated cycles per second, and the speedup.  Usage:

    python benchmarks/bench_kernel.py [--reps N]
"""

import argparse
import time

from mavec.fabric.simulator import lower_program
from mavec.mapping import ArrayGeom, LayerSpec
from mavec.oracle import synth_values
from mavec.schedule import build_program

GEOM = ArrayGeom(4, 24)

# all within the 64-wave pass bound the simulator enforces; f16 runs
# four fold passes and s2 streams a 16x16 input down to an 8x8 output
LAYERS = [
    LayerSpec("conv3x3-f4", c_in=2, c_out=4, h=8, w=8, kh=3, kw=3, pad=1),
    LayerSpec("conv3x3-f16", c_in=2, c_out=16, h=8, w=8, kh=3, kw=3, pad=1),
    LayerSpec("conv3x3-s2", c_in=2, c_out=8, h=16, w=16, kh=3, kw=3, stride=2, pad=1),
]


def bench(low, backend, reps):
    best = float("inf")
    cycles = 0
    for _ in range(reps):
        t0 = time.perf_counter()
        result = run_one(low, backend)
        dt = time.perf_counter() - t0
        best = min(best, dt)
        cycles = result["counters"]["cycles"]
    return cycles, best


def run_one(low, backend):
    if backend == "python":
        from mavec.fabric import _pykernel as mod
    else:
        from mavec.fabric import _kernel as mod
    return mod.FabricKernel(low).run()


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=3, help="repetitions per layer (best-of)")
    args = ap.parse_args()

    try:
        import mavec.fabric._kernel  # noqa: F401
        backends = ["python", "cython"]
    except ImportError:
        print("compiled kernel not built; benchmarking the python kernel alone")
        backends = ["python"]

    header = f"{'layer':<16} {'backend':<8} {'cycles':>8} {'best s':>10} {'cyc/s':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for spec in LAYERS:
        weights = synth_values((spec.c_out, spec.c_in, spec.kh, spec.kw), seed=1)
        x = synth_values((spec.c_in, spec.h, spec.w), seed=2)
        low = lower_program(build_program(spec, GEOM, weights, x))
        base = None
        for backend in backends:
            cycles, best = bench(low, backend, args.reps)
            if base is None:
                base = best
            print(
                f"{spec.name:<16} {backend:<8} {cycles:>8} {best:>10.4f} "
                f"{cycles / best:>12.0f} {base / best:>7.1f}x"
            )


if __name__ == "__main__":
    main()
