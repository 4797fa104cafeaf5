"""Propagation kernel throughput: numba vs the pure-numpy fallback.

Both backends produce bitwise-identical rasters; this only times them.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from depthprompt._accel import HAVE_NUMBA
from depthprompt.propagation import AffinityField, PropagationConfig, normalize_affinity, propagate


def make_case(h: int, w: int, c: int, seed: int):
    rng = np.random.default_rng(seed)
    initial = rng.uniform(0.5, 10.0, (h, w))
    seeds = np.where(rng.random((h, w)) < 0.05, rng.uniform(0.5, 10.0, (h, w)), 0.0)
    affinity = normalize_affinity(AffinityField(rng.normal(size=(c * c, h, w))))
    return initial, seeds, affinity


def time_backend(backend: str, case, cfg: PropagationConfig, repeats: int) -> float:
    propagate(*case, cfg, backend=backend)  # warm-up (JIT compile for numba)
    start = time.perf_counter()
    for _ in range(repeats):
        propagate(*case, cfg, backend=backend)
    return (time.perf_counter() - start) / repeats


def main() -> None:
    parser = argparse.ArgumentParser(description="Benchmark the propagation kernel backends")
    parser.add_argument("--sizes", default="32x48,128x192,256x384")
    parser.add_argument("--stencil", type=int, default=7)
    parser.add_argument("--steps", type=int, default=6)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    cfg = PropagationConfig(n_steps=args.steps)
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    print("bench_propagate")
    print(f"stencil={args.stencil} steps={args.steps} repeats={args.repeats}")
    print(f"{'size':>10s} " + " ".join(f"{b + '_ms':>10s}" for b in backends) + f" {'speedup':>8s}")
    for size in args.sizes.split(","):
        h, w = (int(v) for v in size.split("x"))
        case = make_case(h, w, args.stencil, seed=h * w)
        outs = {b: propagate(*case, cfg, backend=b).values for b in backends}
        if len(outs) == 2 and outs["numpy"].tobytes() != outs["numba"].tobytes():
            raise SystemExit(f"backends disagree at {size}")
        times = {b: time_backend(b, case, cfg, args.repeats) for b in backends}
        speedup = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        print(f"{size:>10s} " + " ".join(f"{1e3 * times[b]:10.2f}" for b in backends) + f" {speedup:8.2f}")


if __name__ == "__main__":
    main()
