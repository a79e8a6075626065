"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--threads 1 2 4] [--spin-ms 50] [--events 200000]

spin: T threads each burn ``spin-ms`` of CPU; wall time near ``spin-ms``
means the kernel ran without holding the GIL, near ``T * spin-ms`` means
it serialised.
incidence: time to build the carrier/agent count matrix for a synthetic
trace of ``events`` events.
"""
import argparse
import os
import threading
import time

import numpy as np

from bdiconc import kernels

BACKENDS = {"numpy": False, "numba": True}


def spin_wall(threads, seconds, use_numba):
    barrier = threading.Barrier(threads + 1)

    def work():
        barrier.wait()
        kernels.spin(seconds, use_numba=use_numba)

    pool = [threading.Thread(target=work) for _ in range(threads)]
    for t in pool:
        t.start()
    barrier.wait()
    t0 = time.perf_counter()
    for t in pool:
        t.join()
    return time.perf_counter() - t0


def incidence_time(n_events, use_numba, repeats=5):
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 16, n_events)
    cols = rng.integers(0, 64, n_events)
    kernels.incidence(rows[:10], cols[:10], 16, 64, use_numba=use_numba)  # warm-up / compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        kernels.incidence(rows, cols, 16, 64, use_numba=use_numba)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--spin-ms", type=float, default=50.0)
    p.add_argument("--events", type=int, default=200_000)
    args = p.parse_args()

    print(f"cores: {os.cpu_count()}  default backend: {kernels.backend()}")
    for use_numba in BACKENDS.values():
        kernels.spin(0.001, use_numba=use_numba)

    print(f"\nspin ({args.spin_ms:.0f} ms CPU per thread)")
    print(f"{'threads':>7} " + " ".join(f"{name + ' ms':>12}" for name in BACKENDS))
    for t in args.threads:
        walls = [spin_wall(t, args.spin_ms / 1000, flag) * 1000 for flag in BACKENDS.values()]
        print(f"{t:>7} " + " ".join(f"{w:12.1f}" for w in walls))

    print(f"\nincidence ({args.events} events, 16 x 64)")
    for name, flag in BACKENDS.items():
        print(f"{name:>7} {incidence_time(args.events, flag) * 1000:10.2f} ms")


if __name__ == "__main__":
    main()
