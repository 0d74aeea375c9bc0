"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3]

Both backends consume identical streams, so the script also checks that
their outputs agree before reporting timings.
"""

import argparse
import time

import numpy as np

from fabricsim import kernels
from fabricsim.engine import ScenarioConfig, make_session, setup_replication
from fabricsim.rng import derive_rng


def _clients(backend, n_clients, horizon, seed=0):
    cfg = ScenarioConfig(horizon_slots=horizon, arrival_prob=0.05, n_clients=n_clients)
    net, dwell, edges = setup_replication(cfg, 0)
    sessions = [make_session(i, float(d), net, t_train_slots=100, policy="ts", bin_edges=edges,
                             arrival_prob=cfg.arrival_prob) for i, d in enumerate(dwell)]
    rngs = [derive_rng(seed, 99, i) for i in range(n_clients)]
    return kernels.run_clients(sessions, net, rngs, backend=backend)


def _gossip(backend, n, reps, seed=0):
    return kernels.push_gossip_batch(n, reps, np.random.default_rng(seed), backend=backend)


CASES = {
    "push_gossip n=100 reps=2000": lambda b: _gossip(b, 100, 2000),
    "run_clients 20 clients x 2000 slots": lambda b: _clients(b, 20, 2000),
}


def _best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled kernels unavailable; only the Python fallback can run")
    print(f"{'case':40s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}  match")
    for name, fn in CASES.items():
        t_py, out_py = _best_of(lambda: fn("python"), args.repeat)
        if kernels.BACKEND == "cython":
            t_cy, out_cy = _best_of(lambda: fn("cython"), args.repeat)
            print(f"{name:40s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:8.1f}  {_same(out_py, out_cy)}")
        else:
            print(f"{name:40s} {t_py:10.4f} {'-':>10s} {'-':>8s}  -")


if __name__ == "__main__":
    main()
