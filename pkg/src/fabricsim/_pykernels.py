"""Pure-Python kernels.  Each consumes its generator exactly like the
compiled counterpart in ``_ckernels.pyx``."""

from __future__ import annotations

import numpy as np


def gossip_round_cap(n: int) -> int:
    return 64 + 16 * max(1, int(n).bit_length())


def push_gossip_batch(n: int, reps: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    cap = gossip_round_cap(n)
    counts = np.full((reps, cap), n, dtype=np.int64)
    lengths = np.empty(reps, dtype=np.int64)
    longest = 1
    for rep in range(reps):
        informed = np.zeros(n, dtype=bool)
        informed[0] = True
        count, t = 1, 0
        counts[rep, 0] = 1
        while count < n:
            t += 1
            if t >= cap:
                raise RuntimeError(f"push gossip on n={n} did not finish within {cap} rounds")
            senders = np.flatnonzero(informed)
            targets = (rng.random(senders.size) * n).astype(np.int64)
            informed[np.minimum(targets, n - 1)] = True
            count = int(informed.sum())
            counts[rep, t] = count
        lengths[rep] = t + 1
        longest = max(longest, t + 1)
    return counts[:, :longest], lengths


def run_clients(sessions, network, rngs, queues=None) -> dict[str, np.ndarray]:
    from .client import Phase, records_to_columns, step

    records = []
    horizon = max(s.t_dwell_slots for s in sessions)
    for t in range(horizon):
        for s, rng in zip(sessions, rngs):
            if s.phase == Phase.DEPARTED or s.slot_clock != t:
                continue
            _, rec = step(s, network, rng, queues)
            if rec is not None:
                records.append(rec)
    return records_to_columns(records)
