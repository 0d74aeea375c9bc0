"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise, or when
``FABRICSIM_PURE_PYTHON`` is set to a non-empty value other than ``0``,
the pure-Python kernels run instead.  Both backends produce identical
output for identical generators.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

_ckernels = None
if os.environ.get("FABRICSIM_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None

BACKEND = "cython" if _ckernels is not None else "python"


def compiled_available() -> bool:
    return _ckernels is not None


def push_gossip_batch(n: int, reps: int, rng: np.random.Generator, *, backend: str | None = None):
    """Informed counts per round for ``reps`` push-gossip runs on ``n`` peers.

    Returns ``(counts, lengths)``: ``counts[r, t]`` is the informed count of
    run ``r`` after round ``t`` (padded with ``n`` after completion) and
    ``lengths[r]`` the number of valid entries.
    """
    if n < 1:
        raise ValueError("gossip needs at least one peer")
    if _use_c(backend):
        return _ckernels.push_gossip_batch(int(n), int(reps), rng)
    return _pykernels.push_gossip_batch(n, reps, rng)


def run_clients(sessions, network, rngs, queues=None, *, backend: str | None = None) -> dict[str, np.ndarray]:
    """Run fresh sessions side by side until all have departed.

    Clients act in list order within each slot, which fixes the queue order
    when ``queues`` is given.  Sessions are left departed with updated
    posteriors; the transaction log comes back as columns.
    """
    from .client import Phase

    if len(sessions) != len(rngs):
        raise ValueError("need one generator per session")
    if not sessions:
        from .client import records_to_columns
        return records_to_columns([])
    for s in sessions:
        s.start()
        if s.slot_clock != 0 or s.phase == Phase.DEPARTED:
            raise ValueError("run_clients expects fresh sessions")
    if not _use_c(backend):
        return _pykernels.run_clients(sessions, network, rngs, queues)

    if queues is not None and any(u or s >= 0 for u, s in zip(queues._used, queues._slot)):
        raise ValueError("compiled backend expects empty queues")
    chans = network.channels
    i32 = lambda xs: np.ascontiguousarray(xs, dtype=np.int32)  # noqa: E731
    oracle_arm = []
    for s in sessions:
        if network.oracle is None:
            oracle_arm.append(-2)
        else:
            oracle_arm.append(network.oracle.channel_for(s.context_bin))
    alpha = np.ascontiguousarray([s.bandit.alpha[s.context_bin] for s in sessions], dtype=float)
    beta = np.ascontiguousarray([s.bandit.beta[s.context_bin] for s in sessions], dtype=float)
    cols = _ckernels.run_clients_arrays(
        i32([c.n_peers for c in chans]),
        np.ascontiguousarray([c.fault_prob for c in chans], dtype=float),
        i32([c.max_faults for c in chans]),
        i32(network.rounds),
        network.costs.c_endorse, network.costs.c_order, network.costs.max_retries,
        i32([int(s.bandit.policy) for s in sessions]),
        np.ascontiguousarray([s.bandit.epsilon for s in sessions], dtype=float),
        i32([s.fixed_channel for s in sessions]),
        i32(oracle_arm),
        alpha, beta,
        i32([s.t_dwell_slots for s in sessions]),
        i32([s.t_train_slots for s in sessions]),
        np.ascontiguousarray([s.arrival_prob for s in sessions], dtype=float),
        i32([s.training_schedule == "uniform" for s in sessions]),
        i32(queues.capacity if queues is not None else []),
        list(rngs),
    )
    ids = np.array([s.vehicle_id for s in sessions], dtype=np.int64)
    cols["vehicle_id"] = ids[cols["vehicle_id"]]
    for c, s in enumerate(sessions):
        s.bandit.alpha[s.context_bin] = alpha[c]
        s.bandit.beta[s.context_bin] = beta[c]
        s.slot_clock = s.t_dwell_slots
        s.phase = Phase.DEPARTED
    return cols


def _use_c(backend: str | None) -> bool:
    if backend is None:
        return _ckernels is not None
    if backend == "python":
        return False
    if backend == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not available")
        return True
    raise ValueError(f"unknown backend {backend!r}")
