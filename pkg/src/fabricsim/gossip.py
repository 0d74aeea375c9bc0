"""Push-gossip block dissemination among the peers of a channel.

Two views of the same process: the mean-field recurrence on the uninformed
fraction, and an agent-level Monte-Carlo in which every informed peer pushes
the block to one peer drawn uniformly from all ``n`` (itself included) per
round.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .rng import as_generator


@dataclass(frozen=True)
class GossipState:
    n: int
    x: float  # uninformed fraction
    round: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("gossip needs at least one peer")
        if not 0.0 <= self.x <= 1.0:
            raise ValueError(f"uninformed fraction must lie in [0, 1], got {self.x}")

    @classmethod
    def initial(cls, n: int) -> "GossipState":
        """One informed source among ``n`` peers."""
        return cls(n, 1.0 - 1.0 / n, 0)

    @property
    def informed(self) -> float:
        return 1.0 - self.x


def gossip_step(state: GossipState) -> GossipState:
    """Expected uninformed fraction after one push round.

    A still-uninformed peer is missed by each of the ``n * (1 - x)`` pushes
    with probability ``1 - 1/n``.
    """
    n, x = state.n, state.x
    x_next = x * (1.0 - 1.0 / n) ** (n * (1.0 - x))
    return GossipState(n, min(x_next, x), state.round + 1)


def analytic_trajectory(n: int, rounds: int) -> np.ndarray:
    """Uninformed fraction for rounds 0..rounds, starting from one source."""
    state = GossipState.initial(n)
    out = [state.x]
    for _ in range(rounds):
        state = gossip_step(state)
        out.append(state.x)
    return np.array(out)


@lru_cache(maxsize=None)
def rounds_to_dissemination(n: int, threshold: float | None = None) -> int:
    """Smallest round t at which the expected uninformed fraction drops below
    ``threshold`` (default ``1/n``, i.e. less than one uninformed peer)."""
    if n < 1:
        raise ValueError("gossip needs at least one peer")
    if n == 1:
        return 0
    if threshold is None:
        threshold = 1.0 / n
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    state = GossipState.initial(n)
    while state.x >= threshold:
        nxt = gossip_step(state)
        if nxt.x == state.x:
            raise RuntimeError(f"recurrence stalled at x={state.x} for n={n}")
        state = nxt
    return state.round


def gossip_monte_carlo(n: int, rng_seed: int | np.random.Generator) -> list[int]:
    """Informed-peer counts per round of one push-gossip run, until all ``n``
    peers hold the block.  Entry 0 is the lone source."""
    if n < 1:
        raise ValueError("gossip needs at least one peer")
    counts, lengths = kernels.push_gossip_batch(n, 1, as_generator(rng_seed))
    return [int(c) for c in counts[0, : lengths[0]]]


def monte_carlo_uninformed(n: int, reps: int, rng_seed: int | np.random.Generator,
                           rounds: int | None = None) -> np.ndarray:
    """Mean uninformed fraction per round over ``reps`` independent runs.

    Runs that finish early contribute zero for the remaining rounds.
    """
    counts, lengths = kernels.push_gossip_batch(n, reps, as_generator(rng_seed))
    if rounds is not None:
        if counts.shape[1] < rounds + 1:
            pad = np.full((reps, rounds + 1 - counts.shape[1]), n, dtype=counts.dtype)
            counts = np.hstack([counts, pad])
        counts = counts[:, : rounds + 1]
    return 1.0 - counts.mean(axis=0) / n


def monte_carlo_rounds(n: int, reps: int, rng_seed: int | np.random.Generator) -> np.ndarray:
    """Rounds until every peer is informed, one entry per run."""
    _, lengths = kernels.push_gossip_batch(n, reps, as_generator(rng_seed))
    return lengths - 1


def write_trajectories_csv(path, n_list, reps: int, rng_seed: int, threshold: float | None = None) -> list[dict]:
    """Analytic and Monte-Carlo trajectories for each ``n``, one CSV.

    Each ``n`` is simulated on its own child stream of ``rng_seed``.
    Returns one summary row per ``n``.
    """
    from .rng import GOSSIP, derive_rng

    summary = []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "round", "analytic_x", "mc_mean_x", "rounds_to_dissemination"])
        for n in n_list:
            t_star = rounds_to_dissemination(n, threshold)
            counts, lengths = kernels.push_gossip_batch(n, reps, derive_rng(rng_seed, GOSSIP, n))
            horizon = max(t_star, counts.shape[1] - 1)
            analytic = analytic_trajectory(n, horizon)
            pad = np.full((reps, horizon + 1 - counts.shape[1]), n, dtype=counts.dtype)
            mc = 1.0 - np.hstack([counts, pad]).mean(axis=0) / n
            for t in range(horizon + 1):
                w.writerow([n, t, repr(float(analytic[t])), repr(float(mc[t])), t_star])
            summary.append({"n": n, "rounds": t_star, "mc_mean_rounds": float(np.mean(lengths - 1))})
    return summary

