"""Endorsement and BFT validation on a channel: Bernoulli peer faults, the
n >= 3f + 1 quorum rule, retries, and the resulting latency in slots."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gossip import rounds_to_dissemination
from .rng import HEATMAP, derive_rng


@dataclass(frozen=True)
class ChannelSpec:
    channel_id: int
    n_peers: int
    fault_prob: float

    def __post_init__(self):
        if self.n_peers < 1:
            raise ValueError(f"channel {self.channel_id}: needs at least one peer")
        if not 0.0 <= self.fault_prob <= 1.0:
            raise ValueError(f"channel {self.channel_id}: fault_prob {self.fault_prob} outside [0, 1]")

    @property
    def max_faults(self) -> int:
        return max_tolerated_faults(self.n_peers)


@dataclass(frozen=True)
class LatencyCosts:
    """Fixed latency terms, in slots, and the slot length in seconds."""

    c_endorse: int = 1
    c_order: int = 1
    max_retries: int = 2
    slot_duration_s: float = 0.1

    def __post_init__(self):
        if self.c_endorse < 0 or self.c_order < 0 or self.max_retries < 0:
            raise ValueError("latency costs and max_retries must be non-negative")
        if not (self.slot_duration_s > 0 and math.isfinite(self.slot_duration_s)):
            raise ValueError("slot_duration_s must be positive")


@dataclass(frozen=True)
class ConsensusOutcome:
    success: bool
    latency_slots: int
    retries_used: int


def dwell_slots(t_dwell_s: float, slot_duration_s: float) -> int:
    """Whole slots needed to cover ``t_dwell_s`` seconds (ceiling)."""
    return math.ceil(t_dwell_s / slot_duration_s - 1e-9)


def max_tolerated_faults(n_peers: int) -> int:
    """Largest f with n >= 3f + 1."""
    return (n_peers - 1) // 3


def consensus_round(ch: ChannelSpec, rng: np.random.Generator) -> bool:
    """One BFT round: every peer fails independently with ``fault_prob``;
    the round succeeds iff the faulty count stays within the quorum margin."""
    faults = int(np.count_nonzero(rng.random(ch.n_peers) < ch.fault_prob))
    return faults <= ch.max_faults


def transaction_latency(ch: ChannelSpec, rng: np.random.Generator, costs: LatencyCosts) -> ConsensusOutcome:
    """Ordering plus validation with retries.

    Every attempt redraws the peer faults and pays a full gossip
    dissemination; the transaction fails once ``max_retries`` retries are
    spent.
    """
    rounds = rounds_to_dissemination(ch.n_peers)
    base = costs.c_endorse + costs.c_order
    for attempt in range(costs.max_retries + 1):
        if consensus_round(ch, rng):
            return ConsensusOutcome(True, base + (attempt + 1) * rounds, attempt)
    return ConsensusOutcome(False, base + (costs.max_retries + 1) * rounds, costs.max_retries)


def execute_transaction(ch: ChannelSpec, rng: np.random.Generator, costs: LatencyCosts) -> tuple[bool, int]:
    """Endorsement round followed by ordering/validation.

    A failed endorsement aborts the transaction after ``c_endorse`` slots.
    Returns ``(executed_and_committed, latency_slots)``.
    """
    if not consensus_round(ch, rng):
        return False, costs.c_endorse
    out = transaction_latency(ch, rng, costs)
    return out.success, out.latency_slots


# -- closed forms --------------------------------------------------------------

def round_success_prob(n_peers: int, fault_prob: float) -> float:
    """P(Binomial(n, p) <= floor((n - 1) / 3)), summed exactly."""
    f_max = max_tolerated_faults(n_peers)
    p = fault_prob
    return math.fsum(math.comb(n_peers, f) * p**f * (1 - p) ** (n_peers - f) for f in range(f_max + 1))


def attempt_distribution(q: float, max_retries: int) -> np.ndarray:
    """P(first successful attempt = k) for k = 1..max_retries + 1 (unnormalised:
    the missing mass is the give-up probability)."""
    k = np.arange(max_retries + 1)
    return q * (1.0 - q) ** k


def commit_probability(ch: ChannelSpec, costs: LatencyCosts) -> float:
    """P(endorsement succeeds and validation succeeds within the retry budget)."""
    q = round_success_prob(ch.n_peers, ch.fault_prob)
    return q * (1.0 - (1.0 - q) ** (costs.max_retries + 1))


def expected_latency_slots(ch: ChannelSpec, costs: LatencyCosts) -> float:
    """Mean latency of committed transactions (truncated-geometric attempts).

    ``inf`` when nothing can commit.
    """
    q = round_success_prob(ch.n_peers, ch.fault_prob)
    pk = attempt_distribution(q, costs.max_retries)
    mass = pk.sum()
    if mass == 0.0:
        return math.inf
    mean_attempts = float((np.arange(1, len(pk) + 1) * pk).sum() / mass)
    return costs.c_endorse + costs.c_order + rounds_to_dissemination(ch.n_peers) * mean_attempts


def expected_transaction_latency_slots(ch: ChannelSpec, costs: LatencyCosts) -> float:
    """Mean of ``transaction_latency`` over all outcomes: attempts follow a
    geometric law capped at ``max_retries + 1``."""
    q = round_success_prob(ch.n_peers, ch.fault_prob)
    mean_attempts = float(((1.0 - q) ** np.arange(costs.max_retries + 1)).sum())
    return costs.c_endorse + costs.c_order + rounds_to_dissemination(ch.n_peers) * mean_attempts


def reward_probability(ch: ChannelSpec, costs: LatencyCosts, deadline_slots: float) -> float:
    """P(commit and latency <= deadline), endorsement included."""
    q = round_success_prob(ch.n_peers, ch.fault_prob)
    base = costs.c_endorse + costs.c_order
    rounds = rounds_to_dissemination(ch.n_peers)
    if base > deadline_slots:
        return 0.0
    k_max = costs.max_retries + 1
    if rounds > 0:
        k_max = min(k_max, int((deadline_slots - base) // rounds))
    if k_max <= 0:
        return 0.0
    return q * float(attempt_distribution(q, k_max - 1).sum())


# -- vectorised sampling --------------------------------------------------------

def sample_transactions(ch: ChannelSpec, costs: LatencyCosts, reps: int, rng: np.random.Generator,
                        *, endorse: bool = True, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """``reps`` independent transactions on ``ch``.

    Every transaction consumes the same fixed block of uniforms (one per peer
    per possible round) whatever its outcome, so two calls with equal seeds
    but different ``fault_prob`` see coupled fault patterns.  Returns
    ``(committed, latency_slots)``.
    """
    n, m = ch.n_peers, costs.max_retries + 1
    rounds = rounds_to_dissemination(n)
    base = costs.c_endorse + costs.c_order
    n_phase = m + 1 if endorse else m
    committed = np.empty(reps, dtype=bool)
    latency = np.empty(reps, dtype=np.int64)
    for start in range(0, reps, chunk):
        size = min(chunk, reps - start)
        faults = (rng.random((size, n_phase, n)) < ch.fault_prob).sum(axis=2)
        ok = faults <= ch.max_faults
        if endorse:
            endorsed, ok = ok[:, 0], ok[:, 1:]
        else:
            endorsed = np.ones(size, dtype=bool)
        any_ok = ok.any(axis=1)
        attempts = np.where(any_ok, ok.argmax(axis=1) + 1, m)
        lat = base + attempts * rounds
        sl = slice(start, start + size)
        committed[sl] = endorsed & any_ok
        latency[sl] = np.where(endorsed, lat, costs.c_endorse)
    return committed, latency


def latency_heatmap(n_grid: Sequence[int], pf_grid: Sequence[float], reps: int, rng_seed: int,
                    costs: LatencyCosts = LatencyCosts()) -> np.ndarray:
    """Mean ``transaction_latency`` in seconds per (n_peers, fault_prob).

    Failed transactions count with the time they burned on every allowed
    attempt.  Every cell of a row reuses the row's stream, so fault
    patterns are coupled along the fault-probability axis and each row is
    non-decreasing draw by draw.
    """
    if len(n_grid) == 0 or len(pf_grid) == 0:
        raise ValueError("heatmap grids must be non-empty")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    out = np.empty((len(n_grid), len(pf_grid)))
    for i, n in enumerate(n_grid):
        for j, pf in enumerate(pf_grid):
            ch = ChannelSpec(0, int(n), float(pf))
            _, lat = sample_transactions(ch, costs, reps, derive_rng(rng_seed, HEATMAP, int(n)), endorse=False)
            out[i, j] = lat.mean() * costs.slot_duration_s
    return out


def write_heatmap_csv(path, n_grid, pf_grid, values: np.ndarray, reps: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_peers", "p_f", "mean_latency_s", "reps"])
        for i, n in enumerate(n_grid):
            for j, pf in enumerate(pf_grid):
                w.writerow([int(n), repr(float(pf)), repr(float(values[i, j])), reps])
