"""Exhaustive solver for the constrained channel choice.

Picking one channel out of N under a latency cap is the degenerate
single-item knapsack, so the solver simply scores every channel for every
context and keeps the best feasible one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .consensus import (ChannelSpec, LatencyCosts, dwell_slots, execute_transaction, expected_latency_slots,
                        reward_probability, sample_transactions)
from .rng import ORACLE, derive_rng


class InfeasibleContext(LookupError):
    """No channel meets the latency cap for a context."""


@dataclass(frozen=True)
class OracleEntry:
    context_bin: int
    t_dwell_s: float
    best_channel: int  # -1 when infeasible
    expected_reward: float
    expected_latency_s: float

    @property
    def feasible(self) -> bool:
        return self.best_channel >= 0


@dataclass(frozen=True)
class OracleTable:
    channels: tuple[ChannelSpec, ...]
    costs: LatencyCosts
    entries: tuple[OracleEntry, ...]
    rewards: np.ndarray  # (n_contexts, n_channels)
    latencies_s: np.ndarray
    cost_caps_s: tuple[float, ...]

    def entry(self, context_bin: int) -> OracleEntry:
        return self.entries[context_bin]

    def channel_for(self, context_bin: int) -> int:
        return self.entries[context_bin].best_channel

    def require(self, context_bin: int) -> OracleEntry:
        e = self.entries[context_bin]
        if not e.feasible:
            raise InfeasibleContext(f"no channel meets the cost cap for context bin {context_bin}")
        return e

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin", "channel", "expected_reward", "expected_latency", "chosen"])
            for b, e in enumerate(self.entries):
                for k, ch in enumerate(self.channels):
                    w.writerow([b, ch.channel_id, repr(float(self.rewards[b, k])),
                                repr(float(self.latencies_s[b, k])), int(k == e.best_channel)])


def _pick(rewards: np.ndarray, latencies: np.ndarray, cap: float) -> int:
    best = -1
    for k in range(len(rewards)):
        if not latencies[k] <= cap:
            continue
        if best < 0 or rewards[k] > rewards[best] or (
                rewards[k] == rewards[best] and latencies[k] < latencies[best]):
            best = k
    return best


def _build(channels, costs, contexts, cost_cap, rewards, latencies) -> OracleTable:
    caps = tuple(float(t if cost_cap is None else cost_cap) for t in contexts)
    entries = []
    for b, t in enumerate(contexts):
        k = _pick(rewards[b], latencies[b], caps[b])
        if k < 0:
            entries.append(OracleEntry(b, float(t), -1, 0.0, math.inf))
        else:
            entries.append(OracleEntry(b, float(t), k, float(rewards[b, k]), float(latencies[b, k])))
    return OracleTable(tuple(channels), costs, tuple(entries), rewards, latencies, caps)


def _check(channels: Sequence[ChannelSpec], contexts: Sequence[float]) -> None:
    if not channels:
        raise ValueError("need at least one channel")
    if not contexts:
        raise ValueError("need at least one context")
    for k, ch in enumerate(channels):
        if ch.channel_id != k:
            raise ValueError("channel ids must be 0..N-1 in order")


def solve_oracle(channels: Sequence[ChannelSpec], contexts: Sequence[float], costs: LatencyCosts,
                 reps: int, rng_seed: int, cost_cap: float | None = None) -> OracleTable:
    """Monte-Carlo estimate of every channel's reward and latency per context.

    ``contexts`` are dwell times in seconds, one per context bin.  The cost
    cap defaults to each context's dwell time.  Latency is averaged over
    committed transactions; a channel that never commits is infeasible.
    """
    _check(channels, contexts)
    if reps < 1:
        raise ValueError("reps must be >= 1")
    slot = costs.slot_duration_s
    rewards = np.zeros((len(contexts), len(channels)))
    latencies = np.full((len(contexts), len(channels)), math.inf)
    for b, t_dwell in enumerate(contexts):
        deadline = dwell_slots(t_dwell, slot)
        for k, ch in enumerate(channels):
            ok, lat = sample_transactions(ch, costs, reps, derive_rng(rng_seed, ORACLE, b, k))
            rewards[b, k] = float(np.mean(ok & (lat <= deadline)))
            if ok.any():
                latencies[b, k] = float(lat[ok].mean()) * slot
    return _build(channels, costs, contexts, cost_cap, rewards, latencies)


def solve_oracle_analytic(channels: Sequence[ChannelSpec], contexts: Sequence[float], costs: LatencyCosts,
                          cost_cap: float | None = None) -> OracleTable:
    """Same table from the closed-form success and latency expressions."""
    _check(channels, contexts)
    slot = costs.slot_duration_s
    rewards = np.zeros((len(contexts), len(channels)))
    latencies = np.full((len(contexts), len(channels)), math.inf)
    for b, t_dwell in enumerate(contexts):
        for k, ch in enumerate(channels):
            rewards[b, k] = reward_probability(ch, costs, dwell_slots(t_dwell, slot))
            latencies[b, k] = expected_latency_slots(ch, costs) * slot
    return _build(channels, costs, contexts, cost_cap, rewards, latencies)


def oracle_reward_draw(table: OracleTable, context_bin: int, rng: np.random.Generator,
                       deadline_slots: int | None = None) -> int:
    """Realised reward of one transaction on the oracle's channel.

    ``deadline_slots`` defaults to the context's dwell time.  Infeasible
    contexts always yield 0.
    """
    e = table.entry(context_bin)
    if not e.feasible:
        return 0
    ok, lat = execute_transaction(table.channels[e.best_channel], rng, table.costs)
    if deadline_slots is None:
        deadline_slots = dwell_slots(e.t_dwell_s, table.costs.slot_duration_s)
    return int(ok and lat <= deadline_slots)
