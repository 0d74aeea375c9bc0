"""Contextual Beta-Bernoulli bandit over channels.

Posteriors are kept per (context bin, channel); the context is the
vehicle's dwell time, binned by ``bin_edges`` (no edges = a single bin).
"""

from __future__ import annotations

import bisect
import csv
import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class Policy(enum.IntEnum):
    """Channel-selection rules.  The codes are shared with the compiled kernel."""

    EPSILON_GREEDY = 0
    THOMPSON = 1
    RANDOM = 2
    ORACLE = 3

    @classmethod
    def parse(cls, name: "str | Policy") -> "Policy":
        if isinstance(name, Policy):
            return name
        aliases = {"egreedy": cls.EPSILON_GREEDY, "epsilon_greedy": cls.EPSILON_GREEDY,
                   "eps": cls.EPSILON_GREEDY, "ts": cls.THOMPSON, "thompson": cls.THOMPSON,
                   "random": cls.RANDOM, "oracle": cls.ORACLE}
        try:
            return aliases[name.lower()]
        except KeyError:
            raise ValueError(f"unknown policy {name!r}") from None


@dataclass
class BanditState:
    n_arms: int
    policy: Policy = Policy.THOMPSON
    epsilon: float = 0.1
    bin_edges: tuple[float, ...] = ()
    alpha: np.ndarray = field(default=None, repr=False)
    beta: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_arms < 1:
            raise ValueError("need at least one arm")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        self.policy = Policy.parse(self.policy)
        self.bin_edges = tuple(float(e) for e in self.bin_edges)
        if list(self.bin_edges) != sorted(self.bin_edges):
            raise ValueError("bin edges must be sorted")
        shape = (self.n_bins, self.n_arms)
        if self.alpha is None:
            self.alpha = np.ones(shape)
        if self.beta is None:
            self.beta = np.ones(shape)
        if self.alpha.shape != shape or self.beta.shape != shape:
            raise ValueError(f"posterior arrays must have shape {shape}")

    @property
    def n_bins(self) -> int:
        return len(self.bin_edges) + 1

    def context_bin(self, t_dwell_s: float) -> int:
        return bisect.bisect_right(self.bin_edges, t_dwell_s)

    def means(self, context_bin: int) -> np.ndarray:
        self._check_bin(context_bin)
        a, b = self.alpha[context_bin], self.beta[context_bin]
        return a / (a + b)

    def pulls(self) -> np.ndarray:
        return self.alpha + self.beta - 2.0

    def _check_bin(self, context_bin: int) -> None:
        if not 0 <= context_bin < self.n_bins:
            raise IndexError(f"context bin {context_bin} outside [0, {self.n_bins})")

    def copy(self) -> "BanditState":
        return BanditState(self.n_arms, self.policy, self.epsilon, self.bin_edges,
                           self.alpha.copy(), self.beta.copy())


def quantile_edges(dwell_samples: Sequence[float], n_bins: int) -> tuple[float, ...]:
    """Interior edges that split ``dwell_samples`` into equal-count bins."""
    if n_bins <= 1:
        return ()
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    return tuple(float(v) for v in np.quantile(np.asarray(dwell_samples, dtype=float), qs))


def argmax_lowest(values: np.ndarray) -> int:
    # np.argmax already returns the first maximum
    return int(np.argmax(values))


def select_arm(state: BanditState, context_bin: int, rng: np.random.Generator) -> int:
    """Pick a channel for ``context_bin``.

    epsilon-greedy explores uniformly with probability epsilon and otherwise
    plays the largest posterior mean; Thompson sampling plays the argmax of
    one Beta draw per arm.  Ties go to the lowest channel id.
    """
    state._check_bin(context_bin)
    k = state.n_arms
    if state.policy == Policy.EPSILON_GREEDY:
        if rng.random() < state.epsilon:
            return min(int(rng.random() * k), k - 1)
        return argmax_lowest(state.means(context_bin))
    if state.policy == Policy.THOMPSON:
        a, b = state.alpha[context_bin], state.beta[context_bin]
        # scalar draws keep the stream layout identical to the compiled kernel
        theta = np.array([rng.beta(a[i], b[i]) for i in range(k)])
        return argmax_lowest(theta)
    if state.policy == Policy.RANDOM:
        return min(int(rng.random() * k), k - 1)
    raise ValueError(f"policy {state.policy.name} cannot select without an oracle table")


@dataclass(frozen=True)
class RewardSample:
    r_ec: int
    r_ld: int
    r: int


def compute_reward(ec_success: bool, latency_s: float, t_dwell_s: float) -> RewardSample:
    """Reward 1 iff the transaction executed and committed *and* its latency
    fits within the dwell time."""
    if latency_s < 0:
        raise ValueError("latency must be non-negative")
    r_ec = int(bool(ec_success))
    r_ld = int(latency_s <= t_dwell_s)
    return RewardSample(r_ec, r_ld, r_ec & r_ld)


def update_posterior(state: BanditState, context_bin: int, channel_id: int, r: int) -> BanditState:
    if r not in (0, 1):
        raise ValueError(f"reward must be 0 or 1, got {r!r}")
    state._check_bin(context_bin)
    if not 0 <= channel_id < state.n_arms:
        raise IndexError(f"channel {channel_id} outside [0, {state.n_arms})")
    if r:
        state.alpha[context_bin, channel_id] += 1.0
    else:
        state.beta[context_bin, channel_id] += 1.0
    return state


def regret(r: int, r_star: int) -> int:
    if r not in (0, 1) or r_star not in (0, 1):
        raise ValueError("rewards must be 0 or 1")
    return abs(r - r_star)


def train(state: BanditState, env: Callable[[int, np.random.Generator], int], t_train: int,
          rng: np.random.Generator, *, context_bin: int = 0, schedule: str = "round_robin") -> BanditState:
    """Warm the posteriors with ``t_train`` pulls.

    ``env(arm, rng)`` returns the observed 0/1 reward.  Arms are swept
    round-robin, or drawn uniformly with ``schedule="uniform"``.
    """
    if t_train < 0:
        raise ValueError("t_train must be non-negative")
    if schedule not in ("round_robin", "uniform"):
        raise ValueError(f"unknown training schedule {schedule!r}")
    for t in range(t_train):
        if schedule == "round_robin":
            arm = t % state.n_arms
        else:
            arm = min(int(rng.random() * state.n_arms), state.n_arms - 1)
        update_posterior(state, context_bin, arm, int(env(arm, rng)))
    return state


def write_posteriors_csv(path, snapshots: Sequence[tuple[int, BanditState]]) -> None:
    """One row per (snapshot slot, bin, channel)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "bin", "channel", "alpha", "beta"])
        for slot, st in snapshots:
            for b in range(st.n_bins):
                for k in range(st.n_arms):
                    w.writerow([slot, b, k, repr(float(st.alpha[b, k])), repr(float(st.beta[b, k]))])
