"""Per-vehicle protocol: join, optional training window, then one
transaction at a time on a bandit-chosen channel until the vehicle leaves.

This module is the readable reference for the client loop.  The engine
runs large batches through ``kernels.run_clients``, whose compiled path
reproduces ``step`` draw for draw.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, fields
from functools import cached_property
from typing import Sequence

import numpy as np

from .bandit import BanditState, Policy, compute_reward, select_arm, update_posterior
from .consensus import ChannelSpec, LatencyCosts, dwell_slots, execute_transaction
from .geometry import SpatialScene, dwell_time
from .gossip import rounds_to_dissemination
from .oracle import OracleTable, oracle_reward_draw


class Phase(enum.IntEnum):
    JOINING = 0
    TRAINING = 1
    OPERATING = 2
    DEPARTED = 3


class NoNetworkError(LookupError):
    """The scene has no RSU to answer a Join request."""


@dataclass(frozen=True)
class Network:
    """Channel layout shared read-only by every client of a run."""

    channels: tuple[ChannelSpec, ...]
    costs: LatencyCosts = LatencyCosts()
    network_radius_m: float = 1000.0
    min_endorsers: int = 1
    oracle: OracleTable | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.channels:
            raise ValueError("network needs at least one channel")
        if [c.channel_id for c in self.channels] != list(range(len(self.channels))):
            raise ValueError("channel ids must be 0..N-1 in order")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @cached_property
    def rounds(self) -> tuple[int, ...]:
        return tuple(rounds_to_dissemination(c.n_peers) for c in self.channels)

    def with_oracle(self, table: OracleTable | None) -> "Network":
        return Network(self.channels, self.costs, self.network_radius_m, self.min_endorsers, table)


class ChannelQueues:
    """FIFO endorsement queues; channel k serves ``capacity[k]`` requests per
    slot.  Requests must arrive in non-decreasing slot order."""

    def __init__(self, capacity: Sequence[int]):
        if any(c < 1 for c in capacity):
            raise ValueError("queue capacity must be >= 1")
        self.capacity = [int(c) for c in capacity]
        self._slot = [-1] * len(self.capacity)  # latest slot with booked service
        self._used = [0] * len(self.capacity)   # requests booked in that slot

    @classmethod
    def for_network(cls, network: Network) -> "ChannelQueues":
        return cls([c.n_peers for c in network.channels])

    def enqueue(self, channel: int, slot: int) -> int:
        """Book service for a request arriving at ``slot``; returns the wait."""
        if self._slot[channel] < slot:
            self._slot[channel], self._used[channel] = slot, 0
        if self._used[channel] >= self.capacity[channel]:
            self._slot[channel] += 1
            self._used[channel] = 0
        self._used[channel] += 1
        return self._slot[channel] - slot

    def depth(self, channel: int, slot: int) -> int:
        """Requests booked at or after ``slot``."""
        if self._slot[channel] < slot:
            return 0
        return (self._slot[channel] - slot) * self.capacity[channel] + self._used[channel]


@dataclass(frozen=True)
class JoinConfirm:
    network_radius_m: float
    channel_ids: tuple[int, ...]
    min_endorsers: int
    queue_depths: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.channel_ids)) != len(self.channel_ids):
            raise ValueError("duplicate channel ids in Join CFM")


@dataclass
class ClientSession:
    vehicle_id: int
    t_dwell_slots: int
    t_train_slots: int
    bandit: BanditState
    context_bin: int = 0
    phase: Phase = Phase.JOINING
    slot_clock: int = 0
    arrival_prob: float = 1.0
    training_schedule: str = "round_robin"
    fixed_channel: int = -1

    def __post_init__(self):
        if self.t_dwell_slots < 1:
            raise ValueError("dwell must cover at least one slot")
        if not 0 <= self.t_train_slots <= self.t_dwell_slots:
            raise ValueError("need 0 <= t_train_slots <= t_dwell_slots")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival_prob must lie in [0, 1]")

    def start(self) -> "ClientSession":
        if self.phase == Phase.JOINING:
            self.phase = Phase.TRAINING if self.t_train_slots > 0 else Phase.OPERATING
        return self


@dataclass(frozen=True)
class TxRecord:
    vehicle_id: int
    slot_submitted: int
    channel_id: int
    ec_success: bool
    latency_slots: int
    r_ld: int
    committed_within_dwell: bool
    reward: int
    oracle_reward: int  # -1 without an oracle
    regret: int         # -1 without an oracle
    queue_wait: int = 0


TX_FIELDS = tuple(f.name for f in fields(TxRecord))


def join(scene: SpatialScene, vehicle_id: int, network: Network, *, t_train_slots: int = 0,
         policy: Policy | str = Policy.THOMPSON, epsilon: float = 0.1, bin_edges: Sequence[float] = (),
         arrival_prob: float = 1.0, queues: ChannelQueues | None = None,
         training_schedule: str = "round_robin") -> tuple[ClientSession, JoinConfirm]:
    """Join REQ to the closest RSU, Join CFM back, session ready to run."""
    if scene.n_rsu == 0:
        raise NoNetworkError("no RSU in range: join request unanswered")
    if not 0 <= vehicle_id < scene.n_obu:
        raise IndexError(f"vehicle {vehicle_id} not in scene")
    scene.closest_rsu(vehicle_id)
    cfm = JoinConfirm(
        network.network_radius_m,
        tuple(c.channel_id for c in network.channels),
        network.min_endorsers,
        tuple(queues.depth(k, 0) if queues else 0 for k in range(network.n_channels)),
    )
    t_dwell_s = dwell_time(cfm.network_radius_m, float(scene.obu_speeds[vehicle_id]))
    session = make_session(vehicle_id, t_dwell_s, network, t_train_slots=t_train_slots, policy=policy,
                           epsilon=epsilon, bin_edges=bin_edges, arrival_prob=arrival_prob,
                           training_schedule=training_schedule)
    return session, cfm


def make_session(vehicle_id: int, t_dwell_s: float, network: Network, *, t_train_slots: int = 0,
                 policy: Policy | str = Policy.THOMPSON, epsilon: float = 0.1, bin_edges: Sequence[float] = (),
                 arrival_prob: float = 1.0, training_schedule: str = "round_robin") -> ClientSession:
    """Session for a vehicle whose dwell time is already known."""
    bandit = BanditState(network.n_channels, Policy.parse(policy), epsilon, tuple(bin_edges))
    ctx = bandit.context_bin(t_dwell_s)
    fixed = -1
    if bandit.policy == Policy.ORACLE:
        if network.oracle is None:
            raise ValueError("oracle policy needs a network with a solved oracle table")
        fixed = _oracle_channel(network.oracle, ctx)
    t_dwell_slots = dwell_slots(t_dwell_s, network.costs.slot_duration_s)
    return ClientSession(vehicle_id, t_dwell_slots, min(t_train_slots, t_dwell_slots), bandit, ctx,
                         arrival_prob=arrival_prob, training_schedule=training_schedule,
                         fixed_channel=fixed).start()


def _oracle_channel(table: OracleTable, ctx: int) -> int:
    best = table.channel_for(ctx)
    if best < 0:  # nothing meets the cap: fall back to the highest reward
        best = int(np.argmax(table.rewards[ctx]))
    return best


def _pick_channel(session: ClientSession, rng: np.random.Generator) -> int:
    if session.bandit.policy == Policy.ORACLE:
        return session.fixed_channel
    return select_arm(session.bandit, session.context_bin, rng)


def step(session: ClientSession, network: Network, rng: np.random.Generator,
         queues: ChannelQueues | None = None) -> tuple[ClientSession, TxRecord | None]:
    """Advance ``session`` by one slot.

    Training slots spend one probe transaction each.  In operation the
    vehicle submits a transaction with probability ``arrival_prob`` and
    resolves it before the next slot, one at a time.  A transaction that
    would finish after departure scores r_ld = 0.
    """
    if session.phase == Phase.DEPARTED:
        raise RuntimeError(f"vehicle {session.vehicle_id} already departed")
    session.start()
    t = session.slot_clock
    costs = network.costs
    record = None
    if session.phase == Phase.TRAINING:
        k = network.n_channels
        if session.training_schedule == "round_robin":
            arm = t % k
        else:
            arm = min(int(rng.random() * k), k - 1)
        ok, lat = execute_transaction(network.channels[arm], rng, costs)
        r = compute_reward(ok, lat, session.t_dwell_slots).r
        update_posterior(session.bandit, session.context_bin, arm, r)
    elif session.arrival_prob >= 1.0 or rng.random() < session.arrival_prob:
        arm = _pick_channel(session, rng)
        wait = queues.enqueue(arm, t) if queues is not None else 0
        ok, lat = execute_transaction(network.channels[arm], rng, costs)
        lat += wait
        remaining = session.t_dwell_slots - t
        rs = compute_reward(ok, lat, remaining)
        update_posterior(session.bandit, session.context_bin, arm, rs.r)
        r_star = regret = -1
        if network.oracle is not None:
            if network.oracle.channel_for(session.context_bin) == arm:
                r_star = rs.r  # same channel in the same slot sees the same peer faults
            else:
                r_star = oracle_reward_draw(network.oracle, session.context_bin, rng, deadline_slots=remaining)
            regret = abs(rs.r - r_star)
        record = TxRecord(session.vehicle_id, t, arm, bool(ok), int(lat), rs.r_ld, bool(rs.r), rs.r,
                          r_star, regret, wait)
    session.slot_clock = t + 1
    if session.phase == Phase.TRAINING and session.slot_clock >= session.t_train_slots:
        session.phase = Phase.OPERATING
    if session.slot_clock >= session.t_dwell_slots:
        session.phase = Phase.DEPARTED
    return session, record


def run_session(session: ClientSession, network: Network, rng: np.random.Generator,
                queues: ChannelQueues | None = None) -> list[TxRecord]:
    """Step a fresh session until departure."""
    records = []
    session.start()
    while session.phase != Phase.DEPARTED:
        _, rec = step(session, network, rng, queues)
        if rec is not None:
            records.append(rec)
    return records


def records_to_columns(records: Sequence[TxRecord]) -> dict[str, np.ndarray]:
    cols = {name: np.array([getattr(r, name) for r in records]) for name in TX_FIELDS}
    for name in ("ec_success", "committed_within_dwell"):
        cols[name] = cols[name].astype(bool)
    for name in TX_FIELDS:
        if cols[name].dtype != bool:
            cols[name] = cols[name].astype(np.int64)
    return cols


def columns_to_records(cols: dict[str, np.ndarray]) -> list[TxRecord]:
    n = len(cols["vehicle_id"])
    out = []
    for i in range(n):
        out.append(TxRecord(*(bool(cols[f][i]) if cols[f].dtype == bool else int(cols[f][i])
                              for f in TX_FIELDS)))
    return out


def write_records_csv(path, cols: dict[str, np.ndarray], extra: dict[str, np.ndarray] | None = None) -> None:
    """One row per transaction.  ``extra`` columns (e.g. replication) go first."""
    extra = extra or {}
    names = list(extra) + list(TX_FIELDS)
    data = {**extra, **cols}
    n = len(cols["vehicle_id"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        columns = [data[k].tolist() for k in names]
        for i in range(n):
            w.writerow([int(c[i]) for c in columns])
