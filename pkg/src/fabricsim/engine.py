"""Scenario runner: networks, vehicles, replications and the four
experiments (latency heatmap aside, which lives in ``consensus``)."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .bandit import Policy, quantile_edges
from .client import ChannelQueues, Network, make_session
from .consensus import ChannelSpec, LatencyCosts
from .geometry import SceneConfig, dwell_time, sample_scene
from .oracle import OracleTable, solve_oracle, solve_oracle_analytic
from .rng import CLIENT, NETWORK, SCENE, derive_rng
from .stats import mean_ci


@dataclass(frozen=True)
class PfDistribution:
    """Per-channel fault probability: ``uniform`` on [low, high] or a
    uniform ``choice`` among ``values``."""

    kind: str = "uniform"
    low: float = 0.0
    high: float = 0.5
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "uniform":
            if not 0.0 <= self.low <= self.high <= 1.0:
                raise ValueError("need 0 <= low <= high <= 1 for p_f")
        elif self.kind == "choice":
            if not self.values or any(not 0.0 <= v <= 1.0 for v in self.values):
                raise ValueError("choice p_f values must be non-empty and within [0, 1]")
        else:
            raise ValueError(f"unknown p_f distribution {self.kind!r}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size)
        return np.asarray(self.values, dtype=float)[rng.integers(0, len(self.values), size)]


@dataclass(frozen=True)
class ScenarioConfig:
    scene: SceneConfig = SceneConfig()
    n_channels: int = 10
    peer_range: tuple[int, int] = (5, 10)
    pf_distribution: PfDistribution = PfDistribution()
    policy: Policy = Policy.THOMPSON
    epsilon: float = 0.1
    t_train_slots: int = 100
    costs: LatencyCosts = LatencyCosts()
    n_clients: int = 1
    replications: int = 100
    master_seed: int = 0
    # fixed dwell for every vehicle, in slots; None draws dwell from the scene
    horizon_slots: int | None = 10_100
    arrival_prob: float = 1.0
    contention: bool = True
    context_bins: int = 1
    oracle_reps: int = 0  # 0 = closed-form oracle
    rsu_backed: bool = False
    training_schedule: str = "round_robin"
    total_peers: int = 100

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy.parse(self.policy))
        lo, hi = self.peer_range
        object.__setattr__(self, "peer_range", (int(lo), int(hi)))
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not 1 <= lo <= hi <= self.total_peers:
            raise ValueError(f"peer_range {self.peer_range} must lie within [1, {self.total_peers}]")
        if self.replications < 1 or self.n_clients < 1:
            raise ValueError("replications and n_clients must be >= 1")
        if self.horizon_slots is not None and self.horizon_slots < 1:
            raise ValueError("horizon_slots must be >= 1")
        if self.t_train_slots < 0:
            raise ValueError("t_train_slots must be >= 0")
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ValueError("arrival_prob must lie in [0, 1]")
        if self.context_bins < 1:
            raise ValueError("context_bins must be >= 1")


@dataclass
class MetricsLog:
    """Named tables of rows (one CSV each) plus run-level notes."""

    tables: dict[str, list[dict]] = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def add(self, table: str, row: dict) -> None:
        self.tables.setdefault(table, []).append(row)

    def column(self, table: str, name: str, **where) -> np.ndarray:
        rows = [r for r in self.tables[table] if all(r[k] == v for k, v in where.items())]
        return np.array([r[name] for r in rows])

    def write_csv(self, table: str, path) -> int:
        """Write one table; floats use ``repr`` so output is byte-stable."""
        rows = self.tables.get(table, [])
        names = list(rows[0]) if rows else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in
                            (r[k] for k in names)])
        return len(rows)


# -- building blocks -------------------------------------------------------------

def build_network(cfg: ScenarioConfig, rng: np.random.Generator, *, n_rsu: int | None = None) -> list[ChannelSpec]:
    """Channels with peer counts uniform on ``peer_range`` and p_f from the
    configured distribution."""
    lo, hi = cfg.peer_range
    if cfg.rsu_backed:
        if n_rsu is None:
            raise ValueError("RSU-backed networks need the scene's RSU count")
        if hi > n_rsu:
            raise ValueError(f"peer_range upper bound {hi} exceeds the {n_rsu} RSUs in the scene")
    # one draw pair per channel, so a larger network extends a smaller one
    channels = []
    for k in range(cfg.n_channels):
        peers = int(rng.integers(lo, hi + 1))
        channels.append(ChannelSpec(k, peers, float(cfg.pf_distribution.sample(rng, 1)[0])))
    return channels


def replication_seed(master_seed: int, rep: int) -> int:
    """Seed of replication ``rep``: the first 63 bits of SeedSequence([master, rep])."""
    ss = np.random.SeedSequence([master_seed, rep])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def vehicle_dwell_times(cfg: ScenarioConfig, rep: int, n: int) -> np.ndarray:
    """Dwell times (s) of ``n`` vehicles: the fixed horizon, or r/v for the
    first ``n`` vehicles of a sampled scene."""
    slot = cfg.costs.slot_duration_s
    if cfg.horizon_slots is not None:
        return np.full(n, cfg.horizon_slots * slot)
    scene = sample_scene(cfg.scene, derive_rng(cfg.master_seed, SCENE, rep))
    if scene.n_obu < n:
        raise ValueError(f"scene holds {scene.n_obu} vehicles, fewer than the {n} clients requested")
    return np.array([dwell_time(cfg.scene.network_radius_m, float(v)) for v in scene.obu_speeds[:n]])


def _oracle(cfg: ScenarioConfig, channels, contexts, rep: int) -> OracleTable:
    if cfg.oracle_reps > 0:
        return solve_oracle(channels, contexts, cfg.costs, cfg.oracle_reps, replication_seed(cfg.master_seed, rep))
    return solve_oracle_analytic(channels, contexts, cfg.costs)


def _contexts(dwell_s: np.ndarray, n_bins: int) -> tuple[tuple[float, ...], list[float]]:
    """Bin edges and one representative dwell (the bin median) per bin."""
    edges = quantile_edges(dwell_s, n_bins)
    bins = np.searchsorted(edges, dwell_s, side="right") if edges else np.zeros(len(dwell_s), int)
    reps = []
    for b in range(len(edges) + 1):
        members = dwell_s[bins == b]
        reps.append(float(np.median(members)) if members.size else float(np.median(dwell_s)))
    return edges, reps


def setup_replication(cfg: ScenarioConfig, rep: int, *, n_channels: int | None = None,
                      n_vehicles: int | None = None) -> tuple[Network, np.ndarray, tuple[float, ...]]:
    """Network (with oracle table), vehicle dwell times and context edges
    for one replication."""
    if n_channels is not None and n_channels != cfg.n_channels:
        cfg = _replace(cfg, n_channels=n_channels)
    n_vehicles = n_vehicles or cfg.n_clients
    n_rsu = None
    if cfg.rsu_backed:
        n_rsu = sample_scene(cfg.scene, derive_rng(cfg.master_seed, SCENE, rep)).n_rsu
    channels = build_network(cfg, derive_rng(cfg.master_seed, NETWORK, rep), n_rsu=n_rsu)
    dwell_s = vehicle_dwell_times(cfg, rep, n_vehicles)
    edges, contexts = _contexts(dwell_s, cfg.context_bins)
    net = Network(tuple(channels), cfg.costs, cfg.scene.network_radius_m)
    return net.with_oracle(_oracle(cfg, channels, contexts, rep)), dwell_s, edges


def _replace(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    from dataclasses import replace
    return replace(cfg, **changes)


def run_vehicles(cfg: ScenarioConfig, net: Network, dwell_s: np.ndarray, edges, policy: Policy,
                 seed_keys: Sequence[int], *, t_train_slots: int | None = None, contention: bool = False):
    """Sessions for every vehicle under one policy, run to departure."""
    t_train = cfg.t_train_slots if t_train_slots is None else t_train_slots
    sessions = [make_session(i, float(d), net, t_train_slots=t_train, policy=policy, epsilon=cfg.epsilon,
                             bin_edges=edges, arrival_prob=cfg.arrival_prob,
                             training_schedule=cfg.training_schedule)
                for i, d in enumerate(dwell_s)]
    rngs = [derive_rng(cfg.master_seed, CLIENT, *seed_keys, i) for i in range(len(sessions))]
    queues = ChannelQueues.for_network(net) if contention else None
    cols = kernels.run_clients(sessions, net, rngs, queues)
    return sessions, cols


def _map_reps(fn: Callable[[int], object], reps: int, threads: int | None):
    if threads is None or threads <= 1 or reps == 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(reps)))


def expected_rewards(net: Network, context_bin: int = 0) -> np.ndarray:
    return np.asarray(net.oracle.rewards[context_bin])


# -- experiments --------------------------------------------------------------------

def run_experiment_convergence(cfg: ScenarioConfig, *, policies: Sequence[Policy | str] = ("ts", "egreedy"),
                               log_every: int = 100, threads: int | None = None) -> MetricsLog:
    """Single vehicle per replication, both policies on identical seeds.

    Tables: ``selection`` (channel in use every ``log_every`` slots),
    ``probability`` (cumulative selection share per channel, averaged over
    replications) and ``summary`` (one row per replication and policy).
    """
    if cfg.horizon_slots is None:
        raise ValueError("the convergence experiment needs a fixed horizon_slots")
    policies = [Policy.parse(p) for p in policies]
    horizon = cfg.horizon_slots
    k = cfg.n_channels
    marks = np.arange(0, horizon, log_every)

    def one(rep: int):
        net, dwell, edges = setup_replication(cfg, rep, n_vehicles=1)
        rewards = expected_rewards(net)
        out = []
        for pol in policies:
            _, cols = run_vehicles(cfg, net, dwell, edges, pol, (rep,))
            slots, chans = cols["slot_submitted"], cols["channel_id"]
            # channel in flight at each logged slot (-1 before the first submission)
            pos = np.searchsorted(slots, marks, side="right") - 1
            in_use = np.where(pos >= 0, chans[np.maximum(pos, 0)], -1)
            counts = np.zeros((len(marks), k))
            for j in range(k):
                counts[:, j] = np.cumsum(chans == j)[np.maximum(pos, 0)] * (pos >= 0)
            totals = counts.sum(axis=1, keepdims=True)
            share = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
            tally = np.bincount(chans, minlength=k)
            most = int(np.argmax(tally))
            order = np.argsort(-rewards, kind="stable")
            best = net.oracle.channel_for(0)
            out.append((pol, in_use, share, {
                "oracle_channel": net.oracle.channel_for(0),
                "most_selected": most,
                "most_selected_share": float(tally[most] / max(tally.sum(), 1)),
                "most_selected_reward": float(rewards[most]),
                "most_selected_rank": int(np.flatnonzero(order == most)[0]) + 1,
                "oracle_reward": float(rewards[net.oracle.channel_for(0)]),
                "oracle_share": float(tally[best] / max(tally.sum(), 1)) if best >= 0 else 0.0,
                "n_tx": int(len(chans)),
            }))
        return out

    results = _map_reps(one, cfg.replications, threads)
    log = MetricsLog()
    mean_share = {p: np.zeros((len(marks), k)) for p in policies}
    for rep, res in enumerate(results):
        for pol, in_use, share, summ in res:
            name = pol.name.lower()
            for s, ch in zip(marks, in_use):
                log.add("selection", {"replication": rep, "policy": name, "slot": int(s), "channel": int(ch)})
            mean_share[pol] += share / cfg.replications
            log.add("summary", {"replication": rep, "policy": name, **summ})
    for pol in policies:
        for i, s in enumerate(marks):
            for j in range(k):
                log.add("probability", {"policy": pol.name.lower(), "slot": int(s), "channel": j,
                                        "probability": float(mean_share[pol][i, j])})
    return log


def run_experiment_regret(cfg: ScenarioConfig, t_train_grid: Sequence[int], n_ch_grid: Sequence[int], *,
                          operate_slots: int = 2000, policies: Sequence[Policy | str] = ("ts", "egreedy"),
                          threads: int | None = None) -> MetricsLog:
    """Mean post-training regret per (policy, training length, channel count).

    Within a replication every cell shares the network (per channel count)
    and the client stream, so cells are paired across replications.
    """
    policies = [Policy.parse(p) for p in policies]
    if not t_train_grid or not n_ch_grid:
        raise ValueError("regret grids must be non-empty")

    def one(rep: int):
        rows = []
        for n_ch in n_ch_grid:
            for t_train in t_train_grid:
                run_cfg = _replace(cfg, n_channels=int(n_ch), horizon_slots=int(t_train) + operate_slots)
                net, dwell, edges = setup_replication(run_cfg, rep, n_vehicles=1)
                for pol in policies:
                    _, cols = run_vehicles(run_cfg, net, dwell, edges, pol, (rep, int(n_ch), int(t_train)),
                                           t_train_slots=int(t_train))
                    reg = cols["regret"]
                    rows.append({"policy": pol.name.lower(), "t_train": int(t_train), "n_ch": int(n_ch),
                                 "replication": rep, "mean_regret": float(reg.mean()) if reg.size else float("nan"),
                                 "mean_reward": float(cols["reward"].mean()) if reg.size else float("nan"),
                                 "n_tx": int(reg.size)})
        return rows

    log = MetricsLog()
    for rows in _map_reps(one, cfg.replications, threads):
        for r in rows:
            log.add("replications", r)
    for pol in policies:
        for n_ch in n_ch_grid:
            for t_train in t_train_grid:
                vals = log.column("replications", "mean_regret", policy=pol.name.lower(),
                                  t_train=int(t_train), n_ch=int(n_ch))
                m, lo, hi = mean_ci(vals)
                log.add("summary", {"policy": pol.name.lower(), "t_train": int(t_train), "n_ch": int(n_ch),
                                    "mean_regret": m, "ci_low": lo, "ci_high": hi, "reps": int(vals.size)})
    return log


def run_experiment_scalability(cfg: ScenarioConfig, n_clients_grid: Sequence[int], *,
                               policies: Sequence[Policy | str] = ("oracle", "ts", "random"),
                               threads: int | None = None) -> MetricsLog:
    """Latency and throughput against the number of simultaneous clients.

    All clients of a cell share one network and, when ``cfg.contention``
    is on, its endorsement queues.  Latency is averaged over committed
    transactions after training; throughput counts those commits per
    second of operating time, summed over clients.
    """
    policies = [Policy.parse(p) for p in policies]
    if not n_clients_grid:
        raise ValueError("client grid must be non-empty")
    slot = cfg.costs.slot_duration_s

    def one(rep: int):
        rows = []
        top = max(n_clients_grid)
        net, dwell_all, edges = setup_replication(cfg, rep, n_vehicles=top)
        for n_cl in n_clients_grid:
            dwell = dwell_all[:n_cl]
            for pol in policies:
                sessions, cols = run_vehicles(cfg, net, dwell, edges, pol, (rep, int(n_cl)),
                                              contention=cfg.contention)
                ok = cols["ec_success"]
                lat = cols["latency_slots"][ok] * slot
                operating_s = sum((s.t_dwell_slots - s.t_train_slots) for s in sessions) * slot / len(sessions)
                commits = int(ok.sum())
                rows.append({"policy": pol.name.lower(), "n_clients": int(n_cl), "replication": rep,
                             "mean_latency_s": float(lat.mean()) if lat.size else float("nan"),
                             "throughput_tps": commits / operating_s if operating_s > 0 else 0.0,
                             "committed": commits, "submitted": int(ok.size),
                             "mean_queue_wait_s": float(cols["queue_wait"].mean() * slot) if ok.size else 0.0})
        return rows

    log = MetricsLog()
    for rows in _map_reps(one, cfg.replications, threads):
        for r in rows:
            log.add("replications", r)
    for n_cl in n_clients_grid:
        for pol in policies:
            lat = log.column("replications", "mean_latency_s", policy=pol.name.lower(), n_clients=int(n_cl))
            tps = log.column("replications", "throughput_tps", policy=pol.name.lower(), n_clients=int(n_cl))
            lm, llo, lhi = mean_ci(lat)
            tm, tlo, thi = mean_ci(tps)
            log.add("summary", {"policy": pol.name.lower(), "n_clients": int(n_cl),
                                "mean_latency_s": lm, "latency_ci_low": llo, "latency_ci_high": lhi,
                                "throughput_tps": tm, "throughput_ci_low": tlo, "throughput_ci_high": thi,
                                "reps": int(lat.size)})
    return log
