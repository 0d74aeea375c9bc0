"""Simulator of bandit-driven channel selection by vehicles on a
Fabric-style permissioned blockchain."""

from .bandit import (BanditState, Policy, RewardSample, compute_reward, regret, select_arm, train,
                     update_posterior)
from .client import (ChannelQueues, ClientSession, JoinConfirm, Network, NoNetworkError, Phase, TxRecord,
                     join, make_session, run_session, step)
from .consensus import (ChannelSpec, ConsensusOutcome, LatencyCosts, consensus_round, execute_transaction,
                        latency_heatmap, round_success_prob, transaction_latency)
from .geometry import SceneConfig, SpatialScene, dwell_time, sample_scene
from .gossip import GossipState, gossip_monte_carlo, gossip_step, rounds_to_dissemination
from .kernels import BACKEND
from .oracle import OracleTable, oracle_reward_draw, solve_oracle, solve_oracle_analytic

__version__ = "0.1.0"
