"""Domain types, scenario configuration and deterministic seeded randomness.

Everything downstream (verification, voting, consensus, valuation, market,
experiments) builds on the types defined here. All types are immutable after
construction and safe to share across concurrently running trials; random
streams are per-trial and never shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError

if TYPE_CHECKING:  # nested config types live with their own modules
    from .consensus import ConsensusConfig
    from .voting import VotingConfig

AgentId = str
QuadrantId = int


@dataclass
class SeededRng:
    """A deterministic random stream identified by (seed, stream_id).

    Two instances created with the same (seed, stream_id) produce bit-identical
    draw sequences; distinct stream_ids give statistically independent streams.
    Draws advance the internal generator, so reuse an instance for sequential
    draws and create fresh ones (``derive_trial_rng``) for independent trials.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative 64-bit integer")
        if self.stream_id < 0:
            raise ConfigError("stream_id must be non-negative")
        self.gen = np.random.default_rng(
            np.random.SeedSequence((self.seed, self.stream_id))
        )


def derive_trial_rng(base: SeededRng, trial: int) -> SeededRng:
    """Fresh independent stream for one trial: stream_id = trial index."""
    if trial < 0:
        raise ValueError(f"trial index must be >= 0, got {trial}")
    return SeededRng(base.seed, trial)


@dataclass(frozen=True)
class Agent:
    """A market participant: identity, claimed quadrant, measurement, votes.

    ``reputation_out`` maps candidate ids to this agent's trust score for
    them (>= 0). ``is_adversary`` / ``adversary_value`` are simulation-only
    metadata; production code never branches on them outside the harness.
    """

    id: AgentId
    quadrant: QuadrantId
    measurement: float
    reputation_out: dict[AgentId, float] = field(default_factory=dict)
    is_adversary: bool = False
    adversary_value: float | None = None

    def __post_init__(self):
        if (self.adversary_value is not None) != self.is_adversary:
            raise ValueError(
                f"agent {self.id}: adversary_value must be present iff is_adversary"
            )
        for other, r in self.reputation_out.items():
            if r < 0:
                raise ValueError(
                    f"agent {self.id}: negative reputation {r} for {other}"
                )


@dataclass(frozen=True)
class SpatialCoalition:
    """Agents in the same location quadrant pooling their measurements."""

    quadrant: QuadrantId
    members: tuple[AgentId, ...]
    objective: str
    timestamp: int

    def __post_init__(self):
        if not self.members:
            raise ValueError("coalition must have at least one member")
        if len(set(self.members)) != len(self.members):
            raise ValueError("coalition members must be unique")
        if self.quadrant < 1:
            raise ValueError(f"quadrant id must be >= 1, got {self.quadrant}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one simulated scenario.

    Loaded from a TOML file (see ``crowdmarket.config``); identical configs
    produce bit-identical agent populations.
    """

    n_agents: int
    mu: float = 0.0
    sigma: float = 1.0
    adversary_fraction: float = 0.0
    mu_adv: float = 10.0
    rep_high_prob: float = 0.5
    mu_rep: float = 100.0
    sigma_rep: float = 30.0
    trials: int = 1
    seed: int = 0
    consensus: "ConsensusConfig | None" = None
    voting: "VotingConfig | None" = None

    def __post_init__(self):
        if self.n_agents < 1:
            raise ConfigError("n_agents must be a positive integer")
        if self.sigma <= 0:
            raise ConfigError("sigma must be > 0")
        if not 0.0 <= self.adversary_fraction <= 1.0:
            raise ConfigError("adversary_fraction must lie in [0, 1]")
        if not 0.0 <= self.rep_high_prob <= 1.0:
            raise ConfigError("rep_high_prob must lie in [0, 1]")
        if self.sigma_rep <= 0:
            raise ConfigError("sigma_rep must be > 0")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def sample_measurement(rng: SeededRng, agent: Agent, cfg: ScenarioConfig) -> float:
    """One sensor reading: adversaries report their fake value exactly,
    honest agents draw from N(mu, sigma^2)."""
    if agent.is_adversary:
        return agent.adversary_value if agent.adversary_value is not None else cfg.mu_adv
    return float(rng.gen.normal(cfg.mu, cfg.sigma))


def sample_reputation(rng: SeededRng, cfg: ScenarioConfig) -> float:
    """One reputation score: with probability rep_high_prob a draw from
    N(mu_rep, sigma_rep^2) clamped at 0, otherwise the baseline value 1."""
    if rng.gen.random() < cfg.rep_high_prob:
        return max(0.0, float(rng.gen.normal(cfg.mu_rep, cfg.sigma_rep)))
    return 1.0


def agent_id(index: int) -> AgentId:
    return f"a{index:04d}"


def build_population(
    cfg: ScenarioConfig, rng: SeededRng, quadrant: QuadrantId = 1
) -> list[Agent]:
    """Construct the scenario's agent population.

    Exactly round(n_agents * adversary_fraction) agents are adversarial,
    placed at uniformly random indices drawn from ``rng``; adversaries report
    mu_adv, honest agents report Gaussian measurements. Reputation maps start
    empty (the experiment pipeline fills them when voting is involved).
    """
    n = cfg.n_agents
    n_adv = round(n * cfg.adversary_fraction)
    adv_indices = set(rng.gen.permutation(n)[:n_adv].tolist())
    agents = []
    for i in range(n):
        is_adv = i in adv_indices
        agent = Agent(
            id=agent_id(i),
            quadrant=quadrant,
            measurement=0.0,
            is_adversary=is_adv,
            adversary_value=cfg.mu_adv if is_adv else None,
        )
        agents.append(replace(agent, measurement=sample_measurement(rng, agent, cfg)))
    return agents
