"""Monte-Carlo attack experiments over the protocol pipeline.

Three canned studies characterize data-poisoning robustness as deviation-vs-
adversary-share tables: a large-population consensus sweep (N=1000), the same
sweep at small N with practical breakdown points, and the combined
election-plus-consensus sweep over a reputation-share grid (heatmap). A
fourth runner audits Sybil and wormhole attacks against the verification
gate. Trials are independent: each draws its own random stream derived from
(seed, global trial index), so outputs are reproducible bit-for-bit and
independent of scheduling.
"""

from __future__ import annotations

import csv
import enum
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .consensus import (
    ConsensusConfig,
    PrivacyLedger,
    Strategy,
    practical_breakdown,
    run_consensus,
)
from .core import Agent, AgentId, ScenarioConfig, SeededRng, build_population
from .errors import ConfigError
from .verification import AuditLog, make_honest_oracle, verify_agent
from .voting import VotingConfig, elect_committee


class Pipeline(enum.Enum):
    CONSENSUS_ONLY = "consensus_only"
    VOTING_PLUS_CONSENSUS = "voting_plus_consensus"


class AttackKind(enum.Enum):
    NONE = "none"
    SYBIL = "sybil"
    WORMHOLE = "wormhole"
    DATA_POISONING = "data_poisoning"


@dataclass(frozen=True)
class AttackModel:
    kind: AttackKind
    share: float = 0.0
    mu_adv: float = 0.0
    extra_identities: int = 0
    false_quadrant: int = 0

    def __post_init__(self):
        if not 0.0 <= self.share <= 1.0:
            raise ConfigError("attack share must lie in [0, 1]")
        if self.kind is AttackKind.SYBIL and self.extra_identities < 1:
            raise ConfigError("sybil attack needs at least one extra identity")
        if self.kind is AttackKind.WORMHOLE and self.false_quadrant < 1:
            raise ConfigError("wormhole attack needs a valid false quadrant")

    @classmethod
    def none(cls) -> "AttackModel":
        return cls(AttackKind.NONE)

    @classmethod
    def sybil(cls, extra_identities: int) -> "AttackModel":
        return cls(AttackKind.SYBIL, extra_identities=extra_identities)

    @classmethod
    def wormhole(cls, false_quadrant: int) -> "AttackModel":
        return cls(AttackKind.WORMHOLE, false_quadrant=false_quadrant)

    @classmethod
    def poisoning(cls, share: float, mu_adv: float) -> "AttackModel":
        return cls(AttackKind.DATA_POISONING, share=share, mu_adv=mu_adv)


def apply_attack(
    population: Sequence[Agent], attack: AttackModel, rng: SeededRng
) -> list[Agent]:
    """Mount one attack on a population, returning the modified agent list.

    Sybil appends clones under fresh unregistered ids; wormhole rewrites the
    claimed quadrant of adversarial agents; data poisoning marks
    round(share*N) agents adversarial reporting mu_adv.
    """
    agents = list(population)
    if attack.kind is AttackKind.NONE:
        return agents
    if attack.kind is AttackKind.SYBIL:
        for i in range(attack.extra_identities):
            template = agents[i % len(population)]
            agents.append(
                Agent(
                    id=f"sybil{i:04d}",
                    quadrant=template.quadrant,
                    measurement=template.measurement,
                    is_adversary=True,
                    adversary_value=template.measurement,
                )
            )
        return agents
    if attack.kind is AttackKind.WORMHOLE:
        return [
            replace(a, quadrant=attack.false_quadrant) if a.is_adversary else a
            for a in agents
        ]
    n = len(agents)
    chosen = rng.gen.permutation(n)[: round(n * attack.share)]
    for i in chosen:
        agents[i] = replace(
            agents[i],
            measurement=attack.mu_adv,
            is_adversary=True,
            adversary_value=attack.mu_adv,
        )
    return agents


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    base: ScenarioConfig
    sweep: tuple[tuple[str, tuple[float, ...]], ...]
    pipeline: Pipeline
    attack: AttackModel

    def __post_init__(self):
        for param, values in self.sweep:
            if param in ("adversary_fraction", "rep_high_prob") and any(
                not 0.0 <= v <= 1.0 for v in values
            ):
                raise ConfigError(f"sweep values for {param} must lie in [0, 1]")

    def sweep_values(self, param: str) -> tuple[float, ...]:
        for name, values in self.sweep:
            if name == param:
                return values
        raise KeyError(param)


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    params: dict
    consensus_value: float
    deviation: float
    elected_adversary_count: int = 0


@dataclass(frozen=True)
class SummaryPoint:
    experiment: str
    strategy: str
    n: int
    adversary_share: float
    rep_share: float | None
    trials: int
    mean_deviation: float
    p10_deviation: float
    p90_deviation: float
    se_deviation: float


@dataclass
class ExperimentResult:
    name: str
    trial_rows: list[TrialOutcome]
    summary: list[SummaryPoint]
    breakdowns: dict[str, float]
    privacy_ok: bool


FIG4_STRATEGIES = (Strategy.MEDIAN, Strategy.MEAN_MEDIAN_FIXED, Strategy.MEAN_MEDIAN_SQRT)


@lru_cache(maxsize=8)
def _agent_ids(n: int) -> tuple[str, ...]:
    return tuple(f"a{i:04d}" for i in range(n))


def _summarize(devs: Sequence[float]) -> tuple[float, float, float, float]:
    arr = np.asarray(devs)
    se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return (
        float(arr.mean()),
        float(np.percentile(arr, 10)),
        float(np.percentile(arr, 90)),
        se,
    )


def _consensus_point(args: tuple) -> list[tuple[float, float, bool]]:
    """One sweep point of the consensus-only pipeline: S poisoning trials."""
    (seed, stream0, trials, n, mu, sigma, mu_adv, share, strategy_value, group_size) = args
    cfg = ConsensusConfig(Strategy(strategy_value), group_size)
    ids = _agent_ids(n)
    out = []
    for t in range(trials):
        rng = SeededRng(seed, stream0 + t)
        values = rng.gen.normal(mu, sigma, n)
        k = round(n * share)
        if k:
            values[rng.gen.permutation(n)[:k]] = mu_adv
        ledger = PrivacyLedger()
        result = run_consensus(list(zip(ids, values.tolist())), cfg, rng, ledger)
        out.append((result.value, abs(result.value - mu), ledger.is_valid()))
    return out


def build_reputation_population(
    n: int,
    mu: float,
    sigma: float,
    mu_adv: float,
    adversary_share: float,
    rep_high_prob: float,
    mu_rep: float,
    sigma_rep: float,
    rng: SeededRng,
) -> list[Agent]:
    """Population with full reputation maps for a colluding-poisoner election.

    Honest voters score a candidate by its sampled reputation (high-branch
    Gaussian or baseline 1); adversarial candidates get the baseline 1 from
    them. Adversarial voters assign mu_rep to fellow adversaries (themselves
    included) and 0 to honest agents, and report mu_adv as their measurement,
    which makes their votes maximal for the bloc and minimal for everyone
    else through the standard preference formula.
    """
    ids = _agent_ids(n)
    adv = np.zeros(n, dtype=bool)
    adv[rng.gen.permutation(n)[: round(n * adversary_share)]] = True
    x = rng.gen.normal(mu, sigma, n)
    x[adv] = mu_adv
    high = rng.gen.random(n) < rep_high_prob
    rep_score = np.where(
        high, np.maximum(rng.gen.normal(mu_rep, sigma_rep, n), 0.0), 1.0
    )
    agents = []
    for i in range(n):
        if adv[i]:
            row = {ids[j]: (mu_rep if adv[j] else 0.0) for j in range(n)}
        else:
            row = {ids[j]: (1.0 if adv[j] else float(rep_score[j])) for j in range(n)}
        agents.append(
            Agent(
                id=ids[i],
                quadrant=1,
                measurement=float(x[i]),
                reputation_out=row,
                is_adversary=bool(adv[i]),
                adversary_value=float(mu_adv) if adv[i] else None,
            )
        )
    return agents


def _fig6_point(args: tuple) -> list[tuple[float, float, int, bool]]:
    """One heatmap cell: S trials of poisoned election + mean-median."""
    (
        seed, stream0, trials, n, mu, sigma, mu_adv, share, rep_share,
        mu_rep, sigma_rep, winners, rounds, tol, max_iter, rho, group_size,
    ) = args
    vote_cfg = VotingConfig(winners, rounds, tol, max_iter, rho)
    cons_cfg = ConsensusConfig(Strategy.MEAN_MEDIAN_FIXED, group_size)
    out = []
    for t in range(trials):
        rng = SeededRng(seed, stream0 + t)
        agents = build_reputation_population(
            n, mu, sigma, mu_adv, share, rep_share, mu_rep, sigma_rep, rng
        )
        by_id = {a.id: a for a in agents}
        groups = elect_committee(agents, vote_cfg, rng)
        elected = [a for grp in groups for a in grp]
        elected_adv = sum(1 for a in elected if by_id[a].is_adversary)
        ledger = PrivacyLedger()
        coalition = [(a, by_id[a].measurement) for a in elected]
        result = run_consensus(coalition, cons_cfg, rng, ledger)
        out.append((result.value, abs(result.value - mu), elected_adv, ledger.is_valid()))
    return out


def _run_points(fn, tasks: list[tuple], jobs: int) -> list:
    if jobs <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=1))


def run_fig4(spec: ExperimentSpec, jobs: int = 1) -> ExperimentResult:
    """Deviation vs adversary share at scale, for median, fixed-size
    mean-median, and sqrt-size mean-median."""
    if spec.pipeline is not Pipeline.CONSENSUS_ONLY:
        raise ConfigError(f"{spec.name}: expected a consensus-only pipeline")
    base = spec.base
    shares = spec.sweep_values("adversary_fraction")
    group_size = base.consensus.min_group_size if base.consensus else 3
    tasks, keys = [], []
    for si, strategy in enumerate(FIG4_STRATEGIES):
        for pi, share in enumerate(shares):
            point_index = si * len(shares) + pi
            tasks.append(
                (
                    base.seed, point_index * base.trials, base.trials, base.n_agents,
                    base.mu, base.sigma, spec.attack.mu_adv, share,
                    strategy.value, group_size,
                )
            )
            keys.append((strategy, share))
    results = _run_points(_consensus_point, tasks, jobs)
    trial_rows, summary = [], []
    privacy_ok = True
    for (strategy, share), point in zip(keys, results):
        devs = [d for _, d, _ in point]
        privacy_ok &= all(ok for _, _, ok in point)
        params = {
            "experiment": spec.name,
            "strategy": strategy.value,
            "n": base.n_agents,
            "adversary_share": share,
            "rep_share": None,
        }
        trial_rows.extend(
            TrialOutcome(t, params, value, dev)
            for t, (value, dev, _) in enumerate(point)
        )
        mean, p10, p90, se = _summarize(devs)
        summary.append(
            SummaryPoint(
                spec.name, strategy.value, base.n_agents, share, None,
                base.trials, mean, p10, p90, se,
            )
        )
    return ExperimentResult(spec.name, trial_rows, summary, {}, privacy_ok)


def run_fig5(
    spec: ExperimentSpec, jobs: int = 1, breakdown_threshold: float = 0.5
) -> ExperimentResult:
    """Small-N version of the consensus sweep plus practical breakdown points
    (threshold is the fraction of the adversarial displacement the mean
    deviation must exceed)."""
    result = run_fig4(spec, jobs=jobs)
    displacement = abs(spec.attack.mu_adv - spec.base.mu)
    for strategy in FIG4_STRATEGIES:
        pairs = [
            (p.adversary_share, p.mean_deviation)
            for p in result.summary
            if p.strategy == strategy.value
        ]
        result.breakdowns[strategy.value] = practical_breakdown(
            pairs, breakdown_threshold, displacement
        )
    return result


def run_fig6(
    spec: ExperimentSpec, jobs: int = 1, breakdown_threshold: float = 0.5
) -> ExperimentResult:
    """Reputation-share x adversary-share heatmap for the elected-committee
    pipeline, with a practical breakdown point per reputation level."""
    if spec.pipeline is not Pipeline.VOTING_PLUS_CONSENSUS:
        raise ConfigError(f"{spec.name}: expected the voting+consensus pipeline")
    base = spec.base
    if base.voting is None:
        raise ConfigError(f"{spec.name}: scenario.voting section required")
    shares = spec.sweep_values("adversary_fraction")
    rep_shares = spec.sweep_values("rep_high_prob")
    group_size = base.consensus.min_group_size if base.consensus else 3
    v = base.voting
    tasks, keys = [], []
    for ri, rep in enumerate(rep_shares):
        for pi, share in enumerate(shares):
            point_index = ri * len(shares) + pi
            tasks.append(
                (
                    base.seed, point_index * base.trials, base.trials, base.n_agents,
                    base.mu, base.sigma, spec.attack.mu_adv, share, rep,
                    base.mu_rep, base.sigma_rep, v.winners_per_round, v.rounds,
                    v.solver_tolerance, v.max_iterations, v.penalty_rho, group_size,
                )
            )
            keys.append((rep, share))
    results = _run_points(_fig6_point, tasks, jobs)
    trial_rows, summary = [], []
    privacy_ok = True
    strategy = "committee_mean_median"
    for (rep, share), point in zip(keys, results):
        devs = [d for _, d, _, _ in point]
        privacy_ok &= all(ok for *_, ok in point)
        params = {
            "experiment": spec.name,
            "strategy": strategy,
            "n": base.n_agents,
            "adversary_share": share,
            "rep_share": rep,
        }
        trial_rows.extend(
            TrialOutcome(t, params, value, dev, adv_count)
            for t, (value, dev, adv_count, _) in enumerate(point)
        )
        mean, p10, p90, se = _summarize(devs)
        summary.append(
            SummaryPoint(
                spec.name, strategy, base.n_agents, share, rep,
                base.trials, mean, p10, p90, se,
            )
        )
    displacement = abs(spec.attack.mu_adv - base.mu)
    breakdowns = {}
    for rep in rep_shares:
        pairs = [
            (p.adversary_share, p.mean_deviation)
            for p in summary
            if p.rep_share == rep
        ]
        breakdowns[f"rep_share={rep:g}"] = practical_breakdown(
            pairs, breakdown_threshold, displacement
        )
    return ExperimentResult(spec.name, trial_rows, summary, breakdowns, privacy_ok)


def run_attack_audit(
    cfg: ScenarioConfig, attack: AttackModel, rng: SeededRng, ttl: int = 10
) -> tuple[list[AgentId], list[AgentId], AuditLog]:
    """Build a population, mount the attack, run every claim through the
    verification gate with honest oracles. Returns (admitted ids, honest
    population ids, audit log)."""
    population = build_population(cfg, rng)
    attacked = apply_attack(population, attack, rng)
    oracle = make_honest_oracle(
        [a.id for a in population], {a.id: a.quadrant for a in population}
    )
    audit = AuditLog()
    admitted = []
    for agent in attacked:
        outcome = verify_agent(
            agent.id, agent.measurement, agent.quadrant,
            tick=0, now=0, ttl=ttl, oracle=oracle, rng=rng, audit=audit,
        )
        if outcome.admitted:
            admitted.append(agent.id)
    honest = [a.id for a in population if not a.is_adversary]
    return admitted, honest, audit


def write_trials_csv(path: str | Path, rows: Iterable[TrialOutcome]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["experiment", "strategy", "n", "adversary_share", "rep_share", "trial", "deviation"]
        )
        for r in rows:
            p = r.params
            w.writerow(
                [
                    p["experiment"], p["strategy"], p["n"],
                    repr(p["adversary_share"]),
                    "" if p["rep_share"] is None else repr(p["rep_share"]),
                    r.trial, repr(r.deviation),
                ]
            )


def write_summary_csv(path: str | Path, rows: Iterable[SummaryPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "experiment", "strategy", "n", "adversary_share", "rep_share",
                "trials", "mean_deviation", "p10_deviation", "p90_deviation",
                "se_deviation",
            ]
        )
        for r in rows:
            w.writerow(
                [
                    r.experiment, r.strategy, r.n, repr(r.adversary_share),
                    "" if r.rep_share is None else repr(r.rep_share),
                    r.trials, repr(r.mean_deviation), repr(r.p10_deviation),
                    repr(r.p90_deviation), repr(r.se_deviation),
                ]
            )
