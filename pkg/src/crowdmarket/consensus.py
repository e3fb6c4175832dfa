"""Decentralized data-consensus estimators and breakdown-point analysis.

Three estimator families over a coalition's measurements: plain mean (fragile,
breakdown 1/n), plain median (breakdown 1/2, but requires sharing raw values),
and the mean-median compromise: agents are shuffled into g groups of at least
s members, each group averages internally, and the agreed value is the median
of the g group means. Only group means cross group boundaries, so k = s - 1
colluding agents are needed to reconstruct an individual input, while the
theoretical breakdown point is g / (2n).
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import AgentId, SeededRng
from .errors import ConfigError


class Strategy(enum.Enum):
    MEAN = "mean"
    MEDIAN = "median"
    MEAN_MEDIAN_FIXED = "mean_median_fixed"
    MEAN_MEDIAN_SQRT = "mean_median_sqrt"


@dataclass(frozen=True)
class ConsensusConfig:
    strategy: Strategy = Strategy.MEAN_MEDIAN_FIXED
    min_group_size: int = 3

    def __post_init__(self):
        if self.strategy is Strategy.MEAN_MEDIAN_FIXED and self.min_group_size < 2:
            raise ConfigError("min_group_size must be >= 2 for fixed-size grouping")
        if self.min_group_size < 1:
            raise ConfigError("min_group_size must be positive")


@dataclass(frozen=True)
class Grouping:
    groups: tuple[tuple[AgentId, ...], ...]
    g: int
    s_effective: int

    def __post_init__(self):
        if self.g != len(self.groups):
            raise ValueError("g must equal the number of groups")
        if any(len(gr) < self.s_effective for gr in self.groups):
            raise ValueError("every group must have at least s_effective members")


class Scope(enum.Enum):
    GROUP_LOCAL = "group_local"
    CROSS_GROUP = "cross_group"


class PayloadKind(enum.Enum):
    RAW_VALUE = "raw_value"
    GROUP_MEAN = "group_mean"


# ledger message: (scope, payload_kind, sender)
Message = tuple[Scope, PayloadKind, AgentId]


class PrivacyLedger:
    """Record of every message exchanged during consensus.

    Messages are plain (scope, payload_kind, sender) tuples; millions get
    logged across a sweep. The k-privacy invariant: no raw value ever crosses
    a group boundary.
    """

    def __init__(self):
        self.messages: list[Message] = []

    def log(self, scope: Scope, payload_kind: PayloadKind, sender: AgentId) -> None:
        self.messages.append((scope, payload_kind, sender))

    def violations(self) -> list[Message]:
        return [
            m
            for m in self.messages
            if m[0] is Scope.CROSS_GROUP and m[1] is PayloadKind.RAW_VALUE
        ]

    def is_valid(self) -> bool:
        return not self.violations()


@dataclass(frozen=True)
class ConsensusResult:
    value: float
    group_means: tuple[float, ...]
    grouping: Grouping
    privacy_k: int


def _group_indices(n: int, s: int, rng: SeededRng) -> list[list[int]]:
    """Shuffled index partition: g = floor(n/s) chunks of s, remainder dealt
    round-robin to the leading groups."""
    if s < 1:
        raise ValueError(f"group size must be >= 1, got {s}")
    if n < s:
        raise ValueError(f"cannot form groups of {s} from {n} members")
    perm = rng.gen.permutation(n)
    g = n // s
    groups = [perm[i * s : (i + 1) * s].tolist() for i in range(g)]
    for j, extra in enumerate(perm[g * s :].tolist()):
        groups[j % g].append(extra)
    return groups


def form_groups(members: Sequence[AgentId], s: int, rng: SeededRng) -> Grouping:
    """Randomly partition members into g = floor(n/s) groups.

    Members are shuffled by ``rng``; the first g*s go into groups of exactly s
    and the n mod s leftovers are dealt round-robin to the leading groups, so
    sizes are s or s+1 whenever the remainder does not exceed g. s = 1 is
    allowed here (useful for singleton-group analysis) but rejected by
    ConsensusConfig for production use.
    """
    idx = _group_indices(len(members), s, rng)
    return Grouping(
        tuple(tuple(members[i] for i in gr) for gr in idx), len(idx), s
    )


def consensus_mean(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("cannot take the mean of an empty coalition")
    return float(np.mean(values))


def consensus_median(values: Sequence[float]) -> float:
    """Middle order statistic; even counts take the midpoint of the pair."""
    if len(values) == 0:
        raise ValueError("cannot take the median of an empty coalition")
    return float(np.median(values))


def group_means(grouping: Grouping, values: dict[AgentId, float]) -> tuple[float, ...]:
    """Within-group means, in group order. Exposed so adversarial-placement
    analyses can drive the estimator with hand-built groupings."""
    return tuple(float(np.mean([values[a] for a in gr])) for gr in grouping.groups)


def resolve_group_size(cfg: ConsensusConfig, n: int) -> int:
    if cfg.strategy is Strategy.MEAN_MEDIAN_SQRT:
        return int(math.isqrt(n))
    return cfg.min_group_size


def consensus_mean_median(
    coalition: Sequence[tuple[AgentId, float]],
    cfg: ConsensusConfig,
    rng: SeededRng,
    ledger: PrivacyLedger,
) -> ConsensusResult:
    """Median of within-group means.

    Raw values are logged as group-local messages only; the per-group means
    are the only cross-group traffic (sender: the group's first member).
    Means are computed vectorized so sweeps over thousand-agent coalitions
    stay cheap.
    """
    members = [a for a, _ in coalition]
    vals = np.array([v for _, v in coalition], dtype=float)
    s = resolve_group_size(cfg, len(coalition))
    idx = _group_indices(len(coalition), s, rng)
    g = len(idx)
    sums = vals[[i for gr in idx[:g] for i in gr[:s]]].reshape(g, s).sum(axis=1)
    counts = np.full(g, s, dtype=float)
    for gi, gr in enumerate(idx):
        for extra in gr[s:]:
            sums[gi] += vals[extra]
            counts[gi] += 1
    means = tuple((sums / counts).tolist())
    grouping = Grouping(tuple(tuple(members[i] for i in gr) for gr in idx), g, s)
    log = ledger.messages.append
    for gr in grouping.groups:
        for agent in gr:
            log((Scope.GROUP_LOCAL, PayloadKind.RAW_VALUE, agent))
        log((Scope.CROSS_GROUP, PayloadKind.GROUP_MEAN, gr[0]))
    return ConsensusResult(
        value=float(np.median(means)),
        group_means=means,
        grouping=grouping,
        privacy_k=s - 1,
    )


def run_consensus(
    coalition: Sequence[tuple[AgentId, float]],
    cfg: ConsensusConfig,
    rng: SeededRng,
    ledger: PrivacyLedger,
) -> ConsensusResult:
    """Strategy dispatch. Mean and median run as a single whole-coalition
    group, so their raw-value sharing stays group-local in the ledger."""
    if cfg.strategy in (Strategy.MEAN_MEDIAN_FIXED, Strategy.MEAN_MEDIAN_SQRT):
        return consensus_mean_median(coalition, cfg, rng, ledger)
    members = tuple(a for a, _ in coalition)
    vals = [v for _, v in coalition]
    for agent in members:
        ledger.log(Scope.GROUP_LOCAL, PayloadKind.RAW_VALUE, agent)
    if cfg.strategy is Strategy.MEAN:
        value = consensus_mean(vals)
        privacy_k = len(members) - 1
    else:
        value = consensus_median(vals)
        privacy_k = 0  # exact median needs all raw values at the aggregator
    grouping = Grouping((members,), 1, len(members))
    return ConsensusResult(value, (value,), grouping, privacy_k)


def theoretical_breakdown(n: int, g: int) -> float:
    """Minimum adversary share able to move the median of g group means
    arbitrarily: one unbounded reporter in each of g/2 groups suffices."""
    if not 1 <= g <= n:
        raise ValueError(f"need 1 <= g <= n, got g={g}, n={n}")
    return g / (2 * n)


def practical_breakdown(
    results: Sequence[tuple[float, float]],
    threshold: float,
    displacement: float = 1.0,
) -> float:
    """Smallest adversary share whose mean deviation exceeds
    threshold * displacement, where displacement = |mu_adv - mu|.

    ``results`` are (adversary_share, mean deviation) pairs sorted by share;
    returns 1.0 when the threshold is never exceeded.
    """
    if len(results) == 0:
        raise ValueError("results must be non-empty")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    shares = [s for s, _ in results]
    if shares != sorted(shares):
        raise ValueError("results must be sorted by adversary_share")
    for share, deviation in results:
        if deviation > threshold * displacement:
            return share
    return 1.0


@dataclass(frozen=True)
class ConsensusRow:
    """One exportable consensus outcome."""

    trial: int
    strategy: str
    n: int
    g: int
    s: int
    adversary_share: float
    value: float
    deviation: float


def write_consensus_csv(path: str | Path, rows: Iterable[ConsensusRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "strategy", "n", "g", "s", "adversary_share", "value", "deviation"])
        for r in rows:
            w.writerow(
                [r.trial, r.strategy, r.n, r.g, r.s, repr(r.adversary_share), repr(r.value), repr(r.deviation)]
            )
