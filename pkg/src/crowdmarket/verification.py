"""Admission gate: hash commitments, pluggable proof oracles, freshness check.

An agent is admitted into coalition formation only when all three checks pass:
identity (alpha), position (beta) and timestamp freshness (gamma). Identity
and position proofs are delegated to injected oracle functions; in simulation
the identity registry is the scenario's agent list and the position checker
compares the claimed quadrant against ground truth.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .core import AgentId, QuadrantId, SeededRng

NONCE_BYTES = 16


@dataclass(frozen=True)
class Opening:
    """The revealed pre-image of a commitment."""

    agent: AgentId
    value: float
    quadrant: QuadrantId
    tick: int
    nonce: bytes


@dataclass(frozen=True)
class Commitment:
    """Hiding, binding fingerprint of a measurement.

    digest = SHA-256 over a canonical encoding of
    (agent, value, quadrant, tick, nonce). The random nonce provides hiding;
    collision resistance of SHA-256 provides binding.
    """

    digest: bytes
    opening: Opening


def _encode(agent: AgentId, value: float, quadrant: QuadrantId, tick: int, nonce: bytes) -> bytes:
    ident = agent.encode("utf-8")
    return (
        struct.pack(">I", len(ident))
        + ident
        + struct.pack(">dqq", value, quadrant, tick)
        + nonce
    )


def commit(
    agent: AgentId, value: float, quadrant: QuadrantId, tick: int, rng: SeededRng
) -> Commitment:
    """Commit to a data point; the nonce is drawn from ``rng``."""
    nonce = rng.gen.bytes(NONCE_BYTES)
    digest = hashlib.sha256(_encode(agent, value, quadrant, tick, nonce)).digest()
    return Commitment(digest, Opening(agent, value, quadrant, tick, nonce))


def verify_opening(commitment: Commitment) -> bool:
    """Recompute the digest from the opening and compare."""
    o = commitment.opening
    digest = hashlib.sha256(_encode(o.agent, o.value, o.quadrant, o.tick, o.nonce)).digest()
    return digest == commitment.digest


@dataclass(frozen=True)
class VerificationOutcome:
    alpha: bool  # identity valid
    beta: bool  # position valid
    gamma: bool  # timestamp fresh
    admitted: bool

    def __post_init__(self):
        if self.admitted != (self.alpha and self.beta and self.gamma):
            raise ValueError("admitted must equal alpha AND beta AND gamma")


@dataclass(frozen=True)
class ProofOracle:
    """Injected identity and position checkers, deterministic per scenario."""

    id_checker: Callable[[AgentId], bool]
    pop_checker: Callable[[QuadrantId, Commitment], bool]


def make_honest_oracle(
    registry: Iterable[AgentId], true_quadrants: Mapping[AgentId, QuadrantId]
) -> ProofOracle:
    """Simulation oracle: identity = registry membership, position = claimed
    quadrant matches the agent's true quadrant."""
    known = frozenset(registry)
    truth = dict(true_quadrants)
    return ProofOracle(
        id_checker=lambda agent: agent in known,
        pop_checker=lambda quadrant, c: truth.get(c.opening.agent) == quadrant,
    )


class AuditLog:
    """Append-only verification audit trail, exportable as CSV.

    Entries may be appended from concurrent verifications in any order; each
    carries (tick, agent) so the trail can be sorted afterwards.
    """

    def __init__(self):
        self.rows: list[tuple[int, AgentId, VerificationOutcome]] = []

    def append(self, tick: int, agent: AgentId, outcome: VerificationOutcome) -> None:
        self.rows.append((tick, agent, outcome))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "agent", "alpha", "beta", "gamma", "admitted"])
            for tick, agent, o in self.rows:
                w.writerow([tick, agent, o.alpha, o.beta, o.gamma, o.admitted])


def verify_agent(
    agent: AgentId,
    value: float,
    quadrant: QuadrantId,
    tick: int,
    now: int,
    ttl: int,
    oracle: ProofOracle,
    rng: SeededRng,
    audit: AuditLog | None = None,
) -> VerificationOutcome:
    """Run the full admission check for one submission.

    Check failures are ordinary False outcomes, not exceptions. The freshness
    rule is ``now - tick <= ttl``.
    """
    if ttl < 0:
        raise ValueError(f"ttl must be >= 0, got {ttl}")
    commitment = commit(agent, value, quadrant, tick, rng)
    alpha = bool(oracle.id_checker(agent))
    beta = bool(oracle.pop_checker(quadrant, commitment))
    gamma = now - tick <= ttl
    outcome = VerificationOutcome(alpha, beta, gamma, alpha and beta and gamma)
    if audit is not None:
        audit.append(tick, agent, outcome)
    return outcome
