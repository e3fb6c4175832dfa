"""Reputation-weighted maximum-entropy committee election.

Votes are pairwise preference matrices derived from measurements and
reputation scores. The electorate's mean matrix defines the representative-
probability target: a distribution over "preferred subset of size K"
outcomes whose induced pairwise-win probabilities match the electorate's
proportions. Among all such distributions the election uses the one with
maximum entropy, found by ascending the penalized objective

    H(pi) - rho * sum_{j<k} (S(pi)_{jk} - S(A)_{jk})^2

over the exponential-family (softmax) parameterization of the outcome
simplex. For K-subset outcomes S(pi) depends on pi only through the marginal
inclusion probabilities q = P' pi, which keeps every solver step O(m*n) and
the Newton correction O(m*n^2). When the target matrix is achievable, the
penalized optimum coincides with the equality-constrained one and the
reported residual drops to the solver tolerance.

The committee is drawn by sampling one outcome from the optimal distribution;
repeating on the shrinking candidate pool J times yields J disjoint winner
groups.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Agent, AgentId, SeededRng
from .errors import ConfigError, SolverError

# two preference scores closer than this count as "prefers both equally"
EQUALITY_TOL = 1e-12

# refuse to enumerate ordering sets larger than this
MAX_ORDERINGS = 5_000_000


@dataclass(frozen=True)
class VotingConfig:
    winners_per_round: int
    rounds: int = 1
    solver_tolerance: float = 1e-8
    max_iterations: int = 100_000
    penalty_rho: float = 10_000.0

    def __post_init__(self):
        if self.winners_per_round < 1:
            raise ConfigError("winners_per_round must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.solver_tolerance <= 0:
            raise ConfigError("solver_tolerance must be > 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.penalty_rho <= 0:
            raise ConfigError("penalty_rho must be > 0")


@dataclass(frozen=True)
class PreferenceMatrix:
    """Pairwise preference proportions over an ordered candidate list.

    entries[j, k] is the weight with which candidate j is preferred over
    candidate k: zero diagonal, entries in [0, 1], and
    entries[j, k] + entries[k, j] = 1 off the diagonal.
    """

    entries: np.ndarray
    candidate_index: tuple[AgentId, ...]

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", e)
        n = len(self.candidate_index)
        if e.shape != (n, n):
            raise ValueError(f"entries must be {n}x{n}, got {e.shape}")
        if np.any(np.abs(np.diag(e)) > 0):
            raise ValueError("diagonal entries must be 0")
        if e.min() < -1e-12 or e.max() > 1 + 1e-12:
            raise ValueError("entries must lie in [0, 1]")
        comp = e + e.T
        np.fill_diagonal(comp, 1.0)
        if np.max(np.abs(comp - 1.0)) > 1e-12:
            raise ValueError("entries[j,k] + entries[k,j] must equal 1 off-diagonal")
        e.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.candidate_index)

    def restrict(self, ids: Sequence[AgentId]) -> "PreferenceMatrix":
        """Submatrix over the given candidates (voters unchanged)."""
        pos = {a: i for i, a in enumerate(self.candidate_index)}
        idx = [pos[a] for a in ids]
        return PreferenceMatrix(self.entries[np.ix_(idx, idx)].copy(), tuple(ids))


@dataclass(frozen=True)
class Ordering:
    """One election outcome: a preferred group and the unranked rest."""

    preferred: tuple[AgentId, ...]
    non_preferred: tuple[AgentId, ...]

    def __post_init__(self):
        if not self.preferred:
            raise ValueError("preferred group must be non-empty")
        if set(self.preferred) & set(self.non_preferred):
            raise ValueError("preferred and non-preferred groups must be disjoint")


@dataclass(frozen=True)
class OrderingDistribution:
    orderings: tuple[Ordering, ...]
    probs: np.ndarray
    residual: float
    entropy: float

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        if len(p) != len(self.orderings):
            raise ValueError("probs and orderings must have equal length")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {p.sum()!r}, expected 1")
        if p.min() < -1e-12:
            raise ValueError("probabilities must be non-negative")
        if self.residual < 0:
            raise ValueError("residual must be non-negative")
        p.setflags(write=False)


def preference_score(voter: Agent, candidate: Agent) -> float:
    """(1 + |x_v| * r_{v->c}) / (1 + |x_v - x_c|); denominator is always >= 1."""
    try:
        r = voter.reputation_out[candidate.id]
    except KeyError:
        raise ValueError(
            f"voter {voter.id} has no reputation score for candidate {candidate.id}"
        ) from None
    if r < 0:
        raise ValueError(f"reputation must be >= 0, got {r}")
    x_v, x_c = voter.measurement, candidate.measurement
    return (1.0 + abs(x_v) * r) / (1.0 + abs(x_v - x_c))


def _compare(scores_j: np.ndarray, scores_k: np.ndarray) -> np.ndarray:
    diff = scores_j - scores_k
    return np.where(diff > EQUALITY_TOL, 1.0, np.where(diff < -EQUALITY_TOL, 0.0, 0.5))


def build_agent_preference(voter: Agent, candidates: Sequence[Agent]) -> PreferenceMatrix:
    """One agent's vote: 1 / 0.5 / 0 entries from pairwise score comparison."""
    if not candidates:
        raise ValueError("candidate list must be non-empty")
    scores = np.array([preference_score(voter, c) for c in candidates])
    entries = _compare(scores[:, None], scores[None, :])
    np.fill_diagonal(entries, 0.0)
    return PreferenceMatrix(entries, tuple(c.id for c in candidates))


def aggregate_preferences(matrices: Sequence[PreferenceMatrix]) -> PreferenceMatrix:
    """Entrywise mean of the individual votes."""
    if not matrices:
        raise ValueError("nothing to aggregate")
    index = matrices[0].candidate_index
    for m in matrices[1:]:
        if m.candidate_index != index:
            raise ValueError("all preference matrices must share one candidate index")
    mean = np.mean([m.entries for m in matrices], axis=0)
    return PreferenceMatrix(mean, index)


def aggregate_preference_matrix(agents: Sequence[Agent]) -> PreferenceMatrix:
    """Electorate mean preference matrix, vectorized.

    Equivalent to averaging build_agent_preference over every agent as voter
    (agents double as the candidate list). Builds an n^3 comparison tensor,
    so intended for committee-sized electorates, not n ~ 10^3.
    """
    ids = [a.id for a in agents]
    x = np.array([a.measurement for a in agents])
    r = np.array([[a.reputation_out[c] for c in ids] for a in agents])
    if np.any(r < 0):
        raise ValueError("reputation scores must be >= 0")
    scores = (1.0 + np.abs(x)[:, None] * r) / (1.0 + np.abs(x[:, None] - x[None, :]))
    tensor = _compare(scores[:, :, None], scores[:, None, :])
    entries = tensor.mean(axis=0)
    np.fill_diagonal(entries, 0.0)
    return PreferenceMatrix(entries, tuple(ids))


@lru_cache(maxsize=64)
def _prepared_combinations(n: int, k: int) -> tuple[tuple[tuple[int, ...], ...], np.ndarray]:
    """All K-subsets of range(n) in lexicographic order, plus the m-by-n
    0/1 inclusion matrix. Cached: election rounds reuse the same (n, k)."""
    m = math.comb(n, k)
    if m > MAX_ORDERINGS:
        raise ValueError(
            f"C({n},{k}) = {m} orderings exceeds the enumeration limit; use a smaller K"
        )
    combos = tuple(itertools.combinations(range(n), k))
    inclusion = np.zeros((m, n))
    rows = np.repeat(np.arange(m), k)
    cols = np.fromiter(itertools.chain.from_iterable(combos), dtype=np.intp, count=m * k)
    inclusion[rows, cols] = 1.0
    inclusion.setflags(write=False)
    return combos, inclusion


def enumerate_orderings(candidates: Sequence[AgentId], k: int) -> list[Ordering]:
    """All C(n, k) preferred-subset outcomes, in lexicographic candidate order."""
    n = len(candidates)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= {n}, got K={k}")
    combos, _ = _prepared_combinations(n, k)
    out = []
    for combo in combos:
        chosen = set(combo)
        out.append(
            Ordering(
                preferred=tuple(candidates[i] for i in combo),
                non_preferred=tuple(c for i, c in enumerate(candidates) if i not in chosen),
            )
        )
    return out


def ordering_preference(o: Ordering, candidates: Sequence[AgentId]) -> PreferenceMatrix:
    """Pairwise matrix induced by one outcome: 1 over the group boundary,
    0.5 within a group, 0 diagonal."""
    pos = {a: i for i, a in enumerate(candidates)}
    if sorted(pos) != sorted(o.preferred + o.non_preferred):
        raise ValueError("ordering must partition the candidate list")
    inc = np.zeros(len(candidates))
    inc[[pos[a] for a in o.preferred]] = 1.0
    entries = 0.5 + 0.5 * (inc[:, None] - inc[None, :])
    np.fill_diagonal(entries, 0.0)
    return PreferenceMatrix(entries, tuple(candidates))


def _solve_core(
    s_entries: np.ndarray, inclusion: np.ndarray, cfg: VotingConfig
) -> tuple[np.ndarray, float, float, int]:
    """Maximize H(pi) - rho*penalty over pi = softmax(P @ lam).

    Returns (pi, residual, entropy, iterations). Steps are damped Newton
    (Gauss-Newton curvature) with a backtracking-gradient fallback; the
    stopping rule is the outcome-space gradient norm <= solver_tolerance.
    Raises SolverError when max_iterations is exhausted.
    """
    P = inclusion
    n = P.shape[1]
    rho = cfg.penalty_rho
    targets = s_entries - 0.5
    np.fill_diagonal(targets, 0.0)

    def evaluate(lam):
        logits = P @ lam
        logpi = logits - _logsumexp(logits)
        pi = np.exp(logpi)
        q = P.T @ pi
        gap = 0.5 * (q[:, None] - q[None, :]) - targets
        entropy = -float(pi @ logpi)
        objective = entropy - rho * 0.5 * float((gap * gap).sum())
        return pi, logpi, q, gap, entropy, objective

    def cov_apply(v, pi, q):
        pv = P @ v
        return P.T @ (pi * pv) - q * (q @ v)

    lam = np.zeros(n)
    pi, logpi, q, gap, entropy, objective = evaluate(lam)
    iterations = 0
    g_norm = np.inf
    threshold = cfg.solver_tolerance
    while iterations < cfg.max_iterations:
        w = gap.sum(axis=1)
        # full outcome-space gradient: the KKT measure for the simplex problem
        c = rho * (P @ w)
        g_theta = -pi * (logpi + entropy + c - pi @ c)
        g_norm = float(np.linalg.norm(g_theta))
        # gradient entries are differences of terms as large as the penalty
        # field c and log pi, so the attainable norm floor scales with them
        scale = 1.0 + float(np.abs(c).max()) + float(np.abs(logpi).max())
        threshold = cfg.solver_tolerance * scale
        if g_norm <= threshold:
            residual = float(np.abs(gap).max()) if n > 1 else 0.0
            return pi, residual, entropy, iterations

        iterations += 1
        grad = -cov_apply(lam + rho * w, pi, q)

        # Gauss-Newton direction; C @ ones = 0, so C M C reduces to n/2 * C @ C
        cov = (P * pi[:, None]).T @ P - np.outer(q, q)
        hess = cov + (0.5 * rho * n) * (cov @ cov)
        ridge = 1e-12 * max(1.0, float(np.trace(hess)) / n)
        try:
            direction = np.linalg.solve(hess + ridge * np.eye(n), grad)
        except np.linalg.LinAlgError:
            direction = grad
        if grad @ direction <= 0.0:
            direction = grad
        norm = float(np.linalg.norm(direction))
        if norm > 1e3 * (1.0 + float(np.linalg.norm(lam))):
            direction = direction * (1e3 * (1.0 + float(np.linalg.norm(lam))) / norm)

        min_gain = 1e-15 * (1.0 + abs(objective))
        stepped = False
        for trial_dir in (direction, grad):
            slope = float(grad @ trial_dir)
            if slope <= 0.0:
                continue
            alpha = 1.0
            while alpha > 1e-20:
                cand = evaluate(lam + alpha * trial_dir)
                if cand[5] >= objective + max(1e-4 * alpha * slope, min_gain):
                    lam = lam + alpha * trial_dir
                    pi, logpi, q, gap, entropy, objective = cand
                    stepped = True
                    break
                alpha *= 0.5
            if stepped:
                break
        if not stepped:
            # no alpha down to 1e-20 in either ascent direction can improve
            # the objective by one machine epsilon: this iterate IS the
            # numerical optimum, whatever gradient norm the fp noise reports
            residual = float(np.abs(gap).max()) if n > 1 else 0.0
            return pi, residual, entropy, iterations

    residual = float(np.abs(gap).max()) if n > 1 else 0.0
    raise SolverError(
        f"max-entropy solve did not converge after {iterations} iterations "
        f"(gradient norm {g_norm:.3e} vs threshold {threshold:.3e}, "
        f"residual {residual:.3e})",
        distribution=(pi, residual, entropy),
    )


def _logsumexp(v: np.ndarray) -> float:
    hi = v.max()
    return hi + math.log(float(np.exp(v - hi).sum()))


def solve_max_entropy(
    s_a: PreferenceMatrix, orderings: Sequence[Ordering], cfg: VotingConfig
) -> OrderingDistribution:
    """Maximum-entropy outcome distribution for the aggregated preferences.

    The residual reports how far the achievable pairwise matrix remained from
    the target (max-abs entry); for achievable targets it falls to solver
    tolerance levels.
    """
    if not orderings:
        raise ValueError("orderings must be non-empty")
    pos = {a: i for i, a in enumerate(s_a.candidate_index)}
    n = s_a.n
    inclusion = np.zeros((len(orderings), n))
    for i, o in enumerate(orderings):
        inclusion[i, [pos[a] for a in o.preferred]] = 1.0
    pi, residual, entropy, _ = _solve_core(s_a.entries, inclusion, cfg)
    return OrderingDistribution(tuple(orderings), pi, residual, entropy)


def sample_outcome(dist: OrderingDistribution, rng: SeededRng) -> Ordering:
    """Draw one outcome ordering according to the distribution."""
    idx = _sample_index(dist.probs, rng)
    return dist.orderings[idx]


def _sample_index(probs: np.ndarray, rng: SeededRng) -> int:
    p = np.clip(probs, 0.0, None)
    p = p / p.sum()
    return int(rng.gen.choice(len(p), p=p))


@dataclass(frozen=True)
class ElectionRound:
    round: int
    ordering_count: int
    residual: float
    entropy: float
    winners: tuple[AgentId, ...]


def elect_committee(
    agents: Sequence[Agent],
    cfg: VotingConfig,
    rng: SeededRng,
    transcript: list[ElectionRound] | None = None,
) -> list[list[AgentId]]:
    """J rounds of K winners each, over a shrinking candidate pool.

    Every agent votes once; the full electorate matrix is computed up front
    and each round solves over its submatrix on the not-yet-elected
    candidates, then samples that round's preferred group.
    """
    k, j = cfg.winners_per_round, cfg.rounds
    if len(agents) < k * j:
        raise ValueError(
            f"need at least K*J = {k * j} candidates, got {len(agents)}"
        )
    full = aggregate_preference_matrix(agents)
    remaining = list(full.candidate_index)
    groups: list[list[AgentId]] = []
    for rnd in range(1, j + 1):
        sub = full.restrict(remaining)
        combos, inclusion = _prepared_combinations(len(remaining), k)
        pi, residual, entropy, _ = _solve_core(sub.entries, inclusion, cfg)
        winner_combo = combos[_sample_index(pi, rng)]
        winners = tuple(remaining[i] for i in winner_combo)
        groups.append(list(winners))
        if transcript is not None:
            transcript.append(
                ElectionRound(rnd, len(combos), residual, entropy, winners)
            )
        chosen = set(winners)
        remaining = [a for a in remaining if a not in chosen]
    return groups


def write_transcript_csv(path: str | Path, rows: Iterable[ElectionRound]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "ordering_set_size", "residual", "entropy", "winners"])
        for r in rows:
            w.writerow(
                [r.round, r.ordering_count, repr(r.residual), repr(r.entropy), ";".join(r.winners)]
            )
