"""Shapley-value data valuation and the useful proof-of-work chain.

Each data point's value is its expected marginal contribution to a pluggable
objective over all join orders (exact enumeration up to 16 points, permutation
sampling beyond). Market admission work is sized inversely to value: the more
valuable an agent's data, the fewer incoming points it must valuate for the
next coalition. Work receipts are hash-chained so a tampered stage is
detectable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import AgentId, SeededRng, SpatialCoalition
from .errors import IntegrityError

EXACT_LIMIT = 16
RIDGE_FALLBACK = 1e-6


@dataclass(frozen=True)
class DataPointRef:
    owner: AgentId
    features: tuple[float, ...]
    label: float | None = None


@dataclass(frozen=True)
class ObjectiveFunction:
    """Maps a subset of data points to a utility. Must be defined on the
    empty subset and deterministic for a fixed subset."""

    evaluate: Callable[[Sequence[DataPointRef]], float]
    descriptor: str


@dataclass(frozen=True)
class ShapleyReport:
    values: dict[AgentId, float]
    method: str  # "exact" | "permutation_sampled"
    grand_value: float
    empty_value: float
    samples: int | None = None
    seed: int | None = None
    stderr: dict[AgentId, float] | None = None


def _owners(points: Sequence[DataPointRef]) -> list[AgentId]:
    owners = [p.owner for p in points]
    if len(set(owners)) != len(owners):
        raise ValueError("each data point must have a distinct owner")
    return owners


def shapley_exact(points: Sequence[DataPointRef], v: ObjectiveFunction) -> ShapleyReport:
    """Exact Shapley values by subset enumeration (2^n objective calls).

    psi_i = sum over T not containing i of |T|!(n-|T|-1)!/n! * (v(T+i) - v(T)).
    Efficiency, symmetry and the null-player property hold by construction.
    """
    owners = _owners(points)
    n = len(points)
    if n == 0:
        raise ValueError("cannot valuate an empty batch")
    if n > EXACT_LIMIT:
        raise ValueError(
            f"{n} points exceed the exact-enumeration limit ({EXACT_LIMIT}); "
            "use shapley_sampled"
        )
    subset_value = [0.0] * (1 << n)
    for mask in range(1 << n):
        subset = [points[i] for i in range(n) if mask >> i & 1]
        subset_value[mask] = float(v.evaluate(subset))
    fact = [math.factorial(i) for i in range(n + 1)]
    weight = [fact[t] * fact[n - t - 1] / fact[n] for t in range(n)]
    psi = []
    for i in range(n):
        # fsum is exactly rounded, hence order-independent: interchangeable
        # players produce identical term multisets and so identical values,
        # making the symmetry axiom hold to the last float bit
        bit = 1 << i
        terms = [
            weight[int(mask).bit_count()] * (subset_value[mask | bit] - subset_value[mask])
            for mask in range(1 << n)
            if not mask & bit
        ]
        psi.append(math.fsum(terms))
    return ShapleyReport(
        values={o: p for o, p in zip(owners, psi)},
        method="exact",
        grand_value=subset_value[(1 << n) - 1],
        empty_value=subset_value[0],
    )


def shapley_sampled(
    points: Sequence[DataPointRef],
    v: ObjectiveFunction,
    samples: int,
    rng: SeededRng,
) -> ShapleyReport:
    """Unbiased permutation-sampling estimate of the Shapley values.

    Marginal contributions telescope along each permutation, so the estimates
    sum to v(full) - v(empty) exactly. Per-owner standard errors of the mean
    are reported alongside.
    """
    owners = _owners(points)
    n = len(points)
    if n == 0:
        raise ValueError("cannot valuate an empty batch")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    empty_value = float(v.evaluate([]))
    grand_value = float(v.evaluate(list(points)))
    total = np.zeros(n)
    total_sq = np.zeros(n)
    for _ in range(samples):
        perm = rng.gen.permutation(n)
        prefix: list[DataPointRef] = []
        prev = empty_value
        for i in perm:
            prefix.append(points[i])
            cur = float(v.evaluate(prefix)) if len(prefix) < n else grand_value
            marginal = cur - prev
            total[i] += marginal
            total_sq[i] += marginal * marginal
            prev = cur
    psi = total / samples
    var = np.maximum(total_sq / samples - psi**2, 0.0)
    se = np.sqrt(var / samples)
    return ShapleyReport(
        values={o: float(p) for o, p in zip(owners, psi)},
        method="permutation_sampled",
        grand_value=grand_value,
        empty_value=empty_value,
        samples=samples,
        seed=rng.seed,
        stderr={o: float(s) for o, s in zip(owners, se)},
    )


def _fit_predict(
    train: Sequence[DataPointRef], holdout_x: np.ndarray
) -> np.ndarray:
    # through-origin OLS: d points suffice to pin a d-feature model
    a = np.array([p.features for p in train], dtype=float)
    y = np.array([p.label for p in train], dtype=float)
    gram = a.T @ a
    if np.linalg.matrix_rank(a) < a.shape[1]:
        gram = gram + RIDGE_FALLBACK * np.eye(a.shape[1])
    beta = np.linalg.solve(gram, a.T @ y)
    return holdout_x @ beta


def regression_objective(
    train: Sequence[DataPointRef], holdout: Sequence[DataPointRef]
) -> ObjectiveFunction:
    """Utility of a training subset = -MSE of a least-squares fit on the
    held-out points; the empty subset falls back to the holdout label mean."""
    if not holdout:
        raise ValueError("holdout must be non-empty")
    dims = {len(p.features) for p in list(train) + list(holdout)}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
    if any(p.label is None for p in list(train) + list(holdout)):
        raise ValueError("regression objective requires labelled points")
    holdout_x = np.array([p.features for p in holdout], dtype=float)
    holdout_y = np.array([p.label for p in holdout], dtype=float)

    def evaluate(subset: Sequence[DataPointRef]) -> float:
        if len(subset) == 0:
            pred = np.full(len(holdout_y), holdout_y.mean())
        else:
            pred = _fit_predict(subset, holdout_x)
        return -float(np.mean((pred - holdout_y) ** 2))

    return ObjectiveFunction(evaluate, "holdout-mse regression")


def sum_labels_objective() -> ObjectiveFunction:
    """Additive game: a subset's utility is the sum of its labels."""

    def evaluate(subset: Sequence[DataPointRef]) -> float:
        return float(sum(p.label or 0.0 for p in subset))

    return ObjectiveFunction(evaluate, "sum of labels")


@dataclass(frozen=True)
class WorkReceipt:
    stage: int
    worker_points: dict[AgentId, int]
    report_digest: bytes
    prev_report_digest: bytes


@dataclass(frozen=True)
class WorkAssignment:
    agent: AgentId
    normalized_value: float
    work_units: int
    receipt: WorkReceipt | None = None


@dataclass(frozen=True)
class WorkContract:
    assignee: AgentId
    incoming_batch: tuple[DataPointRef, ...]
    objective: ObjectiveFunction
    produced_report: ShapleyReport | None = None


def assign_work(report: ShapleyReport, max_work: int) -> list[WorkAssignment]:
    """Work units inversely proportional to (min-max normalized) value:
    max(1, round(max_work * (1 - psi_hat))). Equal values normalize to 0.5."""
    if max_work < 1:
        raise ValueError("max_work must be >= 1")
    if not report.values:
        raise ValueError("empty report")
    psi = np.array(list(report.values.values()))
    lo, hi = psi.min(), psi.max()
    if hi - lo == 0:
        normalized = np.full(len(psi), 0.5)
    else:
        normalized = (psi - lo) / (hi - lo)
    return [
        WorkAssignment(agent, float(nv), max(1, round(max_work * (1.0 - float(nv)))))
        for agent, nv in zip(report.values, normalized)
    ]


def make_contracts(
    quotas: Sequence[tuple[AgentId, int]],
    batch: Sequence[DataPointRef],
    objective: ObjectiveFunction,
) -> list[WorkContract]:
    """Deal a batch to workers by weighted round-robin over work quotas."""
    schedule = [agent for agent, units in quotas for _ in range(units)]
    dealt: dict[AgentId, list[DataPointRef]] = {agent: [] for agent, _ in quotas}
    for i, point in enumerate(batch):
        dealt[schedule[i % len(schedule)]].append(point)
    return [
        WorkContract(agent, tuple(pts), objective) for agent, pts in dealt.items()
    ]


def report_digest(report: ShapleyReport) -> bytes:
    payload = {
        "values": {a: repr(p) for a, p in sorted(report.values.items())},
        "method": report.method,
        "grand": repr(report.grand_value),
        "empty": repr(report.empty_value),
        "samples": report.samples,
    }
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).digest()


def run_work_chain(
    coalitions: Sequence[tuple[SpatialCoalition, Sequence[DataPointRef]]],
    v_chain: Sequence[ObjectiveFunction],
    max_work: int,
    rng: SeededRng,
    samples: int = 2000,
) -> list[tuple[ShapleyReport, list[WorkAssignment], WorkReceipt]]:
    """Stage t: coalition t's members valuate coalition t+1's batch under
    coalition t's objective; the resulting values size coalition t+1's own
    future work. Receipts chain each stage to the previous report's digest.

    A coalition may never valuate a batch containing one of its own members'
    points (conflict of interest).
    """
    if len(coalitions) < 2:
        raise ValueError("a work chain needs at least two coalitions")
    if len(v_chain) < len(coalitions) - 1:
        raise ValueError("need one objective per valuating coalition")
    results = []
    prev_digest = b"\x00" * 32
    quotas = [(m, 1) for m in coalitions[0][0].members]
    for stage in range(len(coalitions) - 1):
        workers, _ = coalitions[stage]
        _, batch = coalitions[stage + 1]
        clash = set(p.owner for p in batch) & set(workers.members)
        if clash:
            raise ValueError(
                f"stage {stage}: workers {sorted(clash)} cannot valuate their own points"
            )
        contracts = make_contracts(quotas, batch, v_chain[stage])
        if len(batch) <= EXACT_LIMIT:
            report = shapley_exact(list(batch), v_chain[stage])
        else:
            report = shapley_sampled(list(batch), v_chain[stage], samples, rng)
        assignments = assign_work(report, max_work)
        digest = report_digest(report)
        receipt = WorkReceipt(
            stage=stage,
            worker_points={c.assignee: len(c.incoming_batch) for c in contracts},
            report_digest=digest,
            prev_report_digest=prev_digest,
        )
        assignments = [replace(a, receipt=receipt) for a in assignments]
        results.append((report, assignments, receipt))
        prev_digest = digest
        quotas = [(a.agent, a.work_units) for a in assignments]
    return results


def verify_work_chain(
    results: Sequence[tuple[ShapleyReport, list[WorkAssignment], WorkReceipt]],
) -> None:
    """Raise IntegrityError at the first stage whose receipt does not verify."""
    prev = b"\x00" * 32
    for stage, (report, _, receipt) in enumerate(results):
        if receipt.prev_report_digest != prev:
            raise IntegrityError(f"stage {stage}: broken chain link", stage=stage)
        if report_digest(report) != receipt.report_digest:
            raise IntegrityError(f"stage {stage}: report digest mismatch", stage=stage)
        prev = receipt.report_digest


def load_datapoints_csv(path: str | Path) -> list[DataPointRef]:
    """Read a batch: feature columns from the header, optional ``label``
    column, optional ``owner`` column (defaults to the row number)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: missing header row")
        feature_cols = [c for c in reader.fieldnames if c not in ("owner", "label")]
        if not feature_cols:
            raise ValueError(f"{path}: no feature columns")
        points = []
        for i, row in enumerate(reader):
            points.append(
                DataPointRef(
                    owner=row.get("owner") or f"row{i:04d}",
                    features=tuple(float(row[c]) for c in feature_cols),
                    label=float(row["label"]) if row.get("label") not in (None, "") else None,
                )
            )
    return points


def write_shapley_csv(path: str | Path, report: ShapleyReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["agent", "psi", "method", "samples"])
        for agent, psi in report.values.items():
            w.writerow([agent, repr(psi), report.method, report.samples or ""])
