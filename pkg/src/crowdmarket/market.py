"""Dataset listings, bid settlement, rights registry and the hash chain.

Transactions append to a single-writer hash-chained ledger: record i's digest
covers (i, digest of record i-1, canonical payload), so reordering, deletion
or any byte of tampering breaks verification. Ownership is exclusive per
dataset; access rights accumulate and never shrink (no revocation payload in
v1). The live rights registry is always reproducible by replaying the ledger.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .core import AgentId, QuadrantId
from .errors import MarketError
from .valuation import ShapleyReport
from .verification import VerificationOutcome

GENESIS_DIGEST = b"\x00" * 32


class Right(enum.Enum):
    ACCESS_FULL = "access_full"
    ACCESS_PARTIAL = "access_partial"
    OWNERSHIP = "ownership"


@dataclass(frozen=True)
class ProvenanceRef:
    """What a listing points back to: the committed measurement and the
    admission decision that let its coalition into the market."""

    commitment_digest: bytes
    outcome: VerificationOutcome


@dataclass(frozen=True)
class Listing:
    dataset_id: str
    quadrant: QuadrantId
    tick: int
    provenance: ProvenanceRef
    objective_descriptor: str
    objective_value: float
    ask_price: float
    metadata: str = ""

    def __post_init__(self):
        if self.ask_price < 0:
            raise ValueError("ask_price must be >= 0")


@dataclass(frozen=True)
class Bid:
    buyer: AgentId
    dataset_id: str
    right: Right
    price: float
    portion: str | None = None

    def __post_init__(self):
        if self.price < 0:
            raise ValueError("price must be >= 0")
        if (self.portion is not None) != (self.right is Right.ACCESS_PARTIAL):
            raise ValueError("portion descriptor goes with ACCESS_PARTIAL only")


@dataclass(frozen=True)
class RewardSplit:
    dataset_id: str
    shares: dict[AgentId, float]

    def __post_init__(self):
        if any(v < 0 for v in self.shares.values()):
            raise ValueError("shares must be non-negative")


@dataclass(frozen=True)
class LedgerRecord:
    index: int
    prev_digest: bytes
    payload: dict
    digest: bytes


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def _record_digest(index: int, prev_digest: bytes, payload: dict) -> bytes:
    h = hashlib.sha256()
    h.update(index.to_bytes(8, "big"))
    h.update(prev_digest)
    h.update(_canonical(payload))
    return h.digest()


class Ledger:
    """Append-only hash chain. Appends are strictly serialized (single
    writer); readers see a consistent prefix."""

    def __init__(self):
        self.records: list[LedgerRecord] = []

    def append(self, payload: dict) -> LedgerRecord:
        index = len(self.records)
        prev = self.records[-1].digest if self.records else GENESIS_DIGEST
        record = LedgerRecord(index, prev, payload, _record_digest(index, prev, payload))
        self.records.append(record)
        return record

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(self.record_line(r) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Ledger":
        ledger = cls()
        for line, record in cls._parse(path):
            ledger.records.append(record)
        return ledger

    @staticmethod
    def _parse(path: str | Path):
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                yield line, LedgerRecord(
                    index=obj["index"],
                    prev_digest=bytes.fromhex(obj["prev"]),
                    payload=obj["payload"],
                    digest=bytes.fromhex(obj["digest"]),
                )

    @staticmethod
    def record_line(record: LedgerRecord) -> str:
        return json.dumps(
            {
                "index": record.index,
                "prev": record.prev_digest.hex(),
                "payload": record.payload,
                "digest": record.digest.hex(),
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def verify_chain(ledger: Ledger) -> bool:
    """True iff every digest recomputes and all indices/prev-links hold."""
    prev = GENESIS_DIGEST
    for i, r in enumerate(ledger.records):
        if r.index != i or r.prev_digest != prev:
            return False
        if _record_digest(r.index, r.prev_digest, r.payload) != r.digest:
            return False
        prev = r.digest
    return True


def verify_chain_file(path: str | Path) -> bool:
    """Verify a persisted ledger; unparseable files fail verification.

    Each line must equal the canonical serialization of its record exactly,
    so even semantically neutral byte edits (hex case flips, whitespace) are
    treated as tampering.
    """
    ledger = Ledger()
    try:
        for line, record in Ledger._parse(path):
            if line.rstrip("\n") != Ledger.record_line(record):
                return False
            ledger.records.append(record)
    except (OSError, ValueError, KeyError, TypeError):
        return False
    return verify_chain(ledger)


class Market:
    """Listings, sales and the derived rights registry over one ledger."""

    def __init__(self, ledger: Ledger | None = None):
        self.ledger = ledger if ledger is not None else Ledger()
        self.listings: dict[str, Listing] = {}
        self._asks: dict[str, float] = {}
        # None = still with the original lister; set once on an ownership sale
        self.owners: dict[str, AgentId | None] = {}
        self.access: dict[str, set[tuple[AgentId, str, str | None]]] = {}

    def list_dataset(self, listing: Listing) -> LedgerRecord:
        """Publish metadata for an admitted dataset. Duplicate ids and
        unadmitted provenance are rejected."""
        if listing.dataset_id in self._asks:
            raise MarketError(f"dataset id {listing.dataset_id!r} already listed")
        if not listing.provenance.outcome.admitted:
            raise MarketError(
                f"dataset {listing.dataset_id!r}: provenance was not admitted"
            )
        record = self.ledger.append(
            {
                "kind": "listing",
                "dataset_id": listing.dataset_id,
                "quadrant": listing.quadrant,
                "tick": listing.tick,
                "provenance_digest": listing.provenance.commitment_digest.hex(),
                "objective_descriptor": listing.objective_descriptor,
                "objective_value": listing.objective_value,
                "ask_price": listing.ask_price,
                "metadata": listing.metadata,
            }
        )
        self.listings[listing.dataset_id] = listing
        self._register_listing(listing.dataset_id, listing.ask_price)
        return record

    def settle_sale(self, bid: Bid) -> LedgerRecord:
        """First bid meeting the ask wins. Ownership transfers exactly once
        per listing; access rights stack without displacing anyone."""
        ask = self._asks.get(bid.dataset_id)
        if ask is None:
            raise MarketError(f"unknown dataset {bid.dataset_id!r}")
        if bid.price < ask:
            raise MarketError(
                f"bid {bid.price} below ask {ask} for {bid.dataset_id!r}"
            )
        if bid.right is Right.OWNERSHIP and self.owners[bid.dataset_id] is not None:
            raise MarketError(
                f"dataset {bid.dataset_id!r} has changed owner; listing closed for resale"
            )
        record = self.ledger.append(
            {
                "kind": "sale",
                "dataset_id": bid.dataset_id,
                "buyer": bid.buyer,
                "right": bid.right.value,
                "portion": bid.portion,
                "price": bid.price,
            }
        )
        self._register_sale(bid.dataset_id, bid.buyer, bid.right.value, bid.portion)
        return record

    def record_reward(self, split: RewardSplit) -> LedgerRecord:
        return self.ledger.append(
            {
                "kind": "reward",
                "dataset_id": split.dataset_id,
                "shares": {a: split.shares[a] for a in sorted(split.shares)},
            }
        )

    def rights_of(self, dataset_id: str) -> set[tuple[AgentId, str, str | None]]:
        return set(self.access.get(dataset_id, set()))

    def _register_listing(self, dataset_id: str, ask_price: float) -> None:
        self._asks[dataset_id] = ask_price
        self.owners[dataset_id] = None
        self.access.setdefault(dataset_id, set())

    def _register_sale(
        self, dataset_id: str, buyer: AgentId, right: str, portion: str | None
    ) -> None:
        if right == Right.OWNERSHIP.value:
            self.owners[dataset_id] = buyer
        self.access[dataset_id].add((buyer, right, portion))

    @classmethod
    def from_ledger(cls, ledger: Ledger) -> "Market":
        """Rebuild the rights registry by replaying the chain. Listing
        objects themselves are not reconstructed (payloads carry only their
        digested provenance), but asks/owners/access state is exact."""
        market = cls(Ledger())
        market.ledger.records = list(ledger.records)
        for r in ledger.records:
            p = r.payload
            if p["kind"] == "listing":
                market._register_listing(p["dataset_id"], p["ask_price"])
            elif p["kind"] == "sale":
                market._register_sale(p["dataset_id"], p["buyer"], p["right"], p["portion"])
        return market


def distribute_reward(sale: LedgerRecord, psi: ShapleyReport) -> RewardSplit:
    """Split a sale's price across the coalition proportionally to
    max(psi, 0); uniform fallback when nobody has positive value."""
    if sale.payload.get("kind") != "sale":
        raise ValueError("reward distribution needs a sale record")
    if not psi.values:
        raise ValueError("empty coalition")
    price = float(sale.payload["price"])
    weights = {a: max(v, 0.0) for a, v in psi.values.items()}
    total = sum(weights.values())
    if total == 0.0:
        shares = {a: price / len(weights) for a in weights}
    else:
        shares = {a: price * w / total for a, w in weights.items()}
    return RewardSplit(sale.payload["dataset_id"], shares)


def write_rewards_csv(path: str | Path, splits: Iterable[RewardSplit]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset_id", "agent", "share"])
        for split in splits:
            for agent in sorted(split.shares):
                w.writerow([split.dataset_id, agent, repr(split.shares[agent])])
