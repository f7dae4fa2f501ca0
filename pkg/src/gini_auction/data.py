"""Token-sale dataset schema, ingestion, and observer-agent generation.

A dataset is a list of per-agent contribution records from a historical
token sale plus sale-level metadata (ending price, selection criteria).
Two on-disk formats are supported:

* CSV with header ``agent_id,budget_eth,budget_usd,entering_price_eth,
  timestamp,rate`` plus a JSON sidecar ``<stem>.meta.json`` holding the
  sale-level fields (CSV rows cannot carry them without repetition).
* A self-contained JSON document with ``meta`` and ``records`` keys,
  used by the auction service for preloads.

Observer agents for simulations are built by sampling budgets uniformly
with replacement from the real budget multiset and drawing valuations as
the sale's ending price times Uniform(0, 1).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ParameterError
from .equilibrium import Agent

# Budgets are recorded in two currencies; they must agree with the quoted
# exchange rate to within this relative tolerance.
RATE_CONSISTENCY_TOL = 0.01

DATA_DIR_ENV = "GINI_AUCTION_DATA_DIR"

CSV_HEADER = [
    "agent_id",
    "budget_eth",
    "budget_usd",
    "entering_price_eth",
    "timestamp",
    "rate",
]


class DatasetFormatError(ValueError):
    """A dataset file violates the documented schema."""


@dataclass(frozen=True)
class IcoRecord:
    """One agent's contribution to a historical token sale."""

    agent_id: str
    budget_eth: float
    budget_usd: float
    entering_price_eth: float
    timestamp: float
    rate: float

    def validate(self, row: Optional[int] = None) -> None:
        where = "" if row is None else f" (row {row})"
        if not self.agent_id:
            raise DatasetFormatError(f"empty agent id{where}")
        if self.budget_eth < 0 or self.budget_usd < 0:
            raise DatasetFormatError(
                f"negative budget for agent {self.agent_id}{where}"
            )
        if self.entering_price_eth <= 0:
            raise DatasetFormatError(
                f"entering price must be positive for agent {self.agent_id}{where}"
            )
        if self.rate <= 0:
            raise DatasetFormatError(
                f"exchange rate must be positive for agent {self.agent_id}{where}"
            )
        expected = self.budget_eth * self.rate
        scale = max(abs(expected), abs(self.budget_usd), 1e-12)
        if abs(self.budget_usd - expected) > RATE_CONSISTENCY_TOL * scale:
            raise DatasetFormatError(
                f"budget_usd {self.budget_usd} disagrees with budget_eth x rate "
                f"{expected:.6g} beyond 1% for agent {self.agent_id}{where}"
            )


@dataclass(frozen=True)
class SelectionMeta:
    """Why the sale qualifies for study: §1-style screening facts."""

    raised_usd: float = 0.0
    dutch_auction: bool = True
    transaction_count: int = 0


@dataclass
class IcoDataset:
    """A named token sale: per-agent records plus sale-level metadata."""

    name: str
    records: list[IcoRecord]
    ending_price_eth: float
    selection: SelectionMeta = field(default_factory=SelectionMeta)

    def __post_init__(self) -> None:
        if not self.records:
            raise DatasetFormatError(f"dataset {self.name!r} has no records")
        if self.ending_price_eth <= 0:
            raise DatasetFormatError(
                f"dataset {self.name!r} needs a positive ending price"
            )

    @property
    def n(self) -> int:
        return len(self.records)

    def budgets_eth(self) -> np.ndarray:
        return np.asarray([r.budget_eth for r in self.records])

    def to_agents(self) -> list[Agent]:
        """Real participants as agents: valuation is the entering price."""
        return [
            Agent(id=r.agent_id, valuation=r.entering_price_eth,
                  max_budget=r.budget_eth)
            for r in self.records
        ]


def _merge_duplicates(records: Sequence[IcoRecord]) -> list[IcoRecord]:
    """Merge rows sharing an agent id by summing budgets.

    Identity checks happen off-chain, so repeat contributions from one
    account are a single agent's budget.  The first row's entering price,
    timestamp, and rate are kept.
    """
    merged: dict[str, IcoRecord] = {}
    order: list[str] = []
    for rec in records:
        prev = merged.get(rec.agent_id)
        if prev is None:
            merged[rec.agent_id] = rec
            order.append(rec.agent_id)
        else:
            merged[rec.agent_id] = IcoRecord(
                agent_id=prev.agent_id,
                budget_eth=prev.budget_eth + rec.budget_eth,
                budget_usd=prev.budget_usd + rec.budget_usd,
                entering_price_eth=prev.entering_price_eth,
                timestamp=prev.timestamp,
                rate=prev.rate,
            )
    return [merged[a] for a in order]


def _parse_record(raw: dict, row: int) -> IcoRecord:
    try:
        rec = IcoRecord(
            agent_id=str(raw["agent_id"]),
            budget_eth=float(raw["budget_eth"]),
            budget_usd=float(raw["budget_usd"]),
            entering_price_eth=float(raw["entering_price_eth"]),
            timestamp=float(raw["timestamp"]),
            rate=float(raw["rate"]),
        )
    except KeyError as exc:
        raise DatasetFormatError(f"missing field {exc.args[0]} (row {row})")
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"unparseable field (row {row}): {exc}")
    rec.validate(row)
    return rec


def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".meta.json")


def resolve_dataset_path(name_or_path: str) -> Path:
    """Resolve a dataset argument against the configured data directory."""
    p = Path(name_or_path)
    if p.exists():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        candidate = Path(base) / name_or_path
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"dataset not found: {name_or_path}")


def load_dataset(path: str | Path, format: Optional[str] = None) -> IcoDataset:
    """Load and validate a dataset from CSV (+ sidecar meta) or JSON.

    The format is inferred from the extension unless given explicitly.
    Duplicate agent ids are merged by summing budgets.
    """
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv"
    if format == "csv":
        return _load_csv(path)
    if format == "json":
        return _load_json(path)
    raise ParameterError(f"unknown dataset format {format!r}")


def _load_csv(path: Path) -> IcoDataset:
    meta_file = _meta_path(path)
    if not meta_file.exists():
        raise DatasetFormatError(f"missing metadata sidecar {meta_file}")
    meta = json.loads(meta_file.read_text())
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise DatasetFormatError(
                f"bad CSV header {reader.fieldnames}, expected {CSV_HEADER}"
            )
        for row, raw in enumerate(reader, start=2):  # header is line 1
            records.append(_parse_record(raw, row))
    return _build(meta, records)


def _load_json(path: Path) -> IcoDataset:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "meta" not in doc or "records" not in doc:
        raise DatasetFormatError("JSON dataset needs 'meta' and 'records' keys")
    records = [
        _parse_record(raw, row) for row, raw in enumerate(doc["records"], start=1)
    ]
    return _build(doc["meta"], records)


def _build(meta: dict, records: list[IcoRecord]) -> IcoDataset:
    try:
        selection = SelectionMeta(
            raised_usd=float(meta.get("raised_usd", 0.0)),
            dutch_auction=bool(meta.get("dutch_auction", True)),
            transaction_count=int(meta.get("transaction_count", 0)),
        )
        return IcoDataset(
            name=str(meta["name"]),
            records=_merge_duplicates(records),
            ending_price_eth=float(meta["ending_price_eth"]),
            selection=selection,
        )
    except KeyError as exc:
        raise DatasetFormatError(f"metadata missing field {exc.args[0]}")


def save_dataset(dataset: IcoDataset, path: str | Path,
                 format: Optional[str] = None) -> None:
    """Write a dataset in the canonical CSV (+ sidecar) or JSON form."""
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "csv"
    meta = {
        "name": dataset.name,
        "ending_price_eth": dataset.ending_price_eth,
        "raised_usd": dataset.selection.raised_usd,
        "dutch_auction": dataset.selection.dutch_auction,
        "transaction_count": dataset.selection.transaction_count,
    }
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
            writer.writeheader()
            for rec in dataset.records:
                writer.writerow(asdict(rec))
        _meta_path(path).write_text(json.dumps(meta, indent=2))
    elif format == "json":
        doc = {"meta": meta, "records": [asdict(r) for r in dataset.records]}
        path.write_text(json.dumps(doc, indent=2))
    else:
        raise ParameterError(f"unknown dataset format {format!r}")


def generate_observers(
    dataset: IcoDataset, count: int, rng_seed: int
) -> list[Agent]:
    """Synthesize observer agents from a sale's empirical distributions.

    Budgets are drawn uniformly with replacement from the real budget
    multiset; valuations are the ending price scaled by Uniform(0, 1), so
    every observer values the token strictly below the realized price.
    Deterministic for a fixed seed.
    """
    if count < 0:
        raise ParameterError("observer count must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    budgets = dataset.budgets_eth()
    picks = rng.integers(0, budgets.size, size=count)
    scales = rng.uniform(0.0, 1.0, size=count)
    return [
        Agent(
            id=f"obs{j:06d}",
            valuation=float(dataset.ending_price_eth * scales[j]),
            max_budget=float(budgets[picks[j]]),
        )
        for j in range(count)
    ]


def make_synthetic_dataset(
    name: str,
    n_agents: int,
    rng_seed: int,
    mean_budget_eth: float = 0.5,
    rate: float = 300.0,
    gini_cap: float = 0.6,
) -> IcoDataset:
    """Build a plausible sale for tests and demos.

    Budgets are lognormal (heavy upper tail, as in real sales).  The
    ending price is the mechanism's clearing price on those budgets, as a
    descending-price sale would discover it, and entering prices sit at
    or above the ending price because participants joined while the
    posted price was still falling.  The USD column follows the quoted
    rate exactly.
    """
    if n_agents <= 0:
        raise ParameterError("need at least one agent")
    # Imported here: data sits below core in the layering, and this helper
    # is the one place it runs the mechanism.
    from .core import BudgetProfile, MechanismParams, run_mechanism

    rng = np.random.default_rng(rng_seed)
    budgets = mean_budget_eth * rng.lognormal(mean=-0.5, sigma=1.0, size=n_agents)
    ks = tuple(sorted({
        max(2, int(math.ceil(f * n_agents)))
        for f in (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    })) if n_agents >= 2 else (2,)
    if n_agents >= 2:
        profile = BudgetProfile.of(
            {f"agent{j:06d}": float(budgets[j]) for j in range(n_agents)}
        )
        params = MechanismParams(gini_cap=gini_cap, winner_counts=ks)
        ending_price_eth = run_mechanism(profile, params).price
    else:
        ending_price_eth = float(budgets.sum())
    prices = ending_price_eth * rng.uniform(1.0, 1.5, size=n_agents)
    times = np.sort(rng.uniform(0.0, 3600.0, size=n_agents))
    records = [
        IcoRecord(
            agent_id=f"agent{j:06d}",
            budget_eth=float(budgets[j]),
            budget_usd=float(budgets[j] * rate),
            entering_price_eth=float(prices[j]),
            timestamp=float(times[j]),
            rate=rate,
        )
        for j in range(n_agents)
    ]
    total_usd = float(budgets.sum() * rate)
    return IcoDataset(
        name=name,
        records=records,
        ending_price_eth=ending_price_eth,
        selection=SelectionMeta(
            raised_usd=total_usd, dutch_auction=True,
            transaction_count=n_agents,
        ),
    )
