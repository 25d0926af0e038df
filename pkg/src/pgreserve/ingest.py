"""Auction log parsing and hourly roll-up.

Log CSV header::

    timestamp,slot_id,bid_count,bids,winning_bid,payment,reserve

``bids`` is a ``;``-joined list of CPM bids or empty when individual bids
were not recorded; ``bid_count`` may then carry the count alone. Unknown
extra columns (user tags and the like) are ignored. Prices in files are CPM;
everything returned here is per impression.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

CPM = 1000.0
REQUIRED_COLUMNS = ("timestamp", "slot_id", "winning_bid", "payment")


@dataclass(frozen=True)
class AuctionLogRecord:
    timestamp: datetime
    slot_id: str
    bid_count: int
    bids: tuple[float, ...]  # CPM
    winning_bid: float  # CPM
    payment: float  # CPM
    reserve: float | None = None  # CPM


@dataclass(frozen=True)
class HourlyAggregate:
    day: int
    hour: int
    supply: int  # auctions
    demand: int  # bids
    avg_payment: float | None  # per impression, None when supply == 0


def _money(text: str, name: str) -> float:
    value = float(text)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite CPM >= 0, got {text!r}")
    return value


def parse_record(row: dict) -> AuctionLogRecord:
    """Parse one CSV row; raises ValueError when malformed."""
    ts = (row.get("timestamp") or "").strip()
    if ts.endswith("Z"):
        ts = ts[:-1] + "+00:00"
    timestamp = datetime.fromisoformat(ts)
    slot = (row.get("slot_id") or "").strip()
    if not slot:
        raise ValueError("empty slot_id")
    raw_bids = (row.get("bids") or "").strip()
    bids = tuple(_money(b, "bid") for b in raw_bids.split(";")) if raw_bids else ()
    raw_count = (row.get("bid_count") or "").strip()
    if raw_count:
        count = int(raw_count)
        if bids and count != len(bids):
            raise ValueError(f"bid_count {count} disagrees with {len(bids)} listed bids")
    elif bids:
        count = len(bids)
    else:
        raise ValueError("neither bids nor bid_count given")
    if count < 1:
        raise ValueError(f"bid_count must be >= 1, got {count}")
    winning = _money(row.get("winning_bid", ""), "winning_bid")
    payment = _money(row.get("payment", ""), "payment")
    if payment > winning * (1 + 1e-12):
        raise ValueError(f"payment {payment} exceeds winning bid {winning}")
    raw_reserve = (row.get("reserve") or "").strip()
    reserve = _money(raw_reserve, "reserve") if raw_reserve else None
    return AuctionLogRecord(timestamp, slot, count, bids, winning, payment, reserve)


@dataclass(frozen=True)
class IngestResult:
    aggregates: list[HourlyAggregate]
    # rows of (day, hour, bid_count, payment, winning_bid), money per impression
    auctions: np.ndarray
    origin: date
    n_rows: int
    n_malformed: int

    def auctions_in(self, days: Iterable[int]) -> np.ndarray:
        mask = np.isin(self.auctions[:, 0], list(days))
        return self.auctions[mask]


def read_logs(
    paths: Iterable[str | Path],
    slot: str | None = None,
    origin: date | None = None,
    max_malformed: float = 0.01,
) -> IngestResult:
    """Read auction logs, keep one slot, and roll auctions up per (day, hour).

    Day 0 is ``origin`` (default: the earliest selected date). Malformed rows
    are skipped and counted; more than ``max_malformed`` of them is an error.
    """
    records: list[AuctionLogRecord] = []
    n_rows = n_bad = 0
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or ())]
            if missing:
                raise DataError(f"{path}: missing columns {missing}")
            for lineno, row in enumerate(reader, start=2):
                n_rows += 1
                try:
                    rec = parse_record(row)
                except (ValueError, TypeError) as exc:
                    n_bad += 1
                    log.debug("%s:%d malformed: %s", path, lineno, exc)
                    continue
                if slot is None or rec.slot_id == slot:
                    records.append(rec)
    if n_rows and n_bad / n_rows > max_malformed:
        raise DataError(f"{n_bad} of {n_rows} rows malformed (limit {max_malformed:.1%})")
    if n_bad:
        log.warning("skipped %d malformed rows of %d", n_bad, n_rows)
    if not records:
        raise DataError(f"no auctions selected (slot={slot!r})")

    if origin is None:
        origin = min(r.timestamp.date() for r in records)
    auctions = np.empty((len(records), 5))
    for i, r in enumerate(records):
        auctions[i] = (
            (r.timestamp.date() - origin).days, r.timestamp.hour,
            r.bid_count, r.payment / CPM, r.winning_bid / CPM,
        )
    if auctions[:, 0].min() < 0:
        raise DataError(f"auctions precede origin {origin}")
    order = np.lexsort((auctions[:, 1], auctions[:, 0]))
    auctions = auctions[order]
    return IngestResult(hourly_aggregates(auctions), auctions, origin, n_rows, n_bad)


def hourly_aggregates(auctions: np.ndarray) -> list[HourlyAggregate]:
    """One aggregate per (day, hour) over the full day range, empty hours included."""
    last_day = int(auctions[:, 0].max())
    slot_idx = (auctions[:, 0] * 24 + auctions[:, 1]).astype(int)
    n = (last_day + 1) * 24
    supply = np.bincount(slot_idx, minlength=n)
    demand = np.bincount(slot_idx, auctions[:, 2], minlength=n)
    paid = np.bincount(slot_idx, auctions[:, 3], minlength=n)
    out = []
    for k in range(n):
        avg = float(paid[k] / supply[k]) if supply[k] else None
        out.append(HourlyAggregate(k // 24, k % 24, int(supply[k]), int(round(demand[k])), avg))
    return out
