"""Seeded synthetic auction logs with a 24-hour traffic cycle.

Used by the demo config and the tests; real exchange logs are proprietary.
"""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np


def hourly_profile(hour, peak: float = 11.0) -> np.ndarray:
    """Traffic multiplier in (0.4, 1.6) peaking late morning."""
    return 1.0 + 0.6 * np.cos(2 * np.pi * (np.asarray(hour) - peak) / 24.0)


def write_synthetic_logs(
    path: str | Path,
    days: int = 10,
    auctions_per_hour: float = 40.0,
    mean_bidders: float = 4.0,
    mu: float = 0.0,
    sigma: float = 0.5,
    slot: str = "slot-1",
    start: datetime = datetime(2013, 1, 8),
    seed: int = 0,
    list_bids: bool = True,
) -> int:
    """Write a log CSV and return the number of auctions.

    Bids are log-normal in CPM; each auction has ``1 + Poisson`` bidders
    with more competition at peak hours. Payment is the second highest bid
    (0 for a lone bidder).
    """
    rng = np.random.default_rng(seed)
    n_total = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "slot_id", "bid_count", "bids", "winning_bid", "payment", "reserve"])
        for day in range(days):
            for hour in range(24):
                level = hourly_profile(hour) * (1.0 + 0.02 * day)
                n = rng.poisson(auctions_per_hour * level)
                for _ in range(n):
                    k = 1 + rng.poisson(max(mean_bidders * level - 1.0, 0.1))
                    bids = np.sort(rng.lognormal(mu, sigma, size=k))[::-1]
                    ts = start + timedelta(days=day, hours=hour, seconds=int(rng.integers(0, 3600)))
                    payment = bids[1] if k > 1 else 0.0
                    w.writerow([
                        ts.isoformat(), slot, k,
                        ";".join(f"{b:.4f}" for b in bids) if list_bids else "",
                        f"{bids[0]:.4f}", f"{payment:.4f}", "",
                    ])
                    n_total += 1
    return n_total


def _demo(argv=None) -> None:  # pragma: no cover
    import argparse

    parser = argparse.ArgumentParser(prog="python3 -m pgreserve.synth", description="Write seeded synthetic auction logs.")
    parser.add_argument("path", nargs="?", default="synthetic_logs.csv")
    parser.add_argument("--days", type=int, default=14)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(write_synthetic_logs(args.path, days=args.days, seed=args.seed), "auctions written to", args.path)


if __name__ == "__main__":  # pragma: no cover
    _demo()
