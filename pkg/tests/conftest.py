import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pgreserve.synth import write_synthetic_logs

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def synthetic_logs(tmp_path_factory):
    """Twelve days of seeded logs with a daily cycle."""
    path = tmp_path_factory.mktemp("logs") / "logs.csv"
    write_synthetic_logs(path, days=12, seed=1)
    return path


def uniform_auction_records(xis, per_bin, seed, v=1.0):
    """(bid_count, payment, winning_bid) rows from exact second-price auctions over uniform bids."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in xis:
        bids = np.sort(rng.uniform(0, v, size=(per_bin, k)), axis=1)
        pay = bids[:, -2] if k > 1 else np.zeros(per_bin)
        rows.append(np.column_stack([np.full(per_bin, k), pay, bids[:, -1]]))
    return np.vstack(rows)
