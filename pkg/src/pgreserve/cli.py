"""Command line pipeline: ingest -> forecast -> fit-curves -> price -> simulate -> report.

Each command reads its upstream artifacts from the output directory and writes
its own. Prices in every file are CPM; value and revenue columns are in
currency units.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .auction import AuctionCurves, BidDistribution
from .config import RunConfig
from .curvefit import FittedCurve, build_auction_curves
from .errors import DataError, NumericalError, PGReserveError, ValidationError
from .forecast import ModelSpec, forecast_day, model_grid
from .ingest import CPM, read_logs
from .pricing import MarketForecast, RiskParams, competition_level, reserve_schedule, terminal_value
from .revenue import guarantee_check, rtb_revenue
from .simulator import PriceModel, SimConfig, run_batch

log = logging.getLogger("pgreserve")

REPORT_SCHEMA = "pgreserve.report/1"
EXIT_CODES = ((ValidationError, 2), (DataError, 3), (NumericalError, 4))


def _cpm(x: float) -> float:
    """Per-impression money back to CPM without float residue from the round trip."""
    return float(f"{x * CPM:.12g}")


def _finite(x: Any) -> Any:
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


class Workspace:
    """Output directory plus the metadata stamped on every file."""

    def __init__(self, cfg: RunConfig, out: Path, fmt: str):
        self.cfg = cfg
        self.out = out
        self.fmt = fmt
        out.mkdir(parents=True, exist_ok=True)

    @property
    def meta(self) -> dict:
        return {"version": __version__, "config_hash": self.cfg.digest, "seed": self.cfg.seed}

    def _atomic_write(self, path: Path, text: str) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    def write_json(self, name: str, body: dict) -> Path:
        doc = {**self.meta, **body}
        path = self.out / name
        self._atomic_write(path, json.dumps(doc, indent=2, allow_nan=False) + "\n")
        return path

    def write_table(self, stem: str, columns: Sequence[str], rows: Sequence[Sequence]) -> Path:
        rows = [[_finite(v) for v in row] for row in rows]
        path = self.out / f"{stem}.{self.fmt}"
        if self.fmt == "json":
            text = json.dumps({**self.meta, "columns": list(columns), "rows": rows}, indent=1, allow_nan=False)
            self._atomic_write(path, text + "\n")
            return path
        buf = io.StringIO()
        buf.write(f"# pgreserve {__version__} config={self.cfg.digest} seed={self.cfg.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
        self._atomic_write(path, buf.getvalue())
        return path

    def read_table(self, stem: str) -> dict[str, np.ndarray]:
        for fmt in (self.fmt, "csv", "json"):
            path = self.out / f"{stem}.{fmt}"
            if path.exists():
                break
        else:
            raise DataError(f"missing artifact {stem} in {self.out}; run the upstream command first")
        if fmt == "json":
            doc = json.loads(path.read_text())
            cols, rows = doc["columns"], doc["rows"]
        else:
            lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
            reader = csv.reader(lines)
            cols = next(reader)
            rows = list(reader)
        data = np.array([[np.nan if v in ("", None) else float(v) for v in r] for r in rows], dtype=float)
        data = data.reshape(-1, len(cols))
        return {c: data[:, i] for i, c in enumerate(cols)}

    def read_json(self, name: str) -> dict:
        path = self.out / name
        if not path.exists():
            raise DataError(f"missing artifact {name} in {self.out}; run the upstream command first")
        return json.loads(path.read_text())


# --------------------------------------------------------------------------
# shared loaders
# --------------------------------------------------------------------------


def _ingest(ws: Workspace):
    d = ws.cfg.raw["data"]
    return read_logs(ws.cfg.log_paths, d["slot"], ws.cfg.origin, float(d["max_malformed"]))


def _training_window(cfg: RunConfig) -> range | None:
    d = cfg.raw["data"]
    if d["delivery_day"] is None:
        return None
    day = int(d["delivery_day"])
    return range(max(0, day - int(d["training_days"])), day)


def _training_auctions(ws: Workspace) -> np.ndarray:
    t = ws.read_table("auctions")
    rows = np.column_stack([t["day"], t["bid_count"], t["payment_cpm"] / CPM, t["winning_bid_cpm"] / CPM])
    window = _training_window(ws.cfg)
    if window is not None:
        rows = rows[np.isin(rows[:, 0], list(window))]
    if rows.shape[0] == 0:
        raise DataError("no auctions in the training window")
    return rows[:, 1:]


def _market(ws: Workspace) -> MarketForecast:
    sim = ws.cfg.raw["simulation"]
    m = ws.cfg.raw["market"]
    if m is not None:
        S, Q = m["S"], m["Q"]
    else:
        fc = ws.read_json("forecast.json")
        S, Q = fc["S"], fc["Q"]
    if S < 1:
        raise DataError(f"forecast supply is {S}; nothing to sell")
    return MarketForecast(int(S), float(Q), float(sim["T"]), float(sim["T_end"]))


def _analytic_distribution(cfg: RunConfig) -> BidDistribution:
    c = cfg.raw["curves"]
    if c["source"] == "uniform":
        return BidDistribution.uniform(float(c["v_cpm"]) / CPM)
    return BidDistribution.lognormal(float(c["mu_cpm"]) - math.log(CPM), float(c["sigma"]))


def _curves(ws: Workspace) -> AuctionCurves:
    if ws.cfg.raw["curves"]["source"] != "rlwr":
        return AuctionCurves.from_distribution(_analytic_distribution(ws.cfg))
    t = ws.read_table("curves")
    xi = t["xi"]
    return AuctionCurves(
        phi=FittedCurve(xi, t["phi_cpm"] / CPM),
        psi=FittedCurve(xi, t["psi_cpm"] / CPM),
        pi=FittedCurve(xi, t["pi_cpm"] / CPM),
    )


def _risk(cfg: RunConfig) -> RiskParams:
    r = cfg.raw["risk"]
    return RiskParams(float(r["gamma"]), float(r["omega"]), float(r["lambda"]))


def _price_model(ws: Workspace) -> PriceModel:
    pm = dict(ws.cfg.raw["simulation"]["price_model"])
    kind = pm.get("kind", "lognormal_fit")
    if kind == "lognormal_fit":
        return PriceModel.fit_lognormal(_training_auctions(ws)[:, 2])
    if kind == "empirical":
        return PriceModel.empirical(_training_auctions(ws)[:, 2])
    try:
        if kind == "lognormal":
            return PriceModel.lognormal(float(pm["mu_cpm"]) - math.log(CPM), float(pm["sigma"]))
        if kind == "uniform":
            return PriceModel.uniform(float(pm["low_cpm"]) / CPM, float(pm["high_cpm"]) / CPM)
        if kind == "constant":
            return PriceModel.constant(float(pm["value_cpm"]) / CPM)
    except KeyError as exc:
        raise ValidationError(f"price_model {kind!r} is missing {exc}") from exc
    raise ValidationError(f"unknown price_model kind {kind!r}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_ingest(ws: Workspace, args) -> None:
    res = _ingest(ws)
    ws.write_table(
        "aggregates",
        ["day", "hour", "supply", "demand", "avg_payment_cpm"],
        [[a.day, a.hour, a.supply, a.demand, None if a.avg_payment is None else _cpm(a.avg_payment)]
         for a in res.aggregates],
    )
    ws.write_table(
        "auctions",
        ["day", "hour", "bid_count", "payment_cpm", "winning_bid_cpm"],
        [[int(r[0]), int(r[1]), int(r[2]), _cpm(r[3]), _cpm(r[4])] for r in res.auctions],
    )
    ws.write_json("ingest.json", {
        "slot": ws.cfg.raw["data"]["slot"], "origin": res.origin.isoformat(),
        "rows": res.n_rows, "malformed": res.n_malformed, "auctions": int(res.auctions.shape[0]),
        "aggregates": len(res.aggregates),
    })
    print(f"ingested {res.auctions.shape[0]} auctions into {len(res.aggregates)} hourly aggregates")


def _aggregates_from(ws: Workspace):
    from .ingest import HourlyAggregate

    t = ws.read_table("aggregates")
    return [
        HourlyAggregate(int(d), int(h), int(s), int(q), None if math.isnan(p) else p / CPM)
        for d, h, s, q, p in zip(t["day"], t["hour"], t["supply"], t["demand"], t["avg_payment_cpm"])
    ]


def cmd_forecast(ws: Workspace, args) -> None:
    cfg = ws.cfg
    d, f = cfg.raw["data"], cfg.raw["forecast"]
    if d["delivery_day"] is None:
        raise ValidationError("forecast needs data.delivery_day")
    aggs = _aggregates_from(ws)
    spec = ModelSpec(f["model"], int(f["day_degree"]), int(f["hour_degree"]), float(f["bandwidth"]))
    day = int(d["delivery_day"])
    res = forecast_day(aggs, day, spec, int(d["training_days"]))
    ws.write_json("forecast.json", {
        "model": res.model, "delivery_day": day, "S": res.S, "Q": res.Q,
        "supply_hourly": [float(x) for x in res.supply],
        "demand_hourly": [float(x) for x in res.demand],
    })
    print(f"{res.model}: S={res.S} Q={res.Q:.1f} for day {day}")
    if args.grid:
        rows = model_grid(aggs, day, int(d["training_days"]), int(f["backtest_days"]), float(f["bandwidth"]))
        ws.write_table(
            "forecast_grid",
            ["model", "demand_l2_avg", "demand_l2_std", "supply_l2_avg", "supply_l2_std"],
            [[r.model, r.demand_avg, r.demand_std, r.supply_avg, r.supply_std] for r in rows],
        )
        for r in rows:
            print(f"{r.model:9s} {r.demand_avg:.4f} {r.demand_std:.4f} {r.supply_avg:.4f} {r.supply_std:.4f}")


def cmd_fit_curves(ws: Workspace, args) -> None:
    c = ws.cfg.raw["curves"]
    if c["source"] == "rlwr":
        rate = c["resample_rate"]
        curves = build_auction_curves(
            _training_auctions(ws), float(c["fraction"]), int(c["robustness_iters"]),
            resample_rate=None if rate is None else float(rate), seed=ws.cfg.seed, degree=int(c["degree"]),
        )
        xi = curves.phi.xi
    else:
        curves = AuctionCurves.from_distribution(_analytic_distribution(ws.cfg))
        xi = np.round(np.linspace(0.0, 50.0, 501), 10)
    rows = [[float(x), curves.phi(x) * CPM, curves.psi(x) * CPM, curves.pi(x) * CPM] for x in xi]
    ws.write_table("curves", ["xi", "phi_cpm", "psi_cpm", "pi_cpm"], rows)
    print(f"wrote {len(rows)} curve knots ({c['source']})")


def cmd_price(ws: Workspace, args) -> None:
    market, curves, risk = _market(ws), _curves(ws), _risk(ws.cfg)
    sched = reserve_schedule(market, curves, risk)
    rows = []
    for s, r in sched:
        xi = competition_level(market, s)
        rows.append([
            s, xi, curves.phi(xi) * CPM, curves.psi(xi) * CPM, curves.pi(xi) * CPM,
            terminal_value(s, market, curves, risk), r * CPM,
        ])
    ws.write_table("schedule", ["s", "xi", "phi_cpm", "psi_cpm", "pi_cpm", "V", "reserve_cpm"], rows)
    negative = sum(r < 0 for _, r in sched)
    if negative:
        log.warning("%d of %d reserve prices are negative", negative, len(sched))
    check = guarantee_check(market, curves, risk.lam)
    ws.write_json("price.json", {
        "S": market.S, "Q": market.Q, "r_rtb": rtb_revenue(market, curves),
        "negative_reserves": negative,
        "guarantee_holds": check.holds, "guarantee_reason": check.reason,
    })
    print(f"priced {len(sched)} inventory levels; {negative} negative reserves; guarantee: {check.reason}")


def cmd_simulate(ws: Workspace, args) -> None:
    cfg = ws.cfg
    sim = cfg.raw["simulation"]
    config = SimConfig(
        forecast=_market(ws), curves=_curves(ws), risk=_risk(cfg), price_model=_price_model(ws),
        seed=cfg.seed,
        arrival_rate=None if sim["arrival_rate"] is None else float(sim["arrival_rate"]),
        rate_convention=sim["rate_convention"], repetitions=int(sim["runs"]),
    )
    batch = run_batch(config)
    rows = []
    for run, tr in enumerate(batch.traces):
        for e in tr.events:
            rows.append([run, tr.seed, e.t, e.price * CPM, e.reserve * CPM, int(e.accepted), e.s])
    ws.write_table("trace", ["run", "seed", "t", "price_cpm", "reserve_cpm", "accepted", "s_remaining"], rows)
    ws.write_json("report.json", {
        "schema": REPORT_SCHEMA,
        "S": config.forecast.S, "Q": config.forecast.Q, "arrival_rate": config.rate,
        "runs": [
            {"seed": tr.seed, "r_rtb": r.r_rtb, "r_pg_rtb": r.r_pg_rtb, "uplift": _finite(r.uplift),
             "n_accepted": r.n_accepted, "xi_star": r.xi_star, "dominates": r.dominates,
             "guarantee_holds": r.guarantee_holds}
            for tr, r in zip(batch.traces, batch.reports)
        ],
        "dominance_fraction": batch.dominance_fraction,
        "uplift_mean": _finite(batch.uplift_mean), "uplift_std": _finite(batch.uplift_std),
        "accepted_mean": batch.accepted_mean, "accepted_std": batch.accepted_std,
    })
    print(
        f"{batch.n_runs} runs: dominance {batch.dominance_fraction:.2%}, "
        f"mean uplift {batch.uplift_mean:.4%}, mean accepted {batch.accepted_mean:.1f}"
    )


def realized_rtb_revenue(cfg: RunConfig) -> float | None:
    """Actual auction income on the delivery day from the realized logs, if supplied."""
    if not cfg.realized_paths:
        return None
    d = cfg.raw["data"]
    res = read_logs(cfg.realized_paths, d["slot"], cfg.origin, float(d["max_malformed"]))
    rows = res.auctions
    if d["delivery_day"] is not None:
        rows = rows[rows[:, 0] == int(d["delivery_day"])]
    if rows.shape[0] == 0:
        raise DataError("realized logs hold no auctions on the delivery day")
    return float(rows[:, 3].sum())


def compare_reports(reports: Sequence[dict], realized: float | None) -> list[tuple[str, float | None]]:
    """Rows mirroring the expected-revenue comparison: two dominance fractions and the forecast error."""
    runs = [run for rep in reports for run in rep["runs"]]
    if not runs:
        raise DataError("no runs in the supplied reports")
    pred_dom = float(np.mean([r["r_pg_rtb"] >= r["r_rtb"] - 1e-9 * abs(r["r_rtb"]) for r in runs]))
    if realized is None:
        return [("pg_rtb_ge_rtb_predicted", pred_dom), ("pg_rtb_ge_rtb_realized", None),
                ("rtb_prediction_error", None)]
    real_dom = float(np.mean([r["r_pg_rtb"] >= realized for r in runs]))
    err = float(np.mean([(r["r_rtb"] - realized) / realized for r in runs])) if realized else None
    return [("pg_rtb_ge_rtb_predicted", pred_dom), ("pg_rtb_ge_rtb_realized", real_dom),
            ("rtb_prediction_error", err)]


def cmd_report(ws: Workspace, args) -> None:
    inputs = [Path(p) for p in args.runs] or [ws.out]
    reports = []
    for p in inputs:
        path = p / "report.json" if p.is_dir() else p
        if not path.exists():
            raise DataError(f"missing run report {path}")
        doc = json.loads(path.read_text())
        if doc.get("schema") != REPORT_SCHEMA:
            raise DataError(f"{path}: incompatible report schema {doc.get('schema')!r}")
        reports.append(doc)
    realized = realized_rtb_revenue(ws.cfg)
    rows = compare_reports(reports, realized)
    ws.write_table("comparison", ["metric", "value"], [list(r) for r in rows])
    for name, value in rows:
        print(f"{name:26s} {'unavailable' if value is None else f'{value:.4f}'}")


COMMANDS = {
    "ingest": cmd_ingest,
    "forecast": cmd_forecast,
    "fit-curves": cmd_fit_curves,
    "price": cmd_price,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgreserve", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"pgreserve {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: config 'out')")
    common.add_argument("--slot", help="override data.slot")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="table format")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "forecast":
            p.add_argument("--grid", action="store_true", help="also evaluate the full model grid")
        if name == "report":
            p.add_argument("runs", nargs="*", help="run directories or report.json files")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, slot=args.slot)
        out = Path(args.out) if args.out else cfg.base_dir / cfg.raw["out"]
        ws = Workspace(cfg, out, args.format)
        COMMANDS[args.command](ws, args)
    except PGReserveError as exc:
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
