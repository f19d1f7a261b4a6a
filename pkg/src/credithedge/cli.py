"""Command-line front end for the hedging pipeline.

Subcommands: ``signals``, ``backtest``, ``gridsearch``, ``lags``, ``synth``.
Configuration is a flat key=value file plus ``--set key=value`` overrides;
every run writes a manifest (inputs hashed, config resolved) and embeds
the manifest hash in each artifact. Outputs are written atomically
(temp file + rename), so failures leave no partial files.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import pandas as pd

from . import __version__, backtest as bt, metrics as mx, rnd, signals as signals_mod
from .errors import InputError, NumericalError
from .marketdata import clean_trace, load_dataset
from .synth import DrawdownWindow, SynthConfig, generate_synthetic_market, write_dataset_csv

logger = logging.getLogger("credithedge")

CONFIG_DEFAULTS = {
    "fund": "FUND",
    "hedge_instruments": "IG_ETF",
    "rate_instrument": "GOV_ETF",
    "credit_instrument": "",
    "momentum_instrument": "",
    "model": "cca",
    "lookback": 125,
    "gamma_upper": 2.5,
    "gamma_lower": -1.5,
    "gamma_ols": 0.05,
    "fund_size": 1e9,
    "funding_bps": 50.0,
    "volume_cap_fraction": 0.10,
    "volume_sma_days": 252,
    "funding_divisor_mode": "annualized_daily",
    "cost_mode": "full",
    "momentum_lookback": 252,
    "momentum_offset": 22,
    "credit_field": "excess_expected_drawdown",
    "tail_prob": 0.01,
    "risk_free_rate": 0.0,
    "signals_file": "",
    "grid_lookbacks": "20,40,60,125,250",
    "grid_gamma_uppers": "2.0,2.5,3.0",
    "grid_gamma_lowers": "-0.5,-1.0,-1.5,-2.0,-2.5,-3.0",
    "lags": "-5,-3,-1,0,1,2,3,5,8,10",
    "synth_horizon_days": 1500,
    "synth_n_bonds": 25,
    "synth_drawdowns": "950:25:-0.15:3.0:10",
}


def parse_config_file(path) -> dict:
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def resolve_config(args) -> dict:
    config = dict(CONFIG_DEFAULTS)
    if args.config:
        file_values = parse_config_file(args.config)
        unknown = set(file_values) - set(CONFIG_DEFAULTS)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        config.update(file_values)
    for item in args.set or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        if key not in CONFIG_DEFAULTS:
            raise InputError(f"unknown config key {key!r}")
        config[key] = value
    return config


def _floats(text) -> tuple:
    return tuple(float(tok) for tok in str(text).split(",") if str(tok).strip())


def _ints(text) -> tuple:
    return tuple(int(float(tok)) for tok in str(text).split(",") if str(tok).strip())


def backtest_config(config: dict) -> bt.BacktestConfig:
    hedges = tuple(h.strip() for h in str(config["hedge_instruments"]).split(",") if h.strip())
    return bt.BacktestConfig(
        fund=str(config["fund"]),
        hedge_instruments=hedges,
        model=str(config["model"]),
        lookback=int(float(config["lookback"])),
        gamma_upper=float(config["gamma_upper"]),
        gamma_lower=float(config["gamma_lower"]),
        gamma_ols=float(config["gamma_ols"]),
        fund_size=float(config["fund_size"]),
        funding_bps=float(config["funding_bps"]),
        volume_cap_fraction=float(config["volume_cap_fraction"]),
        volume_sma_days=int(float(config["volume_sma_days"])),
        funding_divisor_mode=str(config["funding_divisor_mode"]),
        cost_mode=str(config["cost_mode"]),
        momentum_lookback=int(float(config["momentum_lookback"])),
        momentum_offset=int(float(config["momentum_offset"])),
        momentum_instrument=str(config["momentum_instrument"]),
        credit_instrument=str(config["credit_instrument"]),
        rate_instrument=str(config["rate_instrument"]),
        credit_field=str(config["credit_field"]),
        tail_prob=float(config["tail_prob"]),
        risk_free_rate=float(config["risk_free_rate"]),
    )


# ---------------------------------------------------------------------------
# Manifest and atomic writes
# ---------------------------------------------------------------------------

def build_manifest(command: str, config: dict, args, data_dir) -> dict:
    inputs = {}
    if data_dir is not None and Path(data_dir).is_dir():
        for path in sorted(Path(data_dir).glob("*.csv")):
            inputs[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config_file": str(args.config) if args.config else None,
        "config": {k: str(v) for k, v in sorted(config.items())},
        "seed": args.seed,
        "inputs": inputs,
    }
    payload = json.dumps(manifest, sort_keys=True).encode()
    manifest["manifest_hash"] = hashlib.sha256(payload).hexdigest()
    return manifest


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_csv(path: Path, frame: pd.DataFrame, manifest_hash: str, index=True) -> None:
    body = frame.to_csv(index=index, date_format="%Y-%m-%d")
    atomic_write_text(path, f"# manifest_hash={manifest_hash}\n{body}")


def write_json(path: Path, payload: dict, manifest_hash: str) -> None:
    payload = dict(payload)
    payload["manifest_hash"] = manifest_hash
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(obj):
    import numpy as np
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.ndarray,)):
        return obj.tolist()
    if isinstance(obj, pd.Timestamp):
        return obj.date().isoformat()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def load_signals_file(path) -> dict:
    """Read a previously emitted signals.csv back into SignalSeries."""
    frame = pd.read_csv(path, comment="#", parse_dates=["date"])
    missing = {"date", "name", "value"} - set(frame.columns)
    if missing:
        raise InputError(f"signals file {path} lacks columns {sorted(missing)}")
    out = {}
    for name, group in frame.groupby("name"):
        series = group.set_index("date")["value"].sort_index()
        out[str(name)] = signals_mod.SignalSeries(name=str(name), series=series)
    if not out:
        raise InputError(f"signals file {path} is empty")
    return out


def maybe_signals(config) -> dict | None:
    path = str(config.get("signals_file", "")).strip()
    return load_signals_file(path) if path else None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, config, out_dir) -> int:
    windows = []
    spec = str(config["synth_drawdowns"]).strip()
    if spec:
        for chunk in spec.split(";"):
            parts = chunk.split(":")
            if len(parts) < 3:
                raise InputError(f"synth_drawdowns entry needs start:length:depth, got {chunk!r}")
            windows.append(DrawdownWindow(
                start=int(parts[0]), length=int(parts[1]), depth=float(parts[2]),
                spread_widening=float(parts[3]) if len(parts) > 3 else 3.0,
                lead_days=int(parts[4]) if len(parts) > 4 else 10,
            ))
    hedges = tuple(h.strip() for h in str(config["hedge_instruments"]).split(",") if h.strip())
    synth_cfg = SynthConfig(
        horizon_days=int(float(config["synth_horizon_days"])),
        hedge_instruments=hedges,
        hedge_durations=tuple(8.5 - 2.0 * i for i in range(len(hedges))),
        rate_instrument=str(config["rate_instrument"]),
        fund=str(config["fund"]),
        drawdowns=tuple(windows),
        n_bonds=int(float(config["synth_n_bonds"])),
    )
    data = generate_synthetic_market(synth_cfg, seed=args.seed)
    write_dataset_csv(data, out_dir)
    manifest = build_manifest("synth", config, args, out_dir)
    write_json(out_dir / "manifest.json", {"generated_files": sorted(
        p.name for p in out_dir.glob("*.csv"))}, manifest["manifest_hash"])
    logger.info("wrote synthetic dataset to %s", out_dir)
    return 0


def cmd_signals(args, config, out_dir) -> int:
    data = load_dataset(args.data_dir)
    cfg = backtest_config(config)
    manifest = build_manifest("signals", config, args, args.data_dir)

    built = {}
    failures = {}
    credit_id = cfg.credit_instrument or cfg.hedge_instruments[0]
    try:
        if credit_id not in data.smiles or cfg.rate_instrument not in data.smiles:
            raise InputError(
                f"smiles missing for {credit_id!r} or {cfg.rate_instrument!r}")
        built["Credit"] = signals_mod.credit_factor(
            data.smiles[credit_id], data.smiles[cfg.rate_instrument],
            data.prices[credit_id]["close"], data.prices[cfg.rate_instrument]["close"],
            data.prices[credit_id]["dividend_yield"].fillna(0.0),
            data.prices[cfg.rate_instrument]["dividend_yield"].fillna(0.0),
            risk_free_rate=cfg.risk_free_rate, tail_prob=cfg.tail_prob,
            field=cfg.credit_field)
    except (InputError, KeyError) as exc:
        failures["Credit"] = str(exc)
    try:
        if not data.trades or data.roster is None:
            raise InputError("trades.csv or roster.csv missing")
        enriched = signals_mod.enrich_trades(clean_trace(data.trades), data.treasuries)
        built["Liquidity"] = signals_mod.liquidity_factor(enriched, data.roster, data.dates)
    except (InputError, KeyError) as exc:
        failures["Liquidity"] = str(exc)
    try:
        momentum_id = cfg.momentum_instrument or cfg.hedge_instruments[0]
        index = (1.0 + bt.neutral_returns_for(data, momentum_id)).cumprod()
        built["Momentum"] = signals_mod.momentum_signal(
            index, cfg.momentum_lookback, cfg.momentum_offset)
    except (InputError, KeyError) as exc:
        failures["Momentum"] = str(exc)

    for name, reason in failures.items():
        logger.warning("signal %s skipped: %s", name, reason)
    if not built:
        raise InputError(f"all signals failed: {failures}")

    long_rows = []
    for name, signal in built.items():
        for date, value in signal.series.items():
            long_rows.append({"date": date, "name": name, "value": value})
    frame = pd.DataFrame(long_rows).sort_values(["date", "name"])

    payload = {"signals_built": sorted(built), "signals_skipped": failures}
    if len(built) >= 2:
        fund_neutral = bt.fund_neutral_returns(data, cfg.fund)
        report = signals_mod.orthogonality_report(
            {k: v.series for k, v in built.items()}, fund_neutral)
        payload["pearson"] = {
            row: {col: report.correlation.loc[row, col] for col in report.correlation.columns}
            for row in report.correlation.index}
        payload["adjusted_r2"] = report.adjusted_r2
        payload["intercepts"] = report.intercepts
        payload["residuals"] = {
            name: report.residuals[name].tolist() for name in report.residuals.columns}
        payload["residual_dates"] = [d.date().isoformat() for d in report.residuals.index]
    else:
        logger.warning("orthogonality report needs at least 2 signals; skipped")

    if args.dump_distributions and "Credit" in built:
        _dump_distributions(data, cfg, Path(args.dump_distributions), manifest["manifest_hash"])

    write_csv(out_dir / "signals.csv", frame, manifest["manifest_hash"], index=False)
    write_json(out_dir / "orthogonality.json", payload, manifest["manifest_hash"])
    write_json(out_dir / "manifest.json", manifest, manifest["manifest_hash"])
    return 0


def _dump_distributions(data, cfg, dump_dir: Path, manifest_hash: str) -> None:
    dump_dir.mkdir(parents=True, exist_ok=True)
    credit_id = cfg.credit_instrument or cfg.hedge_instruments[0]
    for date, smile in sorted(data.smiles[credit_id].items()):
        if date not in data.prices[credit_id].index:
            continue
        curve = rnd.fit_vol_curve(smile)
        dist = rnd.extract_distribution(
            curve, float(data.prices[credit_id].at[date, "close"]),
            cfg.risk_free_rate, float(data.prices[credit_id].at[date, "dividend_yield"]))
        frame = pd.DataFrame({"strike": dist.strike_grid, "cdf": dist.cdf, "pdf": dist.pdf})
        write_csv(dump_dir / f"distribution_{date.date().isoformat()}.csv",
                  frame, manifest_hash, index=False)


def _summary_payload(result, cfg) -> dict:
    hedged = mx.result_metrics(result)
    base = mx.baseline_metrics(result)
    delta = mx.delta_metrics(hedged, base)
    return {
        "frictionless": result.frictionless,
        "model": cfg.model,
        "lookback": cfg.lookback,
        "gamma_upper": cfg.gamma_upper,
        "gamma_lower": cfg.gamma_lower,
        "hedged": _finite_dict(hedged.as_dict()),
        "baseline": _finite_dict(base.as_dict()),
        "delta": _finite_dict(delta.deltas),
        "sortino_unbounded": hedged.sortino_unbounded or base.sortino_unbounded,
    }


def _finite_dict(d):
    import math
    return {k: (v if math.isfinite(v) else str(v)) for k, v in d.items()}


def cmd_backtest(args, config, out_dir) -> int:
    data = load_dataset(args.data_dir)
    cfg = backtest_config(config)
    manifest = build_manifest("backtest", config, args, args.data_dir)
    result = bt.run_backtest(data, cfg, signals=maybe_signals(config))

    frame = result.ledger.copy()
    frame.insert(0, "fund_ret", result.unhedged)
    frame.insert(1, "hedged_ret", result.hedged)
    frame["spread_cost"] = result.spread_cost
    frame["funding_cost"] = result.funding_cost

    diagnostics = result.decisions.copy()
    diagnostics.insert(0, "model", cfg.model)
    diagnostics["indicator"] = result.ledger["state"].astype(int)
    diagnostics = diagnostics.rename(columns={"z": "zscore"})

    write_csv(out_dir / "backtest.csv", frame, manifest["manifest_hash"])
    write_csv(out_dir / "model_diagnostics.csv", diagnostics, manifest["manifest_hash"])
    write_json(out_dir / "summary.json", _summary_payload(result, cfg), manifest["manifest_hash"])
    write_json(out_dir / "manifest.json", manifest, manifest["manifest_hash"])
    return 0


def cmd_gridsearch(args, config, out_dir) -> int:
    data = load_dataset(args.data_dir)
    cfg = backtest_config(config)
    manifest = build_manifest("gridsearch", config, args, args.data_dir)
    report = mx.grid_search(
        data, cfg,
        lookbacks=_ints(config["grid_lookbacks"]),
        gamma_uppers=_floats(config["grid_gamma_uppers"]),
        gamma_lowers=_floats(config["grid_gamma_lowers"]),
        signals=maybe_signals(config),
    )
    blocks = []
    for stage in report.stages:
        table = stage.table.reset_index()
        table.insert(0, "stage", stage.parameter)
        blocks.append(table)
    frame = pd.concat(blocks, ignore_index=True)
    write_csv(out_dir / "gridsearch.csv", frame, manifest["manifest_hash"], index=False)
    write_json(out_dir / "gridsearch_selected.json",
               {"selected": report.selected}, manifest["manifest_hash"])
    write_json(out_dir / "manifest.json", manifest, manifest["manifest_hash"])
    return 0


def cmd_lags(args, config, out_dir) -> int:
    data = load_dataset(args.data_dir)
    cfg = backtest_config(config)
    manifest = build_manifest("lags", config, args, args.data_dir)
    table = mx.lag_analysis(data, cfg, lags=_ints(config["lags"]),
                            signals=maybe_signals(config))
    write_csv(out_dir / "lags.csv", table.reset_index(), manifest["manifest_hash"], index=False)
    write_json(out_dir / "manifest.json", manifest, manifest["manifest_hash"])
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "signals": cmd_signals,
    "backtest": cmd_backtest,
    "gridsearch": cmd_gridsearch,
    "lags": cmd_lags,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="credithedge",
        description="Signal-driven dynamic credit hedging: signals, backtests, "
                    "parameter searches and lag analyses over CSV market data.",
        epilog="Config defaults: " + ", ".join(f"{k}={v}" for k, v in CONFIG_DEFAULTS.items()),
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--data-dir", help="directory with the input CSV tables")
    parser.add_argument("--out-dir", default=".", help="directory for output artifacts")
    parser.add_argument("--seed", type=int, default=0, help="seed for synthetic generation")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    parser.add_argument("--dump-distributions", metavar="DIR",
                        help="signals: also dump per-date strike,cdf,pdf tables")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command != "synth" and not args.data_dir:
            raise InputError("--data-dir is required for this command")
        return COMMANDS[args.command](args, config, out_dir)
    except InputError as exc:
        logger.error("input error: %s", exc)
        return 1
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
