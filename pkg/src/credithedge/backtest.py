"""Deterministic daily backtest of the dynamic short-credit hedge.

The loop separates three stages so parameter sweeps can share work:

  1. ``prepare_inputs``: duration-neutral returns, signals, rolling vols;
  2. ``compute_model_path``: per-day rolling fits (depends on the model
     and lookback, not on the hysteresis thresholds);
  3. ``compute_targets`` + ``execute``: threshold state walk and
     volume-capped execution with spread/funding cost attribution.

Every stage is a pure function of its inputs, so a truncated dataset
replays the identical ledger prefix and repeated runs are bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from . import models, signals as signals_mod
from .durneutral import duration_neutral_returns
from .errors import DegenerateWindowError, InputError
from .marketdata import MarketDataset, clean_trace
from .signals import SignalSeries

logger = logging.getLogger(__name__)

TRADING_DAYS = 252
VOL_WINDOW = 252          # trailing window for the volatility-scaling cap
FILL_SNAP = 1e-12         # complete a fill when within rounding of the cap


@dataclass(frozen=True)
class BacktestConfig:
    """Everything a single backtest run needs beyond the dataset."""

    fund: str
    hedge_instruments: tuple
    model: str = "cca"                          # "cca" | "ols"
    lookback: int = 125
    gamma_upper: float = 2.5
    gamma_lower: float = -1.5
    gamma_ols: float = 0.05
    fund_size: float = 1e9
    funding_bps: float = 0.0
    volume_cap_fraction: float = 0.10
    volume_sma_days: int = 252
    funding_divisor_mode: str = "annualized_daily"  # | "paper_literal"
    cost_mode: str = "full"                          # | "frictionless" | "paper_literal"
    momentum_lookback: int = 252
    momentum_offset: int = 22
    momentum_instrument: str = ""
    credit_instrument: str = ""
    rate_instrument: str = ""
    credit_field: str = "excess_expected_drawdown"
    tail_prob: float = 0.01
    risk_free_rate: float = 0.0

    def __post_init__(self):
        if self.fund_size <= 0:
            raise InputError("fund_size must be positive")
        if not (0.0 < self.volume_cap_fraction <= 1.0):
            raise InputError("volume_cap_fraction must be in (0, 1]")
        if not self.gamma_upper > self.gamma_lower:
            raise InputError("gamma_upper must exceed gamma_lower")
        if self.model not in ("cca", "ols"):
            raise InputError(f"unknown model {self.model!r}")
        if self.funding_divisor_mode not in ("annualized_daily", "paper_literal"):
            raise InputError(f"unknown funding mode {self.funding_divisor_mode!r}")
        if self.cost_mode not in ("full", "frictionless", "paper_literal"):
            raise InputError(f"unknown cost mode {self.cost_mode!r}")
        if self.model == "ols" and self.lookback < 30:
            raise InputError("the OLS model needs lookback >= 30 for the hedge-beta step")
        if not self.hedge_instruments:
            raise InputError("at least one hedge instrument is required")

    def daily_funding(self) -> float:
        if self.funding_divisor_mode == "paper_literal":
            return self.funding_bps / 1000.0
        return self.funding_bps / 1e4 / TRADING_DAYS


@dataclass(frozen=True)
class PreparedInputs:
    """Aligned signal matrix, neutral returns and market frames."""

    dates: pd.DatetimeIndex
    signal_matrix: pd.DataFrame          # columns Credit, Liquidity, Momentum
    fund_neutral: pd.Series
    hedge_neutral: pd.DataFrame          # per instrument
    closes: pd.DataFrame
    bids: pd.DataFrame
    asks: pd.DataFrame
    volumes: pd.DataFrame
    sigma_fund: pd.Series                # trailing annualized vol, NaN until warm
    sigma_hedge: pd.DataFrame
    costs_available: bool


@dataclass(frozen=True)
class PositionLedger:
    """Per-instrument weights (per unit of fund) after the day's trading."""

    weights: Mapping[str, float]

    def weight(self, instrument: str) -> float:
        return self.weights.get(instrument, 0.0)


@dataclass(frozen=True)
class DayRecord:
    date: pd.Timestamp
    hedged_return: float
    frictionless_return: float
    spread_cost: float
    funding_cost: float
    traded_shares: Mapping[str, float]
    weights: Mapping[str, float]


@dataclass
class BacktestResult:
    dates: pd.DatetimeIndex
    hedged: pd.Series
    unhedged: pd.Series
    frictionless_returns: pd.Series
    spread_cost: pd.Series
    funding_cost: pd.Series
    ledger: pd.DataFrame                 # weight_/target_/shares_ columns + state
    decisions: pd.DataFrame              # model diagnostics per decision day
    frictionless: bool
    config: BacktestConfig


def neutral_returns_for(data: MarketDataset, instrument: str) -> pd.Series:
    """Duration-neutral daily returns for a priced instrument."""
    frame = data.prices[instrument]
    raw = frame["close"].pct_change() + frame["dividend_yield"].fillna(0.0) / TRADING_DAYS
    raw = raw.dropna()
    return duration_neutral_returns(
        raw, frame["duration"].loc[raw.index],
        data.treasury_panel("return_"), data.treasury_panel("duration"),
    ).neutral_return


def fund_neutral_returns(data: MarketDataset, fund: str) -> pd.Series:
    frame = data.fund_returns[fund]
    return duration_neutral_returns(
        frame["return"], frame["duration"],
        data.treasury_panel("return_"), data.treasury_panel("duration"),
    ).neutral_return


def build_signals(data: MarketDataset, cfg: BacktestConfig) -> dict:
    """Construct the Credit, Liquidity and Momentum series from a dataset."""
    credit_id = cfg.credit_instrument or cfg.hedge_instruments[0]
    momentum_id = cfg.momentum_instrument or cfg.hedge_instruments[0]
    out = {}

    if credit_id in data.smiles and cfg.rate_instrument in data.smiles:
        out["Credit"] = signals_mod.credit_factor(
            data.smiles[credit_id], data.smiles[cfg.rate_instrument],
            data.prices[credit_id]["close"], data.prices[cfg.rate_instrument]["close"],
            data.prices[credit_id]["dividend_yield"].fillna(0.0),
            data.prices[cfg.rate_instrument]["dividend_yield"].fillna(0.0),
            risk_free_rate=cfg.risk_free_rate, tail_prob=cfg.tail_prob,
            field=cfg.credit_field,
        )
    if data.trades and data.roster is not None:
        cleaned = clean_trace(data.trades)
        enriched = signals_mod.enrich_trades(cleaned, data.treasuries)
        out["Liquidity"] = signals_mod.liquidity_factor(enriched, data.roster, data.dates)
    momentum_index = (1.0 + neutral_returns_for(data, momentum_id)).cumprod()
    out["Momentum"] = signals_mod.momentum_signal(
        momentum_index, cfg.momentum_lookback, cfg.momentum_offset)
    return out


def prepare_inputs(data: MarketDataset, cfg: BacktestConfig,
                   signals: Optional[Mapping[str, SignalSeries]] = None) -> PreparedInputs:
    """Align signals, neutral returns and market frames on common dates."""
    if cfg.fund not in data.fund_returns:
        raise InputError(f"fund {cfg.fund!r} not in dataset")
    for instrument in cfg.hedge_instruments:
        if instrument not in data.prices:
            raise InputError(f"hedge instrument {instrument!r} not in dataset")

    if signals is None:
        signals = build_signals(data, cfg)
    matrix = pd.DataFrame({name: s.series for name, s in signals.items()}).dropna()
    if matrix.shape[1] == 0:
        raise InputError("no signals available")

    fund_neutral = fund_neutral_returns(data, cfg.fund)
    hedge_neutral = pd.DataFrame({
        instrument: neutral_returns_for(data, instrument)
        for instrument in cfg.hedge_instruments
    }).dropna()

    dates = matrix.index.intersection(fund_neutral.index).intersection(hedge_neutral.index)
    dates = dates.sort_values()
    matrix = matrix.loc[dates]
    fund_neutral = fund_neutral.loc[dates]
    hedge_neutral = hedge_neutral.loc[dates]

    closes = pd.DataFrame({i: data.prices[i]["close"] for i in cfg.hedge_instruments}).loc[dates]
    bids = pd.DataFrame({i: data.prices[i]["bid"] for i in cfg.hedge_instruments}).loc[dates]
    asks = pd.DataFrame({i: data.prices[i]["ask"] for i in cfg.hedge_instruments}).loc[dates]
    volumes = pd.DataFrame({i: data.prices[i]["volume"] for i in cfg.hedge_instruments}).loc[dates]

    sigma_fund = fund_neutral.rolling(VOL_WINDOW).std(ddof=1) * np.sqrt(TRADING_DAYS)
    sigma_hedge = hedge_neutral.rolling(VOL_WINDOW).std(ddof=1) * np.sqrt(TRADING_DAYS)

    return PreparedInputs(
        dates=dates, signal_matrix=matrix, fund_neutral=fund_neutral,
        hedge_neutral=hedge_neutral, closes=closes, bids=bids, asks=asks,
        volumes=volumes, sigma_fund=sigma_fund, sigma_hedge=sigma_hedge,
        costs_available=data.costs_available,
    )


def warmup_length(cfg: BacktestConfig) -> int:
    return max(cfg.volume_sma_days, VOL_WINDOW) + cfg.lookback


def volume_cap(volume_history: pd.Series, t, cfg: BacktestConfig) -> float:
    """Max tradable shares today: min(SMA * cap fraction, today's volume)."""
    pos = volume_history.index.get_loc(t)
    if pos + 1 < cfg.volume_sma_days:
        raise InputError(
            f"volume cap needs {cfg.volume_sma_days} days of history before {t}, have {pos + 1}"
        )
    window = volume_history.iloc[pos + 1 - cfg.volume_sma_days: pos + 1]
    return float(min(cfg.volume_cap_fraction * window.mean(), volume_history.iloc[pos]))


def compute_model_path(prepared: PreparedInputs, cfg: BacktestConfig) -> pd.DataFrame:
    """Rolling fits per execution day; threshold-independent.

    Row at date d holds the decision inputs for trading on d, produced
    from data dated <= d-1: the capped optimal weight, the forecast
    z-score (CCA) or indicator inputs (OLS), and per-instrument loadings.
    A degenerate window leaves the row invalid (state holds, no retarget).
    """
    dates = prepared.dates
    start = warmup_length(cfg)
    if len(dates) < start + 1:
        raise InputError(
            f"dataset spans {len(dates)} usable days; needs more than {start} "
            f"(lookback {cfg.lookback} + history {max(cfg.volume_sma_days, VOL_WINDOW)})"
        )
    hedges = list(cfg.hedge_instruments)
    multi = len(hedges) > 1
    records = []
    for i in range(start, len(dates)):
        date = dates[i]
        window = dates[i - 1 - cfg.lookback: i]          # lookback+1 dates ending at i-1
        row = {"date": date, "valid": False, "w_raw": np.nan, "w_capped": 0.0,
               "z": np.nan, "achieved_corr": np.nan, "forecast": np.nan, "f_p": np.nan}
        for h in hedges:
            row[f"loading_{h}"] = np.nan
        try:
            sig_win = prepared.signal_matrix.loc[window]
            hedge_win = prepared.hedge_neutral.loc[window]
            fund_win = prepared.fund_neutral.loc[window]
            sigma_f = prepared.sigma_fund.iloc[i - 1]

            if multi:
                pca = models.pca_first_component(hedge_win)
                loadings = pca.loadings / pca.loadings.sum()
                synth = prepared.hedge_neutral.iloc[:i] @ pca.loadings
                hedge_series = synth.loc[window]
                sigma_h = synth.iloc[i - VOL_WINDOW: i].std(ddof=1) * np.sqrt(TRADING_DAYS)
                for h in hedges:
                    row[f"loading_{h}"] = float(loadings[h])
            else:
                hedge_series = hedge_win[hedges[0]]
                sigma_h = prepared.sigma_hedge[hedges[0]].iloc[i - 1]
                row[f"loading_{hedges[0]}"] = 1.0

            if cfg.model == "cca":
                responses = pd.DataFrame({"fund": fund_win, "hedge": hedge_series})
                fit = models.cca_fit(sig_win, responses)
                w = models.cap_and_scale(fit.hedge_weight, float(sigma_f), float(sigma_h))
                row.update(valid=True, w_raw=fit.hedge_weight, w_capped=w,
                           z=fit.zscore, achieved_corr=fit.achieved_corr,
                           forecast=fit.forecast)
            else:
                fit = models.ols_fit(sig_win, hedge_series)
                indicator = models.ols_indicator(fit, cfg.gamma_ols)
                beta_fit = models.ols_hedge_beta(fund_win, hedge_series)
                raw = -beta_fit.hedge_beta * indicator
                w = models.cap_and_scale(raw, float(sigma_f), float(sigma_h))
                row.update(valid=True, w_raw=raw, w_capped=w,
                           forecast=fit.forecast, f_p=fit.f_stat_p, z=np.nan)
        except DegenerateWindowError as exc:
            logger.debug("skipping %s: %s", date.date(), exc)
        records.append(row)
    return pd.DataFrame(records).set_index("date")


def compute_targets(model_path: pd.DataFrame, cfg: BacktestConfig) -> pd.DataFrame:
    """Walk the hysteresis state machine into per-instrument target weights."""
    hedges = list(cfg.hedge_instruments)
    state = models.HedgeTimingState()
    rows = []
    for date, row in model_path.iterrows():
        if cfg.model == "cca":
            if row["valid"]:
                state = models.hedge_state_step(
                    state, row["w_capped"], row["z"], cfg.gamma_upper, cfg.gamma_lower, date)
            total = min(row["w_capped"], 0.0) if (state.on and row["valid"]) else 0.0
            if state.on and not row["valid"]:
                total = np.nan  # hold yesterday's targets
        else:
            total = row["w_capped"] if row["valid"] else np.nan
            if row["valid"]:
                state = models.HedgeTimingState(
                    on=bool(total != 0.0),
                    cause=models.HedgeCause.ENTRY_SIGNAL if total != 0.0 else state.cause,
                    last_transition=state.last_transition)
        out = {"date": date, "state_on": state.on, "w_total": total}
        for h in hedges:
            out[f"target_{h}"] = total * row[f"loading_{h}"] if np.isfinite(total) else np.nan
        rows.append(out)
    frame = pd.DataFrame(rows).set_index("date")
    target_cols = [f"target_{h}" for h in hedges]
    frame[target_cols] = frame[target_cols].ffill().fillna(0.0)
    return frame


def execute(prepared: PreparedInputs, targets: pd.DataFrame, cfg: BacktestConfig,
            lag: int = 0) -> BacktestResult:
    """Trade toward (possibly lagged) targets under the daily volume cap.

    Day accounting: returns and funding accrue on the weight carried into
    the day; spread costs accrue on the traded increment (or, in
    paper-literal mode, on the full post-trade weight on trade days).
    """
    frictionless = cfg.cost_mode == "frictionless"
    if not prepared.costs_available and not frictionless:
        logger.warning("bid/ask not available; running frictionless")
        frictionless = True

    hedges = list(cfg.hedge_instruments)
    exec_dates = targets.index
    if lag != 0:
        shifted = targets.reindex(exec_dates)  # copy
        shifted = shifted.shift(lag)
        if lag < 0:
            usable = shifted.dropna(subset=[f"target_{hedges[0]}"]).index
            if len(usable) < len(exec_dates):
                logger.warning("lag %d runs beyond the dataset; truncating %d days",
                               lag, len(exec_dates) - len(usable))
            shifted = shifted.loc[usable]
            exec_dates = usable
        else:
            for h in hedges:
                shifted[f"target_{h}"] = shifted[f"target_{h}"].fillna(0.0)
            state_col = shifted["state_on"]
            shifted["state_on"] = state_col.where(state_col.notna(), False).astype(bool)
        targets = shifted

    dates = prepared.dates
    weights = {h: 0.0 for h in hedges}
    day_records = []
    ledger_rows = []
    f_daily = 0.0 if frictionless else cfg.daily_funding()

    for date in exec_dates:
        i = dates.get_loc(date)
        tgt_row = targets.loc[date]
        fund_ret = float(prepared.fund_neutral.iloc[i])
        gross = fund_ret
        spread_cost = 0.0
        funding_cost = 0.0
        traded = {}
        ledger_row = {"date": date, "state": bool(tgt_row["state_on"])}

        for h in hedges:
            w_pre = weights[h]
            target = float(tgt_row[f"target_{h}"])
            close = float(prepared.closes.at[date, h])
            if not np.isfinite(close):
                raise InputError(f"missing price for {h} on {date.date()}")
            vol_hist = prepared.volumes[h].iloc[: i + 1]
            cap_shares = volume_cap(vol_hist, date, cfg)
            max_dw = cap_shares * close / cfg.fund_size

            delta = target - w_pre
            if abs(delta) <= max_dw * (1.0 + FILL_SNAP):
                dw = delta
            else:
                dw = float(np.sign(delta) * max_dw)
            w_post = w_pre + dw
            shares = abs(dw) * cfg.fund_size / close
            if shares > cap_shares * (1.0 + 1e-9):
                raise InputError(f"volume cap violated for {h} on {date.date()}")

            gross += w_pre * float(prepared.hedge_neutral.at[date, h])
            if not frictionless:
                bid = float(prepared.bids.at[date, h])
                ask = float(prepared.asks.at[date, h])
                half_spread = (ask - bid) / (ask + bid)
                if cfg.cost_mode == "full":
                    spread_cost += abs(dw) * half_spread
                else:
                    spread_cost += (abs(w_post) * half_spread) if dw != 0 else 0.0
                funding_cost += abs(w_pre) * f_daily

            weights[h] = w_post
            traded[h] = shares
            ledger_row[f"weight_{h}"] = w_post
            ledger_row[f"target_{h}"] = target
            ledger_row[f"shares_{h}"] = shares

        hedged = gross - spread_cost - funding_cost
        day_records.append(DayRecord(
            date=date, hedged_return=hedged, frictionless_return=gross,
            spread_cost=spread_cost, funding_cost=funding_cost,
            traded_shares=traded, weights=dict(weights),
        ))
        ledger_rows.append(ledger_row)

    idx = pd.DatetimeIndex([r.date for r in day_records])
    return BacktestResult(
        dates=idx,
        hedged=pd.Series([r.hedged_return for r in day_records], index=idx),
        unhedged=prepared.fund_neutral.loc[idx],
        frictionless_returns=pd.Series([r.frictionless_return for r in day_records], index=idx),
        spread_cost=pd.Series([r.spread_cost for r in day_records], index=idx),
        funding_cost=pd.Series([r.funding_cost for r in day_records], index=idx),
        ledger=pd.DataFrame(ledger_rows).set_index("date"),
        decisions=pd.DataFrame(),
        frictionless=frictionless,
        config=cfg,
    )


def step_day(ledger: PositionLedger, targets: Mapping[str, float],
             day: Mapping[str, Mapping[str, float]], fund_return: float,
             cfg: BacktestConfig, frictionless: Optional[bool] = None):
    """Advance one instrument ledger by one day (single-day contract).

    ``day`` maps each instrument to close/bid/ask/cap_shares/neutral_return.
    Returns the updated ledger and the day's hedged return decomposition.
    """
    if frictionless is None:
        frictionless = cfg.cost_mode == "frictionless"
    weights = dict(ledger.weights)
    gross = fund_return
    spread_cost = 0.0
    funding_cost = 0.0
    f_daily = 0.0 if frictionless else cfg.daily_funding()
    for h, target in targets.items():
        bars = day[h]
        w_pre = weights.get(h, 0.0)
        max_dw = bars["cap_shares"] * bars["close"] / cfg.fund_size
        delta = target - w_pre
        dw = delta if abs(delta) <= max_dw * (1.0 + FILL_SNAP) else float(np.sign(delta) * max_dw)
        w_post = w_pre + dw
        gross += w_pre * bars["neutral_return"]
        if not frictionless:
            half_spread = (bars["ask"] - bars["bid"]) / (bars["ask"] + bars["bid"])
            if cfg.cost_mode == "full":
                spread_cost += abs(dw) * half_spread
            else:
                spread_cost += (abs(w_post) * half_spread) if dw != 0 else 0.0
            funding_cost += abs(w_pre) * f_daily
        weights[h] = w_post
    hedged = gross - spread_cost - funding_cost
    record = DayRecord(
        date=day.get("date"), hedged_return=hedged, frictionless_return=gross,
        spread_cost=spread_cost, funding_cost=funding_cost,
        traded_shares={}, weights=dict(weights),
    )
    return PositionLedger(weights=weights), record


def run_backtest(data: MarketDataset, cfg: BacktestConfig,
                 signals: Optional[Mapping[str, SignalSeries]] = None,
                 prepared: Optional[PreparedInputs] = None,
                 model_path: Optional[pd.DataFrame] = None) -> BacktestResult:
    """Full pipeline: prepare, fit, walk thresholds, execute.

    ``prepared`` and ``model_path`` may be passed in to share work across
    parameter sweeps; results are identical either way.
    """
    if prepared is None:
        prepared = prepare_inputs(data, cfg, signals)
    if model_path is None:
        model_path = compute_model_path(prepared, cfg)
    targets = compute_targets(model_path, cfg)
    result = execute(prepared, targets, cfg)
    result.decisions = model_path
    return result
