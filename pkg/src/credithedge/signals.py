"""Construction of the three daily hedge-timing signals.

Credit: probability/expected-exceedance of the credit ETF drawing down
beyond the treasury ETF's tail drawdown, from risk-neutral distributions.
Liquidity: market-value weighted duration-times-spread over the index
constituents' traded bonds. Momentum: z-scored trailing cumulative return
of the duration-neutral hedge index, offset by a business month.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np
import pandas as pd

from . import rnd
from .errors import InputError
from .marketdata import (
    CleanTradeSet,
    DAYS_PER_YEAR,
    bond_modified_duration,
    bond_ytm_from_price,
    match_treasury,
)

logger = logging.getLogger(__name__)

INCLUSION_WINDOW_DAYS = 3 * 365  # constituents count for 3 calendar years
MAX_FILL_DAYS = 5                # bounded staleness for gap filling
SIGMA_FLOOR = 1e-12              # degenerate-variance guard for z-scores


@dataclass(frozen=True)
class SignalSeries:
    """A named, dated signal with no internal gaps."""

    name: str
    series: pd.Series
    filled_dates: tuple = ()

    def __post_init__(self):
        idx = self.series.index
        if not idx.is_monotonic_increasing or idx.has_duplicates:
            raise InputError(f"signal {self.name}: dates must be strictly increasing")
        if self.series.isna().any():
            raise InputError(f"signal {self.name}: missing values inside the span")


@dataclass(frozen=True)
class OrthogonalityReport:
    correlation: pd.DataFrame
    adjusted_r2: Dict[str, float]
    intercepts: Dict[str, float]
    residuals: pd.DataFrame


def enrich_trades(clean: CleanTradeSet, treasuries: pd.DataFrame) -> pd.DataFrame:
    """Attach spread, duration and market value to each cleaned trade.

    Spread is traded YTM minus the matched treasury yield; duration is
    the bond's modified duration at the traded YTM; market value is the
    trade's dollar volume.
    """
    curves = {
        date: [
            row for row in group.itertuples(index=False)
        ]
        for date, group in treasuries.rename(
            columns={"yield": "yield_", "return": "return_"}
        ).groupby("date")
    }
    rows = []
    for trade in clean.trades:
        curve = curves.get(trade.date)
        if not curve:
            raise InputError(f"no treasury curve for trade date {trade.date.date()}")
        years = (trade.maturity - trade.date).days / DAYS_PER_YEAR
        ytm = bond_ytm_from_price(trade.price, trade.coupon, years, trade.trade_id)
        treasury = match_treasury(trade, curve)
        rows.append({
            "date": trade.date,
            "cusip": trade.cusip,
            "market_value": trade.volume,
            "duration": bond_modified_duration(trade.coupon, years, ytm),
            "spread": ytm - treasury.yield_,
        })
    return pd.DataFrame(rows)


def liquidity_factor(enriched: pd.DataFrame, roster: pd.DataFrame,
                     calendar: Optional[pd.DatetimeIndex] = None) -> SignalSeries:
    """Market-value weighted duration-times-spread per day.

    Only bonds within three calendar years of their first index inclusion
    qualify. Days without qualifying trades carry the previous value
    (flagged); more than MAX_FILL_DAYS consecutive gap days is an error.
    """
    if enriched.empty:
        raise InputError("no trades available for the liquidity factor")
    first_inclusion = roster.groupby("cusip")["inclusion_date"].min()

    df = enriched.merge(first_inclusion.rename("first_inclusion"),
                        left_on="cusip", right_index=True, how="inner")
    age = (df["date"] - df["first_inclusion"]).dt.days
    df = df[(age >= 0) & (age <= INCLUSION_WINDOW_DAYS)]
    if df.empty:
        raise InputError("no trades fall inside the constituents' inclusion window")

    def _weighted(day: pd.DataFrame) -> float:
        total = day["market_value"].sum()
        if total == 0:
            raise InputError(
                f"liquidity factor undefined on {day['date'].iloc[0].date()}: all-zero market value"
            )
        dts = day["market_value"] * day["duration"] * day["spread"]
        return float(dts.sum() / total)

    daily = df.groupby("date", group_keys=False)[["date", "market_value", "duration", "spread"]].apply(_weighted)
    if calendar is None:
        calendar = pd.bdate_range(daily.index.min(), daily.index.max())
    calendar = calendar[(calendar >= daily.index.min())]
    values = daily.reindex(calendar)

    filled = values.index[values.isna()]
    gap_run = 0
    for date in calendar:
        if pd.isna(values.loc[date]):
            gap_run += 1
            if gap_run > MAX_FILL_DAYS:
                raise InputError(
                    f"liquidity factor stale beyond {MAX_FILL_DAYS} business days at {date.date()}"
                )
        else:
            gap_run = 0
    values = values.ffill()
    if filled.size:
        logger.info("liquidity factor forward-filled %d days", filled.size)
    return SignalSeries(name="Liquidity", series=values, filled_dates=tuple(filled))


def momentum_signal(neutral_index: pd.Series, n: int, offset: int = 22) -> SignalSeries:
    """Z-scored trailing n-day cumulative return, offset by a business month.

    The cumulative return at t is index[t-offset]/index[t-n-offset] - 1;
    its z-score uses the trailing n cumulative-return observations
    (excluding today's), with sample standard deviation. A window with
    vanishing dispersion maps to z = 0.
    """
    need = 2 * n + offset
    if len(neutral_index) < need + 1:
        raise InputError(
            f"momentum needs {need + 1} index observations, got {len(neutral_index)}; "
            f"the first valid signal date would be observation {need} of the index"
        )
    cumret = neutral_index.shift(offset) / neutral_index.shift(n + offset) - 1.0
    mu = cumret.shift(1).rolling(n).mean()
    sd = cumret.shift(1).rolling(n).std(ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (cumret - mu) / sd
    degenerate = sd.notna() & (sd < SIGMA_FLOOR) & cumret.notna()
    z[degenerate] = 0.0
    z = z[mu.notna() & cumret.notna()]
    return SignalSeries(name="Momentum", series=z)


def credit_factor(
    smiles_credit: Mapping[pd.Timestamp, "object"],
    smiles_rate: Mapping[pd.Timestamp, "object"],
    spot_credit: pd.Series,
    spot_rate: pd.Series,
    dividend_credit: pd.Series,
    dividend_rate: pd.Series,
    risk_free_rate: float = 0.0,
    tail_prob: float = 0.01,
    field: str = "excess_expected_drawdown",
    grid_spec=rnd.DEFAULT_GRID,
) -> SignalSeries:
    """Daily credit-risk series from paired credit/treasury ETF smiles."""
    if field not in ("excess_expected_drawdown", "prob_exceeds"):
        raise InputError(f"unknown credit field {field!r}")
    dates = sorted(set(smiles_credit) & set(smiles_rate))
    if not dates:
        raise InputError("no dates with smiles for both instruments")
    values = {}
    for date in dates:
        if date not in spot_credit.index or date not in spot_rate.index:
            continue
        curve_c = rnd.fit_vol_curve(smiles_credit[date])
        curve_r = rnd.fit_vol_curve(smiles_rate[date])
        dist_c = rnd.extract_distribution(
            curve_c, float(spot_credit.loc[date]), risk_free_rate,
            float(dividend_credit.loc[date]), grid_spec)
        dist_r = rnd.extract_distribution(
            curve_r, float(spot_rate.loc[date]), risk_free_rate,
            float(dividend_rate.loc[date]), grid_spec)
        point = rnd.credit_signals(dist_c, dist_r, tail_prob)
        values[date] = getattr(point, field)
    if not values:
        raise InputError("no dates with both smiles and spots")
    series = pd.Series(values).sort_index()
    return SignalSeries(name="Credit", series=series)


def orthogonality_report(signals: Mapping[str, pd.Series],
                         fund_neutral_returns: pd.Series) -> OrthogonalityReport:
    """Pairwise correlations and each-on-the-others regressions.

    Each signal is regressed (with intercept) on the other two; the
    report carries the adjusted R-squared, intercept and residuals per
    equation, plus the 4x4 Pearson matrix including the fund's
    duration-neutral returns.
    """
    frame = pd.DataFrame(dict(signals))
    frame["fund"] = fund_neutral_returns
    frame = frame.dropna()
    if len(frame) <= 30:
        raise InputError(f"orthogonality report needs more than 30 aligned observations, got {len(frame)}")
    for col in frame.columns:
        if frame[col].std(ddof=0) == 0:
            raise InputError(f"correlation undefined: series {col!r} is constant")

    correlation = frame[["fund", *signals.keys()]].corr()

    adjusted_r2, intercepts, residuals = {}, {}, {}
    names = list(signals.keys())
    for name in names:
        others = [c for c in names if c != name]
        y = frame[name].to_numpy()
        X = np.column_stack([np.ones(len(frame))] + [frame[c].to_numpy() for c in others])
        coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
        fitted = X @ coef
        resid = y - fitted
        ss_res = float(resid @ resid)
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot
        n, k = len(y), len(others)
        adjusted_r2[name] = 1.0 - (1.0 - r2) * (n - 1) / (n - k - 1)
        intercepts[name] = float(coef[0])
        residuals[name] = resid
    return OrthogonalityReport(
        correlation=correlation,
        adjusted_r2=adjusted_r2,
        intercepts=intercepts,
        residuals=pd.DataFrame(residuals, index=frame.index),
    )
