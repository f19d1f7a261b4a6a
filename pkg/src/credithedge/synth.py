"""Synthetic market generator with planted drawdown regimes.

Produces a full MarketDataset (prices, smiles, treasuries, fund returns,
bond trades, roster) from a latent model:

  * a mean-reverting yield level drives duration returns;
  * a persistent stress state drives next-day credit losses, smile
    steepening, bond-spread widening, ETF bid/ask widening and volumes.

The hedge ETFs load fully on the stress-predictable credit losses while
the fund shares mostly the contemporaneous noise (downside convexity),
so a short hedge against a long fund is the combination that market
signals predict best. Planted windows ramp the stress state up ahead of
a calibrated drawdown, so signals lead the loss.

Deterministic for a fixed (config, seed) pair, and windows with zero
depth are inert: they change nothing relative to a window-free config.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from .errors import InputError
from .marketdata import BondTrade, MarketDataset, TradeStatus, VolSmile
from .marketdata import bond_price_from_ytm

SMILE_GRID = np.array([50, 60, 70, 80, 85, 90, 95, 97.5, 100,
                       102.5, 105, 110, 115, 120, 130, 140, 150], dtype=float)


@dataclass(frozen=True)
class DrawdownWindow:
    """A planted credit drawdown over [start, start+length) business days."""

    start: int
    length: int
    depth: float                  # cumulative hedge loss, e.g. -0.15
    spread_widening: float = 3.0  # bond-spread multiplier at full stress
    lead_days: int = 10           # stress ramps up over this many days before start


@dataclass(frozen=True)
class SynthConfig:
    horizon_days: int = 1500
    start: str = "2016-01-04"
    fund: str = "FUND"
    hedge_instruments: Tuple[str, ...] = ("IG_ETF",)
    rate_instrument: str = "GOV_ETF"
    drawdowns: Tuple[DrawdownWindow, ...] = ()

    # latent yield level (duration factor)
    yield_reversion: float = 0.05
    yield_vol: float = 1.5e-4

    # latent stress state: AR(1) wiggles plus planted ramps
    state_persistence: float = 0.60
    state_noise: float = 0.10

    # credit factor: next-day response to stress plus contemporaneous noise
    credit_drift: float = 4e-4
    credit_sensitivity: float = 3e-3   # loss per unit of yesterday's stress
    credit_noise: float = 1.2e-3

    # fund loadings: low crash participation, high noise comovement
    fund_crash_beta: float = 0.3
    fund_noise_beta: float = 0.8
    fund_alpha: float = 1.2e-4
    fund_idio_vol: float = 4e-4
    hedge_idio_vol: float = 2e-4

    # durations
    fund_duration: float = 5.0
    hedge_durations: Tuple[float, ...] = (8.5,)
    rate_duration: float = 7.5
    treasury_durations: Tuple[float, ...] = (2.0, 4.0, 6.0, 9.0, 12.0, 18.0)

    # prices, costs, volumes
    base_price: float = 100.0
    dividend_yield: float = 0.03
    half_spread: float = 3e-4
    stress_spread_mult: float = 3.0
    base_volume: float = 2e6
    stress_volume_mult: float = 2.0
    volume_noise: float = 0.10

    # smiles
    smile_tenor: float = 0.25
    atm_vol_credit: float = 0.08
    atm_vol_rate: float = 0.055
    atm_sensitivity: float = 0.35
    skew_sensitivity: float = 1.5
    smile_noise: float = 0.01

    # constituent bonds
    n_bonds: int = 25
    cohort_spacing: int = 120
    trade_prob: float = 0.65
    base_spread: float = 0.012
    spread_sensitivity: float = 0.35
    spread_noise: float = 0.08
    trade_volume_mean: float = 1.5e6


def _active_windows(cfg: SynthConfig):
    windows = [w for w in cfg.drawdowns if w.depth != 0.0]
    for w in cfg.drawdowns:
        if w.start < 0 or w.start + w.length > cfg.horizon_days:
            raise InputError(
                f"drawdown window [{w.start}, {w.start + w.length}) outside horizon "
                f"{cfg.horizon_days}"
            )
    return windows


def _ramp_path(cfg: SynthConfig) -> np.ndarray:
    """Planted stress in [0,1]: linear ramp before each window, decay after."""
    ramp = np.zeros(cfg.horizon_days)
    for w in _active_windows(cfg):
        lead = max(w.lead_days, 1)
        for k in range(lead):
            day = w.start - lead + k
            if 0 <= day < cfg.horizon_days:
                ramp[day] = max(ramp[day], (k + 1) / lead)
        ramp[w.start: w.start + w.length] = 1.0
        for k in range(lead):
            day = w.start + w.length + k
            if day < cfg.horizon_days:
                ramp[day] = max(ramp[day], 1.0 - (k + 1) / lead)
    return ramp


def generate_synthetic_market(cfg: SynthConfig, seed: int) -> MarketDataset:
    """Build a deterministic MarketDataset from the config and seed."""
    if len(cfg.hedge_durations) != len(cfg.hedge_instruments):
        raise InputError("hedge_durations must match hedge_instruments")
    rng = np.random.default_rng(seed)
    n = cfg.horizon_days
    dates = pd.bdate_range(cfg.start, periods=n)

    # all randomness drawn up front in fixed order, independent of windows
    yield_shocks = cfg.yield_vol * rng.standard_normal(n)
    g_noise = rng.standard_normal(n)
    state_innov = rng.standard_normal(n)
    hedge_idio = {h: cfg.hedge_idio_vol * rng.standard_normal(n) for h in cfg.hedge_instruments}
    rate_idio = rng.standard_normal(n)
    fund_idio = cfg.fund_idio_vol * rng.standard_normal(n)
    atm_jitter = 1.0 + cfg.smile_noise * rng.standard_normal(n)
    rate_jitter = 1.0 + cfg.smile_noise * rng.standard_normal(n)

    ramp = _ramp_path(cfg)
    state_ar = np.empty(n)
    state_ar[0] = 0.0
    for t in range(1, n):
        state_ar[t] = (cfg.state_persistence * state_ar[t - 1]
                       + cfg.state_noise * state_innov[t])
    stress = state_ar + ramp

    # mean-reverting latent yield
    y0 = 0.025
    level = np.empty(n)
    level[0] = y0
    for t in range(1, n):
        level[t] = level[t - 1] + cfg.yield_reversion * (y0 - level[t - 1]) + yield_shocks[t]
    dy = np.diff(level, prepend=level[0])
    dy[0] = 0.0

    # credit factor: a stress-predictable part plus shared contemporaneous noise
    lagged = np.concatenate([[0.0], stress[:-1]])
    credit_pred = cfg.credit_drift - cfg.credit_sensitivity * lagged
    shared_noise = cfg.credit_noise * g_noise
    div_daily = cfg.dividend_yield / 252.0
    for w in _active_windows(cfg):
        lead = max(w.lead_days, 1)
        ramp_days = list(range(max(w.start - lead, 0), w.start))
        decay_days = list(range(w.start + w.length, min(w.start + w.length + lead, n)))
        # deterministic loss the ramp and decay already deliver (price terms)
        edge_prod = 1.0
        for t in ramp_days + decay_days:
            edge_prod *= 1.0 + cfg.credit_drift - cfg.credit_sensitivity * ramp[t - 1 if t else 0] - div_daily
        target = (1.0 + w.depth) / edge_prod
        daily = target ** (1.0 / w.length) - 1.0 + div_daily
        credit_pred[w.start: w.start + w.length] = daily
    credit = credit_pred + shared_noise

    # treasuries: purely duration-driven returns
    treasury_rows = []
    for d in cfg.treasury_durations:
        name = f"UST_{int(d):02d}"
        yields = 0.015 + 0.001 * d + (level - y0)
        returns = -d * dy
        maturity = dates[0] + pd.Timedelta(days=int(d * 1.3 * 365))
        block = pd.DataFrame({
            "date": dates, "instrument": name, "coupon": 0.015 + 0.001 * d,
            "duration": d, "maturity": maturity, "yield_": yields, "return_": returns,
        })
        treasury_rows.append(block)
    treasuries = pd.concat(treasury_rows, ignore_index=True)

    # ETFs: hedges load on duration plus the full credit factor; the rate
    # ETF is duration only.
    prices = {}
    for (name, duration) in list(zip(cfg.hedge_instruments, cfg.hedge_durations)):
        total = -duration * dy + credit + hedge_idio[name]
        price_ret = total - div_daily
        close = cfg.base_price * np.cumprod(1.0 + price_ret)
        prices[name] = _price_frame(cfg, close, duration, ramp, rng, n)
    rate_total = -cfg.rate_duration * dy + 0.15 * cfg.credit_noise * rate_idio
    rate_close = cfg.base_price * np.cumprod(1.0 + rate_total - div_daily)
    prices[cfg.rate_instrument] = _price_frame(cfg, rate_close, cfg.rate_duration, ramp, rng, n)
    for frame in prices.values():
        frame.index = dates

    fund_total = (
        -cfg.fund_duration * dy
        + cfg.fund_crash_beta * (credit_pred - cfg.credit_drift)
        + cfg.fund_noise_beta * shared_noise
        + cfg.fund_alpha + fund_idio
    )
    fund_returns = {cfg.fund: pd.DataFrame({
        "return": fund_total, "duration": cfg.fund_duration}, index=dates)}

    # smiles: the credit ETF's surface tracks the stress state
    smiles = {cfg.hedge_instruments[0]: {}, cfg.rate_instrument: {}}
    base_skew = 0.35
    for t in range(n):
        atm_c = cfg.atm_vol_credit * (1.0 + cfg.atm_sensitivity * stress[t]) * atm_jitter[t]
        skew_c = base_skew * (1.0 + cfg.skew_sensitivity * max(stress[t], 0.0))
        atm_c = max(atm_c, 0.01)
        smiles[cfg.hedge_instruments[0]][dates[t]] = VolSmile(
            date=dates[t], tenor=cfg.smile_tenor,
            moneyness_grid=SMILE_GRID.copy(), vols=_smile_vols(atm_c, skew_c, SMILE_GRID))
        vols_r = _smile_vols(cfg.atm_vol_rate * rate_jitter[t], 0.15, SMILE_GRID)
        smiles[cfg.rate_instrument][dates[t]] = VolSmile(
            date=dates[t], tenor=cfg.smile_tenor,
            moneyness_grid=SMILE_GRID.copy(), vols=vols_r)

    trades, roster = _bond_trades(cfg, dates, stress, ramp, treasuries, rng)

    return MarketDataset(
        prices=prices, treasuries=treasuries, fund_returns=fund_returns,
        smiles=smiles, trades=trades, roster=roster,
        dates=dates, costs_available=True, gap_report={},
    )


def _price_frame(cfg: SynthConfig, close: np.ndarray, duration: float,
                 ramp: np.ndarray, rng: np.random.Generator, n: int) -> pd.DataFrame:
    half = cfg.half_spread * (1.0 + (cfg.stress_spread_mult - 1.0) * ramp)
    volume = cfg.base_volume * (1.0 + (cfg.stress_volume_mult - 1.0) * ramp)
    volume = volume * (1.0 + cfg.volume_noise * rng.standard_normal(n))
    volume = np.round(np.maximum(volume, 1e4))
    return pd.DataFrame({
        "close": close,
        "bid": close * (1.0 - half),
        "ask": close * (1.0 + half),
        "volume": volume,
        "duration": duration,
        "dividend_yield": cfg.dividend_yield,
    })


def _smile_vols(atm: float, skew: float, grid: np.ndarray) -> np.ndarray:
    """Piecewise-linear smile with exactly flat wings below 65 and above 130."""
    m = np.clip(grid, 65.0, 130.0)
    put_side = skew * np.maximum(95.0 - m, 0.0) / 30.0
    call_side = -0.12 * np.minimum(np.maximum(m - 100.0, 0.0), 30.0) / 30.0
    return atm * (1.0 + put_side + call_side)


def _bond_trades(cfg, dates, stress, ramp, treasuries, rng):
    n = len(dates)
    n_cohorts = max(1, (n - 1) // cfg.cohort_spacing + 1)
    bond_specs = []
    roster_rows = []
    for b in range(cfg.n_bonds):
        cohort = b % n_cohorts
        inclusion_idx = min(cohort * cfg.cohort_spacing, n - 1)
        spec = {
            "cusip": f"BOND{b:03d}",
            "coupon": float(rng.uniform(0.03, 0.06)),
            "maturity": dates[inclusion_idx] + pd.Timedelta(days=int(rng.uniform(4, 10) * 365)),
            "base_spread": cfg.base_spread * float(rng.uniform(0.7, 1.3)),
            "inclusion_idx": inclusion_idx,
        }
        bond_specs.append(spec)
        roster_rows.append({
            "effective_date": dates[inclusion_idx], "cusip": spec["cusip"],
            "inclusion_date": dates[inclusion_idx],
        })

    widen_minus_one = np.zeros(n)
    for w in _active_windows(cfg):
        lead = max(w.lead_days, 1)
        lo = max(w.start - lead, 0)
        hi = min(w.start + w.length + lead, n)
        widen_minus_one[lo:hi] = np.maximum(widen_minus_one[lo:hi], w.spread_widening - 1.0)

    yields_by_date = {d: g for d, g in treasuries.groupby("date")}
    eligible_days = 3 * 365
    trades = []
    seq = 0
    for t in range(n):
        day_treasuries = yields_by_date[dates[t]]
        for spec in bond_specs:
            if t < spec["inclusion_idx"]:
                continue
            if (dates[t] - dates[spec["inclusion_idx"]]).days > eligible_days:
                continue
            if spec["maturity"] <= dates[t] + pd.Timedelta(days=180):
                continue
            if rng.uniform() > cfg.trade_prob:
                continue
            level = (1.0 + cfg.spread_sensitivity * stress[t]
                     + widen_minus_one[t] * ramp[t])
            spread = spec["base_spread"] * max(level, 0.1)
            spread *= 1.0 + cfg.spread_noise * rng.standard_normal()
            years = (spec["maturity"] - dates[t]).days / 365.0
            gap = (day_treasuries["maturity"] - spec["maturity"]).abs()
            tsy_yield = float(day_treasuries.loc[gap.idxmin(), "yield_"])
            price = bond_price_from_ytm(spec["coupon"], years, tsy_yield + spread)
            volume = float(rng.lognormal(np.log(cfg.trade_volume_mean), 0.5))
            trades.append(BondTrade(
                trade_id=f"T{seq:07d}", cusip=spec["cusip"], date=dates[t],
                price=price, coupon=spec["coupon"], maturity=spec["maturity"],
                volume=volume, status=TradeStatus.TRADE,
            ))
            seq += 1
    return tuple(trades), pd.DataFrame(roster_rows)


def write_dataset_csv(data: MarketDataset, out_dir) -> None:
    """Write a dataset to the six-file CSV contract."""
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    price_rows = []
    for name, frame in data.prices.items():
        block = frame.reset_index(names="date")
        block.insert(1, "instrument", name)
        price_rows.append(block)
    pd.concat(price_rows).to_csv(out / "prices.csv", index=False, date_format="%Y-%m-%d")

    smile_rows = []
    for name, by_date in data.smiles.items():
        for date, smile in sorted(by_date.items()):
            for m, v in zip(smile.moneyness_grid, smile.vols):
                smile_rows.append({
                    "date": date, "instrument": name, "tenor_years": smile.tenor,
                    "moneyness_pct": m, "implied_vol": v,
                })
    if smile_rows:
        pd.DataFrame(smile_rows).to_csv(out / "smiles.csv", index=False, date_format="%Y-%m-%d")

    if data.trades:
        pd.DataFrame([{
            "trade_id": t.trade_id, "cusip": t.cusip, "date": t.date, "price": t.price,
            "coupon": t.coupon, "maturity": t.maturity, "volume": t.volume,
            "status": t.status.value, "reversal_flag": t.reversal_flag,
        } for t in data.trades]).to_csv(out / "trades.csv", index=False, date_format="%Y-%m-%d")

    data.treasuries.rename(columns={"yield_": "yield", "return_": "return"}).to_csv(
        out / "treasuries.csv", index=False, date_format="%Y-%m-%d")

    fund_rows = []
    for name, frame in data.fund_returns.items():
        block = frame.reset_index(names="date")
        block.insert(1, "fund", name)
        fund_rows.append(block)
    pd.concat(fund_rows).to_csv(out / "fund_returns.csv", index=False, date_format="%Y-%m-%d")

    if data.roster is not None:
        data.roster.to_csv(out / "roster.csv", index=False, date_format="%Y-%m-%d")
