import dataclasses
import math

import numpy as np
import pandas as pd
import pytest

from credithedge import backtest as bt
from credithedge.errors import InputError
from credithedge.backtest import (
    BacktestConfig,
    PositionLedger,
    PreparedInputs,
    step_day,
    volume_cap,
)

from conftest import SMALL_BT


def flat_prepared(n_days=1400, price=100.0, volume=1e6, hedges=("H",)):
    """Constant-market PreparedInputs for driving the execution layer."""
    dates = pd.bdate_range("2015-01-01", periods=n_days)
    zeros = pd.Series(0.0, index=dates)
    frame = lambda v: pd.DataFrame({h: v for h in hedges}, index=dates)
    return PreparedInputs(
        dates=dates,
        signal_matrix=pd.DataFrame(index=dates),
        fund_neutral=zeros,
        hedge_neutral=frame(zeros),
        closes=frame(pd.Series(price, index=dates)),
        bids=frame(pd.Series(price * 0.9999, index=dates)),
        asks=frame(pd.Series(price * 1.0001, index=dates)),
        volumes=frame(pd.Series(volume, index=dates)),
        sigma_fund=pd.Series(0.05, index=dates),
        sigma_hedge=frame(pd.Series(0.05, index=dates)),
        costs_available=True,
    )


def constant_targets(prepared, start, weight, hedges=("H",)):
    idx = prepared.dates[start:]
    frame = pd.DataFrame({"state_on": weight != 0.0, "w_total": weight}, index=idx)
    for h in hedges:
        frame[f"target_{h}"] = weight
    return frame


def exec_config(**overrides):
    defaults = dict(
        fund="FUND", hedge_instruments=("H",), model="cca", lookback=40,
        gamma_upper=2.0, gamma_lower=-1.5, fund_size=1e10,
        cost_mode="frictionless", volume_sma_days=252,
    )
    defaults.update(overrides)
    return BacktestConfig(**defaults)


# ---------------------------------------------------------------------------
# volume cap
# ---------------------------------------------------------------------------

def test_cap_is_ten_percent_of_sma():
    history = pd.Series(1e6, index=pd.bdate_range("2015-01-01", periods=260))
    history.iloc[-1] = 5e6  # today's volume is plentiful
    cfg = exec_config()
    # SMA shifts slightly because today's 5e6 enters the average
    sma = history.iloc[-252:].mean()
    assert volume_cap(history, history.index[-1], cfg) == pytest.approx(0.1 * sma)


def test_cap_binds_on_todays_volume():
    history = pd.Series(1e6, index=pd.bdate_range("2015-01-01", periods=260))
    history.iloc[-1] = 50_000.0
    cfg = exec_config()
    assert volume_cap(history, history.index[-1], cfg) == 50_000.0


def test_zero_volume_day_blocks_trading():
    history = pd.Series(1e6, index=pd.bdate_range("2015-01-01", periods=260))
    history.iloc[-1] = 0.0
    assert volume_cap(history, history.index[-1], exec_config()) == 0.0


def test_insufficient_history_rejected():
    history = pd.Series(1e6, index=pd.bdate_range("2015-01-01", periods=100))
    with pytest.raises(InputError, match="history"):
        volume_cap(history, history.index[-1], exec_config())


# ---------------------------------------------------------------------------
# step_day accounting
# ---------------------------------------------------------------------------

def day_inputs(close=100.0, cap=1e5, neutral=0.0, half_spread=1e-4):
    return {
        "date": pd.Timestamp("2020-01-06"),
        "H": {"close": close, "bid": close * (1 - half_spread),
              "ask": close * (1 + half_spread), "cap_shares": cap,
              "neutral_return": neutral},
    }


def test_zero_position_returns_fund():
    cfg = exec_config(cost_mode="full")
    ledger = PositionLedger(weights={"H": 0.0})
    _, record = step_day(ledger, {"H": 0.0}, day_inputs(neutral=-0.02), 0.0042, cfg)
    assert record.hedged_return == 0.0042


def test_full_short_frictionless_is_fund_minus_hedge():
    cfg = exec_config(cost_mode="frictionless")
    ledger = PositionLedger(weights={"H": -1.0})
    _, record = step_day(ledger, {"H": -1.0}, day_inputs(neutral=-0.02), 0.001, cfg,
                         frictionless=True)
    assert record.hedged_return == pytest.approx(0.001 - 1.0 * (-0.02))


def test_funding_drag_unit_conversion():
    # oracle: 50bp / 1e4 / 252 per active day
    cfg = exec_config(cost_mode="full", funding_bps=50.0)
    expected = 50.0 / 1e4 / 252.0
    assert expected == pytest.approx(1.9841e-5, abs=1e-9)
    ledger = PositionLedger(weights={"H": -1.0})
    _, record = step_day(ledger, {"H": -1.0}, day_inputs(), 0.0, cfg)
    assert record.funding_cost == pytest.approx(expected, abs=1e-18)
    assert record.hedged_return == pytest.approx(-expected, abs=1e-18)


def test_paper_literal_funding_divisor():
    cfg = exec_config(cost_mode="full", funding_bps=50.0,
                      funding_divisor_mode="paper_literal")
    ledger = PositionLedger(weights={"H": -1.0})
    _, record = step_day(ledger, {"H": -1.0}, day_inputs(), 0.0, cfg)
    assert record.funding_cost == pytest.approx(50.0 / 1000.0)


def test_spread_cost_on_traded_increment():
    cfg = exec_config(cost_mode="full", fund_size=1e6)
    ledger = PositionLedger(weights={"H": 0.0})
    day = day_inputs(cap=1e9, half_spread=2e-4)
    _, record = step_day(ledger, {"H": -0.5}, day, 0.0, cfg)
    half = (day["H"]["ask"] - day["H"]["bid"]) / (day["H"]["ask"] + day["H"]["bid"])
    assert record.spread_cost == pytest.approx(0.5 * half)


def test_paper_literal_spread_on_full_weight():
    # verbatim cost base: the half-spread is charged on the full post-trade
    # weight on trade days, not on the traded increment
    day = day_inputs(cap=1e9, half_spread=2e-4)
    half = (day["H"]["ask"] - day["H"]["bid"]) / (day["H"]["ask"] + day["H"]["bid"])
    ledger = PositionLedger(weights={"H": -0.4})

    full = exec_config(cost_mode="full", fund_size=1e6)
    _, rec_full = step_day(ledger, {"H": -0.5}, day, 0.0, full)
    assert rec_full.spread_cost == pytest.approx(abs(-0.5 - -0.4) * half)

    literal = exec_config(cost_mode="paper_literal", fund_size=1e6)
    _, rec_lit = step_day(ledger, {"H": -0.5}, day, 0.0, literal)
    assert rec_lit.spread_cost == pytest.approx(0.5 * half)

    # no trade, no spread charge in either mode
    _, rec_hold = step_day(ledger, {"H": -0.4}, day, 0.0, literal)
    assert rec_hold.spread_cost == 0.0


# ---------------------------------------------------------------------------
# execution-level behavior
# ---------------------------------------------------------------------------

def test_gradual_fill_ten_billion_needs_1000_days():
    # $10bln fund, $100 share, SMA 1e6 shares: 0.1% of fund per day
    prepared = flat_prepared()
    cfg = exec_config(fund_size=1e10)
    targets = constant_targets(prepared, start=260, weight=-1.0)
    result = bt.execute(prepared, targets, cfg)
    weights = result.ledger["weight_H"]
    full = weights[weights <= -1.0 + 1e-9]
    days_to_full = weights.index.get_loc(full.index[0]) + 1
    assert days_to_full == 1000
    assert result.ledger["shares_H"].iloc[:999].unique() == pytest.approx([1e5])


def test_weight_bound_and_cap_respected(small_result):
    ledger = small_result.ledger
    assert ledger["weight_IG_ETF"].abs().max() <= 1.0 + 1e-12
    assert (ledger["shares_IG_ETF"] >= 0).all()


def test_never_on_equals_baseline(small_dataset, small_signals):
    from credithedge import metrics as mx
    cfg = dataclasses.replace(SMALL_BT, gamma_upper=math.inf, gamma_lower=0.0)
    result = bt.run_backtest(small_dataset, cfg, signals=small_signals)
    assert result.hedged.equals(result.unhedged)
    assert (result.ledger["weight_IG_ETF"] == 0).all()
    delta = mx.delta_metrics(mx.result_metrics(result), mx.baseline_metrics(result))
    assert delta.d_sortino == 0.0


def test_planted_drawdown_is_hedged(small_result):
    from credithedge import metrics as mx
    hedged = mx.result_metrics(small_result)
    base = mx.baseline_metrics(small_result)
    assert hedged.max_drawdown > base.max_drawdown  # strictly shallower
    assert mx.delta_metrics(hedged, base).d_sortino > 0


def test_rerun_is_bit_identical(small_dataset, small_signals, small_result):
    again = bt.run_backtest(small_dataset, SMALL_BT, signals=small_signals)
    assert again.hedged.equals(small_result.hedged)
    pd.testing.assert_frame_equal(again.ledger, small_result.ledger)


def test_cost_reconciliation_per_day(small_result):
    gap = (small_result.hedged + small_result.spread_cost
           + small_result.funding_cost - small_result.frictionless_returns)
    assert gap.abs().max() < 1e-12


def test_full_costs_never_beat_frictionless(small_dataset, small_signals):
    prepared = bt.prepare_inputs(small_dataset, SMALL_BT, small_signals)
    model_path = bt.compute_model_path(prepared, SMALL_BT)
    results = {}
    for mode in ("frictionless", "full"):
        cfg = dataclasses.replace(SMALL_BT, cost_mode=mode)
        results[mode] = bt.run_backtest(small_dataset, cfg, signals=small_signals,
                                        prepared=prepared, model_path=model_path)
    assert results["full"].ledger["state"].any()
    cum_full = (1.0 + results["full"].hedged).prod()
    cum_free = (1.0 + results["frictionless"].hedged).prod()
    assert cum_full <= cum_free


def test_funding_monotonicity(small_dataset, small_signals):
    prepared = bt.prepare_inputs(small_dataset, SMALL_BT, small_signals)
    model_path = bt.compute_model_path(prepared, SMALL_BT)
    cumulative = []
    for f_bps in (20.0, 50.0, 100.0, 200.0):
        cfg = dataclasses.replace(SMALL_BT, funding_bps=f_bps)
        result = bt.run_backtest(small_dataset, cfg, signals=small_signals,
                                 prepared=prepared, model_path=model_path)
        cumulative.append((1.0 + result.hedged).prod() - 1.0)
        assert result.ledger["state"].any()
    assert all(a >= b for a, b in zip(cumulative, cumulative[1:]))


def test_daily_traded_shares_never_exceed_cap(small_result, small_dataset, small_signals):
    prepared = bt.prepare_inputs(small_dataset, SMALL_BT, small_signals)
    ledger = small_result.ledger
    for date, row in ledger.iterrows():
        i = prepared.dates.get_loc(date)
        cap = volume_cap(prepared.volumes["IG_ETF"].iloc[:i + 1], date, SMALL_BT)
        assert row["shares_IG_ETF"] <= cap * (1 + 1e-9)


def test_missing_price_on_active_day_rejected(small_dataset, small_signals):
    prepared = bt.prepare_inputs(small_dataset, SMALL_BT, small_signals)
    model_path = bt.compute_model_path(prepared, SMALL_BT)
    targets = bt.compute_targets(model_path, SMALL_BT)
    closes = prepared.closes.copy()
    closes.iloc[len(closes) // 2 + 100, 0] = np.nan
    broken = dataclasses.replace(prepared, closes=closes)
    with pytest.raises(InputError, match="missing price"):
        bt.execute(broken, targets, SMALL_BT)


def test_frictionless_downgrade_without_bid_ask(small_dataset, small_signals):
    prices = {k: v.assign(bid=np.nan, ask=np.nan) for k, v in small_dataset.prices.items()}
    data = dataclasses.replace(small_dataset, prices=prices, costs_available=False)
    result = bt.run_backtest(data, SMALL_BT, signals=small_signals)
    assert result.frictionless
    assert (result.spread_cost == 0).all()
    assert (result.funding_cost == 0).all()


def test_ols_model_runs_and_shorts_only(small_dataset, small_signals):
    cfg = dataclasses.replace(SMALL_BT, model="ols", lookback=60)
    result = bt.run_backtest(small_dataset, cfg, signals=small_signals)
    assert (result.ledger["weight_IG_ETF"] <= 1e-12).all()
    assert result.decisions["f_p"].notna().any()


def test_multi_hedge_distributes_loadings(small_signals):
    from credithedge.synth import SynthConfig, DrawdownWindow, generate_synthetic_market
    cfg_s = SynthConfig(
        horizon_days=700, n_bonds=12,
        hedge_instruments=("IG_ETF", "HY_ETF"), hedge_durations=(8.5, 4.0),
        drawdowns=(DrawdownWindow(start=620, length=25, depth=-0.15, lead_days=10),),
    )
    data = generate_synthetic_market(cfg_s, seed=7)
    cfg = dataclasses.replace(SMALL_BT, hedge_instruments=("IG_ETF", "HY_ETF"))
    result = bt.run_backtest(data, cfg)
    led = result.ledger
    total = led["weight_IG_ETF"] + led["weight_HY_ETF"]
    assert total.abs().max() <= 1.0 + 1e-9
    active = led[led["state"]]
    assert len(active) > 0
