import dataclasses
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from credithedge import backtest as bt
from credithedge import metrics as mx
from credithedge.errors import InputError

from conftest import SMALL_BT


def series(values):
    return pd.Series(values, index=pd.bdate_range("2020-01-01", periods=len(values)))


# ---------------------------------------------------------------------------
# metrics block
# ---------------------------------------------------------------------------

def test_alternating_returns_near_zero_sortino():
    block = mx.metrics_block(series([0.01, -0.01] * 50))
    assert abs(block.sortino) < 5e-3


def test_all_positive_returns_flagged_unbounded():
    block = mx.metrics_block(series([0.001] * 40))
    assert block.sortino == math.inf
    assert block.sortino_unbounded
    assert block.downside_std == 0.0


def test_six_value_hand_oracle():
    values = [0.01, -0.02, 0.03, -0.01, 0.0, 0.02]
    # hand computation: mean and the zero-target second moment of the two
    # negative observations
    mu_annual = (sum(values) / 6) * 252
    downside_daily = math.sqrt((0.02 ** 2 + 0.01 ** 2) / 2)
    expected = mu_annual / (downside_daily * math.sqrt(252))
    block = mx.metrics_block(series(values))
    assert block.sortino == pytest.approx(expected, rel=1e-12)
    assert block.downside_std == pytest.approx(downside_daily * math.sqrt(252), rel=1e-12)


@given(scale=st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_sortino_scale_invariant(scale):
    values = series([0.01, -0.02, 0.005, -0.007, 0.012, -0.001] * 10)
    base = mx.metrics_block(values)
    scaled = mx.metrics_block(values * scale)
    assert scaled.sortino == pytest.approx(base.sortino, rel=1e-9)


def test_downside_never_exceeds_std():
    rng = np.random.default_rng(0)
    for _ in range(20):
        values = series(rng.standard_normal(100) * 0.01 - 0.001)
        block = mx.metrics_block(values)
        assert block.downside_std <= block.annual_std * 1.5  # loose structural sanity
        assert -1.0 <= block.max_drawdown <= 0.0


def test_empty_series_rejected():
    with pytest.raises(InputError):
        mx.metrics_block(series([0.01]))


# ---------------------------------------------------------------------------
# max drawdown
# ---------------------------------------------------------------------------

def test_all_positive_no_drawdown():
    assert mx.max_drawdown(series([0.01, 0.02, 0.005])) == 0.0


def test_single_drop():
    assert mx.max_drawdown(series([-0.20])) == pytest.approx(-0.20)


def test_hand_compounded_path():
    # index path 1.10, 0.99, 0.891, 0.93555; trough 0.891/1.10 - 1 = -0.19
    dd = mx.max_drawdown(series([0.10, -0.10, -0.10, 0.05]))
    assert dd == pytest.approx(0.891 / 1.10 - 1.0, rel=1e-12)


def test_prepending_gains_does_not_change_drawdown():
    base = mx.max_drawdown(series([0.10, -0.10, -0.10, 0.05]))
    padded = mx.max_drawdown(series([0.01, 0.02, 0.10, -0.10, -0.10, 0.05]))
    assert padded == pytest.approx(base, rel=1e-12)


# ---------------------------------------------------------------------------
# turnover
# ---------------------------------------------------------------------------

def ledger_from_weights(weights):
    idx = pd.bdate_range("2020-01-01", periods=len(weights))
    return pd.DataFrame({"weight_H": weights, "state": [w != 0 for w in weights]}, index=idx)


def test_turnover_zero_when_never_active():
    ledger = ledger_from_weights([0.0] * 252)
    assert mx.annual_turnover(ledger) == 0.0


def test_turnover_full_cycle_is_two():
    weights = [0.0] * 50 + [-1.0] * 150 + [0.0] * 52
    assert mx.annual_turnover(ledger_from_weights(weights)) == pytest.approx(2.0)


def test_turnover_two_half_cycles_is_two():
    weights = ([0.0] * 20 + [-0.5] * 80 + [0.0] * 20 + [-0.5] * 80 + [0.0] * 52)
    assert mx.annual_turnover(ledger_from_weights(weights)) == pytest.approx(2.0)


def test_delta_metrics_identity_is_zero():
    block = mx.metrics_block(series([0.001] * 40))  # infinite sortino
    delta = mx.delta_metrics(block, block)
    assert all(v == 0.0 for v in delta.deltas.values())


# ---------------------------------------------------------------------------
# grid search / lags
# ---------------------------------------------------------------------------

def test_singleton_grid_reports_single_cells(small_dataset, small_signals):
    report = mx.grid_search(
        small_dataset, SMALL_BT, lookbacks=(40,), gamma_uppers=(2.0,),
        gamma_lowers=(-1.5,), signals=small_signals)
    assert report.selected == {"lookback": 40.0, "gamma_upper": 2.0, "gamma_lower": -1.5}
    for stage in report.stages:
        assert len(stage.table) == 1
        assert stage.table["selected"].all()

    result = bt.run_backtest(small_dataset, dataclasses.replace(
        SMALL_BT, lookback=40, gamma_upper=2.0, gamma_lower=-1.5), signals=small_signals)
    expected = mx.delta_metrics(mx.result_metrics(result), mx.baseline_metrics(result))
    got = report.stages[0].table.iloc[0]
    assert got["d_sortino"] == pytest.approx(expected.d_sortino, rel=1e-12)


def test_tied_cells_break_toward_lower_turnover(small_dataset, small_signals):
    # unreachable entry thresholds make every cell identical (never on);
    # the tie breaks to the first (equal-turnover) candidate
    cfg = dataclasses.replace(SMALL_BT, gamma_upper=math.inf, gamma_lower=0.0)
    report = mx.grid_search(small_dataset, cfg, lookbacks=(60, 40),
                            gamma_uppers=(math.inf,), gamma_lowers=(0.0,),
                            signals=small_signals)
    stage1 = report.stages[0]
    assert (stage1.table["d_sortino"] == 0.0).all()
    assert (stage1.table["turnover"] == 0.0).all()
    assert report.selected["lookback"] == 60.0


def test_empty_grid_rejected(small_dataset, small_signals):
    with pytest.raises(InputError, match="non-empty"):
        mx.grid_search(small_dataset, SMALL_BT, lookbacks=(), signals=small_signals)


def test_failed_cells_are_reported(small_dataset, small_signals):
    # lookback longer than the dataset cannot be fit and must be excluded
    report = mx.grid_search(
        small_dataset, SMALL_BT, lookbacks=(40, 100_000), gamma_uppers=(2.0,),
        gamma_lowers=(-1.5,), signals=small_signals)
    stage1 = report.stages[0]
    assert 100_000 in stage1.failed
    assert report.selected["lookback"] == 40.0


def test_lag_zero_reproduces_base(small_dataset, small_signals, small_result):
    table = mx.lag_analysis(small_dataset, SMALL_BT, lags=[0], signals=small_signals)
    base_metrics = mx.result_metrics(small_result)
    assert table.loc[0, "sortino"] == base_metrics.sortino
    assert table.loc[0, "annual_return"] == base_metrics.annual_return
    assert table.loc[0, "max_drawdown"] == base_metrics.max_drawdown


def test_delay_reduces_planted_sortino_gain(small_dataset, small_signals):
    table = mx.lag_analysis(small_dataset, SMALL_BT, lags=[0, 5, 10], signals=small_signals)
    assert table.loc[10, "d_sortino"] <= table.loc[5, "d_sortino"] <= table.loc[0, "d_sortino"]


def test_negative_lag_truncates_with_warning(small_dataset, small_signals, caplog):
    import logging
    with caplog.at_level(logging.WARNING, logger="credithedge.backtest"):
        table = mx.lag_analysis(small_dataset, SMALL_BT, lags=[-5], signals=small_signals)
    assert "truncating" in caplog.text
    base = mx.lag_analysis(small_dataset, SMALL_BT, lags=[0], signals=small_signals)
    assert table.loc[-5].notna().all()
