import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from credithedge.durneutral import bracket_treasuries, duration_neutral_returns
from credithedge.errors import InputError


def test_symmetric_bracket():
    bracket = bracket_treasuries(5.0, [("a", 4.0), ("b", 6.0)])
    assert bracket.w_lower == pytest.approx(0.5)
    assert bracket.w_upper == pytest.approx(0.5)


def test_asymmetric_bracket_hand_solved():
    # w_upper = (4.5 - 4) / (6 - 4) = 0.25
    bracket = bracket_treasuries(4.5, [("a", 4.0), ("b", 6.0)])
    assert bracket.w_upper == pytest.approx(0.25)
    assert bracket.w_lower == pytest.approx(0.75)


def test_exact_match_short_circuits():
    bracket = bracket_treasuries(4.0, [("a", 4.0), ("b", 6.0)])
    assert bracket.w_lower == 1.0
    assert bracket.w_upper == 0.0
    assert bracket.lower_id == "a"


def test_no_extrapolation():
    with pytest.raises(InputError, match="outside"):
        bracket_treasuries(7.0, [("a", 4.0), ("b", 6.0)])
    with pytest.raises(InputError):
        bracket_treasuries(1.0, [("a", 4.0), ("b", 6.0)])


@given(st.data())
@settings(max_examples=100, deadline=None)
def test_bracket_weights_reproduce_target(data):
    durations = sorted(data.draw(st.lists(
        st.floats(0.5, 30.0, allow_nan=False), min_size=2, max_size=8, unique=True)))
    target = data.draw(st.floats(min(durations), max(durations)))
    bracket = bracket_treasuries(target, [(f"t{i}", d) for i, d in enumerate(durations)])
    assert bracket.w_lower + bracket.w_upper == 1.0
    reproduced = bracket.w_lower * bracket.d_lower + bracket.w_upper * bracket.d_upper
    assert abs(reproduced - target) < 1e-12


def panel(n=30, seed=0):
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range("2021-01-04", periods=n)
    returns = pd.DataFrame({
        "T4": 0.001 * rng.standard_normal(n),
        "T6": 0.001 * rng.standard_normal(n),
    }, index=dates)
    durations = pd.DataFrame({"T4": 4.0, "T6": 6.0}, index=dates)
    return dates, returns, durations


def test_treasury_self_neutralizes():
    dates, returns, durations = panel()
    out = duration_neutral_returns(returns["T4"], durations["T4"], returns, durations)
    assert (out.neutral_return == 0.0).all()


def test_zero_treasury_returns_leave_raw():
    dates, returns, durations = panel()
    zero = returns * 0.0
    asset = pd.Series(0.002, index=dates)
    out = duration_neutral_returns(asset, pd.Series(5.0, index=dates), zero, durations)
    pd.testing.assert_series_equal(out.neutral_return, asset)


def test_known_combination_recovers_alpha():
    dates, returns, durations = panel(n=50, seed=3)
    alpha = 0.001  # 10bp per day
    asset = 0.6 * returns["T4"] + 0.4 * returns["T6"] + alpha
    target_duration = pd.Series(0.6 * 4.0 + 0.4 * 6.0, index=dates)
    out = duration_neutral_returns(asset, target_duration, returns, durations)
    assert np.max(np.abs(out.neutral_return - alpha)) < 1e-12
    assert np.max(np.abs(out.raw_return - out.duration_return - out.neutral_return)) == 0.0


def test_scaling_returns_scales_neutral_component():
    dates, returns, durations = panel(n=40, seed=4)
    asset = 0.5 * returns["T4"] + 0.5 * returns["T6"] + 0.0005
    dur = pd.Series(5.0, index=dates)
    base = duration_neutral_returns(asset, dur, returns, durations)
    scaled = duration_neutral_returns(3.0 * asset, dur, 3.0 * returns, durations)
    assert np.allclose(scaled.neutral_return, 3.0 * base.neutral_return, atol=1e-15)


def test_unbracketable_day_names_date():
    dates, returns, durations = panel()
    bad_durations = durations.copy()
    bad_durations.loc[dates[3], "T6"] = 4.5  # universe span shrinks below target
    with pytest.raises(InputError, match=str(dates[3].date())):
        duration_neutral_returns(
            pd.Series(0.001, index=dates), pd.Series(5.0, index=dates),
            returns, bad_durations)
