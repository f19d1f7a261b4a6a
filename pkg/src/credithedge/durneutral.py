"""Remove duration-driven returns using a bracketing pair of treasuries.

For a target duration D, pick the treasuries immediately below and above,
weight them so the weights sum to one and reproduce D exactly, and
subtract the weighted treasury return from the asset return day by day.
Re-bracketing happens daily since durations drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np
import pandas as pd

from .errors import InputError


@dataclass(frozen=True)
class DurationBracket:
    lower_id: str
    upper_id: str
    d_lower: float
    d_upper: float
    w_lower: float
    w_upper: float


@dataclass(frozen=True)
class DurationNeutralSeries:
    """Per-day decomposition raw = duration + neutral."""

    dates: pd.DatetimeIndex
    raw_return: pd.Series
    duration_return: pd.Series
    neutral_return: pd.Series


def bracket_treasuries(d_target: float, universe: Iterable[Tuple[str, float]]) -> DurationBracket:
    """Weights on the two treasuries bracketing ``d_target``.

    An exact duration match short-circuits to weight one on that
    instrument. No extrapolation: a target outside the universe span is
    an error.
    """
    pairs = list(universe)
    if not pairs:
        raise InputError("treasury universe is empty")

    for name, duration in pairs:
        if duration == d_target:
            return DurationBracket(
                lower_id=name, upper_id=name, d_lower=duration, d_upper=duration,
                w_lower=1.0, w_upper=0.0,
            )

    below = [(n, d) for n, d in pairs if d < d_target]
    above = [(n, d) for n, d in pairs if d > d_target]
    if not below or not above:
        span = (min(d for _, d in pairs), max(d for _, d in pairs))
        raise InputError(
            f"target duration {d_target} outside treasury universe span {span}; no extrapolation"
        )
    lower_id, d_lower = max(below, key=lambda p: p[1])
    upper_id, d_upper = min(above, key=lambda p: p[1])
    w_upper = (d_target - d_lower) / (d_upper - d_lower)
    return DurationBracket(
        lower_id=lower_id, upper_id=upper_id, d_lower=d_lower, d_upper=d_upper,
        w_lower=1.0 - w_upper, w_upper=w_upper,
    )


def duration_neutral_returns(
    returns: pd.Series,
    durations: pd.Series,
    treasury_returns: pd.DataFrame,
    treasury_durations: pd.DataFrame,
) -> DurationNeutralSeries:
    """Subtract the duration-matched treasury return from an asset's returns.

    Args:
        returns: daily simple returns of the asset.
        durations: the asset's duration per day (same index).
        treasury_returns: date x instrument daily treasury returns.
        treasury_durations: date x instrument treasury durations.
    """
    missing = returns.index.difference(treasury_returns.index)
    if len(missing) > 0:
        raise InputError(f"treasury panel does not cover asset date {missing[0].date()}")

    duration_component = np.empty(len(returns))
    for i, date in enumerate(returns.index):
        d_target = durations.loc[date]
        if not np.isfinite(d_target):
            raise InputError(f"no asset duration available on {date.date()}")
        day_durations = treasury_durations.loc[date].dropna()
        try:
            bracket = bracket_treasuries(float(d_target), list(day_durations.items()))
        except InputError as exc:
            raise InputError(f"{date.date()}: {exc}") from exc
        day_returns = treasury_returns.loc[date]
        duration_component[i] = (
            bracket.w_lower * day_returns[bracket.lower_id]
            + bracket.w_upper * day_returns[bracket.upper_id]
        )

    duration_return = pd.Series(duration_component, index=returns.index)
    return DurationNeutralSeries(
        dates=returns.index,
        raw_return=returns,
        duration_return=duration_return,
        neutral_return=returns - duration_return,
    )
