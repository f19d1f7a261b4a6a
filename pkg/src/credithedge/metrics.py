"""Performance metrics, staged parameter search and lag sensitivity.

The sequential grid search tunes lookback, then the entry threshold,
then the exit threshold, maximizing the hedged-minus-baseline Sortino at
each stage (ties go to the lower-turnover candidate). Lag analysis
replays the same decisions with delayed (or led) execution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from . import backtest as bt
from .errors import CreditHedgeError, InputError

logger = logging.getLogger(__name__)

TRADING_DAYS = 252

DEFAULT_LOOKBACKS = (20, 40, 60, 125, 250)
DEFAULT_GAMMA_UPPERS = (2.0, 2.5, 3.0)
DEFAULT_GAMMA_LOWERS = (-0.5, -1.0, -1.5, -2.0, -2.5, -3.0)

METRIC_FIELDS = ("annual_return", "annual_std", "downside_std", "max_drawdown",
                 "sortino", "annual_turnover")


@dataclass(frozen=True)
class MetricsBlock:
    annual_return: float
    annual_std: float
    downside_std: float
    max_drawdown: float
    sortino: float
    annual_turnover: float = 0.0
    sortino_unbounded: bool = False   # no negative returns in the sample

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_FIELDS}


@dataclass(frozen=True)
class DeltaMetrics:
    """Hedged-minus-baseline differences, metric by metric."""

    deltas: Dict[str, float]

    @property
    def d_sortino(self) -> float:
        return self.deltas["sortino"]


@dataclass(frozen=True)
class StageResult:
    parameter: str
    table: pd.DataFrame          # one row per candidate: deltas + selected flag
    selected: float
    failed: Dict[float, str]


@dataclass(frozen=True)
class GridSearchReport:
    stages: List[StageResult]
    selected: Dict[str, float]
    baseline: MetricsBlock


def metrics_block(daily_returns: pd.Series, turnover: float = 0.0) -> MetricsBlock:
    """Annualized return/risk metrics with a zero-target downside deviation.

    The downside deviation uses only strictly negative daily returns,
    measured around zero. Samples without any negative return report an
    infinite Sortino, flagged rather than raised (common in short tests).
    """
    values = np.asarray(daily_returns, dtype=float)
    if len(values) < 2:
        raise InputError(f"metrics need at least 2 observations, got {len(values)}")
    mean_annual = float(values.mean() * TRADING_DAYS)
    std_annual = float(values.std(ddof=1) * math.sqrt(TRADING_DAYS))
    negatives = values[values < 0]
    if negatives.size == 0:
        downside = 0.0
        sortino = math.inf if mean_annual > 0 else (0.0 if mean_annual == 0 else -math.inf)
        unbounded = True
    else:
        downside = float(np.sqrt((negatives ** 2).mean()) * math.sqrt(TRADING_DAYS))
        sortino = mean_annual / downside
        unbounded = False
    return MetricsBlock(
        annual_return=mean_annual, annual_std=std_annual, downside_std=downside,
        max_drawdown=max_drawdown(daily_returns), sortino=sortino,
        annual_turnover=turnover, sortino_unbounded=unbounded,
    )


def max_drawdown(daily_returns: pd.Series) -> float:
    """Deepest peak-to-trough loss of the compounded index."""
    values = np.asarray(daily_returns, dtype=float)
    if len(values) < 1:
        raise InputError("max drawdown needs at least 1 observation")
    index = np.cumprod(1.0 + values)
    running_max = np.maximum(np.maximum.accumulate(index), 1.0)  # start is a peak too
    return float(np.min(index / running_max - 1.0))


def annual_turnover(ledger: pd.DataFrame) -> float:
    """Sum of absolute weight changes per year, averaged over the sample."""
    weight_cols = [c for c in ledger.columns if c.startswith("weight_")]
    if not weight_cols or len(ledger) == 0:
        return 0.0
    total = 0.0
    for col in weight_cols:
        w = ledger[col].to_numpy(dtype=float)
        steps = np.abs(np.diff(w, prepend=0.0))
        total += float(steps.sum())
    years = len(ledger) / TRADING_DAYS
    return total / years if years > 0 else 0.0


def result_metrics(result: bt.BacktestResult) -> MetricsBlock:
    return metrics_block(result.hedged, annual_turnover(result.ledger))


def baseline_metrics(result: bt.BacktestResult) -> MetricsBlock:
    return metrics_block(result.unhedged, 0.0)


def delta_metrics(hedged: MetricsBlock, baseline: MetricsBlock) -> DeltaMetrics:
    deltas = {}
    for name in METRIC_FIELDS:
        h, b = getattr(hedged, name), getattr(baseline, name)
        deltas[name] = 0.0 if h == b else h - b
    return DeltaMetrics(deltas=deltas)


def _evaluate_cell(data, cfg, signals, prepared, model_path):
    result = bt.run_backtest(data, cfg, signals=signals, prepared=prepared,
                             model_path=model_path)
    hedged = result_metrics(result)
    base = baseline_metrics(result)
    return result, hedged, base, delta_metrics(hedged, base)


def grid_search(data, base_cfg: bt.BacktestConfig,
                lookbacks: Sequence[int] = DEFAULT_LOOKBACKS,
                gamma_uppers: Sequence[float] = DEFAULT_GAMMA_UPPERS,
                gamma_lowers: Sequence[float] = DEFAULT_GAMMA_LOWERS,
                signals=None) -> GridSearchReport:
    """Three-stage sequential search over (lookback, entry, exit).

    Each stage fixes the previously selected parameters and picks the
    candidate with the largest Sortino gain over the unhedged baseline;
    exact ties break toward lower hedged turnover. Failed cells are
    excluded and reported.
    """
    if not (len(lookbacks) and len(gamma_uppers) and len(gamma_lowers)):
        raise InputError("all three grids must be non-empty")

    prepared = bt.prepare_inputs(data, base_cfg, signals)
    path_cache: Dict[int, pd.DataFrame] = {}

    def model_path_for(cfg):
        if cfg.lookback not in path_cache:
            path_cache[cfg.lookback] = bt.compute_model_path(prepared, cfg)
        return path_cache[cfg.lookback]

    def run_stage(parameter: str, candidates, make_cfg) -> StageResult:
        rows = []
        failed = {}
        best = None
        for cand in candidates:
            cfg = make_cfg(cand)
            try:
                _, hedged, base, delta = _evaluate_cell(
                    data, cfg, signals, prepared, model_path_for(cfg))
            except CreditHedgeError as exc:
                failed[cand] = str(exc)
                logger.warning("grid cell %s=%s failed: %s", parameter, cand, exc)
                continue
            row = {"candidate": cand, "turnover": hedged.annual_turnover}
            row.update({f"d_{k}": v for k, v in delta.deltas.items()})
            rows.append(row)
            key = (-delta.d_sortino, hedged.annual_turnover)
            if best is None or key < best[0]:
                best = (key, cand)
        if best is None:
            raise InputError(f"every candidate failed in stage {parameter!r}")
        table = pd.DataFrame(rows).set_index("candidate")
        table["selected"] = table.index == best[1]
        return StageResult(parameter=parameter, table=table, selected=best[1], failed=failed)

    stage1 = run_stage("lookback", list(lookbacks),
                       lambda lb: replace(base_cfg, lookback=int(lb)))
    cfg1 = replace(base_cfg, lookback=int(stage1.selected))
    stage2 = run_stage("gamma_upper", list(gamma_uppers),
                       lambda gu: replace(cfg1, gamma_upper=float(gu)))
    cfg2 = replace(cfg1, gamma_upper=float(stage2.selected))
    stage3 = run_stage("gamma_lower", list(gamma_lowers),
                       lambda gl: replace(cfg2, gamma_lower=float(gl)))
    final_cfg = replace(cfg2, gamma_lower=float(stage3.selected))

    final_result = bt.run_backtest(data, final_cfg, signals=signals, prepared=prepared,
                                   model_path=bt.compute_model_path(prepared, final_cfg)
                                   if final_cfg.lookback not in path_cache
                                   else path_cache[final_cfg.lookback])
    base = baseline_metrics(final_result)
    return GridSearchReport(
        stages=[stage1, stage2, stage3],
        selected={
            "lookback": float(stage1.selected),
            "gamma_upper": float(stage2.selected),
            "gamma_lower": float(stage3.selected),
        },
        baseline=base,
    )


def lag_analysis(data, cfg: bt.BacktestConfig, lags: Sequence[int],
                 signals=None) -> pd.DataFrame:
    """Metrics per execution lag (business days; negative lags lead).

    Lag 0 reproduces the base backtest exactly; positive lags delay the
    hedge's execution relative to the signal-dated decision.
    """
    prepared = bt.prepare_inputs(data, cfg, signals)
    model_path = bt.compute_model_path(prepared, cfg)
    targets = bt.compute_targets(model_path, cfg)
    rows = []
    for lag in lags:
        result = bt.execute(prepared, targets, cfg, lag=int(lag))
        hedged = result_metrics(result)
        base = baseline_metrics(result)
        delta = delta_metrics(hedged, base)
        row = {"lag": int(lag)}
        row.update(hedged.as_dict())
        row.update({f"d_{k}": v for k, v in delta.deltas.items()})
        rows.append(row)
    return pd.DataFrame(rows).set_index("lag")
