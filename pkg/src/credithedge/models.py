"""Hedge-timing engines: rolling two-step OLS and rolling CCA.

Both consume a window of signal rows and response rows spanning the same
dates and lag internally (day ``s-1`` signals explain day ``s`` returns),
so a fit at day t only ever sees data dated <= t. The CCA engine also
produces the forecast z-score that drives the hysteresis state machine;
PCA collapses several hedge instruments into one synthetic hedge.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DegenerateWindowError, InputError, NumericalError

Z_SIGMA_FLOOR = 1e-12
FUND_WEIGHT_FLOOR = 1e-10


@dataclass(frozen=True)
class OlsFit:
    """First-step signal regression plus (optionally) the hedge-sizing step."""

    dates: pd.DatetimeIndex
    coefficients: np.ndarray      # [alpha, beta_credit, beta_liquidity, beta_momentum]
    forecast: float               # next-day return from the latest signal row
    f_stat_p: float
    hedge_beta: Optional[float] = None
    intercept_kappa: Optional[float] = None


@dataclass(frozen=True)
class CcaFit:
    """First canonical pair plus the forecast regression built on it."""

    dates: pd.DatetimeIndex
    response_weights: np.ndarray  # scaled so the fund component equals 1
    signal_weights: np.ndarray
    achieved_corr: float
    hedge_weight: float           # response_weights[1]; the tradable short weight
    omega: float
    beta: float
    forecast: float
    zscore: float


class HedgeCause(Enum):
    NEVER_ON = "NeverOn"
    ENTRY_SIGNAL = "EntrySignal"
    EXIT_MEAN_REVERT = "ExitMeanRevert"


@dataclass(frozen=True)
class HedgeTimingState:
    on: bool = False
    last_transition: Optional[pd.Timestamp] = None
    cause: HedgeCause = HedgeCause.NEVER_ON


@dataclass(frozen=True)
class PcaHedge:
    loadings: pd.Series           # unit norm, loading sum > 0

    def distribute(self, total_weight: float) -> pd.Series:
        """Split a synthetic-hedge weight across instruments, summing to it."""
        norm = self.loadings / self.loadings.sum()
        return total_weight * norm


def ols_fit(signals: pd.DataFrame, response: pd.Series) -> OlsFit:
    """Regress day-s returns on day-(s-1) signals over one window.

    ``signals`` and ``response`` cover the same dates; the pairing lags
    the signals internally. The forecast applies the coefficients to the
    window's last signal row.
    """
    if len(signals) != len(response) or not signals.index.equals(response.index):
        raise InputError("signals and response must share the window's dates")
    X = signals.to_numpy(dtype=float)[:-1]
    y = response.to_numpy(dtype=float)[1:]
    n, k = X.shape
    if n < 10 or n < 2 * k:
        raise InputError(f"OLS window too short: {n} pairs for {k} regressors")

    design = np.column_stack([np.ones(n), X])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise NumericalError("rank-deficient regressor matrix in OLS window")
    coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ coef
    resid = y - fitted
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    df_resid = n - k - 1
    if ss_res <= 0 or ss_tot <= 0:
        f_p = 0.0 if ss_tot > 0 else 1.0
    else:
        f_stat = ((ss_tot - ss_res) / k) / (ss_res / df_resid)
        f_p = float(stats.f.sf(f_stat, k, df_resid))
    forecast = float(coef[0] + signals.to_numpy(dtype=float)[-1] @ coef[1:])
    return OlsFit(dates=signals.index, coefficients=coef, forecast=forecast, f_stat_p=f_p)


def ols_indicator(fit: OlsFit, gamma_ols: float) -> int:
    """1 iff the forecast is negative and jointly significant."""
    return int(fit.forecast < 0 and fit.f_stat_p <= gamma_ols)


def ols_hedge_beta(fund_neutral: pd.Series, hedge_neutral: pd.Series) -> OlsFit:
    """Second step: empirical beta of the fund on the hedge (with intercept)."""
    aligned = pd.concat([fund_neutral, hedge_neutral], axis=1, keys=["fund", "hedge"]).dropna()
    if len(aligned) < 30:
        raise InputError(f"hedge-beta regression needs >= 30 aligned observations, got {len(aligned)}")
    hedge = aligned["hedge"].to_numpy()
    fund = aligned["fund"].to_numpy()
    var = hedge.var(ddof=0)
    if var == 0:
        raise NumericalError("zero-variance hedge series in beta regression")
    beta = float(np.cov(fund, hedge, ddof=0)[0, 1] / var)
    kappa = float(fund.mean() - beta * hedge.mean())
    return OlsFit(
        dates=aligned.index, coefficients=np.array([kappa, beta]),
        forecast=np.nan, f_stat_p=np.nan, hedge_beta=beta, intercept_kappa=kappa,
    )


def _inv_sqrt(matrix: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    vals, vecs = np.linalg.eigh(matrix)
    cutoff = rcond * vals.max()
    if vals.min() <= cutoff:
        raise DegenerateWindowError("covariance block numerically singular in CCA window")
    return vecs @ np.diag(vals ** -0.5) @ vecs.T


def cca_fit(signals: pd.DataFrame, responses: pd.DataFrame) -> CcaFit:
    """First canonical pair between lagged signals and responses.

    Columns are standardized within the window; the pair is solved from
    the SVD of the whitened cross-covariance. Response weights are
    rescaled so the fund (first) component equals 1, fixing the usual
    sign ambiguity, and the hedge weight is read off per unit of fund.
    The forecast regression then maps the day-t signal combination to the
    day-(t+1) response combination; its z-score is taken against the
    window's own forecast history.
    """
    if not signals.index.equals(responses.index):
        raise InputError("signals and responses must share the window's dates")
    X = signals.to_numpy(dtype=float)[:-1]
    Y = responses.to_numpy(dtype=float)[1:]
    n = len(X)
    if n < 20:
        raise InputError(f"CCA window too short: {n} pairs")

    x_std = X.std(axis=0, ddof=1)
    y_std = Y.std(axis=0, ddof=1)
    if np.any(x_std < Z_SIGMA_FLOOR) or np.any(y_std < Z_SIGMA_FLOOR):
        raise DegenerateWindowError("constant column in CCA window")
    Xs = (X - X.mean(axis=0)) / x_std
    Ys = (Y - Y.mean(axis=0)) / y_std

    sxx = Xs.T @ Xs / (n - 1)
    syy = Ys.T @ Ys / (n - 1)
    sxy = Xs.T @ Ys / (n - 1)
    wx = _inv_sqrt(sxx)
    wy = _inv_sqrt(syy)
    u, svals, vt = np.linalg.svd(wx @ sxy @ wy)
    rho = float(min(svals[0], 1.0))

    b_std = wx @ u[:, 0]
    a_std = wy @ vt[0]
    # back to raw units: a combination sum a_j * (y_j - m_j)/s_j weights y_j by a_j/s_j
    a_raw = a_std / y_std
    b_raw = b_std / x_std
    scale = np.max(np.abs(a_raw))
    if abs(a_raw[0]) < FUND_WEIGHT_FLOOR * scale:
        err = DegenerateWindowError("fund component of the canonical direction is zero")
        err.achieved_corr = rho
        raise err
    if a_raw[0] < 0:
        a_raw, b_raw = -a_raw, -b_raw
    a_scaled = a_raw / a_raw[0]
    hedge_weight = float(a_scaled[1]) if len(a_scaled) > 1 else np.nan

    # forecast regression: day-(s+1) response combination on day-s signals
    u_hist = signals.to_numpy(dtype=float) @ b_raw       # one per window date
    v = Y @ a_scaled
    u_pairs = u_hist[:-1]
    du = u_pairs - u_pairs.mean()
    denom = float(du @ du)
    if denom < Z_SIGMA_FLOOR:
        raise DegenerateWindowError("signal combination has no dispersion in CCA window")
    beta = float(du @ (v - v.mean()) / denom)
    omega = float(v.mean() - beta * u_pairs.mean())

    fc_hist = omega + beta * u_pairs
    forecast = float(omega + beta * u_hist[-1])
    sd = fc_hist.std(ddof=1)
    z = 0.0 if sd < Z_SIGMA_FLOOR else float((forecast - fc_hist.mean()) / sd)

    return CcaFit(
        dates=signals.index, response_weights=a_scaled, signal_weights=b_raw,
        achieved_corr=rho, hedge_weight=hedge_weight,
        omega=omega, beta=beta, forecast=forecast, zscore=z,
    )


def hedge_state_step(state: HedgeTimingState, hedge_weight: float, zscore: float,
                     gamma_upper: float, gamma_lower: float,
                     date: Optional[pd.Timestamp] = None) -> HedgeTimingState:
    """Advance the on/off hysteresis by one day.

    Off -> On requires a short optimal weight and the forecast z-score
    above the entry threshold; once on, the hedge survives until the
    z-score drops below the exit threshold (mean reversion).
    """
    if not gamma_upper > gamma_lower:
        raise InputError("gamma_upper must exceed gamma_lower")
    if state.on:
        if zscore >= gamma_lower:
            return state
        return HedgeTimingState(on=False, last_transition=date, cause=HedgeCause.EXIT_MEAN_REVERT)
    if hedge_weight < 0 and zscore > gamma_upper:
        return HedgeTimingState(on=True, last_transition=date, cause=HedgeCause.ENTRY_SIGNAL)
    return state


def cap_and_scale(weight: float, sigma_fund: float, sigma_hedge: float) -> float:
    """Cap |weight| at min(1, sigma_fund/sigma_hedge), preserving sign."""
    if not (sigma_hedge > 0):
        raise NumericalError("hedge volatility must be positive for scaling")
    if not np.isfinite(sigma_fund) or not np.isfinite(weight):
        raise NumericalError("non-finite inputs to volatility scaling")
    cap = min(1.0, sigma_fund / sigma_hedge)
    return float(np.sign(weight) * min(abs(weight), cap))


def pca_first_component(hedge_neutral: pd.DataFrame) -> PcaHedge:
    """First principal component of the window's hedge-return covariance.

    Loadings are unit norm with positive sum, so the synthetic hedge is
    deterministic and resembles a weighted average of the instruments.
    """
    if hedge_neutral.shape[1] < 2:
        raise InputError("PCA aggregation needs at least 2 hedge instruments")
    if len(hedge_neutral) < 20:
        raise InputError(f"PCA window too short: {len(hedge_neutral)} rows")
    values = hedge_neutral.to_numpy(dtype=float)
    cov = np.cov(values, rowvar=False, ddof=1)
    if not np.any(cov):
        raise NumericalError("zero covariance in PCA window")
    vals, vecs = np.linalg.eigh(cov)
    first = vecs[:, -1]
    if first.sum() < 0:
        first = -first
    return PcaHedge(loadings=pd.Series(first, index=hedge_neutral.columns))
