"""Risk-neutral distributions from implied-vol smiles.

Per day: fit a clamped cubic spline to the smile (zero slope where the
quoted vols go flat, constant extrapolation beyond), price calls across a
uniform strike grid, and difference the call-price function to get the
CDF and PDF. Comparing a credit ETF's distribution against a
duration-matched treasury ETF's yields the two credit-risk series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline
from scipy.special import ndtr

from .errors import InputError, NumericalError
from .marketdata import VolSmile

# Quoted vols repeat to 6 decimals when a wing is flat.
FLAT_TOLERANCE = 1e-6
# Moneyness percent of spot: (low, high, step).
DEFAULT_GRID = (50.0, 150.0, 0.5)
# Finite-difference stencils run at half the reporting spacing so the
# discretization error stays below the density-oracle tolerances.
STENCIL_REFINE = 2


@dataclass(frozen=True)
class VolCurve:
    """Clamped cubic spline through one day's smile, flat outside the clamps."""

    date: pd.Timestamp
    tenor: float
    clamp_lo: float
    clamp_hi: float
    spline: CubicSpline
    lo_vol: float
    hi_vol: float

    def __call__(self, moneyness):
        m = np.asarray(moneyness, dtype=float)
        out = self.spline(np.clip(m, self.clamp_lo, self.clamp_hi))
        return np.where(m <= self.clamp_lo, self.lo_vol,
                        np.where(m >= self.clamp_hi, self.hi_vol, out))


@dataclass(frozen=True)
class RiskNeutralDistribution:
    """Sanitized CDF/PDF on a uniform strike grid (currency per share)."""

    date: pd.Timestamp
    spot: float
    strike_grid: np.ndarray
    cdf: np.ndarray
    pdf: np.ndarray
    r: float
    q: float
    tenor: float

    def __post_init__(self):
        dx = float(self.strike_grid[1] - self.strike_grid[0])
        mass = float(np.trapezoid(self.pdf, dx=dx))
        span = float(self.cdf[-1] - self.cdf[0])
        if abs(mass - span) > 0.02:
            raise NumericalError(
                f"pdf mass {mass:.4f} inconsistent with cdf span {span:.4f} on {self.date.date()}"
            )

    @property
    def return_grid(self) -> np.ndarray:
        """Strike grid expressed as returns relative to spot."""
        return self.strike_grid / self.spot - 1.0


@dataclass(frozen=True)
class CreditRiskPoint:
    date: pd.Timestamp
    prob_exceeds: float
    excess_expected_drawdown: float


def fit_vol_curve(smile: VolSmile) -> VolCurve:
    """Fit the day's smile with zero-slope clamps where the wings go flat.

    The lower clamp is the last point of the flat run starting at the
    lowest strike (the point where flatness ends); the upper clamp
    mirrors that from the top. Wings without a flat run clamp at the grid
    extremes, as does a globally constant smile.
    """
    grid = smile.moneyness_grid
    vols = smile.vols
    if len(grid) < 5:
        raise InputError(f"smile {smile.date.date()}: need at least 5 grid points, got {len(grid)}")

    diffs = np.abs(np.diff(vols))
    lo_idx = 0
    while lo_idx < len(diffs) and diffs[lo_idx] <= FLAT_TOLERANCE:
        lo_idx += 1
    hi_idx = len(grid) - 1
    while hi_idx > 0 and diffs[hi_idx - 1] <= FLAT_TOLERANCE:
        hi_idx -= 1
    if lo_idx >= hi_idx:  # flat runs overlap (e.g. a constant smile)
        lo_idx, hi_idx = 0, len(grid) - 1

    knots = grid[lo_idx:hi_idx + 1]
    knot_vols = vols[lo_idx:hi_idx + 1]
    spline = CubicSpline(knots, knot_vols, bc_type=((1, 0.0), (1, 0.0)))

    probe = np.linspace(knots[0], knots[-1], 200)
    if np.any(spline(probe) <= 0):
        raise NumericalError(f"smile {smile.date.date()}: fitted vol dips non-positive")

    return VolCurve(
        date=smile.date, tenor=smile.tenor,
        clamp_lo=float(grid[lo_idx]), clamp_hi=float(grid[hi_idx]),
        spline=spline, lo_vol=float(vols[lo_idx]), hi_vol=float(vols[hi_idx]),
    )


def bs_call(S, X, tenor, r, q, sigma):
    """Black-Scholes call value; sigma=0 degenerates to discounted intrinsic."""
    S = np.asarray(S, dtype=float)
    X = np.asarray(X, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(S <= 0) or np.any(X <= 0):
        raise InputError("spot and strike must be positive")
    if tenor <= 0:
        raise InputError("tenor must be positive")
    if np.any(sigma < 0):
        raise InputError("sigma must be non-negative")

    fwd = S * np.exp(-q * tenor)
    strike_pv = X * np.exp(-r * tenor)
    vol = sigma * np.sqrt(tenor)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(S / X) + (r - q + 0.5 * sigma ** 2) * tenor) / vol
        d2 = d1 - vol
        price = fwd * ndtr(d1) - strike_pv * ndtr(d2)
    intrinsic = np.maximum(fwd - strike_pv, 0.0)
    out = np.where(vol == 0, intrinsic, price)
    return float(out) if out.ndim == 0 else out


def extract_distribution(curve: VolCurve, S: float, r: float, q: float,
                         grid_spec=DEFAULT_GRID) -> RiskNeutralDistribution:
    """Differentiate the call-price function across strikes into a CDF/PDF.

    Interior points use central differences; the grid ends use one-sided
    second-order stencils. The raw CDF is then forced monotone
    (running max) and clipped to [0, 1]; the PDF is the first difference
    of the sanitized CDF divided by the grid spacing.
    """
    lo_pct, hi_pct, dx_pct = grid_spec
    if lo_pct <= 0:
        raise InputError("grid must start above zero moneyness")
    n = int(round((hi_pct - lo_pct) / dx_pct)) + 1
    if n < 10:
        raise InputError(f"strike grid too coarse: {n} points")

    dx = S * dx_pct / 100.0
    strikes = S * (lo_pct + dx_pct * np.arange(n)) / 100.0

    h = dx / STENCIL_REFINE
    fine = strikes[0] + h * np.arange(STENCIL_REFINE * (n - 1) + 1)
    sigma = curve(fine / S * 100.0)
    calls = bs_call(S, fine, curve.tenor, r, q, sigma)
    growth = np.exp(r * curve.tenor)

    idx = STENCIL_REFINE * np.arange(n)
    cdf_raw = np.empty(n)
    pdf_raw = np.empty(n)
    interior = idx[1:-1]
    cdf_raw[1:-1] = 1.0 + growth * (calls[interior + 1] - calls[interior - 1]) / (2.0 * h)
    pdf_raw[1:-1] = growth * (
        calls[interior + 1] - 2.0 * calls[interior] + calls[interior - 1]
    ) / h ** 2
    cdf_raw[0] = 1.0 + growth * (-3.0 * calls[0] + 4.0 * calls[1] - calls[2]) / (2.0 * h)
    pdf_raw[0] = growth * (2.0 * calls[0] - 5.0 * calls[1] + 4.0 * calls[2] - calls[3]) / h ** 2
    cdf_raw[-1] = 1.0 + growth * (3.0 * calls[-1] - 4.0 * calls[-2] + calls[-3]) / (2.0 * h)
    pdf_raw[-1] = growth * (2.0 * calls[-1] - 5.0 * calls[-2] + 4.0 * calls[-3] - calls[-4]) / h ** 2

    cdf = np.clip(np.maximum.accumulate(cdf_raw), 0.0, 1.0)
    pdf = np.gradient(cdf, dx)

    return RiskNeutralDistribution(
        date=curve.date, spot=float(S), strike_grid=strikes, cdf=cdf, pdf=pdf,
        r=r, q=q, tenor=curve.tenor,
    )


def credit_signals(lqd: RiskNeutralDistribution, ief: RiskNeutralDistribution,
                   tail_prob: float = 0.01) -> CreditRiskPoint:
    """Compare a credit ETF's distribution against a treasury ETF's.

    Drawdowns are compared in relative-return space (fraction of each
    spot). The treasury distribution fixes the tail-probability drawdown
    level; the credit distribution's probability of exceeding that level
    and its expected exceedance beyond the level (net of the treasury's
    own) form the two signals.
    """
    if lqd.date != ief.date or lqd.tenor != ief.tenor:
        raise InputError("distributions must share date and tenor")
    if not (0.0 < tail_prob < 0.5):
        raise InputError(f"tail_prob must be in (0, 0.5), got {tail_prob}")

    threshold = _invert_cdf(ief, tail_prob)

    # Written as tail_prob plus the CDF gap so self-comparison is exact:
    # the treasury CDF evaluates back to tail_prob at its own quantile.
    prob_exceeds = tail_prob + (_eval_cdf(lqd, threshold) - _eval_cdf(ief, threshold))
    excess = _expected_exceedance(lqd, threshold) - _expected_exceedance(ief, threshold)
    return CreditRiskPoint(date=lqd.date, prob_exceeds=float(prob_exceeds),
                           excess_expected_drawdown=float(excess))


def _invert_cdf(dist: RiskNeutralDistribution, prob: float) -> float:
    """Leftmost return level where the piecewise-linear CDF reaches ``prob``."""
    cdf = dist.cdf
    rho = dist.return_grid
    if prob < cdf[0]:
        raise InputError(
            f"tail_prob {prob} below cdf minimum {cdf[0]:.6f} on {dist.date.date()}"
        )
    j = int(np.searchsorted(cdf, prob, side="left"))
    if j == 0:
        return float(rho[0])
    if j >= len(cdf):
        return float(rho[-1])
    run = cdf[j] - cdf[j - 1]
    t = 0.0 if run == 0 else (prob - cdf[j - 1]) / run
    return float(rho[j - 1] + t * (rho[j] - rho[j - 1]))


def _eval_cdf(dist: RiskNeutralDistribution, level: float) -> float:
    return float(np.interp(level, dist.return_grid, dist.cdf))


def _expected_exceedance(dist: RiskNeutralDistribution, level: float) -> float:
    """Trapezoid integral of (level - rho) over the PDF for rho below level.

    The density is piecewise linear, so the integrand is evaluated on a
    refined grid to keep the quadrature bias negligible.
    """
    rho = dist.return_grid
    pdf_rho = dist.pdf * dist.spot  # density per unit of return
    if level <= rho[0]:
        return 0.0
    n_pts = max(8 * len(rho), 400)
    pts = np.linspace(rho[0], level, n_pts)
    dens = np.interp(pts, rho, pdf_rho)
    integrand = (level - pts) * dens
    return float(np.trapezoid(integrand, pts))
