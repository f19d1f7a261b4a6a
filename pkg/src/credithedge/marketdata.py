"""Market data ingestion, validation and cleaning.

Input is a directory of CSV files (one per logical table, header row
required, ISO-8601 dates):

    prices.csv       date,instrument,close,bid,ask,volume,duration,dividend_yield
    smiles.csv       date,instrument,tenor_years,moneyness_pct,implied_vol
    trades.csv       trade_id,cusip,date,price,coupon,maturity,volume,status,reversal_flag
    treasuries.csv   date,instrument,coupon,duration,maturity,yield,return
    fund_returns.csv date,fund,return,duration
    roster.csv       effective_date,cusip,inclusion_date

Loading and cleaning are pure transformations; a MarketDataset is not
mutated after construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .errors import InputError, NumericalError, SchemaError

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.0


class TradeStatus(Enum):
    TRADE = "Trade"
    CANCEL = "Cancel"
    CORRECTION = "Correction"
    REVERSAL = "Reversal"


@dataclass(frozen=True)
class BondTrade:
    """One reported bond transaction (possibly a cancel/correction report).

    Cancel and correction reports carry the trade_id of the report they
    refer to; that id is the cross-reference used during cleaning.
    """

    trade_id: str
    cusip: str
    date: pd.Timestamp
    price: float            # percent of par
    coupon: float           # decimal per year
    maturity: pd.Timestamp
    volume: float           # dollar volume
    status: TradeStatus
    reversal_flag: bool = False

    def __post_init__(self):
        if self.price <= 0:
            raise InputError(f"trade {self.trade_id}: price must be positive, got {self.price}")
        if self.maturity <= self.date:
            raise InputError(f"trade {self.trade_id}: maturity {self.maturity.date()} not after trade date")


@dataclass(frozen=True)
class VolSmile:
    """Implied-vol quotes for one instrument/date at a single tenor."""

    date: pd.Timestamp
    tenor: float                # years
    moneyness_grid: np.ndarray  # (X/S)*100, strictly increasing
    vols: np.ndarray            # annualized decimals

    def __post_init__(self):
        grid = np.asarray(self.moneyness_grid, dtype=float)
        vols = np.asarray(self.vols, dtype=float)
        object.__setattr__(self, "moneyness_grid", grid)
        object.__setattr__(self, "vols", vols)
        if grid.shape != vols.shape:
            raise InputError("smile grid and vols must have equal length")
        if np.any(np.diff(grid) <= 0):
            raise InputError(f"smile {self.date.date()}: moneyness grid must be strictly increasing")
        if np.any(vols <= 0):
            raise InputError(f"smile {self.date.date()}: implied vols must be positive")


@dataclass(frozen=True)
class TreasuryPoint:
    """One treasury instrument observation."""

    date: pd.Timestamp
    instrument: str
    coupon: float
    duration: float
    maturity: pd.Timestamp
    yield_: float
    return_: float

    def __post_init__(self):
        if self.duration <= 0:
            raise InputError(f"treasury {self.instrument} on {self.date.date()}: duration must be positive")


@dataclass(frozen=True)
class CleanTradeSet:
    """Result of TRACE-style cleaning: surviving trades plus removal diagnostics."""

    trades: tuple
    removed_cancellations: int = 0
    removed_corrections: int = 0
    removed_reversals: int = 0
    rejected: int = 0
    rejected_reasons: tuple = ()


@dataclass
class MarketDataset:
    """Aligned, date-indexed market data collections.

    prices / fund_returns map instrument id -> date-indexed frame;
    treasuries stays tidy (one row per date x instrument); smiles map
    instrument -> {date -> VolSmile}. ``dates`` is the common business-day
    index of the daily panels.
    """

    prices: dict
    treasuries: pd.DataFrame
    fund_returns: dict
    smiles: dict = field(default_factory=dict)
    trades: tuple = ()
    roster: Optional[pd.DataFrame] = None
    dates: pd.DatetimeIndex = field(default_factory=lambda: pd.DatetimeIndex([]))
    costs_available: bool = True
    gap_report: dict = field(default_factory=dict)

    def treasury_panel(self, column: str) -> pd.DataFrame:
        """Pivot the tidy treasury table to date x instrument for one column."""
        return self.treasuries.pivot(index="date", columns="instrument", values=column)

    def treasury_curve(self, date: pd.Timestamp) -> list:
        """All TreasuryPoint rows for one date."""
        rows = self.treasuries[self.treasuries["date"] == date]
        return [
            TreasuryPoint(
                date=row.date, instrument=row.instrument, coupon=row.coupon,
                duration=row.duration, maturity=row.maturity,
                yield_=row.yield_, return_=row.return_,
            )
            for row in rows.itertuples(index=False)
        ]

    def truncate(self, last_date: pd.Timestamp) -> "MarketDataset":
        """Everything known up to and including ``last_date``."""
        dates = self.dates[self.dates <= last_date]
        return MarketDataset(
            prices={k: v.loc[v.index <= last_date] for k, v in self.prices.items()},
            treasuries=self.treasuries[self.treasuries["date"] <= last_date].reset_index(drop=True),
            fund_returns={k: v.loc[v.index <= last_date] for k, v in self.fund_returns.items()},
            smiles={
                k: {d: s for d, s in v.items() if d <= last_date}
                for k, v in self.smiles.items()
            },
            trades=tuple(t for t in self.trades if t.date <= last_date),
            roster=None if self.roster is None
            else self.roster[self.roster["effective_date"] <= last_date].reset_index(drop=True),
            dates=dates, costs_available=self.costs_available,
            gap_report=dict(self.gap_report),
        )


# ---------------------------------------------------------------------------
# TRACE-style cleaning
# ---------------------------------------------------------------------------

def parse_status(raw, trade_id: str = "?") -> TradeStatus:
    """Map a raw status string onto TradeStatus (case-insensitive)."""
    text = str(raw).strip().lower()
    for status in TradeStatus:
        if text == status.value.lower():
            return status
    raise InputError(f"trade {trade_id}: unparseable status code {raw!r}")


def clean_trace(raw: Iterable[BondTrade]) -> CleanTradeSet:
    """Remove cancelled, corrected and reversal records from a trade list.

    Three removal categories:
      1. a Trade and any same-day Cancel referring to it (both removed);
      2. a Correction and the initial report it corrects (both removed);
      3. Reversal records flagged as reversals (the record itself removed).

    Non-Trade records never appear in the output. Records that fail basic
    checks are counted in ``rejected`` rather than silently dropped.
    Output is sorted by (cusip, date, trade_id).
    """
    records = list(raw)
    rejected_reasons = []
    usable = []
    for rec in records:
        if not np.isfinite(rec.volume):
            rejected_reasons.append(f"trade {rec.trade_id}: non-numeric volume")
            continue
        usable.append(rec)

    trades = [r for r in usable if r.status is TradeStatus.TRADE]
    cancels = [r for r in usable if r.status is TradeStatus.CANCEL]
    corrections = [r for r in usable if r.status is TradeStatus.CORRECTION]

    trade_keys = {(t.trade_id, t.date) for t in trades}
    trade_ids = {t.trade_id for t in trades}
    # a cancel hits only the same-day report; a correction taints the id
    cancelled_keys = {
        (c.trade_id, c.date) for c in cancels if (c.trade_id, c.date) in trade_keys
    }
    corrected_ids = {c.trade_id for c in corrections if c.trade_id in trade_ids}
    removed_reversals = sum(
        1 for r in usable if r.status is TradeStatus.REVERSAL and r.reversal_flag
    )

    survivors = [
        t for t in trades
        if (t.trade_id, t.date) not in cancelled_keys and t.trade_id not in corrected_ids
    ]
    survivors.sort(key=lambda t: (t.cusip, t.date, t.trade_id))
    return CleanTradeSet(
        trades=tuple(survivors),
        removed_cancellations=len(cancelled_keys),
        removed_corrections=len(corrected_ids),
        removed_reversals=removed_reversals,
        rejected=len(rejected_reasons),
        rejected_reasons=tuple(rejected_reasons),
    )


# ---------------------------------------------------------------------------
# Bond math: semiannual compounding, actual/365
# ---------------------------------------------------------------------------

def bond_price_from_ytm(coupon: float, years_to_maturity: float, ytm: float) -> float:
    """Percent-of-par price of a semiannual coupon bond at a given YTM."""
    if years_to_maturity <= 0:
        raise InputError("years_to_maturity must be positive")
    times = _coupon_times(years_to_maturity)
    disc = (1.0 + ytm / 2.0) ** (-2.0 * times)
    return float(100.0 * (coupon / 2.0) * disc.sum() + 100.0 * disc[-1])


def bond_ytm_from_price(price: float, coupon: float, years_to_maturity: float,
                        trade_id: str = "?") -> float:
    """Invert the semiannual pricing identity by root finding."""
    if price <= 0:
        raise InputError(f"trade {trade_id}: price must be positive to solve YTM")

    def objective(y):
        return bond_price_from_ytm(coupon, years_to_maturity, y) - price

    lo, hi = -0.75, 2.0
    try:
        flo, fhi = objective(lo), objective(hi)
        for _ in range(8):
            if flo * fhi <= 0:
                break
            hi *= 2.0
            fhi = objective(hi)
        else:
            raise ValueError("no sign change")
        return float(brentq(objective, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200))
    except (ValueError, RuntimeError) as exc:
        raise NumericalError(f"trade {trade_id}: YTM root finding failed: {exc}") from exc


def bond_modified_duration(coupon: float, years_to_maturity: float, ytm: float) -> float:
    """Modified duration of a semiannual coupon bond."""
    times = _coupon_times(years_to_maturity)
    disc = (1.0 + ytm / 2.0) ** (-2.0 * times)
    flows = np.full_like(times, 100.0 * coupon / 2.0)
    flows[-1] += 100.0
    pv = flows * disc
    macaulay = float((times * pv).sum() / pv.sum())
    return macaulay / (1.0 + ytm / 2.0)


def _coupon_times(years_to_maturity: float) -> np.ndarray:
    n = int(np.ceil(years_to_maturity * 2.0 - 1e-12))
    n = max(n, 1)
    return years_to_maturity - (n - 1 - np.arange(n)) / 2.0


def match_treasury(trade: BondTrade, curve: Iterable[TreasuryPoint]) -> TreasuryPoint:
    """Closest treasury by |maturity difference|, ties broken by |coupon difference|."""
    candidates = list(curve)
    if not candidates:
        raise InputError(f"trade {trade.trade_id}: empty treasury curve for {trade.date.date()}")
    return min(
        candidates,
        key=lambda t: (abs((t.maturity - trade.maturity).days), abs(t.coupon - trade.coupon)),
    )


def compute_spread(trade: BondTrade, curve: Iterable[TreasuryPoint]) -> float:
    """Traded YTM minus the matched treasury's YTM."""
    years = (trade.maturity - trade.date).days / DAYS_PER_YEAR
    traded_ytm = bond_ytm_from_price(trade.price, trade.coupon, years, trade.trade_id)
    treasury = match_treasury(trade, curve)
    return traded_ytm - treasury.yield_


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

REQUIRED_COLUMNS = {
    "prices": ["date", "instrument", "close", "bid", "ask", "volume", "duration", "dividend_yield"],
    "smiles": ["date", "instrument", "tenor_years", "moneyness_pct", "implied_vol"],
    "trades": ["trade_id", "cusip", "date", "price", "coupon", "maturity", "volume", "status", "reversal_flag"],
    "treasuries": ["date", "instrument", "coupon", "duration", "maturity", "yield", "return"],
    "fund_returns": ["date", "fund", "return", "duration"],
    "roster": ["effective_date", "cusip", "inclusion_date"],
}

OPTIONAL_TABLES = {"smiles", "trades", "roster"}


@dataclass(frozen=True)
class DatasetSchema:
    """File names for each logical table; defaults follow the CSV contract."""

    prices: str = "prices.csv"
    smiles: str = "smiles.csv"
    trades: str = "trades.csv"
    treasuries: str = "treasuries.csv"
    fund_returns: str = "fund_returns.csv"
    roster: str = "roster.csv"

    def path(self, table: str, data_dir: Path) -> Path:
        return Path(data_dir) / getattr(self, table)


def _read_table(path: Path, table: str, date_columns) -> pd.DataFrame:
    if not path.exists():
        raise SchemaError(f"missing input table '{table}'", file=str(path))
    try:
        df = pd.read_csv(path, comment="#")
    except Exception as exc:
        raise SchemaError(f"unreadable CSV: {exc}", file=str(path)) from exc
    missing = [c for c in REQUIRED_COLUMNS[table] if c not in df.columns]
    if missing:
        raise SchemaError("missing required columns", file=str(path), column=",".join(missing))
    for col in date_columns:
        parsed = pd.to_datetime(df[col], format="ISO8601", errors="coerce")
        bad = parsed.isna() & df[col].notna()
        if bad.any():
            line = int(bad.idxmax()) + 2  # header line is 1
            raise SchemaError("unparseable ISO-8601 date", file=str(path), line=line, column=col)
        df[col] = parsed
    return df


def load_dataset(data_dir, schema: DatasetSchema = DatasetSchema(),
                 max_gap_fraction: float = 0.25) -> MarketDataset:
    """Load and align all CSV tables under ``data_dir``.

    Daily panels (prices, treasuries, fund returns) are restricted to the
    intersection of their business days; dropped dates are reported in
    ``gap_report``. Missing bid/ask disables the transaction-cost model
    (``costs_available=False``), letting backtests run frictionless only.
    """
    data_dir = Path(data_dir)

    prices_df = _read_table(schema.path("prices", data_dir), "prices", ["date"])
    treas_df = _read_table(schema.path("treasuries", data_dir), "treasuries", ["date", "maturity"])
    funds_df = _read_table(schema.path("fund_returns", data_dir), "fund_returns", ["date"])

    prices = {}
    for instrument, group in prices_df.groupby("instrument"):
        dupes = group["date"][group["date"].duplicated()]
        if not dupes.empty:
            raise SchemaError(
                f"duplicate date row for instrument {instrument}: {dupes.iloc[0].date()}",
                file=str(schema.path("prices", data_dir)), column="date",
            )
        frame = group.set_index("date").sort_index().drop(columns=["instrument"])
        if (frame["close"] <= 0).any():
            raise SchemaError(f"non-positive close for {instrument}",
                              file=str(schema.path("prices", data_dir)), column="close")
        if (frame["volume"].fillna(0) < 0).any():
            raise SchemaError(f"negative volume for {instrument}",
                              file=str(schema.path("prices", data_dir)), column="volume")
        if (frame["duration"].dropna() <= 0).any():
            raise SchemaError(f"non-positive duration for {instrument}",
                              file=str(schema.path("prices", data_dir)), column="duration")
        both = frame.dropna(subset=["bid", "ask"])
        bad = both[(both["bid"] > both["close"]) | (both["close"] > both["ask"])]
        if not bad.empty:
            raise SchemaError(
                f"bid <= close <= ask violated for {instrument} on {bad.index[0].date()}",
                file=str(schema.path("prices", data_dir)), column="bid",
            )
        prices[instrument] = frame

    costs_available = all(
        frame["bid"].notna().all() and frame["ask"].notna().all()
        for frame in prices.values()
    )

    treas_df = treas_df.rename(columns={"yield": "yield_", "return": "return_"})
    if treas_df.duplicated(subset=["date", "instrument"]).any():
        row = treas_df[treas_df.duplicated(subset=["date", "instrument"])].iloc[0]
        raise SchemaError(f"duplicate treasury row {row['instrument']} {row['date'].date()}",
                          file=str(schema.path("treasuries", data_dir)), column="date")
    if (treas_df["duration"] <= 0).any():
        raise SchemaError("treasury duration must be positive",
                          file=str(schema.path("treasuries", data_dir)), column="duration")

    fund_returns = {}
    for fund, group in funds_df.groupby("fund"):
        dupes = group["date"][group["date"].duplicated()]
        if not dupes.empty:
            raise SchemaError(f"duplicate date row for fund {fund}: {dupes.iloc[0].date()}",
                              file=str(schema.path("fund_returns", data_dir)), column="date")
        fund_returns[fund] = group.set_index("date").sort_index().drop(columns=["fund"])

    smiles = {}
    smiles_path = schema.path("smiles", data_dir)
    if smiles_path.exists():
        smiles_df = _read_table(smiles_path, "smiles", ["date"])
        for (instrument, date), group in smiles_df.groupby(["instrument", "date"]):
            group = group.sort_values("moneyness_pct")
            tenors = group["tenor_years"].unique()
            if len(tenors) != 1:
                raise SchemaError(f"mixed tenors for {instrument} on {date.date()}",
                                  file=str(smiles_path), column="tenor_years")
            smiles.setdefault(instrument, {})[date] = VolSmile(
                date=date, tenor=float(tenors[0]),
                moneyness_grid=group["moneyness_pct"].to_numpy(dtype=float),
                vols=group["implied_vol"].to_numpy(dtype=float),
            )

    trades = ()
    trades_path = schema.path("trades", data_dir)
    rejected = []
    if trades_path.exists():
        trades_df = _read_table(trades_path, "trades", ["date", "maturity"])
        parsed = []
        for i, row in enumerate(trades_df.itertuples(index=False)):
            try:
                status = parse_status(row.status, str(row.trade_id))
                volume = float(row.volume)
                parsed.append(BondTrade(
                    trade_id=str(row.trade_id), cusip=str(row.cusip), date=row.date,
                    price=float(row.price), coupon=float(row.coupon), maturity=row.maturity,
                    volume=volume, status=status,
                    reversal_flag=_parse_bool(row.reversal_flag),
                ))
            except (InputError, ValueError, TypeError) as exc:
                rejected.append(f"{trades_path.name} line {i + 2}: {exc}")
        trades = tuple(parsed)
        if rejected:
            logger.warning("rejected %d trade records (first: %s)", len(rejected), rejected[0])

    roster = None
    roster_path = schema.path("roster", data_dir)
    if roster_path.exists():
        roster = _read_table(roster_path, "roster", ["effective_date", "inclusion_date"])
        bad = roster[roster["inclusion_date"] > roster["effective_date"]]
        if not bad.empty:
            raise SchemaError("inclusion_date after effective_date",
                              file=str(roster_path), line=int(bad.index[0]) + 2,
                              column="inclusion_date")

    # Align the daily panels on their common business days.
    indexes = [frame.index for frame in prices.values()]
    indexes.append(pd.DatetimeIndex(treas_df["date"].unique()))
    indexes.extend(frame.index for frame in fund_returns.values())
    common = indexes[0]
    for idx in indexes[1:]:
        common = common.intersection(idx)
    common = common.sort_values()
    if len(common) == 0:
        raise InputError("daily panels share no common dates")

    gap_report = {}
    for name, idx in (
        [(f"prices:{k}", v.index) for k, v in prices.items()]
        + [("treasuries", pd.DatetimeIndex(treas_df["date"].unique()))]
        + [(f"fund_returns:{k}", v.index) for k, v in fund_returns.items()]
    ):
        dropped = idx.difference(common)
        if len(dropped) > 0:
            gap_report[name] = [d.date().isoformat() for d in dropped]
        if len(dropped) > max_gap_fraction * len(idx):
            raise InputError(
                f"date misalignment beyond tolerance for {name}: "
                f"{len(dropped)}/{len(idx)} dates outside the common span"
            )

    prices = {k: v.loc[common] for k, v in prices.items()}
    fund_returns = {k: v.loc[common] for k, v in fund_returns.items()}
    treas_df = treas_df[treas_df["date"].isin(common)].reset_index(drop=True)

    dataset = MarketDataset(
        prices=prices, treasuries=treas_df, fund_returns=fund_returns,
        smiles=smiles, trades=trades, roster=roster, dates=common,
        costs_available=costs_available, gap_report=gap_report,
    )
    if rejected:
        dataset.gap_report["rejected_trades"] = rejected
    return dataset


def _parse_bool(raw) -> bool:
    if isinstance(raw, (bool, np.bool_)):
        return bool(raw)
    text = str(raw).strip().lower()
    if text in ("true", "1", "y", "yes", "r"):
        return True
    if text in ("false", "0", "n", "no", ""):
        return False
    raise ValueError(f"unparseable boolean {raw!r}")
