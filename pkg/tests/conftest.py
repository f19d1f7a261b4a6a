import pandas as pd
import pytest

from credithedge import backtest as bt
from credithedge.marketdata import BondTrade, TradeStatus
from credithedge.synth import DrawdownWindow, SynthConfig, generate_synthetic_market


def make_trade(trade_id, cusip="C1", date="2020-01-06", price=100.0, coupon=0.04,
               maturity="2025-01-03", volume=1e6, status=TradeStatus.TRADE,
               reversal_flag=False) -> BondTrade:
    return BondTrade(
        trade_id=trade_id, cusip=cusip, date=pd.Timestamp(date), price=price,
        coupon=coupon, maturity=pd.Timestamp(maturity), volume=volume,
        status=status, reversal_flag=reversal_flag,
    )


SMALL_SYNTH = SynthConfig(
    horizon_days=700,
    drawdowns=(DrawdownWindow(start=620, length=25, depth=-0.15, lead_days=10),),
    n_bonds=12,
)

SMALL_BT = bt.BacktestConfig(
    fund="FUND", hedge_instruments=("IG_ETF",), rate_instrument="GOV_ETF",
    model="cca", lookback=40, gamma_upper=2.0, gamma_lower=-1.5,
    fund_size=1e8, funding_bps=50.0, momentum_lookback=126,
)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic_market(SMALL_SYNTH, seed=7)


@pytest.fixture(scope="session")
def small_signals(small_dataset):
    return bt.build_signals(small_dataset, SMALL_BT)


@pytest.fixture(scope="session")
def small_result(small_dataset, small_signals):
    return bt.run_backtest(small_dataset, SMALL_BT, signals=small_signals)
