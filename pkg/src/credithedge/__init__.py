"""Dynamic credit hedging: signals, hedge-timing models and backtesting."""

__version__ = "0.1.0"

from .backtest import BacktestConfig, BacktestResult, run_backtest
from .marketdata import DatasetSchema, MarketDataset, clean_trace, compute_spread, load_dataset
from .metrics import GridSearchReport, MetricsBlock, grid_search, lag_analysis, metrics_block
from .synth import DrawdownWindow, SynthConfig, generate_synthetic_market

__all__ = [
    "BacktestConfig", "BacktestResult", "run_backtest",
    "DatasetSchema", "MarketDataset", "clean_trace", "compute_spread", "load_dataset",
    "GridSearchReport", "MetricsBlock", "grid_search", "lag_analysis", "metrics_block",
    "DrawdownWindow", "SynthConfig", "generate_synthetic_market",
    "__version__",
]
