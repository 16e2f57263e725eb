"""Agent-based market simulator comparing strategy evaluation schemes on exogenous prices."""

__version__ = "0.1.0"

from .engine import RunRecord, SimConfig, run
from .prices import PriceSeries, estimate_table, generate, load_series_csv, table_from_trend
from .schemes import SchemeKind

__all__ = ["RunRecord", "SimConfig", "run", "PriceSeries", "estimate_table", "generate", "load_series_csv",
           "table_from_trend", "SchemeKind", "__version__"]
