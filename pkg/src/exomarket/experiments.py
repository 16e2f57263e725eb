"""Monte Carlo sweeps over price sources, score memories and real data.

Every (cell, sample) task is seeded from the master seed and the task's own
coordinates only:

* price path:   PCG64 seeded with SeedSequence([seed, source code, *cell coords, sample]);
* agent tables: run key derive_key(seed, sample), shared by every cell and scheme.

Results therefore do not depend on evaluation order or on the worker count.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import seeding
from .engine import RunRecord, SimConfig, run
from .prices import (MarkovTable, PriceSeries, TransitionEstimate, TrendParams, estimate_table, fmt_num, generate,
                     load_series_csv, table_from_trend, walk_table)
from .schemes import MAJG, MING, WG, SchemeKind

log = logging.getLogger(__name__)

PROBE_CELLS = ((0.4, 0.4), (0.4, -0.4), (-0.4, 0.4), (-0.4, -0.4), (0.0, 0.0))
WALK_P_UP = (0.1, 0.3, 0.5, 0.7, 0.9)
QUADRANT_CELLS = PROBE_CELLS[:4]


def full_grid() -> list[float]:
    """19 values from -0.45 to 0.45 in steps of 0.05."""
    return [round(-0.45 + 0.05 * i, 2) for i in range(19)]


def _coord(x: float) -> int:
    return int(round(x * 1_000_000))


@dataclass(frozen=True)
class PriceSource:
    """One cell's price process: a biased walk, an order-2 trend chain or a CSV file."""

    kind: str
    p_up: Optional[float] = None
    p_long: Optional[float] = None
    p_short: Optional[float] = None
    path: Optional[str] = None
    date_col: str = "Date"
    close_col: str = "Close"

    @classmethod
    def walk(cls, p_up: float) -> "PriceSource":
        if not 0.0 <= p_up <= 1.0:
            raise ValueError(f"p_up={p_up} outside [0, 1]")
        return cls("walk", p_up=float(p_up))

    @classmethod
    def trend(cls, p_long: float, p_short: float) -> "PriceSource":
        TrendParams(p_long, p_short)
        return cls("trend", p_long=float(p_long), p_short=float(p_short))

    @classmethod
    def file(cls, path: str | Path, date_col: str = "Date", close_col: str = "Close") -> "PriceSource":
        return cls("file", path=str(path), date_col=date_col, close_col=close_col)

    @property
    def cell(self) -> dict:
        if self.kind == "walk":
            return {"p_up": self.p_up}
        if self.kind == "trend":
            return {"p_L": self.p_long, "p_S": self.p_short}
        return {"file": Path(self.path).name}

    def table(self) -> MarkovTable:
        if self.kind == "walk":
            return walk_table(self.p_up)
        if self.kind == "trend":
            return table_from_trend(TrendParams(self.p_long, self.p_short))
        raise ValueError("file sources have no generating table")

    def seed_coords(self) -> tuple[int, ...]:
        if self.kind == "walk":
            return (1, _coord(self.p_up))
        if self.kind == "trend":
            return (2, _coord(self.p_long), _coord(self.p_short))
        return (3,)

    def series(self, steps: int, p0: float, seed: int, sample: int) -> PriceSeries:
        if self.kind == "file":
            return _load_cached(self.path, self.date_col, self.close_col)
        return generate(self.table(), steps, p0, seeding.price_rng(seed, *self.seed_coords(), sample))


@lru_cache(maxsize=8)
def _load_cached(path: str, date_col: str, close_col: str) -> PriceSeries:
    return load_series_csv(path, date_col, close_col)


@dataclass
class SweepSpec:
    sources: Sequence[PriceSource]
    cfg: SimConfig = field(default_factory=SimConfig)
    samples: int = 100
    steps: int = 2000
    measure_step: Optional[int] = None  # defaults to the last step
    p0: float = 1000.0
    groups: Optional[dict] = None  # group name -> scheme labels compared by chance-of-best

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.measure_step is not None and not 0 <= self.measure_step <= self.steps:
            raise ValueError("measure_step must lie in [0, steps]")
        if not self.sources:
            raise ValueError("no price sources given")


def chance_of_best(final_wealth: np.ndarray) -> np.ndarray:
    """Fraction of samples in which each column attains the row maximum.

    ``final_wealth`` is (samples, schemes); exact ties share the sample equally.
    """
    w = np.atleast_2d(np.asarray(final_wealth, dtype=float))
    if w.shape[0] < 1:
        raise ValueError("need at least one sample")
    is_max = w == w.max(axis=1, keepdims=True)
    return (is_max / is_max.sum(axis=1, keepdims=True)).mean(axis=0)


@dataclass
class CellStats:
    cell: dict
    group: str
    scheme: str
    mean_w: float
    std_w: float
    chance_best: float
    n: int


@dataclass
class GridResult:
    labels: list[str]
    cells: list[dict]
    samples: list[np.ndarray]  # per cell, (samples, schemes) wealth at the measurement step
    groups: dict
    rows: list[CellStats] = field(default_factory=list)

    def __post_init__(self):
        if not self.rows:
            self.rows = self._aggregate()

    def _aggregate(self) -> list[CellStats]:
        rows = []
        for cell, w in zip(self.cells, self.samples):
            n = w.shape[0]
            for gname, members in self.groups.items():
                cols = [self.labels.index(lab) for lab in members]
                chance = chance_of_best(w[:, cols])
                for c, lab, cb in zip(cols, members, chance):
                    x = w[:, c]
                    rows.append(CellStats(dict(cell), gname, lab, float(x.mean()),
                                          float(x.std(ddof=1)) if n > 1 else 0.0, float(cb), n))
        return rows

    def find(self, cell: dict, scheme: str, group: Optional[str] = None) -> CellStats:
        for r in self.rows:
            if r.scheme == scheme and _same_cell(r.cell, cell) and (group is None or r.group == group):
                return r
        raise KeyError(f"no row for {cell} {scheme} {group or ''}")

    def wealth(self, cell: dict, scheme: str) -> np.ndarray:
        for c, w in zip(self.cells, self.samples):
            if _same_cell(c, cell):
                return w[:, self.labels.index(scheme)]
        raise KeyError(f"no cell {cell}")

    def winner(self, cell: dict, group: str) -> str:
        """Scheme with the highest chance-of-best in ``group``; mean wealth breaks ties."""
        rows = [r for r in self.rows if r.group == group and _same_cell(r.cell, cell)]
        if not rows:
            raise KeyError(f"no rows for {cell} in group {group}")
        return max(rows, key=lambda r: (r.chance_best, r.mean_w)).scheme

    def to_csv(self, path: str | Path) -> None:
        cell_keys = list(dict.fromkeys(k for c in self.cells for k in c))
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cell_keys + ["group", "scheme", "mean_w", "std_w", "chance_best", "n"])
            for r in self.rows:
                w.writerow([_fmt_cell(r.cell.get(k, "")) for k in cell_keys]
                           + [r.group, r.scheme, fmt_num(r.mean_w), fmt_num(r.std_w), fmt_num(r.chance_best), r.n])


def _same_cell(a: dict, b: dict) -> bool:
    if a.keys() != b.keys():
        return False
    for k in a:
        x, y = a[k], b[k]
        if isinstance(x, float) and isinstance(y, (int, float)):
            if not math.isclose(x, y, abs_tol=1e-12):
                return False
        elif x != y:
            return False
    return True


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return fmt_num(v)
    return str(v)


def _task(args) -> tuple[int, int, np.ndarray]:
    ci, sample, source, spec = args
    cfg = replace(spec.cfg, seed=seeding.derive_key(spec.cfg.seed, sample))
    series = source.series(spec.steps, spec.p0, spec.cfg.seed, sample)
    rec = run(cfg, series)
    at = rec.avg_wealth.shape[0] - 1 if spec.measure_step is None or source.kind == "file" else spec.measure_step
    return ci, sample, rec.avg_wealth[at].copy()


def _execute(spec: SweepSpec, workers: int = 1) -> list[np.ndarray]:
    tasks = [(ci, k, src, spec) for ci, src in enumerate(spec.sources) for k in range(spec.samples)]
    out = [np.empty((spec.samples, len(spec.cfg.schemes))) for _ in spec.sources]
    if workers <= 1:
        results = map(_task, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_task, tasks, chunksize=max(1, len(tasks) // (8 * workers)))
    try:
        for ci, k, w in results:
            out[ci][k] = w
    finally:
        if workers > 1:
            pool.shutdown()
    return out


def sweep(spec: SweepSpec, workers: int = 1) -> GridResult:
    groups = spec.groups or {"all": spec.cfg.labels}
    samples = _execute(spec, workers)
    return GridResult(spec.cfg.labels, [s.cell for s in spec.sources], samples, groups)


def sweep_walk(p_ups: Iterable[float] = WALK_P_UP, cfg: Optional[SimConfig] = None, samples: int = 100,
               steps: int = 1000, measure_step: Optional[int] = None, workers: int = 1) -> GridResult:
    """Wealth at ``measure_step`` for each up-move probability of a biased walk."""
    spec = SweepSpec([PriceSource.walk(p) for p in p_ups], cfg or SimConfig(), samples, steps, measure_step)
    return sweep(spec, workers)


def sweep_grid(p_longs: Iterable[float], p_shorts: Iterable[float], cfg: Optional[SimConfig] = None,
               samples: int = 100, steps: int = 2000, measure_step: Optional[int] = None,
               workers: int = 1) -> GridResult:
    cells = [PriceSource.trend(pl, ps) for pl in p_longs for ps in p_shorts]
    return sweep(SweepSpec(cells, cfg or SimConfig(), samples, steps, measure_step), workers)


def sweep_cells(cells: Iterable[tuple[float, float]], cfg: Optional[SimConfig] = None, samples: int = 100,
                steps: int = 2000, measure_step: Optional[int] = None, workers: int = 1) -> GridResult:
    """Like :func:`sweep_grid` for an explicit list of (p_L, p_S) cells."""
    sources = [PriceSource.trend(pl, ps) for pl, ps in cells]
    return sweep(SweepSpec(sources, cfg or SimConfig(), samples, steps, measure_step), workers)


INFINITE_GROUP = "infinite"


def memory_groups(memories: Sequence[int]) -> tuple[tuple[SchemeKind, ...], dict]:
    """Populations and comparison groups for a score-memory sweep.

    Group ``infinite`` compares WG/MinG/MajG; ``delta:T`` compares DWG/DMinG/DMajG
    with memory T; ``wg+delta:T`` compares WG against DMinG/DMajG.
    """
    schemes = [SchemeKind(WG), SchemeKind(MING), SchemeKind(MAJG)]
    groups = {INFINITE_GROUP: [sc.label for sc in schemes]}
    for T in memories:
        if T < 1:
            raise ValueError(f"score memory must be >= 1, got {T}")
        delta = [SchemeKind(k, T) for k in (WG, MING, MAJG)]
        schemes += delta
        groups[f"delta:{T}"] = [sc.label for sc in delta]
        groups[f"wg+delta:{T}"] = [WG] + [sc.label for sc in delta[1:]]
    return tuple(schemes), groups


def memory_sweep(memories: Sequence[int], sources: Sequence[PriceSource], cfg: Optional[SimConfig] = None,
                 samples: int = 100, steps: int = 2000, measure_step: Optional[int] = None,
                 workers: int = 1) -> GridResult:
    cfg = cfg or SimConfig()
    schemes, groups = memory_groups(memories)
    spec = SweepSpec(list(sources), replace(cfg, schemes=schemes), samples, steps, measure_step, groups=groups)
    return sweep(spec, workers)


def kind_of(label: str) -> str:
    return SchemeKind.parse(label).kind


def winner_agreement(result: GridResult, memory: int, cells: Optional[Sequence[dict]] = None) -> float:
    """Fraction of cells whose delta-scheme winner has the same kind as the infinite-memory winner."""
    cells = list(cells) if cells is not None else result.cells
    hits = sum(kind_of(result.winner(c, f"delta:{memory}")) == kind_of(result.winner(c, INFINITE_GROUP))
               for c in cells)
    return hits / len(cells)


def real_run(path: str | Path, cfg: Optional[SimConfig] = None, date_col: str = "Date", close_col: str = "Close",
             order: int = 2) -> tuple[RunRecord, TransitionEstimate]:
    """Run all populations on a real closing-price file and estimate its transition table."""
    cfg = cfg or SimConfig()
    series = load_series_csv(path, date_col, close_col, min_rows=cfg.m + 2)
    return run(cfg, series), estimate_table(series, order)


def pooled_se(a: np.ndarray, b: np.ndarray) -> float:
    """Standard error of the difference of two sample means."""
    return math.sqrt(np.var(a, ddof=1) / a.size + np.var(b, ddof=1) / b.size)
