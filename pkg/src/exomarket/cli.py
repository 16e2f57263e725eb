"""Command-line entry point.

Settings resolve as built-in defaults < config file (flat ``key = value``) <
command-line flags. Every command writes ``summary.json`` echoing the
resolved configuration, which is enough to reproduce its outputs exactly.
Wall-clock time and worker count go to ``timing.json`` so that the other
files stay byte-identical between runs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .engine import SimConfig, run
from .experiments import (PROBE_CELLS, WALK_P_UP, PriceSource, SweepSpec, memory_groups,
                          full_grid, sweep, winner_agreement)
from .prices import (SeriesLoadError, TrendParams, estimate_table, fmt_num, generate, load_series_csv,
                     table_from_trend, walk_table, write_series_csv)
from .schemes import parse_schemes
from .seeding import price_rng

log = logging.getLogger("exomarket")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


# key -> (type, default, help); the key is also the flag name with '_' -> '-'
COMMON = {
    "seed": (int, 0, "master seed"),
    "out": (str, "out", "output directory"),
    "n_agents": (int, 1000, "agents per scheme"),
    "m": (int, 2, "market history bits"),
    "s": (int, 2, "strategies per agent"),
    "multiplier": (float, 5.0, "initial wealth as a multiple of the initial price"),
    "schemes": (str, "WG,MinG,MajG", "comma-separated schemes, e.g. WG,MinG,DMajG:100"),
    "constrain_all": (_bool, True, "constrain MinG/MajG strategy suggestions like WG ones"),
    "p0": (float, 1000.0, "initial price of generated series"),
}
CSV_COLS = {
    "date_col": (str, "Date", "date column name"),
    "close_col": (str, "Close", "close column name"),
}
SOURCE = {
    "p_up": (float, None, "up-move probability of a biased walk"),
    "p_l": (float, None, "long-term trend parameter"),
    "p_s": (float, None, "short-term trend parameter"),
}
SWEEP = {
    "samples": (int, 100, "samples per cell"),
    "measure_step": (int, None, "step at which wealth is measured (default: last)"),
    "full_scale": (_bool, False, "N=10000 and the 19x19 trend grid and longer horizons"),
}

COMMANDS: dict[str, dict] = {
    "run": {**COMMON, **CSV_COLS, **SOURCE, "input": (str, None, "closing-price CSV"),
            "steps": (int, 2000, "steps of a generated series"), "order": (int, 2, "order of the estimated table")},
    "sweep-walk": {**COMMON, **SWEEP, "p_up_list": (str, ",".join(map(str, WALK_P_UP)), "up-move probabilities"),
                   "steps": (int, 1000, "steps per run")},
    "sweep-grid": {**COMMON, **SWEEP, "p_l_list": (str, "-0.4,0.4", "p_L values"),
                   "p_s_list": (str, "-0.4,0.4", "p_S values"), "steps": (int, 2000, "steps per run")},
    "sweep-memory": {**COMMON, **SWEEP, **CSV_COLS, "t_list": (str, "10,100,1000", "score memories T"),
                     "p_l_list": (str, None, "p_L values (grid source)"), "p_s_list": (str, None, "p_S values"),
                     "p_up_list": (str, None, "walk source instead of the trend probe cells"),
                     "input": (str, None, "real-data source"), "steps": (int, 2000, "steps per run")},
    "estimate": {"out": COMMON["out"], **CSV_COLS, "input": (str, None, "closing-price CSV"),
                 "order": (int, 2, "Markov order")},
    "gen-price": {"out": COMMON["out"], "seed": COMMON["seed"], "p0": COMMON["p0"], **SOURCE,
                  "steps": (int, 1000, "number of moves")},
}
EXEC_ONLY = {"workers": (int, 1, "worker processes; results do not depend on it")}


def read_config(path: str | Path, allowed: dict) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise ValueError(f"{path}:{n}: unknown key {key!r}")
        out[key] = allowed[key][0](value)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exomarket", description="Strategy-evaluation schemes on exogenous prices.",
                                     epilog="Lists starting with a minus sign need the --flag=value form.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name, help=_HELP[name], epilog="Lists starting with a minus sign need the --flag=value form.")
        p.add_argument("--config", help="flat key = value file; flags override it")
        for key, (typ, default, help_) in {**options, **(EXEC_ONLY if name.startswith("sweep") else {})}.items():
            shown = "" if default is None else f" (default: {default})"
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None, help=help_ + shown)
    return parser


_HELP = {
    "run": "one run on a CSV file or a generated series; writes timeseries.csv",
    "sweep-walk": "biased random walk sweep over p_up; writes grid.csv",
    "sweep-grid": "(p_L, p_S) grid sweep; writes grid.csv",
    "sweep-memory": "finite score memory sweep; writes grid.csv",
    "estimate": "estimate up-move probabilities of a CSV series",
    "gen-price": "generate a price series; writes prices.csv",
}


def resolve(args: argparse.Namespace) -> dict:
    options = {**COMMANDS[args.command], **(EXEC_ONLY if args.command.startswith("sweep") else {})}
    cfg = {k: d for k, (_, d, _) in options.items()}
    if args.config:
        cfg.update(read_config(args.config, options))
    cfg.update({k: v for k, v in vars(args).items() if k in options and v is not None})
    if cfg.get("full_scale"):
        _apply_full_scale(args, cfg)
    return cfg


def _apply_full_scale(args, cfg) -> None:
    explicit = {k for k, v in vars(args).items() if v is not None}
    scale = {"n_agents": 10000}
    grid = ",".join(fmt_num(x) for x in full_grid())
    if args.command == "sweep-walk":
        scale.update(samples=1000, steps=1000)
    elif args.command == "sweep-grid":
        scale.update(steps=5000, p_l_list=grid, p_s_list=grid)
    elif args.command == "sweep-memory":
        scale.update(steps=5000)
    for k, v in scale.items():
        if k not in explicit:
            cfg[k] = v


def _sim_config(cfg: dict) -> SimConfig:
    return SimConfig(n_agents=cfg["n_agents"], m=cfg["m"], s=cfg["s"], schemes=parse_schemes(cfg["schemes"]),
                     wealth_multiplier=cfg["multiplier"], seed=cfg["seed"], constrain_all=cfg["constrain_all"])


def _generated_table(cfg: dict):
    if cfg.get("p_up") is not None:
        if cfg.get("p_l") is not None or cfg.get("p_s") is not None:
            raise ValueError("give either --p-up or --p-l/--p-s, not both")
        return walk_table(cfg["p_up"])
    if cfg.get("p_l") is None or cfg.get("p_s") is None:
        raise ValueError("a generated series needs --p-up, or both --p-l and --p-s")
    return table_from_trend(TrendParams(cfg["p_l"], cfg["p_s"]))


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _echo(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in EXEC_ONLY}


def cmd_run(cfg: dict, out: Path) -> dict:
    sim = _sim_config(cfg)
    summary = {}
    if cfg.get("input"):
        series = load_series_csv(cfg["input"], cfg["date_col"], cfg["close_col"], min_rows=sim.m + 2)
        est = estimate_table(series, cfg["order"])
        summary["estimate"] = est.as_rows()
    else:
        series = generate(_generated_table(cfg), cfg["steps"], cfg["p0"], price_rng(cfg["seed"]))
    rec = run(sim, series)
    rec.to_csv(out / "timeseries.csv")
    summary.update(rec.summary())
    summary["price_source"] = series.provenance
    return summary


def _sweep_common(cfg: dict, sources, groups=None, schemes=None) -> SweepSpec:
    sim = _sim_config(cfg)
    if schemes is not None:
        sim = replace(sim, schemes=schemes)
    return SweepSpec(sources, sim, cfg["samples"], cfg["steps"], cfg["measure_step"], cfg["p0"], groups)


def cmd_sweep_walk(cfg: dict, out: Path) -> dict:
    spec = _sweep_common(cfg, [PriceSource.walk(p) for p in _floats(cfg["p_up_list"])])
    res = sweep(spec, cfg["workers"])
    res.to_csv(out / "grid.csv")
    return {"cells": len(res.cells)}


def cmd_sweep_grid(cfg: dict, out: Path) -> dict:
    spec = _sweep_common(cfg, [PriceSource.trend(pl, ps) for pl in _floats(cfg["p_l_list"])
                               for ps in _floats(cfg["p_s_list"])])
    res = sweep(spec, cfg["workers"])
    res.to_csv(out / "grid.csv")
    return {"cells": len(res.cells)}


def cmd_sweep_memory(cfg: dict, out: Path) -> dict:
    memories = _ints(cfg["t_list"])
    if cfg.get("input"):
        sources = [PriceSource.file(cfg["input"], cfg["date_col"], cfg["close_col"])]
    elif cfg.get("p_up_list"):
        sources = [PriceSource.walk(p) for p in _floats(cfg["p_up_list"])]
    elif cfg.get("p_l_list") or cfg.get("p_s_list"):
        if not (cfg.get("p_l_list") and cfg.get("p_s_list")):
            raise ValueError("--p-l-list and --p-s-list go together")
        sources = [PriceSource.trend(pl, ps) for pl in _floats(cfg["p_l_list"]) for ps in _floats(cfg["p_s_list"])]
    else:
        sources = [PriceSource.trend(pl, ps) for pl, ps in PROBE_CELLS]
    schemes, groups = memory_groups(memories)
    res = sweep(_sweep_common(cfg, sources, groups, schemes), cfg["workers"])
    res.to_csv(out / "grid.csv")
    return {"cells": len(res.cells), "winner_agreement": {str(T): winner_agreement(res, T) for T in memories}}


def cmd_estimate(cfg: dict, out: Path) -> dict:
    if not cfg.get("input"):
        raise ValueError("estimate needs --input")
    series = load_series_csv(cfg["input"], cfg["date_col"], cfg["close_col"], min_rows=cfg["order"] + 2)
    est = estimate_table(series, cfg["order"])
    rows = est.as_rows()
    with (out / "estimate.csv").open("w") as fh:
        fh.write("pattern,count,ups,p_up\n")
        for r in rows:
            fh.write(f"{r['pattern']},{r['count']},{r['ups']},{fmt_num(r['p_up'])}\n")
    for r in rows:
        print(f"p_up({r['pattern']}) = {r['p_up']:.4f}  (n={r['count']})")
    if est.undefined:
        print(f"undefined patterns: {', '.join(est.undefined)}")
    return {"estimate": rows, "undefined": est.undefined, "price_source": series.provenance}


def cmd_gen_price(cfg: dict, out: Path) -> dict:
    series = generate(_generated_table(cfg), cfg["steps"], cfg["p0"], price_rng(cfg["seed"]))
    write_series_csv(series, out / "prices.csv")
    return {"price_source": series.provenance}


HANDLERS: dict[str, Callable[[dict, Path], dict]] = {
    "run": cmd_run, "sweep-walk": cmd_sweep_walk, "sweep-grid": cmd_sweep_grid,
    "sweep-memory": cmd_sweep_memory, "estimate": cmd_estimate, "gen-price": cmd_gen_price,
}


def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        result = HANDLERS[args.command](cfg, out)
        _write_json(out / "summary.json", {"command": args.command, "config": _echo(cfg), "version": __version__,
                                           **result})
        _write_json(out / "timing.json", {"wall_seconds": round(time.perf_counter() - started, 3),
                                          "workers": cfg.get("workers", 1)})
    except (ValueError, OSError, RuntimeError, SeriesLoadError) as exc:
        print(f"exomarket {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
