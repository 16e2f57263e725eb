"""Simulation loop: agent populations, one per scheme, trading against a fixed price path.

All populations share the price path, the market history and, agent for
agent, the same strategy tables and tie-break keys (common random numbers).
Since prices are exogenous, populations never interact; a population's
results do not depend on which other populations run beside it.

Per step ``t`` with prices P(t) -> P(t+1):

1. every strategy's raw suggestion is looked up for the current history;
2. each suggestion is constrained against the strategy's virtual wealth and
   position, giving its effective action;
3. each agent picks its best strategy by (effective) score, ties broken by
   counter-based keys; a change of index counts as a switch;
4. the chosen raw suggestion passes the agent's own position limit;
5. trades settle at P(t+1);
6. scores, virtual wealth and virtual positions advance;
7. the history bit (1 iff P(t+1) > P(t)) is appended.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernel, seeding
from .domain import InvalidPriceError, constrain_action_array, position_limit_array
from .prices import PriceSeries, fmt_num
from .schemes import MAJG, MING, WG, SchemeKind, initial_score, parse_schemes

DEFAULT_SCHEMES = (SchemeKind(WG), SchemeKind(MING), SchemeKind(MAJG))
_KIND_CODES = {WG: _kernel.KIND_WG, MING: _kernel.KIND_MING, MAJG: _kernel.KIND_MAJG}


@dataclass
class SimConfig:
    n_agents: int = 1000
    m: int = 2
    s: int = 2
    schemes: tuple = DEFAULT_SCHEMES
    wealth_multiplier: float = 5.0
    seed: int = 0
    # False scores MinG/MajG strategies on raw suggestions instead of constrained ones
    constrain_all: bool = True

    def __post_init__(self):
        self.schemes = parse_schemes(self.schemes)
        if self.n_agents < 1 or self.m < 1 or self.s < 1:
            raise ValueError("n_agents, m and s must all be >= 1")
        if not self.wealth_multiplier > 0:
            raise ValueError("wealth_multiplier must be positive")
        if not self.schemes:
            raise ValueError("at least one scheme is required")
        labels = [sc.label for sc in self.schemes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate schemes in {labels}")

    @property
    def labels(self) -> list[str]:
        return [sc.label for sc in self.schemes]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schemes"] = self.labels
        return d


@dataclass
class MarketState:
    cfg: SimConfig
    tables: np.ndarray  # (N, s, 2**m) int8
    mu: int  # current history as integer, oldest bit most significant
    virtual_wealth: np.ndarray  # (N, s)
    virtual_position: np.ndarray  # (N, s) int64
    scores: np.ndarray  # (P, N, s)
    score_rings: dict  # population index -> (T + 1, N, s) ring of past scores
    initial_scores: np.ndarray  # (P, N, s)
    cash: np.ndarray  # (P, N)
    position: np.ndarray  # (P, N) int64
    wealth: np.ndarray  # (P, N), advanced incrementally
    selected: np.ndarray  # (P, N) int64
    t: int = 0

    @property
    def history(self) -> list[int]:
        m = self.cfg.m
        return [(self.mu >> (m - 1 - j)) & 1 for j in range(m)]

    def effective_scores(self) -> np.ndarray:
        eff = self.scores.copy()
        for p, ring in self.score_rings.items():
            T = ring.shape[0] - 1
            base = ring[(self.t - T) % (T + 1)] if self.t >= T else self.initial_scores[p]
            eff[p] -= base
        return eff


@dataclass
class StepMetrics:
    avg_wealth: np.ndarray  # (P,) after settlement
    n_switch: np.ndarray  # (P,) switches made when choosing at t
    max_rel_error: float = 0.0
    violations: int = 0


def init_market(cfg: SimConfig, p0: float) -> MarketState:
    if not p0 > 0:
        raise InvalidPriceError(f"initial price must be positive, got {p0}")
    N, s, P = cfg.n_agents, cfg.s, len(cfg.schemes)
    w0 = cfg.wealth_multiplier * p0
    u0 = np.empty((P, N, s))
    for p, sc in enumerate(cfg.schemes):
        u0[p] = initial_score(sc.kind, w0)
    rings = {}
    for p, sc in enumerate(cfg.schemes):
        if sc.finite:
            ring = np.empty((sc.memory + 1, N, s))
            ring[0] = u0[p]
            rings[p] = ring
    hist = seeding.initial_history(cfg.seed, cfg.m)
    mu = 0
    for b in hist:
        mu = (mu << 1) | b
    return MarketState(
        cfg=cfg,
        tables=seeding.strategy_tables(cfg.seed, N, s, cfg.m),
        mu=mu,
        virtual_wealth=np.full((N, s), w0),
        virtual_position=np.zeros((N, s), dtype=np.int64),
        scores=u0.copy(),
        score_rings=rings,
        initial_scores=u0,
        cash=np.full((P, N), w0),
        position=np.zeros((P, N), dtype=np.int64),
        wealth=np.full((P, N), w0),
        selected=np.zeros((P, N), dtype=np.int64),
    )


def select(state: MarketState) -> np.ndarray:
    """Choose each agent's best strategy at the current step; returns switch counts per population."""
    s = state.cfg.s
    if s == 1:
        return np.zeros(len(state.cfg.schemes), dtype=np.int64)
    eff = state.effective_scores()
    # strategy axis is short, so loop over it instead of reducing along it
    best = eff[:, :, 0].copy()
    sel = np.zeros(best.shape, dtype=np.int64)
    for j in range(1, s):
        better = eff[:, :, j] > best
        sel[better] = j
        np.maximum(best, eff[:, :, j], out=best)
    is_best = [eff[:, :, j] == best for j in range(s)]
    n_best = sum(b.astype(np.int64) for b in is_best)
    tied = n_best > 1  # (P, N)
    if tied.any():
        rank = seeding.pick_tied(seeding.tie_draws(state.cfg.seed, state.t, np.arange(state.cfg.n_agents)),
                                 np.maximum(n_best, 1))
        seen = np.zeros_like(n_best)
        for j in range(s):
            hit = tied & is_best[j] & (seen == rank)
            sel[hit] = j
            seen += is_best[j]
    n_switch = (sel != state.selected).sum(axis=1)
    state.selected = sel
    return n_switch


def step_market(state: MarketState, price: float, next_price: float, check: bool = False) -> StepMetrics:
    cfg = state.cfg
    if not (price > 0 and next_price > 0):
        raise InvalidPriceError(f"non-positive price at step {state.t}: {price} -> {next_price}")
    dp = next_price - price

    suggestions = state.tables[:, :, state.mu].astype(np.int64)  # (N, s)
    k_limit = position_limit_array(state.virtual_wealth, price)
    effective = constrain_action_array(state.virtual_position, k_limit, suggestions)

    n_switch = select(state)

    chosen = np.take_along_axis(suggestions[None], state.selected[:, :, None], axis=2)[:, :, 0]
    limit = position_limit_array(state.wealth, price)
    action = constrain_action_array(state.position, limit, chosen)

    metrics_err, violations = 0.0, 0
    if check:
        direct = state.cash + state.position * price
        limit_direct = position_limit_array(direct, price)
        violations = int(np.count_nonzero(((action == 1) & (state.position >= limit_direct))
                                          | ((action == -1) & (state.position <= -limit_direct))))

    state.cash = state.cash - action * next_price
    state.wealth = state.wealth + state.position * dp
    state.position = state.position + action

    state.virtual_wealth = state.virtual_wealth + state.virtual_position * dp
    state.virtual_position = state.virtual_position + effective
    for p, sc in enumerate(cfg.schemes):
        if sc.kind == WG:
            state.scores[p] = state.virtual_wealth
        else:
            scored = effective if cfg.constrain_all else suggestions
            if sc.kind == MING:
                state.scores[p] -= scored * dp
            else:
                state.scores[p] += scored * dp

    state.t += 1
    for p, ring in state.score_rings.items():
        ring[state.t % ring.shape[0]] = state.scores[p]
    state.mu = ((state.mu << 1) | int(next_price > price)) & ((1 << cfg.m) - 1)

    if check:
        direct = state.cash + state.position * next_price
        scale = np.abs(state.cash) + np.abs(state.position) * next_price
        metrics_err = float(np.max(np.abs(direct - state.wealth) / np.maximum(scale, 1.0)))
    return StepMetrics(state.wealth.mean(axis=1), n_switch, metrics_err, violations)


@dataclass
class RunRecord:
    prices: np.ndarray
    labels: list[str]
    avg_wealth: np.ndarray  # (L, P)
    n_switch: np.ndarray  # (L, P)
    selections: Optional[np.ndarray] = None  # (L, P, N) when recorded
    diagnostics: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict, repr=False)  # per-agent end state, (P, N) arrays

    def wealth_of(self, label: str) -> np.ndarray:
        return self.avg_wealth[:, self.labels.index(label)]

    def switches_of(self, label: str) -> np.ndarray:
        return self.n_switch[:, self.labels.index(label)]

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["t", "P"]
            for lab in self.labels:
                header += [f"{lab}_w", f"{lab}_n_switch"]
            w.writerow(header)
            for t, price in enumerate(self.prices):
                row = [t, fmt_num(price)]
                for p in range(len(self.labels)):
                    row += [fmt_num(self.avg_wealth[t, p]), int(self.n_switch[t, p])]
                w.writerow(row)

    def summary(self) -> dict:
        final = self.avg_wealth[-1]
        return {
            "steps": int(self.prices.size - 1),
            "final_avg_wealth": {lab: float(final[p]) for p, lab in enumerate(self.labels)},
            "mean_switchers": {lab: float(self.n_switch[1:, p].mean()) if self.prices.size > 1 else 0.0
                               for p, lab in enumerate(self.labels)},
            **({"diagnostics": self.diagnostics} if self.diagnostics else {}),
        }


def run(cfg: SimConfig, series: PriceSeries | Sequence[float], check: bool = False,
        record_selections: bool = False) -> RunRecord:
    """Run every population of ``cfg`` over the whole series.

    With ``check`` the wealth identity and constraint safety are verified at
    every step; a violation raises ``AssertionError``.
    """
    prices = series.prices if isinstance(series, PriceSeries) else np.asarray(series, dtype=np.float64)
    L = prices.size
    if L < cfg.m + 2:
        raise ValueError(f"series of length {L} too short for m={cfg.m}")
    if not np.all(prices > 0):
        raise InvalidPriceError("price series contains non-positive prices")
    P, N = len(cfg.schemes), cfg.n_agents
    w0 = cfg.wealth_multiplier * float(prices[0])
    mu0 = 0
    for b in seeding.initial_history(cfg.seed, cfg.m):
        mu0 = (mu0 << 1) | b
    kinds = np.array([_KIND_CODES[sc.kind] for sc in cfg.schemes], dtype=np.int64)
    memories = np.array([sc.memory or 0 for sc in cfg.schemes], dtype=np.int64)
    tie_bases = seeding.counter_hash(cfg.seed, seeding.TAG_TIE, np.arange(L))
    wealth_sum = np.zeros((L, P))
    nsw = np.zeros((L, P), dtype=np.int64)
    sels = np.zeros((L, P, N) if record_selections else (1, 1, 1), dtype=np.int8)
    cash, pos, wealth, max_err, violations = _kernel.simulate(
        prices, seeding.strategy_tables(cfg.seed, N, cfg.s, cfg.m), mu0, cfg.m, kinds, memories, w0,
        tie_bases, cfg.constrain_all, check, wealth_sum, nsw, sels, record_selections)
    avg = wealth_sum / N
    avg[0] = w0
    diagnostics = {}
    if check:
        diagnostics = {"max_rel_wealth_error": float(max_err), "constraint_violations": int(violations)}
        if violations or max_err > 1e-9:
            raise AssertionError(f"invariant violated: {diagnostics}")
    return RunRecord(prices, cfg.labels, avg, nsw, sels if record_selections else None, diagnostics,
                     final={"cash": cash, "position": pos, "wealth": wealth})


def run_stepwise(cfg: SimConfig, series: PriceSeries | Sequence[float], check: bool = False) -> RunRecord:
    """Same as :func:`run` but driven through :func:`step_market`; slower, used as a cross-check."""
    prices = series.prices if isinstance(series, PriceSeries) else np.asarray(series, dtype=np.float64)
    L = prices.size
    if L < cfg.m + 2:
        raise ValueError(f"series of length {L} too short for m={cfg.m}")
    P = len(cfg.schemes)
    state = init_market(cfg, float(prices[0]))
    avg = np.empty((L, P))
    nsw = np.zeros((L, P), dtype=np.int64)
    sels = np.empty((L, P, cfg.n_agents), dtype=np.int8)
    avg[0] = state.wealth.mean(axis=1)
    max_err, violations = 0.0, 0
    plist = prices.tolist()
    for t in range(L - 1):
        m = step_market(state, plist[t], plist[t + 1], check=check)
        avg[t + 1] = m.avg_wealth
        nsw[t] = m.n_switch
        sels[t] = state.selected
        max_err = max(max_err, m.max_rel_error)
        violations += m.violations
    nsw[L - 1] = select(state)
    sels[L - 1] = state.selected
    diagnostics = {"max_rel_wealth_error": max_err, "constraint_violations": violations} if check else {}
    return RunRecord(prices, cfg.labels, avg, nsw, sels, diagnostics,
                     final={"cash": state.cash, "position": state.position, "wealth": state.wealth})
