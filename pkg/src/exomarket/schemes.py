"""Strategy evaluation schemes and best-strategy selection.

Three score rules are supported, each with infinite or finite (last ``T``
steps) score memory:

* ``WG``   wealth game, u += k_virtual * dP, where the virtual position follows
  the strategy's own constrained actions;
* ``MinG`` minority game, u -= a * dP;
* ``MajG`` majority game, u += a * dP.

Finite-memory variants (DWG, DMinG, DMajG) rank strategies by u(t) - u(t - T).
"""
from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .domain import constrain_action, position_limit

WG, MING, MAJG = "WG", "MinG", "MajG"
KINDS = (WG, MING, MAJG)

_LABEL = re.compile(r"^(D?)(WG|MinG|MajG)(?::(\d+))?$", re.IGNORECASE)


@dataclass(frozen=True)
class SchemeKind:
    kind: str
    memory: Optional[int] = None  # None means infinite score memory

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.memory is not None and self.memory < 1:
            raise ValueError(f"score memory must be >= 1, got {self.memory}")

    @property
    def finite(self) -> bool:
        return self.memory is not None

    @property
    def label(self) -> str:
        return self.kind if self.memory is None else f"D{self.kind}:{self.memory}"

    @classmethod
    def parse(cls, text: str) -> "SchemeKind":
        """Parse ``WG``, ``MinG``, ``MajG`` or ``DWG:100``-style labels."""
        match = _LABEL.match(text.strip())
        if not match:
            raise ValueError(f"cannot parse scheme {text!r}; expected e.g. WG, DMinG:100")
        delta, kind, memory = match.groups()
        kind = {k.lower(): k for k in KINDS}[kind.lower()]
        if bool(delta) != (memory is not None):
            raise ValueError(f"scheme {text!r}: a D-prefix requires ':T' and vice versa")
        return cls(kind, int(memory) if memory else None)

    def __str__(self):
        return self.label


def parse_schemes(text: str | Sequence[str]) -> tuple[SchemeKind, ...]:
    items = text.split(",") if isinstance(text, str) else list(text)
    return tuple(s if isinstance(s, SchemeKind) else SchemeKind.parse(s) for s in items if str(s).strip())


def initial_score(kind: str, initial_wealth: float) -> float:
    """WG scores start as a virtual wealth; MinG/MajG scores start at zero."""
    return float(initial_wealth) if kind == WG else 0.0


@dataclass
class ScoreTracker:
    """Score state of one strategy held by one agent.

    ``virtual_wealth`` is the wealth of always following the strategy (its WG
    score). The constraint applied to the strategy's suggestions reads it
    regardless of the scheme, so every scheme scores the same effective actions.
    """

    u: float
    virtual_position: int = 0
    virtual_wealth: float = 0.0
    memory: Optional[int] = None
    score_history: deque = field(default=None, repr=False)

    def __post_init__(self):
        if self.memory is not None and self.score_history is None:
            self.score_history = deque([self.u], maxlen=self.memory + 1)

    @classmethod
    def fresh(cls, scheme: SchemeKind, initial_wealth: float) -> "ScoreTracker":
        return cls(u=initial_score(scheme.kind, initial_wealth), virtual_wealth=float(initial_wealth),
                   memory=scheme.memory)

    def copy(self) -> "ScoreTracker":
        hist = None if self.score_history is None else deque(self.score_history, maxlen=self.score_history.maxlen)
        return replace(self, score_history=hist)


def effective_action(tracker: ScoreTracker, suggestion: int, price: float) -> int:
    return constrain_action(tracker.virtual_position, position_limit(tracker.virtual_wealth, price), suggestion)


def ming_update(u: float, action: int, dp: float) -> float:
    return u - action * dp


def majg_update(u: float, action: int, dp: float) -> float:
    return u + action * dp


def wg_update(tracker: ScoreTracker, suggestion: int, price: float, next_price: float) -> tuple[ScoreTracker, int]:
    """Advance a wealth-game tracker by one step.

    Returns the updated tracker and the strategy's effective action.
    """
    tr = tracker.copy()
    a_eff = effective_action(tr, suggestion, price)
    tr.u = tr.u + tr.virtual_position * (next_price - price)
    tr.virtual_wealth = tr.u
    tr.virtual_position += a_eff
    _push(tr)
    return tr, a_eff


def advance(tracker: ScoreTracker, kind: str, suggestion: int, price: float, next_price: float,
            constrain: bool = True) -> tuple[ScoreTracker, int]:
    """One score step for any scheme; ``constrain=False`` scores raw MinG/MajG suggestions."""
    if kind == WG:
        return wg_update(tracker, suggestion, price, next_price)
    tr = tracker.copy()
    a_eff = effective_action(tr, suggestion, price) if constrain else suggestion
    dp = next_price - price
    tr.u = ming_update(tr.u, a_eff, dp) if kind == MING else majg_update(tr.u, a_eff, dp)
    tr.virtual_wealth = tr.virtual_wealth + tr.virtual_position * dp
    tr.virtual_position += a_eff
    _push(tr)
    return tr, a_eff


def _push(tr: ScoreTracker) -> None:
    if tr.score_history is not None:
        tr.score_history.append(tr.u)


def effective_score(tracker: ScoreTracker) -> float:
    """u(t) for infinite memory, else u(t) - u(max(t - T, 0))."""
    if tracker.memory is None:
        return tracker.u
    return tracker.u - tracker.score_history[0]


def select_strategy(scores: Sequence[float], prev: int, rng: np.random.Generator) -> int:
    """Index of the best score, ties broken uniformly at random.

    ``prev`` is the index used last step; the caller records a switch when the
    returned index differs from it.
    """
    if len(scores) == 0:
        raise ValueError("no strategies to select from")
    best = max(scores)
    if math.isnan(best):
        raise ValueError("NaN score")
    winners = [i for i, u in enumerate(scores) if u == best]
    if len(winners) == 1:
        return winners[0]
    return winners[int(rng.integers(len(winners)))]
