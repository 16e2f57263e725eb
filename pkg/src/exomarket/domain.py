"""Market vocabulary: actions, histories, strategies and agent bookkeeping.

Scalar functions here are the reference definitions; the ``*_array`` variants
are their vectorized counterparts used by the engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SELL, ABSTAIN, BUY = -1, 0, 1
ACTIONS = (SELL, ABSTAIN, BUY)


class InvalidPriceError(ValueError):
    """A price that is zero or negative reached the market."""


def history_index(bits: Sequence[int]) -> int:
    """Read an m-bit history (oldest first) as an integer, newest bit least significant."""
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx


def history_update(history: Sequence[int], rose: int) -> list[int]:
    if rose not in (0, 1):
        raise ValueError(f"history bit must be 0 or 1, got {rose!r}")
    return list(history[1:]) + [int(rose)]


@dataclass(frozen=True)
class Strategy:
    """Lookup table from each of the 2**m histories to an action."""

    table: tuple[int, ...]

    def __post_init__(self):
        n = len(self.table)
        if n == 0 or n & (n - 1):
            raise ValueError(f"table length must be a power of two, got {n}")
        if any(a not in ACTIONS for a in self.table):
            raise ValueError("table entries must be -1, 0 or 1")

    @property
    def m(self) -> int:
        return len(self.table).bit_length() - 1

    def suggest(self, history: Sequence[int]) -> int:
        return strategy_suggest(self, history)


def strategy_suggest(strategy: Strategy, history: Sequence[int]) -> int:
    if len(history) != strategy.m:
        raise ValueError(f"history has {len(history)} bits, strategy expects {strategy.m}")
    return strategy.table[history_index(history)]


def position_limit(wealth: float, price: float) -> float:
    """Largest admissible |position|: max(w / P, 0)."""
    if not price > 0:
        raise InvalidPriceError(f"price must be positive, got {price!r}")
    return max(wealth / price, 0.0)


def constrain_action(position: int, limit: float, action: int) -> int:
    """Replace an action that pushes the position further past +-limit with abstention."""
    if action == BUY and position >= limit:
        return ABSTAIN
    if action == SELL and position <= -limit:
        return ABSTAIN
    return action


def apply_trade(cash: float, position: int, action: int, next_price: float) -> tuple[float, int]:
    """Settle one action at the next price."""
    return cash - action * next_price, position + action


def wealth(cash: float, position: int, price: float) -> float:
    return cash + position * price


def position_limit_array(wealth: np.ndarray, price: float) -> np.ndarray:
    if not price > 0:
        raise InvalidPriceError(f"price must be positive, got {price!r}")
    return np.maximum(wealth / price, 0.0)


def constrain_action_array(position: np.ndarray, limit: np.ndarray, action: np.ndarray) -> np.ndarray:
    blocked = ((action == BUY) & (position >= limit)) | ((action == SELL) & (position <= -limit))
    return action * ~blocked


@dataclass
class AgentState:
    """One agent: cash, position, its score trackers and the strategy in use.

    ``wealth`` is carried alongside cash and position and advanced with
    w(t+1) = w(t) + k(t) * dP, which makes it comparable bit-for-bit with a
    wealth-game score. ``cash + position * price`` is the independent check.
    """

    cash: float
    position: int
    wealth: float
    trackers: list = field(default_factory=list)
    selected: int = 0

    def __post_init__(self):
        if self.trackers and not 0 <= self.selected < len(self.trackers):
            raise ValueError("selected strategy index out of range")
