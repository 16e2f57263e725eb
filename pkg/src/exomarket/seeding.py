"""Counter-based random streams.

Every random quantity an agent population needs (strategy tables, the
initial market history, tie-break keys) is a pure function of a 64-bit run
key and an integer coordinate tuple, computed with the SplitMix64 finalizer.
This makes a run independent of evaluation order: agent ``i`` in a
1000-agent run owns exactly the same strategies as agent ``i`` in a
10-agent run with the same key.

Price generation uses ``numpy.random.Generator`` (PCG64) seeded through
``numpy.random.SeedSequence``; see :func:`price_rng`.
"""
from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

TAG_TABLE = 1
TAG_HISTORY = 2
TAG_TIE = 3

_MASK64 = (1 << 64) - 1


def _mix(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def counter_hash(key: int, *coords) -> np.ndarray:
    """Hash ``key`` and broadcastable integer coordinates to uint64 words."""
    with np.errstate(over="ignore"):
        h = _mix(np.atleast_1d(np.uint64(key & _MASK64)) + _GAMMA)
        for c in coords:
            c = np.asarray(c).astype(np.uint64)
            h = _mix((h ^ c) * _GAMMA + _GAMMA)
    return h


def strategy_tables(key: int, n_agents: int, s: int, m: int) -> np.ndarray:
    """Draw ``(n_agents, s, 2**m)`` strategy tables with entries in {-1, 0, 1}.

    Entries are independent and uniform; strategies of one agent may coincide.
    """
    agent = np.arange(n_agents).reshape(-1, 1, 1)
    strat = np.arange(s).reshape(1, -1, 1)
    entry = np.arange(2**m).reshape(1, 1, -1)
    h = counter_hash(key, TAG_TABLE, agent, strat, entry)
    return (h % np.uint64(3)).astype(np.int8) - 1


def initial_history(key: int, m: int) -> list[int]:
    h = counter_hash(key, TAG_HISTORY, np.arange(m))
    return [int(b) for b in (h & np.uint64(1))]


def tie_draws(key: int, t: int, agents: np.ndarray) -> np.ndarray:
    """One uint64 word per agent for breaking score ties at step ``t``.

    Words for agent ``i`` are the ``i``-th outputs of a SplitMix64 stream whose
    state is derived from (key, t).
    """
    base = counter_hash(key, TAG_TIE, t)[0]
    with np.errstate(over="ignore"):
        return _mix(base + (np.asarray(agents, dtype=np.uint64) + np.uint64(1)) * _GAMMA)


def pick_tied(draws: np.ndarray, n_tied: np.ndarray) -> np.ndarray:
    """Rank, among the tied maximizers, of the one to pick: draw mod n_tied."""
    return (draws % n_tied.astype(np.uint64)).astype(np.int64)


def derive_key(*parts: int) -> int:
    """Fold integers into a single 64-bit run key (used for per-sample agent keys)."""
    seq = np.random.SeedSequence([int(p) & _MASK64 for p in parts])
    lo, hi = seq.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def price_rng(*parts: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(p) & _MASK64 for p in parts])))
