"""Compiled whole-run loop used by :func:`exomarket.engine.run`.

Performs exactly the arithmetic of :func:`exomarket.engine.step_market`,
agent by agent, so per-agent wealth, positions and selections agree bit for
bit with the stepwise path (tests enforce this).
"""
from __future__ import annotations

import numba as nb
import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

KIND_WG, KIND_MING, KIND_MAJG = 0, 1, 2


@nb.njit(cache=True, inline="always")
def _mix(x):
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _limit(w, price):
    k = w / price
    return k if k > 0.0 else 0.0


@nb.njit(cache=True, inline="always")
def _constrain(k, limit, a):
    if a == 1 and k >= limit:
        return 0
    if a == -1 and k <= -limit:
        return 0
    return a


@nb.njit(cache=True)
def simulate(prices, tables, mu0, m, kinds, memories, w0, tie_bases, constrain_all, check,
             wealth_sum, switch_out, sel_out, record_sel):
    """Run all populations over ``prices``.

    ``tie_bases[t]`` is the per-step stream state used for tie draws.
    ``wealth_sum`` (L, P) accumulates wealth over agents in index order;
    ``switch_out`` (L, P) receives switch counts. Returns the final
    (cash, position, wealth) arrays, the max relative wealth-identity error
    and the number of constraint violations.
    """
    L = prices.shape[0]
    N, s, _ = tables.shape
    P = kinds.shape[0]
    hmask = (1 << m) - 1

    vw = np.full((N, s), w0)
    vk = np.zeros((N, s), dtype=np.int64)
    u = np.empty((P, N, s))
    u0 = np.empty(P)
    # finite-memory populations share one flat ring buffer, T + 1 rows each
    offset = np.zeros(P, dtype=np.int64)
    rows = 0
    for p in range(P):
        u0[p] = w0 if kinds[p] == KIND_WG else 0.0
        offset[p] = rows
        if memories[p] > 0:
            rows += memories[p] + 1
    for p in range(P):
        for i in range(N):
            for j in range(s):
                u[p, i, j] = u0[p]
    ring = np.empty((max(rows, 1), N, s))
    for p in range(P):
        if memories[p] > 0:
            ring[offset[p]] = u[p]
    cash = np.full((P, N), w0)
    pos = np.zeros((P, N), dtype=np.int64)
    wealth = np.full((P, N), w0)
    sel = np.zeros((P, N), dtype=np.int64)
    sugg = np.empty(s, dtype=np.int64)
    eff_act = np.empty(s, dtype=np.int64)
    eff = np.empty(s)

    max_err = 0.0
    violations = 0
    mu = mu0
    for t in range(L):
        last = t == L - 1
        price = prices[t]
        nxt = prices[t + 1] if not last else price
        dp = nxt - price
        draw_base = tie_bases[t]
        for i in range(N):
            draw = _mix(draw_base + np.uint64(i + 1) * _GAMMA)
            for j in range(s):
                sugg[j] = tables[i, j, mu]
                eff_act[j] = _constrain(vk[i, j], _limit(vw[i, j], price), sugg[j])
            for p in range(P):
                T = memories[p]
                for j in range(s):
                    e = u[p, i, j]
                    if T > 0:
                        if t >= T:
                            e = e - ring[offset[p] + (t - T) % (T + 1), i, j]
                        else:
                            e = e - u0[p]
                    eff[j] = e
                best = eff[0]
                choice = 0
                n_best = 1
                for j in range(1, s):
                    if eff[j] > best:
                        best = eff[j]
                        choice = j
                        n_best = 1
                    elif eff[j] == best:
                        n_best += 1
                if n_best > 1:
                    rank = draw % np.uint64(n_best)
                    seen = np.uint64(0)
                    for j in range(s):
                        if eff[j] == best:
                            if seen == rank:
                                choice = j
                                break
                            seen += np.uint64(1)
                if choice != sel[p, i]:
                    switch_out[t, p] += 1
                sel[p, i] = choice
                if record_sel:
                    sel_out[t, p, i] = choice
                if last:
                    continue

                k = pos[p, i]
                a = _constrain(k, _limit(wealth[p, i], price), sugg[choice])
                if check:
                    lim = _limit(cash[p, i] + k * price, price)
                    if (a == 1 and k >= lim) or (a == -1 and k <= -lim):
                        violations += 1
                cash[p, i] = cash[p, i] - a * nxt
                wealth[p, i] = wealth[p, i] + k * dp
                pos[p, i] = k + a
                wealth_sum[t + 1, p] += wealth[p, i]
                if check:
                    direct = cash[p, i] + pos[p, i] * nxt
                    scale = abs(cash[p, i]) + abs(pos[p, i]) * nxt
                    if scale < 1.0:
                        scale = 1.0
                    err = abs(direct - wealth[p, i]) / scale
                    if err > max_err:
                        max_err = err

                kind = kinds[p]
                for j in range(s):
                    if kind == KIND_WG:
                        u[p, i, j] = vw[i, j] + vk[i, j] * dp
                    else:
                        a_s = eff_act[j] if constrain_all else sugg[j]
                        if kind == KIND_MING:
                            u[p, i, j] = u[p, i, j] - a_s * dp
                        else:
                            u[p, i, j] = u[p, i, j] + a_s * dp
                    if T > 0:
                        ring[offset[p] + (t + 1) % (T + 1), i, j] = u[p, i, j]
            if not last:
                for j in range(s):
                    vw[i, j] = vw[i, j] + vk[i, j] * dp
                    vk[i, j] = vk[i, j] + eff_act[j]
        if not last:
            mu = ((mu << 1) | (1 if nxt > price else 0)) & hmask
    return cash, pos, wealth, max_err, violations
