import numpy as np
import pytest

from exomarket import seeding
from exomarket.domain import AgentState, Strategy, apply_trade, constrain_action, history_update, position_limit
from exomarket.engine import SimConfig, init_market, run, run_stepwise, select, step_market
from exomarket.prices import PriceSeries, TrendParams, generate, table_from_trend, walk_table
from exomarket.schemes import (WG, SchemeKind, ScoreTracker, advance, effective_score, parse_schemes)
from exomarket.seeding import price_rng


def reference_run(cfg: SimConfig, prices):
    """Agent-by-agent simulation using only the scalar reference operations.

    Tie-breaks consume the same counter-based draws as the engine.
    """
    prices = [float(p) for p in prices]
    tables = seeding.strategy_tables(cfg.seed, cfg.n_agents, cfg.s, cfg.m)
    strategies = [[Strategy(tuple(int(x) for x in tables[i, j])) for j in range(cfg.s)]
                  for i in range(cfg.n_agents)]
    w0 = cfg.wealth_multiplier * prices[0]
    pops = [[AgentState(w0, 0, w0, [ScoreTracker.fresh(sc, w0) for _ in range(cfg.s)])
             for _ in range(cfg.n_agents)] for sc in cfg.schemes]
    history = seeding.initial_history(cfg.seed, cfg.m)
    selections, wealth = [], []
    for t in range(len(prices)):
        draws = seeding.tie_draws(cfg.seed, t, np.arange(cfg.n_agents))
        sel_t = []
        for sc, agents in zip(cfg.schemes, pops):
            row = []
            for i, ag in enumerate(agents):
                scores = [effective_score(tr) for tr in ag.trackers]
                best = max(scores)
                tied = [j for j, u in enumerate(scores) if u == best]
                ag.selected = tied[int(draws[i] % np.uint64(len(tied)))]
                row.append(ag.selected)
            sel_t.append(row)
        selections.append(sel_t)
        if t == len(prices) - 1:
            break
        p, p_next = prices[t], prices[t + 1]
        for sc, agents in zip(cfg.schemes, pops):
            for i, ag in enumerate(agents):
                sugg = [strategies[i][j].suggest(history) for j in range(cfg.s)]
                a = constrain_action(ag.position, position_limit(ag.wealth, p), sugg[ag.selected])
                ag.wealth = ag.wealth + ag.position * (p_next - p)
                ag.cash, ag.position = apply_trade(ag.cash, ag.position, a, p_next)
                ag.trackers = [advance(tr, sc.kind, sugg[j], p, p_next, constrain=cfg.constrain_all)[0]
                               for j, tr in enumerate(ag.trackers)]
        history = history_update(history, int(p_next > p))
        wealth.append([[ag.wealth for ag in agents] for agents in pops])
    return np.array(selections), np.array(wealth), pops


@pytest.mark.parametrize("schemes, constrain_all, s", [
    ("WG,MinG,MajG", True, 2),
    ("WG,MinG,MajG", False, 2),
    ("DWG:7,DMinG:3,DMajG:40", True, 3),
])
def test_engine_matches_scalar_reference(schemes, constrain_all, s):
    series = generate(table_from_trend(TrendParams(0.3, -0.2)), 150, 1000, price_rng(4))
    cfg = SimConfig(n_agents=12, m=2, s=s, schemes=schemes, seed=99, constrain_all=constrain_all,
                    wealth_multiplier=2.0)
    sels, wealth, pops = reference_run(cfg, series.prices)
    rec = run(cfg, series, record_selections=True, check=True)
    assert np.array_equal(rec.selections, sels)
    assert np.array_equal(rec.final["wealth"], wealth[-1])
    assert np.array_equal(rec.final["cash"], [[ag.cash for ag in agents] for agents in pops])
    assert np.array_equal(rec.final["position"], [[ag.position for ag in agents] for agents in pops])
    np.testing.assert_allclose(rec.avg_wealth[1:], wealth.mean(axis=2), rtol=1e-14)


def test_engine_matches_reference_on_fractional_prices():
    rng = np.random.default_rng(0)
    prices = 1000 * np.exp(np.cumsum(rng.normal(0, 0.01, 300)))
    cfg = SimConfig(n_agents=10, m=3, s=2, schemes="WG,MinG,MajG,DMinG:20", seed=5)
    sels, wealth, _ = reference_run(cfg, prices)
    rec = run(cfg, prices, record_selections=True)
    assert np.array_equal(rec.selections, sels)
    assert np.array_equal(rec.final["wealth"], wealth[-1])


def test_kernel_matches_stepwise():
    series = generate(table_from_trend(TrendParams(-0.2, 0.3)), 800, 1000, price_rng(2))
    cfg = SimConfig(n_agents=200, s=2, schemes="WG,MinG,MajG,DWG:50,DMinG:900", seed=17)
    a = run(cfg, series, record_selections=True, check=True)
    b = run_stepwise(cfg, series, check=True)
    assert np.array_equal(a.selections, b.selections)
    assert np.array_equal(a.n_switch, b.n_switch)
    for key in ("cash", "position", "wealth"):
        assert np.array_equal(a.final[key], b.final[key])
    np.testing.assert_allclose(a.avg_wealth, b.avg_wealth, rtol=1e-13)


def test_init_market_default_parameters():
    cfg = SimConfig(n_agents=2, m=2, s=2, wealth_multiplier=5)
    st = init_market(cfg, 1000.0)
    assert np.all(st.cash == 5000) and np.all(st.position == 0)
    assert np.all(st.scores[0] == 5000)  # WG
    assert np.all(st.scores[1:] == 0)  # MinG, MajG
    assert np.all(st.virtual_position == 0)
    assert len(st.history) == 2


def test_init_market_tiny_wealth_limit():
    cfg = SimConfig(n_agents=50, wealth_multiplier=0.0005)
    st = init_market(cfg, 1000.0)
    assert position_limit(st.wealth[0, 0], 1000.0) == pytest.approx(0.0005)
    # one unit may still be bought from zero (0 < K); afterwards the limit binds
    step_market(st, 1000.0, 1001.0)
    assert np.all(st.position <= 1) and np.all(st.position >= -1)
    before = st.position.copy()
    step_market(st, 1001.0, 1002.0)
    moved = st.position != before
    assert not np.any(moved & (before != 0) & (np.sign(st.position - before) == np.sign(before)))


def test_init_market_deterministic():
    cfg = SimConfig(n_agents=30, m=3, s=4, seed=2024)
    a, b = init_market(cfg, 1000.0), init_market(cfg, 1000.0)
    assert np.array_equal(a.tables, b.tables) and a.history == b.history
    c = init_market(SimConfig(n_agents=30, m=3, s=4, seed=2025), 1000.0)
    assert not np.array_equal(a.tables, c.tables)


def test_strategies_uniform():
    tables = seeding.strategy_tables(1, 20000, 2, 2)
    counts = np.bincount((tables + 1).ravel(), minlength=3)
    n = tables.size
    assert np.all(np.abs(counts - n / 3) <= 4 * np.sqrt(n * (1 / 3) * (2 / 3)))


def test_agents_are_prefix_stable():
    small = seeding.strategy_tables(7, 10, 2, 2)
    large = seeding.strategy_tables(7, 1000, 2, 2)
    assert np.array_equal(small, large[:10])


def _all_buy_config(**kw):
    cfg = SimConfig(n_agents=1, m=1, s=1, schemes="WG", **kw)
    return cfg


def test_hand_trace_all_buy():
    cfg = _all_buy_config()
    st = init_market(cfg, 1000.0)
    st.tables[:] = 1
    cash, pos, w = [5000.0], [0], [5000.0]
    for p, pn in [(1000.0, 1001.0), (1001.0, 1002.0)]:
        step_market(st, p, pn)
        cash.append(float(st.cash[0, 0]))
        pos.append(int(st.position[0, 0]))
        w.append(float(st.wealth[0, 0]))
    assert pos == [0, 1, 2]
    assert cash == [5000, 3999, 2997]
    assert w == [5000, 5000, 5001]


def test_single_agent_wealth_change_is_position_times_move():
    series = generate(walk_table(0.5), 500, 1000, price_rng(0))
    cfg = SimConfig(n_agents=1, s=1, schemes="WG,MinG,MajG", seed=3)
    st = init_market(cfg, series.prices[0])
    for p, pn in zip(series.prices[:-1], series.prices[1:]):
        k, w = st.position.copy(), st.wealth.copy()
        step_market(st, p, pn)
        assert np.array_equal(st.wealth, w + k * (pn - p))


def test_all_abstain_wealth_frozen():
    cfg = SimConfig(n_agents=20, s=2, seed=1)
    st = init_market(cfg, 1000.0)
    st.tables[:] = 0
    total = 0
    for p, pn in [(1000.0, 1001.0), (1001.0, 999.0), (999.0, 1003.0)]:
        m = step_market(st, p, pn)
        total += m.n_switch.sum()
        assert np.all(st.wealth == 5000) and np.all(st.position == 0)
    assert np.all(st.scores[1:] == 0)
    # all scores tie, so every switch here is tie-break churn
    assert total > 0


def test_s1_never_switches():
    series = generate(table_from_trend(TrendParams(0.1, 0.1)), 300, 1000, price_rng(1))
    rec = run(SimConfig(n_agents=50, s=1, seed=4), series)
    assert np.all(rec.n_switch == 0)


def test_switch_counts_bounded():
    series = generate(table_from_trend(TrendParams(0.1, 0.1)), 300, 1000, price_rng(1))
    rec = run(SimConfig(n_agents=50, s=3, seed=4), series)
    assert np.all((rec.n_switch >= 0) & (rec.n_switch <= 50))
    assert rec.n_switch.shape == rec.avg_wealth.shape == (301, 3)


def test_run_deterministic():
    series = generate(table_from_trend(TrendParams(0.3, 0.3)), 400, 1000, price_rng(9))
    cfg = SimConfig(n_agents=100, seed=8)
    a, b = run(cfg, series), run(cfg, series)
    assert a.avg_wealth.tobytes() == b.avg_wealth.tobytes()
    assert a.n_switch.tobytes() == b.n_switch.tobytes()


def test_schemes_decouple():
    series = generate(table_from_trend(TrendParams(0.3, -0.3)), 1000, 1000, price_rng(9))
    together = run(SimConfig(n_agents=200, seed=8, schemes="WG,MinG,MajG,DMajG:30"), series)
    for label in together.labels:
        alone = run(SimConfig(n_agents=200, seed=8, schemes=label), series)
        assert together.wealth_of(label).tobytes() == alone.wealth_of(label).tobytes()
        assert np.array_equal(together.switches_of(label), alone.switches_of(label))


def test_ascending_series_wealth_non_decreasing():
    prices = np.arange(1000.0, 1011.0)
    rec = run(SimConfig(n_agents=200, schemes="WG", seed=2), prices)
    # positions only move inside [-K, K]; under a rising price only k > 0 matters for the sign
    st = init_market(SimConfig(n_agents=200, schemes="WG", seed=2), 1000.0)
    for p, pn in zip(prices[:-1], prices[1:]):
        k = st.position.copy()
        w = st.wealth.copy()
        step_market(st, p, pn)
        assert np.all((st.wealth - w) * np.sign(k) >= 0)
    assert rec.avg_wealth.shape[0] == 11


def test_flat_series_freezes_minority_majority_scores():
    cfg = SimConfig(n_agents=40, schemes="WG,MinG,MajG", seed=6)
    st = init_market(cfg, 1234.5)
    for _ in range(20):
        step_market(st, 1234.5, 1234.5)
    assert np.all(st.scores[1:] == 0)
    assert np.all(st.scores[0] == 5 * 1234.5)
    rec = run(cfg, np.full(30, 1234.5))
    assert np.all(rec.avg_wealth == 5 * 1234.5)


def test_run_rejects_short_or_bad_series():
    cfg = SimConfig(n_agents=2, m=3)
    with pytest.raises(ValueError):
        run(cfg, [1000.0, 1001.0, 1002.0, 1003.0])
    with pytest.raises(ValueError):
        run(SimConfig(n_agents=2), [1000.0, -1.0, 1000.0, 1001.0])


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_agents=0)
    with pytest.raises(ValueError):
        SimConfig(wealth_multiplier=0)
    with pytest.raises(ValueError):
        SimConfig(schemes="WG,WG")
    assert SimConfig(schemes="WG,DMinG:5").labels == ["WG", "DMinG:5"]


def test_run_record_csv(tmp_path):
    rec = run(SimConfig(n_agents=5, seed=1), [1000.0, 1001.0, 1000.0, 1002.5])
    path = tmp_path / "ts.csv"
    rec.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,P,WG_w,WG_n_switch,MinG_w,MinG_n_switch,MajG_w,MajG_n_switch"
    assert lines[1].startswith("0,1000,5000,")
    assert lines[4].split(",")[1] == "1002.5"
    assert len(lines) == 5
    assert "e" not in "".join(lines[1:]).lower()
    summary = rec.summary()
    assert set(summary["final_avg_wealth"]) == {"WG", "MinG", "MajG"}


def test_select_counts_switches_against_previous_choice():
    cfg = SimConfig(n_agents=3, s=2, schemes="MajG", seed=0)
    st = init_market(cfg, 1000.0)
    st.scores[0, :, 0] = 0.0
    st.scores[0, :, 1] = 1.0
    assert select(st).tolist() == [3]
    assert select(st).tolist() == [0]
    assert np.all(st.selected == 1)
