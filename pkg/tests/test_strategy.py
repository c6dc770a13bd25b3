import json
import math

import pytest

from hyc.automaton import visits_negative
from hyc.exploretree import ExploreNode, ExploreTree
from hyc.modelfile import load_bundled
from hyc.sampler import SamplerConfig, check_trace, sample_indexed
from hyc.strategy import (
    CostModel,
    RandomBatch,
    RunReport,
    StrategyConfig,
    Symbolic,
    choose_action,
    run_concolic,
    update_cost,
)
from hyc.toys import rare_window, single_variable, unit_flows


def strip_timing(d):
    d = dict(d)
    d.pop("timing")
    d["solver_log"] = [{k: v for k, v in rec.items() if k != "seconds"} for rec in d["solver_log"]]
    return d


# -- cost model ----------------------------------------------------------------


def test_solver_cost_values():
    c = CostModel()
    assert c.c_s(2) == pytest.approx(math.exp(1.81) - 1, abs=1e-12)
    assert c.c_s(2) == pytest.approx(5.1104, abs=5e-5)
    assert c.c_s(1) == pytest.approx(0.08329, abs=5e-6)
    assert c.c_s(0) == 1e-6
    values = [c.c_s(l) for l in range(1, 8)]
    assert values == sorted(values) and len(set(values)) == len(values)


def test_solver_cost_coefficients_are_configurable():
    assert CostModel(a=2.0, b=1.0).c_s(1) == pytest.approx(math.e - 1)
    with pytest.raises(ValueError):
        CostModel(a=0.0)


def test_update_cost():
    assert update_cost(CostModel(c_t=1.0), 1.0).c_t == 1.0
    assert update_cost(CostModel(c_t=1.0), 2.0).c_t == pytest.approx(1.2)
    assert update_cost(CostModel(), 0.37).c_t == 0.37
    with pytest.raises(ValueError):
        update_cost(CostModel(c_t=1.0), 0.0)
    with pytest.raises(ValueError):
        CostModel(c_t=-1.0)


def test_strategy_config_invariants():
    with pytest.raises(ValueError):
        StrategyConfig(timeout=0)
    with pytest.raises(ValueError):
        StrategyConfig(mode="greedy")
    assert StrategyConfig().batch == 16
    assert StrategyConfig(max_traces=40).budget() == 40


# -- choose_action -------------------------------------------------------------


def tree_with_child(h, path, m=0, n=0):
    tree = ExploreTree(h)
    node = tree.root
    for q in path[1:]:
        child = ExploreNode(node.path + (q,), node)
        node.children[q] = child
        node = child
    node.m, node.n = m, n
    return tree, node


def test_cheap_sampling_wins():
    h = unit_flows()
    tree, node = tree_with_child(h, ("a", "b"))
    cfg = StrategyConfig(mode="global", reach_weighting=False)
    action = choose_action(tree, CostModel(c_t=0.01), cfg)
    # 0.01 / 0.5 = 0.02 against c_s(2) = 5.1104 for the two-step global query
    assert isinstance(action, RandomBatch)
    assert action.node is node


def test_rare_child_triggers_solver():
    h = unit_flows()
    tree, node = tree_with_child(h, ("a", "b"), m=98)
    cfg = StrategyConfig(mode="local", reach_weighting=False)
    action = choose_action(tree, CostModel(c_t=1.0), cfg)
    # 1.0 / 0.01 = 100 against c_s(1) = 0.0833
    assert isinstance(action, Symbolic)
    assert action.node is node and action.target == "c"
    assert action.random_cost == pytest.approx(100.0)
    assert action.solver_cost == pytest.approx(0.08329, abs=5e-6)


def test_argmin_prefers_the_likelier_node():
    h = single_variable(
        {"a": "1", "b": "1", "c": "1", "bad": "0"},
        [("a", "x > 0.2", "b"), ("a", "x > 0.5", "c"), ("b", "x > 9", "bad"), ("c", "x > 9", "bad")],
        negative=("bad",),
        steps=2,
    )
    tree = ExploreTree(h)
    b = ExploreNode(("a", "b"), tree.root)
    c = ExploreNode(("a", "c"), tree.root, m=8)
    tree.root.children.update(b=b, c=c)
    cfg = StrategyConfig(reach_weighting=False)
    action = choose_action(tree, CostModel(c_t=0.01), cfg)
    assert isinstance(action, RandomBatch) and action.node is b


def test_empty_frontier_and_unknown_cost_sample():
    h = unit_flows()
    tree = ExploreTree(h)
    assert isinstance(choose_action(tree, CostModel(), StrategyConfig()), RandomBatch)
    tree, node = tree_with_child(h, ("a", "b", "c"))
    assert choose_action(tree, CostModel(c_t=1.0), StrategyConfig()) == RandomBatch()


def test_choose_action_is_pure():
    h = unit_flows()
    tree, node = tree_with_child(h, ("a", "b"), m=40)
    cfg, cost = StrategyConfig(), CostModel(c_t=0.5)
    first = choose_action(tree, cost, cfg)
    assert all(choose_action(tree, cost, cfg) == first for _ in range(5))


def test_failures_raise_solver_cost():
    h = unit_flows()
    tree, node = tree_with_child(h, ("a", "b"), m=98)
    cfg = StrategyConfig(reach_weighting=False)
    assert isinstance(choose_action(tree, CostModel(c_t=0.01), cfg), Symbolic)
    for _ in range(3):
        tree.note_symbolic_failure(node, "c")
    # 0.01 / 0.01 = 1 is now below 0.0833 * 8^3
    assert isinstance(choose_action(tree, CostModel(c_t=0.01), cfg), RandomBatch)


# -- runs ----------------------------------------------------------------------


def test_unreachable_negative_passes_immediately():
    h = single_variable({"q": "1", "p": "0", "bad": "0"}, [("q", "x > 0.5", "p")], negative=("bad",))
    r = run_concolic(h)
    assert r.verdict == "pass" and r.traces == 0 and r.counterexample is None
    assert any("reachable" in note for note in r.notes)


def test_random_mode_replays_the_sampler_stream():
    h = rare_window(0.01, steps=2)
    cfg = SamplerConfig(seed=3)
    first = next(i for i in range(10_000) if visits_negative(h, sample_indexed(h, cfg, i)))
    r = run_concolic(h, cfg, cfg=StrategyConfig(mode="random", max_traces=10_000))
    assert r.verdict == "counterexample"
    assert r.traces == first + 1
    assert r.counterexample == sample_indexed(h, cfg, first)
    assert r.solver_calls == 0


def test_oscillator_local_beats_random():
    h = load_bundled("oscillator")
    for seed in (0, 5):
        scfg = SamplerConfig(seed=seed)
        local = run_concolic(h, scfg, cfg=StrategyConfig(mode="local"))
        rand = run_concolic(h, scfg, cfg=StrategyConfig(mode="random", max_traces=5000))
        assert local.verdict == rand.verdict == "counterexample"
        assert local.traces < rand.traces
        assert local.counterexample.origin == "solver"
        assert check_trace(h, local.counterexample) == []
        assert visits_negative(h, local.counterexample)


def test_sewerage_flooding_found_by_solver():
    h = load_bundled("sewerage")
    r = run_concolic(h, SamplerConfig(J=8, seed=0), cfg=StrategyConfig(mode="local"))
    nodes = {tuple(n["path"]): n for n in r.tree}
    assert nodes[("normal", "flooding")]["discovered_by"] == "solver"
    assert r.solver_calls >= 1


@pytest.mark.parametrize("mode", ["random", "local", "global", "dynamic"])
def test_verdict_soundness_and_round_trip(mode):
    h = load_bundled("sewerage")
    r = run_concolic(h, SamplerConfig(J=8, seed=1), cfg=StrategyConfig(mode=mode, max_traces=120))
    assert r.verdict in ("counterexample", "pass", "timeout-inconclusive")
    if r.counterexample is not None:
        assert check_trace(h, r.counterexample) == []
        assert visits_negative(h, r.counterexample)
    d = json.loads(json.dumps(r.to_dict()))
    assert RunReport.from_dict(d) == r
    assert RunReport.from_dict(d).to_dict() == r.to_dict()


def test_report_invariant():
    with pytest.raises(ValueError):
        RunReport("counterexample", "m", "local", 0)
    with pytest.raises(ValueError):
        RunReport("pass", "m", "local", 0, counterexample=sample_indexed(rare_window(0.5), SamplerConfig(), 0))


def test_runs_are_deterministic():
    h = load_bundled("sewerage")
    runs = [run_concolic(h, SamplerConfig(J=8, seed=4), cfg=StrategyConfig(mode="local")) for _ in range(2)]
    assert strip_timing(runs[0].to_dict()) == strip_timing(runs[1].to_dict())


def test_parallel_sampling_matches_serial():
    h = rare_window(0.002, steps=2)
    serial = run_concolic(h, SamplerConfig(seed=2), cfg=StrategyConfig(mode="random", max_traces=64))
    parallel = run_concolic(h, SamplerConfig(seed=2), cfg=StrategyConfig(mode="random", max_traces=64, jobs=2))
    assert strip_timing(serial.to_dict())["tree"] == strip_timing(parallel.to_dict())["tree"]
    assert serial.traces == parallel.traces and serial.verdict == parallel.verdict


@pytest.mark.parametrize("w", [0.05, 0.01, 0.002])
def test_rare_window_dominance(w):
    h = rare_window(w)
    wins = 0
    for seed in range(10):
        scfg = SamplerConfig(seed=seed)
        local = run_concolic(h, scfg, cfg=StrategyConfig(mode="local"))
        rand = run_concolic(h, scfg, cfg=StrategyConfig(mode="random", max_traces=20_000))
        assert local.verdict == "counterexample"
        wins += local.traces <= rand.traces
    if w <= 0.01:
        assert wins >= 9
