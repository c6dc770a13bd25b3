import json
import math
import sys

import numpy as np
import pytest

from _queries import random_query, violations, witness_holds
from hyc.automaton import ConcreteState, Jump, Trace
from hyc.modelfile import load_bundled
from hyc.ode import flow
from hyc.sampler import check_trace
from hyc.solver import (
    InfCache,
    SolverConfig,
    SolverLog,
    backtrack_solve,
    solve_one_step,
    solve_path_any,
    solve_path_from,
)
from hyc.toys import single_variable, unit_flows


def linear(guard, x0=0.0):
    return single_variable({"q": "1", "p": "0"}, [("q", guard, "p")], x0=x0, bounds=(-10.0, 10.0))


def test_config_invariants():
    with pytest.raises(ValueError):
        SolverConfig(precision=0)
    with pytest.raises(ValueError):
        SolverConfig(max_depth=9)


def test_linear_crossing_sat():
    h = linear("x > 0.5")
    r = solve_one_step(h, ConcreteState("q", (0.0,)), 0)
    assert r.sat
    (t,) = r.times
    assert 0.5 <= t < 1.0
    assert witness_holds(h, ConcreteState("q", (0.0,)), 0, t)
    assert r.states[0][0] == pytest.approx(t, abs=1e-12)


def test_linear_unreachable_unsat():
    r = solve_one_step(linear("x > 2"), ConcreteState("q", (0.0,)), 0)
    assert r.unsat


def test_transition_must_leave_state_mode():
    with pytest.raises(ValueError):
        solve_one_step(linear("x > 2"), ConcreteState("p", (0.0,)), 0)


def test_oscillator_witness_near_example():
    h = load_bundled("oscillator")
    s = ConcreteState("q0", (0.0, 5.564))
    r = solve_one_step(h, s, 0)
    assert r.sat
    (t,) = r.times
    assert abs(t - 0.233) < 0.005
    x = flow(h, "q0", s.valuation, t)[0]
    assert x > math.pi / 4


def test_two_step_sat_and_unsat():
    s = ConcreteState("a", (0.0,))
    r = solve_path_from(unit_flows(), s, (0, 1))
    assert r.sat
    t1, t2 = r.times
    assert t1 > 0.4 and 0 < t2 < 1
    assert r.states[-1][0] > 1.5 - 1e-9
    assert solve_path_from(unit_flows(guard2="x > 3"), s, (0, 1)).unsat


def test_path_through_a_stay():
    # stay one unit in a (x -> 1), then cross x > 1.5 in a second unit
    h = single_variable({"a": "1", "c": "0"}, [("a", "x > 1.5", "c")], steps=2)
    r = solve_path_from(h, ConcreteState("a", (0.0,)), ("a", 0))
    assert r.sat
    assert r.times[0] is None and r.times[1] >= 0.5


def test_box_corner_sat():
    h = linear("x > 0.5", x0=(0.4, 0.6))
    r = solve_path_any(h, "q", (0,), h.init_box)
    assert r.sat
    assert 0.4 <= r.start[0] <= 0.6


def test_unreachable_from_box_is_cached():
    h = linear("x > 10", x0=(0.0, 1.0))
    cache, log = InfCache(), SolverLog()
    r = solve_path_any(h, "q", (0,), h.init_box, cache=cache, log=log)
    assert r.unsat and not r.from_cache
    assert len(cache) == 1
    again = solve_path_any(h, "q", (0,), h.init_box, cache=cache, log=log)
    assert again.unsat and again.from_cache and again.probes == 0
    assert [rec["from_cache"] for rec in log.records] == [False, True]


def test_unknown_is_not_cached():
    h = unit_flows(guard2="x > 3", box=(0.0, 1.0))
    cache = InfCache()
    r = solve_path_any(h, "a", (0, 1), h.init_box, SolverConfig(max_probes=1), cache)
    assert r.unknown and "budget" in r.reason
    assert len(cache) == 0


def test_tangent_query_is_unknown():
    # the supremum of the second guard's margin is exactly 0 (x0 = 1, t1 -> 0)
    h = unit_flows(guard2="x > 3", box=(0.0, 1.0))
    r = solve_path_any(h, "a", (0, 1), h.init_box, SolverConfig(max_probes=500))
    assert r.unknown


def test_universal_entry_answers_longer_paths():
    h = unit_flows(guard2="x > 30")
    cache = InfCache()
    assert solve_path_any(h, "b", (1,), cache=cache).unsat
    r = solve_path_from(h, ConcreteState("a", (0.0,)), (0, 1), cache=cache)
    assert r.unsat and r.from_cache


def test_backtrack_one_step_success():
    h = linear("x > 0.5")
    run = Trace((ConcreteState("q", (0.0,)), ConcreteState("q", (1.0,))), (Jump(),))
    res = backtrack_solve(h, run, 0, 0)
    assert res.status == "sat" and res.queries == 1
    assert res.trace.modes == ("q", "p")
    assert check_trace(h, res.trace) == []


def test_backtrack_unreachable_guard_is_cached():
    h = linear("x > 10", x0=(0.0, 1.0))
    run = Trace((ConcreteState("q", (0.5,)), ConcreteState("q", (1.5,))), (Jump(),))
    cache = InfCache()
    res = backtrack_solve(h, run, 0, 0, cache=cache)
    assert res.status == "infeasible" and res.trace is None
    assert len(cache) == 1


def sewerage_run(h):
    # normal -> flooding at the bump peak from x0 = 7, then one unit in flooding
    idx = {(t.source, t.target): t.index for t in h.transitions}
    r = solve_path_from(h, ConcreteState("normal", (7.0,)), (idx["normal", "flooding"],))
    assert r.sat
    after = flow(h, "flooding", r.states[0], 1.0)
    states = (ConcreteState("normal", (7.0,)), ConcreteState("flooding", r.states[0]),
              ConcreteState("flooding", after))
    return Trace(states, (Jump(idx["normal", "flooding"], r.times[0]), Jump())), idx


def test_sewerage_backtracks_to_normal():
    h = load_bundled("sewerage")
    run, idx = sewerage_run(h)
    cache, log = InfCache(), SolverLog()
    # recover from the state reached right after the jump into flooding
    res = backtrack_solve(h, run, 1, idx["flooding", "recover"], cache=cache, log=log)
    assert res.status == "infeasible"
    sig = ("normal", idx["normal", "flooding"], idx["flooding", "recover"])
    assert sig in cache
    kinds = [(rec["kind"], rec["start_mode"], rec["status"]) for rec in log.records]
    assert kinds == [
        ("path_from", "flooding", "unsat"),
        ("path_any", "flooding", "sat"),
        ("path_from", "normal", "unsat"),
        ("path_any", "normal", "unsat"),
    ]
    # a second attempt is answered by the cache without solving
    again = backtrack_solve(h, run, 1, idx["flooding", "recover"], cache=cache, log=log)
    assert again.status == "infeasible"
    solved_again = [rec for rec in log.records[4:] if rec["path"] == list(sig[1:])]
    assert solved_again == []


def test_random_one_step_soundness():
    rng = np.random.default_rng(11)
    results = []
    for _ in range(40):
        h, s = random_query(rng)
        results.append((h, s, solve_one_step(h, s, 0)))
    assert {r.status for _, _, r in results} <= {"sat", "unsat", "unknown"}
    assert violations(results, SolverConfig().precision) == []


def test_shrinking_precision_never_turns_unsat_into_sat():
    rng = np.random.default_rng(5)
    for _ in range(30):
        h, s = random_query(rng)
        coarse = solve_one_step(h, s, 0, SolverConfig(precision=1e-2))
        fine = solve_one_step(h, s, 0, SolverConfig(precision=1e-4))
        if coarse.unsat:
            assert not fine.sat


def test_cache_coherence():
    cache = InfCache()
    queries = [
        (unit_flows(guard2="x > 3.5", box=(0.0, 1.0)), "a", (0, 1)),
        (linear("x > 10", x0=(0.0, 1.0)), "q", (0,)),
        (unit_flows(guard2="x > 2.5"), "a", (0, 1)),
    ]
    for h, q, path in queries:
        solve_path_any(h, q, path, h.init_box, cache=cache)
    assert len(cache) >= 2
    for h, q, path in queries:
        assert not solve_path_any(h, q, path, h.init_box).sat


def test_external_hook(tmp_path):
    script = tmp_path / "ext.py"
    script.write_text(
        "import json, sys\n"
        "q = json.load(sys.stdin)\n"
        "answer = sys.argv[1]\n"
        "print(json.dumps({'status': answer, 'start': [0.0], 'times': [0.1]}))\n"
    )
    h = linear("x > 0.5")
    s = ConcreteState("q", (0.0,))
    unsat = solve_one_step(h, s, 0, SolverConfig(external=f"{sys.executable} {script} unsat"))
    assert unsat.unsat
    bogus = solve_one_step(h, s, 0, SolverConfig(external=f"{sys.executable} {script} sat"))
    assert bogus.unknown and "re-simulation" in bogus.reason


def test_log_is_json_serializable():
    log = SolverLog()
    solve_one_step(linear("x > 0.5"), ConcreteState("q", (0.0,)), 0, log=log)
    assert json.loads(json.dumps(log.records))[0]["status"] == "sat"
