"""
Backtracking on the sewerage model
==================================

A storm pushes the water level past the flooding guard only near the middle of
a step and only for the highest starting levels. With 8 time points per step
random sampling almost never fires it, so the solver is asked for a start that
does. We then ask for the impossible continuation flooding -> recover and
watch the infeasible path land in the cache.
"""
from hyc.automaton import ConcreteState, Jump, Trace
from hyc.modelfile import load_bundled
from hyc.ode import compose_step
from hyc.sampler import SamplerConfig
from hyc.solver import InfCache, SolverLog, backtrack_solve
from hyc.strategy import StrategyConfig, run_concolic

h = load_bundled("sewerage")
r = run_concolic(h, SamplerConfig(J=8, seed=0), cfg=StrategyConfig(mode="local"))
print("verdict:", r.verdict, "after", r.traces, "traces and", r.solver_calls, "solver call(s)")
for node in r.tree:
    print(f"  {'/'.join(node['path']):40s} visits {node['visits']:3d}  found by {node['discovered_by']}")

# a one-step run into flooding, then try to reach recover from there
idx = {(t.source, t.target): t.index for t in h.transitions}
s0 = ConcreteState("normal", (7.0,))
s1 = ConcreteState("flooding", compose_step(h, "normal", s0.valuation, idx["normal", "flooding"], 0.5))
run = Trace((s0, s1), (Jump(idx["normal", "flooding"], 0.5),))
cache, log = InfCache(), SolverLog()
res = backtrack_solve(h, run, 1, idx["flooding", "recover"], cache=cache, log=log)
print("\nflooding -> recover:", res.status)
for rec in log.records:
    print(f"  {rec['kind']:9s} from {rec['start_mode']:8s} path {rec['path']} over {rec['domain']}: {rec['status']}")
print("cache:", cache.to_list())

again = backtrack_solve(h, run, 1, idx["flooding", "recover"], cache=cache, log=log)
print("second attempt:", again.status, "- new records:", [(r["kind"], r["from_cache"]) for r in log.records[4:]])
