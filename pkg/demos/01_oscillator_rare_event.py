"""
Rare events on a damped oscillator
==================================

The detector mode is entered only when the displacement exceeds pi/4, which
happens for a thin slice of initial velocities and for a few hundredths of a
time unit. We count how many traces each strategy needs before it sees it.
"""
from hyc.modelfile import load_bundled
from hyc.sampler import SamplerConfig
from hyc.strategy import StrategyConfig, run_concolic

h = load_bundled("oscillator")
print(h.comment, "\n")

print("seed  random  local  local solver calls  found by")
for seed in range(10):
    scfg = SamplerConfig(seed=seed)
    rand = run_concolic(h, scfg, cfg=StrategyConfig(mode="random", max_traces=5000))
    local = run_concolic(h, scfg, cfg=StrategyConfig(mode="local"))
    print(f"{seed:4d}  {rand.traces:6d}  {local.traces:5d}  {local.solver_calls:18d}  {local.counterexample.origin}")

# the local run follows the random stream until the estimate E(q) for the
# unseen transition falls below what a solver call is expected to cost
r = run_concolic(h, SamplerConfig(seed=5), cfg=StrategyConfig(mode="local"))
tr = r.counterexample
print("\nseed 5 counterexample:", " -> ".join(tr.modes))
print("start valuation (x, v):", tr.states[0].valuation)
print("firing time of the jump:", tr.jumps[0].time)
