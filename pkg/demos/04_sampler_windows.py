"""
Time windows and proportional choice
====================================

With x' = 1 from x = 0, one guard holds on (0.1, 0.4) and another on
(0.5, 0.6). The sampler estimates both windows with J random time points and
picks a transition in proportion to the hits, so the first should be chosen
three times as often as the second.
"""
import numpy as np

from hyc.automaton import ConcreteState
from hyc.expr import to_text
from hyc.inference import exact_transition_probability
from hyc.sampler import SamplerConfig, estimate_windows, exact_windows, random_step, trace_rng
from hyc.toys import two_window

h = two_window()
for tr in h.transitions:
    print(f"guard {to_text(tr.guard)}: window", exact_windows(h, "q", (0.0,), tr).intervals)

rng = trace_rng(0, 0)
samples, _ = estimate_windows(h, "q", (0.0,), SamplerConfig(J=64), rng)
print("\nhits out of 64 points:", [w.count for w in samples])

for J in (4, 16, 64):
    rng = trace_rng(0, 0)
    s = ConcreteState("q", (0.0,))
    picks = [random_step(h, s, SamplerConfig(J=J), rng)[1] for _ in range(4000)]
    stay = np.mean([j.is_stay for j in picks])
    first = np.mean([j.transition == 0 for j in picks])
    print(f"J={J:2d}: first transition {first:.3f}, stay {stay:.3f}")

print("\nquadrature oracle:", exact_transition_probability(h))
