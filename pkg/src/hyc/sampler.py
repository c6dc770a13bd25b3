"""Random trace generation: Monte Carlo time windows and proportional transition choice."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .automaton import STAY, ConcreteState, HybridAutomaton, Jump, Trace, Transition, outgoing, visits_negative
from .expr import compile_guard
from .ode import IntegratorConfig, Trajectory, compose_step, flow, work_done

# spawn keys at or above this value are reserved for auxiliary streams
AUX_STREAM = 2**63


@dataclass(frozen=True)
class SamplerConfig:
    J: int = 64
    K: int | None = None
    seed: int = 0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if self.J < 1:
            raise ValueError(f"J must be >= 1, got {self.J}")
        if self.K is not None and self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def steps(self, h: HybridAutomaton) -> int:
        return self.K if self.K is not None else h.steps


def trace_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trace number ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def aux_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(AUX_STREAM, k))))


def guard_fns(h: HybridAutomaton, tr: Transition):
    key = ("guard", tr.index)
    fns = h._compiled.get(key)
    if fns is None:
        fns = h._compiled[key] = compile_guard(tr.guard, h.variables)
    return fns


@dataclass(frozen=True)
class TimeWindowSet:
    """Disjoint open sub-intervals of (0, 1)."""

    intervals: tuple[tuple[float, float], ...]
    estimated: bool = True

    def __post_init__(self):
        prev = 0.0
        for a, b in self.intervals:
            if not (0.0 <= a < b <= 1.0) or a < prev:
                raise ValueError(f"intervals must be disjoint, ordered and inside (0, 1): {self.intervals}")
            prev = b

    @property
    def measure(self) -> float:
        return math.fsum(b - a for a, b in self.intervals)

    def __contains__(self, t: float) -> bool:
        return any(a < t < b for a, b in self.intervals)

    def __bool__(self):
        return bool(self.intervals)


@dataclass(frozen=True)
class WindowSample:
    transition: Transition
    times: np.ndarray  # sampled points where the guard holds strictly

    @property
    def count(self) -> int:
        return len(self.times)


def draw_points(rng: np.random.Generator, J: int) -> np.ndarray:
    """J i.i.d. uniform points in the open interval (0, 1)."""
    pts = rng.random(J)
    while True:
        zero = pts == 0.0
        if not zero.any():
            return pts
        pts[zero] = rng.random(int(zero.sum()))


def estimate_windows(
    h: HybridAutomaton,
    q: str,
    v: Sequence[float],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    traj: Trajectory | None = None,
) -> tuple[list[WindowSample], Trajectory]:
    """Sample J time points and record, per outgoing transition, where its guard holds."""
    trans = outgoing(h, q)
    if traj is None:
        traj = Trajectory(h, q, v, cfg.integrator)
    if not trans:
        return [], traj
    pts = draw_points(rng, cfg.J)
    states = [traj.at(float(t)) for t in pts]
    out = []
    for tr in trans:
        holds = guard_fns(h, tr)[0]
        mask = np.fromiter((holds(float(t), s) for t, s in zip(pts, states)), dtype=bool, count=len(pts))
        out.append(WindowSample(tr, pts[mask]))
    return out, traj


def random_step(
    h: HybridAutomaton, s: ConcreteState, cfg: SamplerConfig, rng: np.random.Generator
) -> tuple[ConcreteState, Jump]:
    """One unit step: stay if no sampled point enables any guard, else a proportional choice."""
    samples, traj = estimate_windows(h, s.mode, s.valuation, cfg, rng)
    counts = np.array([w.count for w in samples], dtype=float)
    if counts.sum() == 0:
        return ConcreteState(s.mode, traj.end), STAY
    i = int(rng.choice(len(samples), p=counts / counts.sum()))
    chosen = samples[i]
    t = float(chosen.times[int(rng.integers(chosen.count))])
    nxt = compose_step(h, s.mode, s.valuation, chosen.transition, t, cfg.integrator, traj=traj)
    return ConcreteState(chosen.transition.target, nxt), Jump(chosen.transition.index, t)


def initial_state(h: HybridAutomaton, rng: np.random.Generator) -> ConcreteState:
    u = rng.random(h.dim)
    v = tuple(lo + (hi - lo) * float(x) if hi > lo else lo for (lo, hi), x in zip(h.init_box, u))
    return ConcreteState(h.initial_mode, v)


def extend_trace(
    h: HybridAutomaton,
    states: Sequence[ConcreteState],
    jumps: Sequence[Jump],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    origin: str = "random",
    work: int = 0,
) -> Trace:
    """Continue a prefix with random steps until it has K jumps."""
    start = work_done()
    states = list(states)
    jumps = list(jumps)
    K = cfg.steps(h)
    while len(jumps) < K:
        nxt, jump = random_step(h, states[-1], cfg, rng)
        states.append(nxt)
        jumps.append(jump)
    return Trace(tuple(states), tuple(jumps), origin, work + work_done() - start)


def sample_trace(h: HybridAutomaton, cfg: SamplerConfig, rng: np.random.Generator) -> Trace:
    return extend_trace(h, [initial_state(h, rng)], [], cfg, rng)


def sample_indexed(h: HybridAutomaton, cfg: SamplerConfig, index: int) -> Trace:
    return sample_trace(h, cfg, trace_rng(cfg.seed, index))


def _sample_range(args):
    h, cfg, indices = args
    return [sample_indexed(h, cfg, i) for i in indices]


def sample_traces(h: HybridAutomaton, cfg: SamplerConfig, start: int, count: int, pool=None) -> list[Trace]:
    """Traces ``start .. start+count-1``; identical with or without a process pool."""
    indices = list(range(start, start + count))
    if pool is None or count < 2:
        return [sample_indexed(h, cfg, i) for i in indices]
    n = getattr(pool, "_max_workers", 1) or 1
    chunks = [indices[k::n] for k in range(n) if indices[k::n]]
    results = {}
    for chunk, traces in zip(chunks, pool.map(_sample_range, [(h, cfg, c) for c in chunks])):
        results.update(zip(chunk, traces))
    return [results[i] for i in indices]


def is_counterexample(h: HybridAutomaton, tr: Trace) -> bool:
    return visits_negative(h, tr)


def check_trace(h: HybridAutomaton, tr: Trace, cfg: IntegratorConfig = IntegratorConfig(),
                delta: float = 1e-6, rtol: float = 1e-9) -> list[str]:
    """Re-simulate every step; returns a list of problems (empty when consistent)."""
    problems = []
    if len(tr.states) != len(tr.jumps) + 1:
        return [f"{len(tr.states)} states for {len(tr.jumps)} jumps"]
    s0 = tr.states[0]
    if s0.mode != h.initial_mode:
        problems.append(f"step 0: starts in {s0.mode!r}, not {h.initial_mode!r}")
    for x, (lo, hi) in zip(s0.valuation, h.init_box):
        if not lo <= x <= hi:
            problems.append(f"step 0: {x} outside the initial box [{lo}, {hi}]")
    for k, (s, jump, nxt) in enumerate(zip(tr.states, tr.jumps, tr.states[1:])):
        if jump.is_stay:
            expected, target = flow(h, s.mode, s.valuation, 1.0, cfg), s.mode
        else:
            t = jump.time
            trans = h.transitions[jump.transition]
            if trans.source != s.mode:
                problems.append(f"step {k}: transition {jump.transition} does not leave {s.mode!r}")
                continue
            if not 0.0 < t < 1.0:
                problems.append(f"step {k}: firing time {t} outside (0, 1)")
                continue
            mid = flow(h, s.mode, s.valuation, t, cfg)
            if not guard_fns(h, trans)[0](t, mid, delta):
                problems.append(f"step {k}: guard of transition {trans.index} fails at t={t}")
            expected, target = compose_step(h, s.mode, s.valuation, trans, t, cfg), trans.target
        if nxt.mode != target:
            problems.append(f"step {k}: reaches {nxt.mode!r}, expected {target!r}")
        for a, b in zip(expected, nxt.valuation):
            if abs(a - b) > rtol * max(1.0, abs(a)):
                problems.append(f"step {k}: end valuation {nxt.valuation} differs from re-simulation {expected}")
                break
    return problems


# ---------------------------------------------------------------------------
# Dense window computation (used by the exact-probability oracle and reports)
# ---------------------------------------------------------------------------


def exact_windows(h: HybridAutomaton, q: str, v: Sequence[float], tr: Transition,
                  cfg: IntegratorConfig = IntegratorConfig(), traj: Trajectory | None = None,
                  xtol: float = 1e-13) -> TimeWindowSet:
    """T_q(v, g) reconstructed from guard margins on the integrator grid.

    Sign changes of the margin between neighbouring grid points are located by
    Brent's method on the dense trajectory, so window ends are accurate to the
    integrator, not just to the grid spacing.  Windows narrower than a grid
    cell that open and close between two grid points are missed.
    """
    if traj is None:
        traj = Trajectory(h, q, v, cfg)
    margin = guard_fns(h, tr)[1]
    times = traj.times
    m = np.array([margin(float(t), traj.grid_state(k)) for k, t in enumerate(times)])
    inside = m > 0
    f = lambda t: margin(t, traj.at(t))  # noqa: E731
    intervals = []
    start = 0.0 if inside[0] else None
    for k in range(len(times) - 1):
        if inside[k] == inside[k + 1]:
            continue
        a, b = float(times[k]), float(times[k + 1])
        root = brentq(f, a, b, xtol=xtol) if np.isfinite(m[k]) and np.isfinite(m[k + 1]) else 0.5 * (a + b)
        if inside[k + 1]:
            start = root
        else:
            if root > start:
                intervals.append((start, root))
            start = None
    if start is not None and start < 1.0:
        intervals.append((start, 1.0))
    return TimeWindowSet(tuple(intervals), estimated=False)
