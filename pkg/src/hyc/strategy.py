"""The concolic controller: pick random batches or solver calls by expected cost."""
from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from . import __version__
from .automaton import ConcreteState, HybridAutomaton, Trace, backward_reachable_modes, outgoing
from .exploretree import ExploreNode, ExploreTree, estimate_q
from .expr import expr_length
from .inference import ConfidenceReport, SampleTally, confidence_report, required_samples
from .sampler import SamplerConfig, aux_rng, extend_trace, is_counterexample, sample_traces
from .solver import (
    InfCache,
    SolverConfig,
    SolverLog,
    backtrack_solve,
    solve_one_step,
    solve_path_any,
    witness_trace,
)

STRATEGIES = ("random", "local", "global", "dynamic")
LENGTH_METRICS = ("steps", "nodes")
SECONDS_PER_RK4_STEP = 5e-6


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Expected seconds per random trace (c_t) and per solver query of length l (c_s)."""

    c_t: float | None = None
    a: float = 1.73
    b: float = 1.65
    weight: float = 0.2
    length: str = "steps"

    def __post_init__(self):
        if self.c_t is not None and not self.c_t > 0:
            raise ValueError("c_t must be positive")
        if not self.a > 0:
            raise ValueError("the cost slope must be positive so c_s increases with l")
        if self.length not in LENGTH_METRICS:
            raise ValueError(f"length metric must be one of {LENGTH_METRICS}")

    def c_s(self, l: float) -> float:
        return max(math.exp(self.a * l - self.b) - 1.0, 1e-6)


def update_cost(cost: CostModel, observation: float) -> CostModel:
    """EWMA of the per-trace cost; the first observation initializes it."""
    if not observation > 0:
        raise ValueError("cost observations must be positive")
    if cost.c_t is None:
        return replace(cost, c_t=observation)
    return replace(cost, c_t=(1.0 - cost.weight) * cost.c_t + cost.weight * observation)


def query_length(h: HybridAutomaton, transitions, metric: str = "steps") -> int:
    """l for a query over the given transitions: their count, or guard plus flow node counts."""
    if metric == "steps":
        return len(transitions)
    return sum(expr_length(t.guard) + h.flow_length(t.source) + h.flow_length(t.target) for t in transitions)


# ---------------------------------------------------------------------------
# Decisions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StrategyConfig:
    mode: str = "local"
    timeout: float = 300.0
    batch: int = 16
    max_traces: int | None = None  # default: the sample count that reaches the target confidence
    delta: float = 0.01
    target: float = 0.99
    cost_clock: str = "work"  # "work" (deterministic RK4 step count) or "wall"
    length: str = "steps"
    failure_factor: float = 8.0
    jobs: int = 1
    reach_weighting: bool = True

    def __post_init__(self):
        if self.mode not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.mode!r}")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        if self.max_traces is not None and self.max_traces < 0:
            raise ValueError("max_traces must be >= 0")
        if self.cost_clock not in ("work", "wall"):
            raise ValueError("cost clock must be 'work' or 'wall'")
        if self.length not in LENGTH_METRICS:
            raise ValueError(f"length metric must be one of {LENGTH_METRICS}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def budget(self) -> int:
        if self.max_traces is not None:
            return self.max_traces
        return required_samples(self.delta, self.target)


@dataclass(frozen=True)
class RandomBatch:
    node: ExploreNode | None = None  # the argmin node, when the frontier is not empty


@dataclass(frozen=True)
class Symbolic:
    node: ExploreNode
    target: str
    random_cost: float
    solver_cost: float


def symbolic_cost(tree: ExploreTree, cost: CostModel, cfg: StrategyConfig, node: ExploreNode, target: str) -> float:
    h = tree.automaton
    trans = [t for t in outgoing(h, node.mode) if t.target == target][:1]
    if cfg.mode == "global" and node.depth > 0:
        l = query_length(h, trans, cfg.length) + (node.depth if cfg.length == "steps" else 0)
    else:
        l = query_length(h, trans, cfg.length)
    return cost.c_s(l) * cfg.failure_factor ** tree.failures(node, target)


def random_cost(tree: ExploreTree, cost: CostModel, cfg: StrategyConfig, node: ExploreNode) -> float:
    """Expected cost of discovering a new child of ``node`` by random traces.

    A random trace only helps if it passes through the node, so with reach
    weighting the estimate is divided by the node's empirical visit rate.
    At the root the rate is 1 and this is c_t / E(q(u)).
    """
    q = estimate_q(node)
    if cfg.reach_weighting and tree.traces_recorded:
        q *= node.visits / tree.traces_recorded
    return cost.c_t / q


def choose_action(tree: ExploreTree, cost: CostModel, cfg: StrategyConfig):
    """RandomBatch, or Symbolic at the frontier pair minimizing min(c_t / E(q(u)), c_s)."""
    if cfg.mode == "random" or cost.c_t is None:
        return RandomBatch()
    best = None
    for node, target in tree.frontier():
        rc = random_cost(tree, cost, cfg, node)
        sc = symbolic_cost(tree, cost, cfg, node, target)
        key = min(rc, sc)
        if best is None or key < best[0]:
            best = (key, node, target, rc, sc)
    if best is None:
        return RandomBatch()
    _, node, target, rc, sc = best
    if rc < sc:
        return RandomBatch(node)
    return Symbolic(node, target, rc, sc)


# ---------------------------------------------------------------------------
# Run report
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    verdict: str  # "counterexample", "pass" or "timeout-inconclusive"
    model: str
    strategy: str
    seed: int
    counterexample: Trace | None = None
    traces: int = 0
    random_traces: int = 0
    solver_traces: int = 0
    solver_calls: int = 0
    outcomes: dict = field(default_factory=dict)
    confidence: ConfidenceReport | None = None
    tree: list = field(default_factory=list)
    inf_cache: list = field(default_factory=list)
    solver_log: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    version: str = __version__

    def __post_init__(self):
        if (self.verdict == "counterexample") != (self.counterexample is not None):
            raise ValueError("a counterexample trace is stored exactly when the verdict is counterexample")

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "model": self.model,
            "strategy": self.strategy,
            "seed": self.seed,
            "counterexample": self.counterexample.to_dict() if self.counterexample else None,
            "traces": self.traces,
            "random_traces": self.random_traces,
            "solver_traces": self.solver_traces,
            "solver_calls": self.solver_calls,
            "outcomes": dict(self.outcomes),
            "confidence": self.confidence.to_dict() if self.confidence else None,
            "tree": self.tree,
            "inf_cache": self.inf_cache,
            "solver_log": self.solver_log,
            "timing": self.timing,
            "config": self.config,
            "notes": self.notes,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        if d.get("counterexample") is not None:
            d["counterexample"] = Trace.from_dict(d["counterexample"])
        if d.get("confidence") is not None:
            d["confidence"] = ConfidenceReport.from_dict(d["confidence"])
        return cls(**d)


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------


class _Run:
    def __init__(self, h: HybridAutomaton, scfg: SamplerConfig, vcfg: SolverConfig, cfg: StrategyConfig):
        self.h, self.scfg, self.vcfg, self.cfg = h, scfg, vcfg, cfg
        self.seed = scfg.seed
        self.tree = ExploreTree(h, scfg.steps(h), rng=aux_rng(self.seed, 0))
        self.cost = CostModel(length=cfg.length)
        self.cache = InfCache()
        self.log = SolverLog()
        self.next_index = 0
        self.symbolic_rounds = 0
        self.traces = self.random_traces = self.solver_traces = 0
        self.counterexample: Trace | None = None
        self.started = time.perf_counter()
        self.sampling_seconds = 0.0
        self.solving_seconds = 0.0
        self.notes: list[str] = []
        self.pool = ProcessPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None

    def elapsed(self) -> float:
        return time.perf_counter() - self.started

    def record(self, tr: Trace) -> bool:
        """Count and record a trace; True when it is a counterexample."""
        self.traces += 1
        if tr.origin == "random":
            self.random_traces += 1
        else:
            self.solver_traces += 1
        self.tree.record_trace(tr)
        if is_counterexample(self.h, tr):
            self.counterexample = tr
            return True
        return False

    # -- random sampling -----------------------------------------------------

    def random_batch(self, count: int) -> bool:
        t0 = time.perf_counter()
        batch = sample_traces(self.h, self.scfg, self.next_index, count, self.pool)
        self.next_index += count
        self.last_batch = batch
        wall = time.perf_counter() - t0
        self.sampling_seconds += wall
        if self.cfg.cost_clock == "work":
            obs = max(sum(tr.work for tr in batch) / len(batch), 1) * SECONDS_PER_RK4_STEP
        else:
            obs = max(wall / len(batch), 1e-9)
        self.cost = update_cost(self.cost, obs)
        for tr in batch:
            if self.record(tr):
                return True
        return False

    def extend(self, prefix: Trace) -> Trace:
        rng = aux_rng(self.seed, 1 + self.symbolic_rounds)
        return extend_trace(self.h, prefix.states, prefix.jumps, self.scfg, rng, origin="solver", work=0)

    # -- symbolic steps ------------------------------------------------------

    def pick_particle(self, node: ExploreNode):
        rng = aux_rng(self.seed, 1 + self.symbolic_rounds)
        return node.particles[int(rng.integers(len(node.particles)))]

    def symbolic(self, node: ExploreNode, target: str) -> Trace | None:
        h = self.h
        self.symbolic_rounds += 1
        t0 = time.perf_counter()
        infeasible = True
        found = None
        for trans in [t for t in outgoing(h, node.mode) if t.target == target]:
            if node.depth == 0 or self.cfg.mode == "global":
                if node.depth == 0:
                    steps = (trans.index,)
                else:
                    p = self.pick_particle(node)
                    steps = tuple(
                        p.trace.states[i].mode if p.trace.jumps[i].is_stay else p.trace.jumps[i].transition
                        for i in range(p.step)
                    ) + (trans.index,)
                if len(steps) > self.vcfg.max_path_steps:
                    infeasible = False
                    continue
                r = solve_path_any(h, h.initial_mode, steps, h.init_box, self.vcfg, self.cache, self.log)
                if r.sat:
                    found = witness_trace(h, [ConcreteState(h.initial_mode, r.start)], [], r)
                    break
                infeasible = infeasible and r.unsat
            else:
                p = self.pick_particle(node)
                res = backtrack_solve(h, p.trace, p.step, trans.index, self.vcfg, self.cache, self.log)
                if res.status == "sat":
                    found = res.trace
                    break
                infeasible = infeasible and res.status == "infeasible"
        self.solving_seconds += time.perf_counter() - t0
        if found is not None:
            return self.extend(found)
        if infeasible:
            self.tree.note_infeasible(node, target)
        else:
            self.tree.note_symbolic_failure(node, target)
        return None

    # -- strategies ----------------------------------------------------------

    def run_cost_guided(self, budget: int) -> str | None:
        while True:
            if self.counterexample is not None:
                return "counterexample"
            if self.traces >= budget:
                return None
            if self.elapsed() > self.cfg.timeout:
                return "timeout"
            action = choose_action(self.tree, self.cost, self.cfg)
            if isinstance(action, RandomBatch):
                self.random_batch(min(self.cfg.batch, budget - self.traces))
            else:
                tr = self.symbolic(action.node, action.target)
                if tr is not None:
                    self.record(tr)

    def run_dynamic(self, budget: int) -> str | None:
        """One random trace, then depth-first flips of its branches from the deepest step back."""
        h = self.h
        qbad = self.tree.qbad
        flipped: set = set()
        while True:
            if self.traces >= budget:
                return None
            if self.elapsed() > self.cfg.timeout:
                return "timeout"
            if self.random_batch(1):
                return "counterexample"
            stack = [(self.last_batch[-1], 0)]
            while stack:
                tr, lowest = stack.pop()
                for k in range(len(tr.jumps) - 1, lowest - 1, -1):
                    state = tr.states[k]
                    taken = tr.jumps[k].transition
                    prefix_modes = tuple(s.mode for s in tr.states[: k + 1])
                    for trans in outgoing(h, state.mode):
                        key = (prefix_modes, trans.index)
                        if trans.index == taken or trans.target not in qbad or key in flipped:
                            continue
                        flipped.add(key)
                        if self.traces >= budget:
                            return None
                        if self.elapsed() > self.cfg.timeout:
                            return "timeout"
                        self.symbolic_rounds += 1
                        t0 = time.perf_counter()
                        r = solve_one_step(h, state, trans.index, self.vcfg, self.cache, self.log)
                        self.solving_seconds += time.perf_counter() - t0
                        if not r.sat:
                            continue
                        new = self.extend(witness_trace(h, tr.states[: k + 1], tr.jumps[:k], r))
                        if self.record(new):
                            return "counterexample"
                        stack.append((new, k + 1))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def run_concolic(h: HybridAutomaton, scfg: SamplerConfig = SamplerConfig(), vcfg: SolverConfig = SolverConfig(),
                 cfg: StrategyConfig = StrategyConfig()) -> RunReport:
    """Sample and solve until a counterexample, the trace budget or the timeout."""
    run = _Run(h, scfg, vcfg, cfg)
    budget = cfg.budget()
    config = {
        "sampler": {"J": scfg.J, "K": scfg.steps(h), "seed": scfg.seed, "ode_step": scfg.integrator.h},
        "solver": {"precision": vcfg.precision, "max_depth": vcfg.max_depth, "budget": vcfg.budget,
                   "max_probes": vcfg.max_probes, "max_path_steps": vcfg.max_path_steps},
        "strategy": {"mode": cfg.mode, "timeout": cfg.timeout, "batch": cfg.batch, "max_traces": budget,
                     "delta": cfg.delta, "target": cfg.target, "cost_clock": cfg.cost_clock, "length": cfg.length,
                     "reach_weighting": cfg.reach_weighting},
    }
    notes = []
    if cfg.length == "steps":
        notes.append("solver cost uses l = number of path steps; the node-count metric is available as an option")
    if h.initial_mode not in run.tree.qbad:
        notes.append("no negative mode is reachable in the mode graph from the initial mode")
        run.close()
        return RunReport("pass", h.name, cfg.mode, scfg.seed, config=config, notes=notes,
                         timing={"total": run.elapsed(), "sampling": 0.0, "solving": 0.0})
    try:
        if cfg.mode == "dynamic":
            stop = run.run_dynamic(budget)
        else:
            stop = run.run_cost_guided(budget)
    finally:
        run.close()
    m = 1 if run.counterexample is not None else 0
    conf = confidence_report(SampleTally(run.traces - m, m), cfg.delta, cfg.target, alpha=1.0)
    if run.counterexample is not None:
        verdict = "counterexample"
    elif stop is None and conf.verdict == "pass":
        verdict = "pass"
    else:
        verdict = "timeout-inconclusive"
    if stop == "timeout":
        notes.append(f"wall-clock timeout after {cfg.timeout} s")
    outcomes = Counter()
    for rec in run.log.records:
        outcomes["cached" if rec["from_cache"] else rec["status"]] += 1
    return RunReport(
        verdict=verdict,
        model=h.name,
        strategy=cfg.mode,
        seed=scfg.seed,
        counterexample=run.counterexample,
        traces=run.traces,
        random_traces=run.random_traces,
        solver_traces=run.solver_traces,
        solver_calls=sum(1 for rec in run.log.records if not rec["from_cache"]),
        outcomes=dict(sorted(outcomes.items())),
        confidence=conf,
        tree=run.tree.summary(),
        inf_cache=run.cache.to_list(),
        solver_log=run.log.records,
        timing={"total": run.elapsed(), "sampling": run.sampling_seconds, "solving": run.solving_seconds},
        config=config,
        notes=notes,
    )
