"""δ-decision queries over bounded path conditions.

A path is a sequence of steps starting in some mode: a transition index
(fire that transition at a time t in (0, 1), then flow in the target for
1 - t) or a mode name (stay there for a full unit).  A query asks whether
some start valuation in a box and some firing times make every guard hold.

Answers:

* ``sat``: a witness (start valuation and firing times) that re-simulates
  with every guard holding strictly;
* ``unsat``: the search found no point where all guards hold even when
  weakened by the precision δ_s;
* ``unknown``: the probe budget, the time budget or the subdivision depth
  ran out first.

The search is simulation based.  The last firing time is handled on the
dense integrator grid (margins at every grid point, a per-cell bound from
neighbouring differences, midpoint refinement of borderline cells).
Earlier firing times and the free start dimensions are searched by
best-first branch and bound with probe-estimated Lipschitz bounds.  Those
bounds are estimates, not enclosures, which is why unsat answers are
δ-robust only up to the resolution of the probes.
"""
from __future__ import annotations

import heapq
import itertools
import json
import math
import subprocess
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from .automaton import ConcreteState, HybridAutomaton, Jump, STAY, Trace
from .ode import DivergenceError, IntegratorConfig, Trajectory, flow
from .sampler import guard_fns

Step = Union[int, str]  # transition index, or a mode name for a unit stay

TIME_EPS = 1e-9
VALUE_FLOOR = -1e9


@dataclass(frozen=True)
class SolverConfig:
    precision: float = 1e-3
    max_depth: int = 30
    budget: float = 10.0
    max_probes: int = 2_000
    max_path_steps: int = 4
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    external: str | None = None  # command line of an external decision procedure

    def __post_init__(self):
        if not self.precision > 0:
            raise ValueError("solver precision must be positive")
        if self.max_depth < 10:
            raise ValueError("solver depth must be >= 10")
        if not self.budget > 0:
            raise ValueError("solver budget must be positive")
        if self.max_probes < 1 or self.max_path_steps < 1:
            raise ValueError("solver probe and path limits must be >= 1")


@dataclass(frozen=True)
class SatResult:
    status: str  # "sat", "unsat" or "unknown"
    start_mode: str
    path: tuple[Step, ...]
    start: tuple[float, ...] | None = None
    times: tuple[float | None, ...] | None = None
    states: tuple[tuple[float, ...], ...] | None = None  # valuation at the end of every step
    probes: int = 0
    from_cache: bool = False
    reason: str = ""

    @property
    def sat(self) -> bool:
        return self.status == "sat"

    @property
    def unsat(self) -> bool:
        return self.status == "unsat"

    @property
    def unknown(self) -> bool:
        return self.status == "unknown"


Box = tuple[tuple[float, float], ...]


def path_modes(h: HybridAutomaton, start_mode: str, steps: Sequence[Step]) -> list[str]:
    modes = [start_mode]
    for k, step in enumerate(steps):
        if isinstance(step, str):
            if step != modes[-1]:
                raise ValueError(f"step {k}: stay in {step!r} but the path is in {modes[-1]!r}")
            modes.append(step)
        else:
            tr = h.transitions[step]
            if tr.source != modes[-1]:
                raise ValueError(f"step {k}: transition {tr} does not leave {modes[-1]!r}")
            modes.append(tr.target)
    return modes


def signature(h: HybridAutomaton, start_mode: str, steps: Sequence[Step]) -> tuple:
    """Hashable identity of a path; stays are named by their mode."""
    return (start_mode,) + tuple(steps)


# ---------------------------------------------------------------------------
# Inf cache
# ---------------------------------------------------------------------------


class InfCache:
    """Paths proven infeasible, each with the start domain it was proven for.

    An entry proven for the model's state bounds covers every start state, so
    any longer path ending with it is infeasible too; entries for other
    domains only answer the identical query.
    """

    def __init__(self):
        self._entries: dict[tuple, Box] = {}
        self.hits = 0
        self.inserts = 0
        # definitive answers to exact queries, so repeated identical queries are not re-solved
        self.answers: dict[tuple, SatResult] = {}

    def remember(self, sig: tuple, domain: Box, res: "SatResult") -> None:
        if res.sat or res.unsat:
            self.answers[(sig, tuple(domain))] = res

    def recall(self, sig: tuple, domain: Box) -> "SatResult | None":
        res = self.answers.get((sig, tuple(domain)))
        if res is None:
            return None
        self.hits += 1
        return replace(res, from_cache=True, probes=0)

    def __contains__(self, sig) -> bool:
        return any(k == sig for k, _ in self._entries)

    def __len__(self):
        return len(self._entries)

    def entries(self) -> list[tuple[tuple, Box]]:
        return list(self._entries)

    def add(self, sig: tuple, domain: Box) -> None:
        key = (sig, tuple(domain))
        if key not in self._entries:
            self._entries[key] = domain
            self.inserts += 1

    def lookup(self, h: HybridAutomaton, start_mode: str, steps: Sequence[Step], domain: Box | None) -> bool:
        universal = _domain_of(h, None)
        sig = signature(h, start_mode, steps)
        if domain is not None and (sig, tuple(domain)) in self._entries:
            self.hits += 1
            return True
        modes = path_modes(h, start_mode, steps)
        for k in range(len(steps)):
            if (signature(h, modes[k], steps[k:]), universal) in self._entries:
                self.hits += 1
                return True
        return False

    def to_list(self) -> list[dict]:
        return [{"path": list(sig), "domain": [list(b) for b in dom]} for sig, dom in self._entries]


# ---------------------------------------------------------------------------
# Search machinery
# ---------------------------------------------------------------------------


@dataclass
class _Eval:
    best: float  # min guard margin of the best choice found (witness when > 0)
    upper: float  # estimated upper bound on that quantity
    times: tuple | None  # witness firing times for the remaining steps
    undecided: bool


class _Exhausted(Exception):
    pass


def _cell_bounds(m: np.ndarray) -> np.ndarray:
    """Upper estimate of the margin on each grid cell from endpoint values and differences."""
    mc = np.clip(m, -1e200, 1e200)
    d = np.abs(np.diff(mc))
    base = np.maximum(mc[:-1], mc[1:])
    sec = np.zeros(len(mc))
    if len(mc) > 2:
        sec[1:-1] = np.abs(mc[2:] - 2.0 * mc[1:-1] + mc[:-2])
    curv = np.maximum(sec[:-1], sec[1:])
    return base + 0.5 * d + 0.25 * curv


class _Search:
    def __init__(self, h: HybridAutomaton, start_mode: str, steps: Sequence[Step], cfg: SolverConfig):
        self.h = h
        self.steps = tuple(steps)
        self.modes = path_modes(h, start_mode, steps)
        self.cfg = cfg
        self.delta = cfg.precision
        self.probes = 0
        self.started = time.perf_counter()
        self._traj: OrderedDict = OrderedDict()
        self._margins: dict = {}
        self.tighten = False  # set when an enclosing start-box search needs informative upper bounds
        self.last = len(steps) - 1
        if not steps or isinstance(steps[-1], str):
            raise ValueError("a path query must end with a transition")

    # -- budget and caches ---------------------------------------------------

    def check_budget(self) -> None:
        if self.probes >= self.cfg.max_probes:
            raise _Exhausted("probe budget exhausted")
        if time.perf_counter() - self.started > self.cfg.budget:
            raise _Exhausted("time budget exhausted")

    def trajectory(self, q: str, v: tuple) -> Trajectory:
        key = (q, v)
        traj = self._traj.get(key)
        if traj is None:
            traj = Trajectory(self.h, q, v, self.cfg.integrator)
            self._traj[key] = traj
            if len(self._traj) > 4096:
                self._traj.popitem(last=False)
        return traj

    def margins(self, i: int, traj: Trajectory) -> np.ndarray:
        key = (self.modes[i], traj.start, i)
        m = self._margins.get(key)
        if m is None:
            margin = guard_fns(self.h, self.h.transitions[self.steps[i]])[1]
            ts = traj.times
            m = np.array([margin(float(ts[k]), traj.grid_state(k)) for k in range(len(ts))])
            if len(self._margins) > 8192:
                self._margins.clear()
            self._margins[key] = m
        return m

    def point_margin(self, i: int, traj: Trajectory, t: float) -> float:
        margin = guard_fns(self.h, self.h.transitions[self.steps[i]])[1]
        return margin(t, traj.at(t))

    def compose(self, i: int, traj: Trajectory, t: float) -> tuple:
        tr = self.h.transitions[self.steps[i]]
        return flow(self.h, tr.target, traj.at(t), 1.0 - t, self.cfg.integrator)

    # -- evaluation of the remaining path from a concrete valuation ----------

    def eval_from(self, i: int, v: tuple) -> _Eval:
        self.check_budget()
        self.probes += 1
        q = self.modes[i]
        try:
            traj = self.trajectory(q, v)
        except DivergenceError:
            return _Eval(-math.inf, -math.inf, None, False)
        step = self.steps[i]
        if isinstance(step, str):
            child = self.eval_from(i + 1, traj.end)
            times = (None,) + child.times if child.times is not None else None
            return _Eval(child.best, child.upper, times, child.undecided)
        m = self.margins(i, traj)
        ub = _cell_bounds(m)
        if i == self.last:
            return self._last_step(i, traj, m, ub)
        return self._middle_step(i, traj, m, ub)

    def _last_step(self, i: int, traj: Trajectory, m: np.ndarray, ub: np.ndarray) -> _Eval:
        ts = traj.times
        inner = m[1:-1]
        pos = np.nonzero(inner > 0)[0]
        if pos.size:
            j = int(pos[0]) + 1
            return _Eval(float(m[j]), float(ub.max()), (float(ts[j]),), False)
        best = float(inner.max()) if inner.size else -math.inf
        cand = np.nonzero(ub >= -self.delta)[0]
        if cand.size == 0:
            return _Eval(best, float(ub.max()), None, False)
        undecided = False
        upper = float(np.max(ub, initial=-math.inf, where=ub < -self.delta))
        for j in cand[:64]:
            found, cell_best, cell_upper = self._refine_cell(i, traj, float(ts[j]), float(ts[j + 1]),
                                                             float(m[j]), float(m[j + 1]))
            if found is not None:
                return _Eval(cell_best, max(upper, cell_upper), (found,), False)
            best = max(best, cell_best)
            upper = max(upper, cell_upper)
            if cell_upper >= -self.delta:
                undecided = True
        if cand.size > 64:
            undecided = True
            upper = max(upper, float(ub[cand].max()))
        return _Eval(best, upper, None, undecided)

    def _refine_cell(self, i, traj, a, b, ma, mb, levels: int = 4):
        """Midpoint probing of one grid cell; returns (witness time, best, upper)."""
        pts = [(a, ma), (b, mb)]
        for _ in range(levels):
            new = []
            for (t0, m0), (t1, m1) in zip(pts, pts[1:]):
                tm = 0.5 * (t0 + t1)
                new.append((tm, self.point_margin(i, traj, tm)))
            pts = sorted(pts + new)
            for t, mv in pts:
                if mv > 0 and TIME_EPS <= t <= 1.0 - TIME_EPS:
                    return t, mv, mv
        vals = np.array([mv for _, mv in pts])
        sub = np.maximum(vals[:-1], vals[1:]) + 0.5 * np.abs(np.diff(np.clip(vals, -1e200, 1e200)))
        return None, float(vals.max()), float(sub.max())

    def _middle_step(self, i: int, traj: Trajectory, m: np.ndarray, ub: np.ndarray) -> _Eval:
        ts = traj.times
        finite = m[np.isfinite(m)]
        spread = float(finite.max() - finite.min()) if finite.size else 0.0
        threshold = -self.delta - (0.25 * spread if self.tighten else 0.0)
        cand = ub >= threshold
        if not cand.any():
            return _Eval(float(m.max()), float(ub.max()), None, False)
        upper = float(np.max(ub, initial=-math.inf, where=~cand))
        best, undecided = -math.inf, False
        # contiguous runs of candidate cells become time intervals
        idx = np.nonzero(cand)[0]
        runs = np.split(idx, np.nonzero(np.diff(idx) > 1)[0] + 1)
        for run in runs:
            lo = max(float(ts[run[0]]), TIME_EPS)
            hi = min(float(ts[run[-1] + 1]), 1.0 - TIME_EPS)
            if hi <= lo:
                continue

            def region_ub(a, b, run=run):
                j0 = max(int(math.floor(a / self.cfg.integrator.h + 1e-9)), int(run[0]))
                j1 = min(int(math.ceil(b / self.cfg.integrator.h - 1e-9)), int(run[-1]) + 1)
                return float(ub[j0:max(j1, j0 + 1)].max())

            def probe(x, i=i, traj=traj):
                t = float(x[0])
                mi = self.point_margin(i, traj, t)
                try:
                    v2 = self.compose(i, traj, t)
                except DivergenceError:
                    return -math.inf, mi, None
                child = self.eval_from(i + 1, v2)
                value = min(mi, child.best)
                payload = (t,) + child.times if (value > 0 and child.times is not None) else None
                return value, child.upper if not child.undecided else max(child.upper, -self.delta), payload

            res = _branch_and_bound(self, np.array([lo]), np.array([hi]), np.array([1.0]), probe, region_ub, threshold)
            best = max(best, res.best)
            if res.payload is not None:
                return _Eval(res.best, max(upper, res.upper), res.payload, False)
            upper = max(upper, res.upper)
            undecided = undecided or res.undecided
        return _Eval(best, upper, None, undecided)


@dataclass
class _BnB:
    best: float
    upper: float
    payload: tuple | None
    point: np.ndarray | None
    undecided: bool


def _probe_points(lo: np.ndarray, hi: np.ndarray) -> list[tuple]:
    d = len(lo)
    c = 0.5 * (lo + hi)
    pts = [tuple(c)]
    if d <= 3:
        for corner in itertools.product(*[(a, b) for a, b in zip(lo, hi)]):
            pts.append(tuple(corner))
    else:
        for k in range(d):
            for end in (lo[k], hi[k]):
                p = c.copy()
                p[k] = end
                pts.append(tuple(p))
    return pts


def _branch_and_bound(search: _Search, lo, hi, scale, probe, region_ub=None, tight=None) -> _BnB:
    """Best-first search for a point where ``probe`` is positive.

    ``probe(x)`` returns ``(value, upper, payload)``; a positive value with a
    payload is a witness.  Boxes whose estimated upper bound falls below
    -precision are discarded; boxes that reach the precision or depth limit
    unresolved make the answer undecided.  With ``tight`` below -precision,
    boxes between the two thresholds keep being split (down to 1/32 of the
    initial width) so the returned upper
    bound is informative for an enclosing search, but they never make the
    answer undecided.
    """
    delta = search.delta
    tight = -delta if tight is None else min(tight, -delta)
    tight_width = float(((hi - lo) / scale).max()) / 32.0
    memo: dict = {}
    best = _BnB(-math.inf, -math.inf, None, None, False)
    counter = itertools.count()

    def evaluate(box_lo, box_hi):
        pts = _probe_points(box_lo, box_hi)
        vals = []
        for p in pts:
            if p not in memo:
                memo[p] = probe(np.array(p))
            vals.append((p, memo[p]))
        witnesses = [(p, r) for p, r in vals if r[0] > 0 and r[2] is not None]
        if witnesses:
            p, r = min(witnesses, key=lambda pr: (pr[1][2], pr[0]))
            return r[0], r[1], r[2], np.array(p), vals
        return None, None, None, None, vals

    def bound(box_lo, box_hi, vals, lip):
        norm = [np.array(p) / scale for p, _ in vals]
        ups = [max(r[1], VALUE_FLOOR) for _, r in vals]
        for a in range(len(vals)):
            for b in range(a + 1, len(vals)):
                dist = float(np.linalg.norm(norm[a] - norm[b]))
                if dist > 0:
                    lip = max(lip, abs(ups[a] - ups[b]) / dist)
        radius = 0.5 * float(np.linalg.norm((box_hi - box_lo) / scale))
        est = max(ups) + 1.5 * lip * radius
        if region_ub is not None:
            est = min(est, region_ub(float(box_lo[0]), float(box_hi[0])))
        return est, lip

    w_val, w_up, w_pay, w_pt, vals = evaluate(lo, hi)
    if w_pay is not None:
        return _BnB(w_val, w_up, w_pay, w_pt, False)
    best.best = max(r[0] for _, r in vals)
    ub, lip = bound(lo, hi, vals, 0.0)
    heap = [(-ub, next(counter), lo, hi, lip, 0)]
    closed_upper = -math.inf
    undecided = False
    while heap:
        neg_ub, _, blo, bhi, lip, depth = heapq.heappop(heap)
        ub = -neg_ub
        if ub < tight:
            closed_upper = max(closed_upper, ub)
            for item in heap:
                closed_upper = max(closed_upper, -item[0])
            heap = []
            break
        widths = (bhi - blo) / scale
        if ub < -delta and widths.max() <= tight_width:
            closed_upper = max(closed_upper, ub)
            continue
        if depth >= search.cfg.max_depth or widths.max() <= search.cfg.precision:
            undecided = undecided or ub >= -delta
            closed_upper = max(closed_upper, ub)
            continue
        k = int(np.argmax(widths))
        mid = 0.5 * (blo[k] + bhi[k])
        for clo, chi in ((blo, np.where(np.arange(len(blo)) == k, mid, bhi)),
                         (np.where(np.arange(len(blo)) == k, mid, blo), bhi)):
            w_val, w_up, w_pay, w_pt, vals = evaluate(clo, chi)
            if w_pay is not None:
                return _BnB(w_val, w_up, w_pay, w_pt, False)
            best.best = max(best.best, max(r[0] for _, r in vals))
            cub, clip_ = bound(clo, chi, vals, lip)
            heapq.heappush(heap, (-cub, next(counter), clo, chi, clip_, depth + 1))
    best.upper = closed_upper
    best.undecided = undecided
    return best


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def verify(h: HybridAutomaton, start_mode: str, steps: Sequence[Step], start: Sequence[float],
           times: Sequence[float | None], cfg: IntegratorConfig = IntegratorConfig()):
    """Chained re-simulation with strict guards; returns end-of-step valuations or None."""
    state = tuple(float(x) for x in start)
    mode = start_mode
    ends = []
    try:
        for step, t in zip(steps, times):
            if isinstance(step, str):
                state = flow(h, mode, state, 1.0, cfg)
            else:
                if t is None or not 0.0 < t < 1.0:
                    return None
                tr = h.transitions[step]
                mid = flow(h, mode, state, t, cfg)
                if not guard_fns(h, tr)[0](t, mid):
                    return None
                state = flow(h, tr.target, mid, 1.0 - t, cfg)
                mode = tr.target
            ends.append(state)
    except DivergenceError:
        return None
    return tuple(ends)


# ---------------------------------------------------------------------------
# Public queries
# ---------------------------------------------------------------------------


class SolverLog:
    """Audit trail of every query answered during a run."""

    def __init__(self):
        self.records: list[dict] = []

    def add(self, kind: str, res: SatResult, domain, seconds: float) -> None:
        self.records.append({
            "kind": kind,
            "start_mode": res.start_mode,
            "path": list(res.path),
            "domain": [list(b) for b in domain] if domain is not None else None,
            "status": res.status,
            "from_cache": res.from_cache,
            "probes": res.probes,
            "start": list(res.start) if res.start is not None else None,
            "times": list(res.times) if res.times is not None else None,
            "reason": res.reason,
            "seconds": seconds,
        })


def _finish(h, search: _Search, start_mode, steps, start, ev: _Eval, reason="") -> SatResult:
    if ev.times is not None and ev.best > 0:
        ends = verify(h, start_mode, steps, start, ev.times, search.cfg.integrator)
        if ends is not None:
            return SatResult("sat", start_mode, tuple(steps), tuple(start), tuple(ev.times), ends, search.probes)
        return SatResult("unknown", start_mode, tuple(steps), probes=search.probes,
                         reason="candidate witness failed strict re-simulation")
    if not ev.undecided and ev.upper < -search.delta:
        return SatResult("unsat", start_mode, tuple(steps), probes=search.probes)
    return SatResult("unknown", start_mode, tuple(steps), probes=search.probes,
                     reason=reason or "subdivision reached the precision or depth limit")


def _solve_box(h: HybridAutomaton, start_mode: str, steps: Sequence[Step], box: Box, cfg: SolverConfig) -> SatResult:
    if cfg.external:
        return external_solve(h, start_mode, steps, box, cfg)
    search = _Search(h, start_mode, steps, cfg)
    free = [k for k, (lo, hi) in enumerate(box) if hi > lo]
    base = [lo for lo, _ in box]
    try:
        if not free:
            start = tuple(base)
            ev = search.eval_from(0, start)
            return _finish(h, search, start_mode, steps, start, ev)

        def to_state(x):
            v = list(base)
            for k, val in zip(free, x):
                v[k] = float(val)
            return tuple(v)

        def probe(x):
            ev = search.eval_from(0, to_state(x))
            payload = ev.times if ev.best > 0 else None
            up = ev.upper if not ev.undecided else max(ev.upper, -search.delta)
            return ev.best, up, payload

        search.tighten = True
        lo = np.array([box[k][0] for k in free], dtype=float)
        hi = np.array([box[k][1] for k in free], dtype=float)
        res = _branch_and_bound(search, lo, hi, hi - lo, probe)
    except _Exhausted as exc:
        return SatResult("unknown", start_mode, tuple(steps), probes=search.probes, reason=str(exc))
    start = to_state(res.point) if res.point is not None else tuple(base)
    ev = _Eval(res.best, res.upper, res.payload, res.undecided)
    return _finish(h, search, start_mode, steps, start, ev)


def _domain_of(h: HybridAutomaton, box) -> Box:
    return tuple((float(lo), float(hi)) for lo, hi in (box if box is not None else h.domain()))


def solve_path_from(h: HybridAutomaton, start: ConcreteState, steps: Sequence[Step], cfg: SolverConfig = SolverConfig(),
                    cache: InfCache | None = None, log: SolverLog | None = None) -> SatResult:
    """fea(P, v): feasibility of ``steps`` from one concrete state."""
    t0 = time.perf_counter()
    steps = tuple(steps)
    path_modes(h, start.mode, steps)
    box = tuple((x, x) for x in start.valuation)
    sig = signature(h, start.mode, steps)
    if cache is not None and cache.lookup(h, start.mode, steps, None):
        res = SatResult("unsat", start.mode, steps, from_cache=True, reason="suffix proven infeasible")
    elif cache is not None and (known := cache.recall(sig, box)) is not None:
        res = known
    else:
        res = _solve_box(h, start.mode, steps, box, cfg)
        if cache is not None:
            cache.remember(sig, box, res)
    if log is not None:
        log.add("path_from", res, [(x, x) for x in start.valuation], time.perf_counter() - t0)
    return res


def solve_one_step(h: HybridAutomaton, s: ConcreteState, trans: int, cfg: SolverConfig = SolverConfig(),
                   cache: InfCache | None = None, log: SolverLog | None = None) -> SatResult:
    if h.transitions[trans].source != s.mode:
        raise ValueError(f"transition {trans} does not leave {s.mode!r}")
    return solve_path_from(h, s, (trans,), cfg, cache, log)


def solve_path_any(h: HybridAutomaton, start_mode: str, steps: Sequence[Step], box=None,
                   cfg: SolverConfig = SolverConfig(), cache: InfCache | None = None,
                   log: SolverLog | None = None) -> SatResult:
    """fea(P): feasibility from some valuation in ``box`` (default: the state bounds)."""
    t0 = time.perf_counter()
    steps = tuple(steps)
    path_modes(h, start_mode, steps)
    domain = _domain_of(h, box)
    sig = signature(h, start_mode, steps)
    if cache is not None and cache.lookup(h, start_mode, steps, domain):
        res = SatResult("unsat", start_mode, steps, from_cache=True, reason="path proven infeasible earlier")
    elif cache is not None and (known := cache.recall(sig, domain)) is not None:
        res = known
    else:
        res = _solve_box(h, start_mode, steps, domain, cfg)
        if cache is not None:
            cache.remember(sig, domain, res)
            if res.unsat:
                cache.add(sig, domain)
    if log is not None:
        log.add("path_any", res, domain, time.perf_counter() - t0)
    return res


@dataclass(frozen=True)
class BacktrackResult:
    status: str  # "sat", "infeasible", "unknown"
    trace: Trace | None = None  # prefix ending with the newly fired transition
    queries: int = 0
    note: str = ""


def _run_step(run: Trace, i: int) -> Step:
    jump = run.jumps[i]
    return run.states[i].mode if jump.is_stay else jump.transition


def witness_trace(h: HybridAutomaton, prefix_states: Sequence[ConcreteState], prefix_jumps: Sequence[Jump],
                  res: SatResult, origin: str = "solver") -> Trace:
    """Append a SAT witness (starting at the last prefix state) to a trace prefix."""
    states = list(prefix_states)
    jumps = list(prefix_jumps)
    if res.start is not None and tuple(res.start) != states[-1].valuation:
        states[-1] = ConcreteState(states[-1].mode, tuple(res.start))
    mode = states[-1].mode
    for step, t, end in zip(res.path, res.times, res.states):
        if isinstance(step, str):
            jumps.append(STAY)
        else:
            jumps.append(Jump(step, t))
            mode = h.transitions[step].target
        states.append(ConcreteState(mode, end))
    return Trace(tuple(states), tuple(jumps), origin)


def backtrack_solve(h: HybridAutomaton, run: Trace, k: int, trans: int, cfg: SolverConfig = SolverConfig(),
                    cache: InfCache | None = None, log: SolverLog | None = None) -> BacktrackResult:
    """Try to fire ``trans`` after step ``k`` of ``run``, growing the path backwards on failure.

    Each round asks fea(P, v_i) from the run's state at step i; on failure
    it asks fea(P) over all states the path could start from (the initial
    box when i = 0, the state bounds otherwise).  An infeasible fea(P) is
    cached and ends the search.  When the round at i = 0 finds fea(P) over
    the initial box satisfiable, that witness is itself a run from the
    initial mode and is returned.
    """
    cache = cache if cache is not None else InfCache()
    if h.transitions[trans].source != run.states[k].mode:
        raise ValueError(f"transition {trans} does not leave the run's mode at step {k}")
    i = k
    P: list[Step] = [trans]
    queries = 0
    saw_unknown = False
    while i >= 0:
        start_mode = run.states[i].mode
        domain = h.init_box if i == 0 else h.domain()
        if cache.lookup(h, start_mode, P, _domain_of(h, domain)):
            return BacktrackResult("infeasible", None, queries, "path already in the infeasible cache")
        r = solve_path_from(h, run.states[i], P, cfg, cache, log)
        queries += 1
        if r.sat:
            return BacktrackResult("sat", witness_trace(h, run.states[: i + 1], run.jumps[:i], r), queries)
        saw_unknown = saw_unknown or r.unknown
        r2 = solve_path_any(h, start_mode, P, domain, cfg, cache, log)
        queries += 1
        if r2.unsat:
            return BacktrackResult("infeasible", None, queries, "path infeasible from every start state")
        if r2.sat and i == 0:
            start = ConcreteState(start_mode, r2.start)
            return BacktrackResult("sat", witness_trace(h, [start], [], r2), queries, "witness from the initial box")
        saw_unknown = saw_unknown or r2.unknown
        if len(P) >= cfg.max_path_steps or i == 0:
            break
        i -= 1
        P.insert(0, _run_step(run, i))
    return BacktrackResult("unknown" if saw_unknown or i > 0 else "exhausted", None, queries,
                           "path length limit reached" if i > 0 else "no run state admits the path")


# ---------------------------------------------------------------------------
# External decision procedure hook
# ---------------------------------------------------------------------------


def query_document(h: HybridAutomaton, start_mode: str, steps: Sequence[Step], box: Box, precision: float) -> dict:
    from .modelfile import to_dict

    return {
        "model": to_dict(h),
        "start_mode": start_mode,
        "path": list(steps),
        "domain": [list(b) for b in box],
        "precision": precision,
    }


def external_solve(h: HybridAutomaton, start_mode: str, steps: Sequence[Step], box: Box, cfg: SolverConfig) -> SatResult:
    """Send the query as JSON on stdin to ``cfg.external``; expects a JSON answer on stdout.

    The answer is ``{"status": "sat" | "unsat" | "unknown", "start": [...], "times": [...]}``.
    SAT answers are still re-simulated here before they are trusted.
    """
    doc = query_document(h, start_mode, steps, box, cfg.precision)
    try:
        proc = subprocess.run(cfg.external, shell=True, input=json.dumps(doc), capture_output=True,
                              text=True, timeout=cfg.budget)
        ans = json.loads(proc.stdout)
        status = ans["status"]
    except (subprocess.TimeoutExpired, ValueError, KeyError, TypeError) as exc:
        return SatResult("unknown", start_mode, tuple(steps), reason=f"external solver: {exc}")
    if status == "sat":
        start, times = tuple(ans["start"]), tuple(ans["times"])
        ends = verify(h, start_mode, steps, start, times, cfg.integrator)
        if ends is None:
            return SatResult("unknown", start_mode, tuple(steps), reason="external witness failed re-simulation")
        return SatResult("sat", start_mode, tuple(steps), start, times, ends)
    if status in ("unsat", "unknown"):
        return SatResult(status, start_mode, tuple(steps), reason="external solver")
    return SatResult("unknown", start_mode, tuple(steps), reason=f"external solver answered {status!r}")
