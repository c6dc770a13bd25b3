"""Hybrid automaton model, concrete states and traces."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .expr import TIME, Expr, Guard, expr_length, to_text, variables_of


class UnknownModeError(KeyError):
    def __init__(self, mode):
        self.mode = mode
        super().__init__(f"unknown mode {mode!r}")

    def __str__(self):
        return self.args[0]


class ModelError(ValueError):
    """Raised when an automaton fails validation."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class Transition:
    index: int
    source: str
    guard: Guard
    target: str

    def __str__(self):
        return f"#{self.index} {self.source} -[{to_text(self.guard)}]-> {self.target}"


@dataclass
class HybridAutomaton:
    """Modes with per-mode flows, guarded jumps that keep the valuation, and a negative set.

    ``bounds`` is an optional box every reachable state is assumed to lie in;
    the solver uses it as the domain of path queries that start mid-trace.
    ``steps`` is the default trace bound K.
    """

    name: str
    variables: tuple[str, ...]
    modes: tuple[str, ...]
    initial_mode: str
    init_box: tuple[tuple[float, float], ...]
    flows: dict[str, tuple[Expr, ...]]
    transitions: tuple[Transition, ...]
    negative: frozenset[str] = frozenset()
    bounds: tuple[tuple[float, float], ...] | None = None
    steps: int = 5
    params: dict[str, float] = field(default_factory=dict)
    comment: str = ""

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.modes = tuple(self.modes)
        self.init_box = tuple((float(lo), float(hi)) for lo, hi in self.init_box)
        self.flows = {q: tuple(f) for q, f in self.flows.items()}
        self.transitions = tuple(self.transitions)
        self.negative = frozenset(self.negative)
        if self.bounds is not None:
            self.bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        self._compiled = {}

    # compiled callables are rebuilt on demand, so they never travel through pickle
    def __getstate__(self):
        state = self.__dict__.copy()
        state["_compiled"] = {}
        return state

    @property
    def dim(self) -> int:
        return len(self.variables)

    def transition(self, index: int) -> Transition:
        return self.transitions[index]

    def outgoing(self, q: str) -> list[Transition]:
        return outgoing(self, q)

    def is_point_box(self) -> bool:
        return all(lo == hi for lo, hi in self.init_box)

    def domain(self) -> tuple[tuple[float, float], ...]:
        """Box used for mid-trace start states: ``bounds`` or a wide default."""
        if self.bounds is not None:
            return self.bounds
        return tuple((-1e6, 1e6) for _ in self.variables)

    def flow_length(self, q: str) -> int:
        return sum(expr_length(e) for e in self.flows[q])


def validate(h: HybridAutomaton) -> list[str]:
    """Return a list of located diagnostics; empty means the automaton is well formed."""
    diags: list[str] = []
    modes = set(h.modes)
    if len(modes) != len(h.modes):
        seen = set()
        for q in h.modes:
            if q in seen:
                diags.append(f"modes: duplicate mode name {q!r}")
            seen.add(q)
    if len(set(h.variables)) != len(h.variables):
        diags.append("variables: duplicate variable name")
    if TIME in h.variables:
        diags.append(f"variables: {TIME!r} is reserved for time")
    if h.initial_mode not in modes:
        diags.append(f"initial_mode: {h.initial_mode!r} is not a declared mode")
    if len(h.init_box) != len(h.variables):
        diags.append(f"initial: box has {len(h.init_box)} intervals for {len(h.variables)} variables")
    for i, (lo, hi) in enumerate(h.init_box):
        name = h.variables[i] if i < len(h.variables) else f"#{i}"
        if not (math.isfinite(lo) and math.isfinite(hi)):
            diags.append(f"initial[{name}]: bounds must be finite")
        elif lo > hi:
            diags.append(f"initial[{name}]: lower bound {lo} exceeds upper bound {hi}")
    if h.bounds is not None:
        if len(h.bounds) != len(h.variables):
            diags.append(f"bounds: {len(h.bounds)} intervals for {len(h.variables)} variables")
        else:
            for i, (lo, hi) in enumerate(h.bounds):
                name = h.variables[i]
                if not lo < hi:
                    diags.append(f"bounds[{name}]: empty interval [{lo}, {hi}]")
                elif i < len(h.init_box) and not lo <= h.init_box[i][0] <= h.init_box[i][1] <= hi:
                    diags.append(f"bounds[{name}]: does not contain the initial interval")
    declared = set(h.variables) | {TIME}
    for q in h.modes:
        if q not in h.flows:
            diags.append(f"modes[{q}]: no flow given")
            continue
        rhs = h.flows[q]
        if len(rhs) != len(h.variables):
            diags.append(f"modes[{q}]: {len(rhs)} right-hand sides for {len(h.variables)} variables")
        for j, e in enumerate(rhs):
            bad = variables_of(e) - declared
            if bad:
                diags.append(f"modes[{q}][{j}]: undeclared variable(s) {sorted(bad)}")
    for q in h.flows:
        if q not in modes:
            diags.append(f"modes: flow given for undeclared mode {q!r}")
    for k, tr in enumerate(h.transitions):
        if tr.index != k:
            diags.append(f"transitions[{k}]: index field is {tr.index}")
        if tr.source not in modes:
            diags.append(f"transitions[{k}]: source {tr.source!r} is not a declared mode")
        if tr.target not in modes:
            diags.append(f"transitions[{k}]: target {tr.target!r} is not a declared mode")
        bad = variables_of(tr.guard) - declared
        if bad:
            diags.append(f"transitions[{k}]: guard uses undeclared variable(s) {sorted(bad)}")
    for q in sorted(h.negative - modes):
        diags.append(f"negative: {q!r} is not a declared mode")
    if h.steps < 1:
        diags.append(f"steps: must be >= 1, got {h.steps}")
    return diags


def check_valid(h: HybridAutomaton) -> HybridAutomaton:
    diags = validate(h)
    if diags:
        raise ModelError(diags)
    return h


def outgoing(h: HybridAutomaton, q: str) -> list[Transition]:
    if q not in h.modes:
        raise UnknownModeError(q)
    return [tr for tr in h.transitions if tr.source == q]


def backward_reachable_modes(h: HybridAutomaton) -> set[str]:
    """Modes with a transition-graph path (possibly empty) into the negative set."""
    preds: dict[str, set[str]] = {q: set() for q in h.modes}
    for tr in h.transitions:
        preds.setdefault(tr.target, set()).add(tr.source)
    seen = set(h.negative)
    queue = deque(seen)
    while queue:
        q = queue.popleft()
        for p in preds.get(q, ()):
            if p not in seen:
                seen.add(p)
                queue.append(p)
    return seen


@dataclass(frozen=True)
class ConcreteState:
    mode: str
    valuation: tuple[float, ...]

    def env(self, variables: Sequence[str]) -> dict[str, float]:
        return dict(zip(variables, self.valuation))


@dataclass(frozen=True)
class Jump:
    """One unit step: a fired transition with its time, or a stay (both None)."""

    transition: int | None = None
    time: float | None = None

    @property
    def is_stay(self) -> bool:
        return self.transition is None


STAY = Jump()


@dataclass(frozen=True)
class Trace:
    states: tuple[ConcreteState, ...]
    jumps: tuple[Jump, ...]
    origin: str = "random"
    work: int = field(default=0, compare=False)

    @property
    def modes(self) -> tuple[str, ...]:
        return tuple(s.mode for s in self.states)

    def __len__(self):
        return len(self.jumps)

    def to_dict(self) -> dict:
        return {
            "modes": list(self.modes),
            "valuations": [list(s.valuation) for s in self.states],
            "jumps": [
                None if j.is_stay else {"transition": j.transition, "time": j.time} for j in self.jumps
            ],
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Trace":
        states = tuple(
            ConcreteState(q, tuple(float(x) for x in v)) for q, v in zip(d["modes"], d["valuations"])
        )
        jumps = tuple(STAY if j is None else Jump(int(j["transition"]), float(j["time"])) for j in d["jumps"])
        return cls(states, jumps, d.get("origin", "random"))


def visits_negative(h: HybridAutomaton, tr: Trace) -> bool:
    return any(s.mode in h.negative for s in tr.states)
