"""Empirical tree of visited mode paths with particles and discovery counters."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .automaton import ConcreteState, HybridAutomaton, Trace, backward_reachable_modes, outgoing


class TraceMismatchError(ValueError):
    pass


class NoDataError(ValueError):
    pass


@dataclass(frozen=True)
class Particle:
    state: ConcreteState
    trace: Trace
    step: int  # index of ``state`` in ``trace.states``


@dataclass(eq=False)
class ExploreNode:
    path: tuple[str, ...]
    parent: "ExploreNode | None" = None
    via: int | None = None  # transition that first created this node, None for a stay or the root
    m: int = 0
    n: int = 0
    visits: int = 0
    discovered_by: str = "random"
    children: dict[str, "ExploreNode"] = field(default_factory=dict)
    particles: list[Particle] = field(default_factory=list)
    seen: int = 0

    @property
    def mode(self) -> str:
        return self.path[-1]

    @property
    def depth(self) -> int:
        return len(self.path) - 1

    @property
    def attempts(self) -> int:
        return self.m + self.n

    def __repr__(self):
        return f"ExploreNode({'/'.join(self.path)}, m={self.m}, n={self.n})"


def estimate_q(node: ExploreNode) -> float:
    """Posterior mean of the discovery probability under a uniform prior."""
    return (node.n + 1) / (node.m + node.n + 2)


class ExploreTree:
    def __init__(self, h: HybridAutomaton, K: int | None = None, cap: int = 256,
                 rng: np.random.Generator | None = None):
        if cap < 1:
            raise ValueError("particle cap must be >= 1")
        self.automaton = h
        self.K = K if K is not None else h.steps
        self.cap = cap
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.qbad = backward_reachable_modes(h)
        self.root = ExploreNode((h.initial_mode,))
        self.symbolic_failures: dict[tuple[tuple[str, ...], str], int] = {}
        self.infeasible: set[tuple[tuple[str, ...], str]] = set()
        self.traces_recorded = 0

    # -- updates -------------------------------------------------------------

    def _insert(self, node: ExploreNode, particle: Particle) -> None:
        node.seen += 1
        if len(node.particles) < self.cap:
            node.particles.append(particle)
        else:
            j = int(self.rng.integers(node.seen))
            if j < self.cap:
                node.particles[j] = particle

    def record_trace(self, tr: Trace) -> list[ExploreNode]:
        """Walk the trace's mode sequence, updating counters; returns newly created nodes."""
        h = self.automaton
        if not tr.states or tr.states[0].mode != self.root.mode:
            raise TraceMismatchError(f"trace does not start in {self.root.mode!r}")
        if len(tr.jumps) > self.K or len(tr.states) != len(tr.jumps) + 1:
            raise TraceMismatchError("trace length does not fit the tree bound")
        for k, (s, jump, nxt) in enumerate(zip(tr.states, tr.jumps, tr.states[1:])):
            if jump.is_stay:
                ok = nxt.mode == s.mode
            else:
                if not 0 <= jump.transition < len(h.transitions):
                    raise TraceMismatchError(f"step {k}: unknown transition {jump.transition}")
                t = h.transitions[jump.transition]
                ok = t.source == s.mode and t.target == nxt.mode
            if not ok:
                raise TraceMismatchError(f"step {k}: jump {jump} does not connect {s.mode!r} to {nxt.mode!r}")
        self.traces_recorded += 1
        node = self.root
        node.visits += 1
        self._insert(node, Particle(tr.states[0], tr, 0))
        created = []
        for k, (jump, nxt) in enumerate(zip(tr.jumps, tr.states[1:])):
            child = node.children.get(nxt.mode)
            if child is None:
                child = ExploreNode(node.path + (nxt.mode,), node, jump.transition, discovered_by=tr.origin)
                node.children[nxt.mode] = child
                node.n += 1
                created.append(child)
            else:
                node.m += 1
            child.visits += 1
            self._insert(child, Particle(nxt, tr, k + 1))
            node = child
        return created

    def note_symbolic_failure(self, node: ExploreNode, target: str) -> None:
        key = (node.path, target)
        self.symbolic_failures[key] = self.symbolic_failures.get(key, 0) + 1

    def note_infeasible(self, node: ExploreNode, target: str) -> None:
        """Drop (node, target) from the frontier after the solver proved it unreachable."""
        self.infeasible.add((node.path, target))

    def failures(self, node: ExploreNode, target: str) -> int:
        return self.symbolic_failures.get((node.path, target), 0)

    # -- queries -------------------------------------------------------------

    def nodes(self) -> Iterator[ExploreNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(sorted(node.children.values(), key=lambda c: c.path, reverse=True))

    def find(self, path: tuple[str, ...]) -> ExploreNode | None:
        node = self.root
        if path[:1] != node.path:
            return None
        for q in path[1:]:
            node = node.children.get(q)
            if node is None:
                return None
        return node

    def targets(self, node: ExploreNode) -> set[str]:
        return {t.target for t in outgoing(self.automaton, node.mode)}

    def unvisited_targets(self, node: ExploreNode, qbad: set[str] | None = None) -> set[str]:
        if node.depth >= self.K:
            return set()
        keep = self.qbad if qbad is None else qbad
        dead = {v for p, v in self.infeasible if p == node.path}
        return (self.targets(node) - set(node.children) - dead) & keep

    def frontier(self, qbad: set[str] | None = None) -> list[tuple[ExploreNode, str]]:
        """(node, unvisited target) pairs, ordered by node path then target name."""
        pairs = []
        for node in self.nodes():
            for v in sorted(self.unvisited_targets(node, qbad)):
                pairs.append((node, v))
        pairs.sort(key=lambda p: (p[0].path, p[1]))
        return pairs

    def empirical_transition_probabilities(self, node: ExploreNode) -> dict[str, float]:
        total = sum(c.visits for c in node.children.values())
        if total == 0:
            raise NoDataError(f"no recorded steps leave node {'/'.join(node.path)}")
        probs = {q: c.visits / total for q, c in sorted(node.children.items())}
        s = math.fsum(probs.values())
        return {q: p / s for q, p in probs.items()}

    def summary(self) -> list[dict]:
        return [
            {
                "path": list(node.path),
                "m": node.m,
                "n": node.n,
                "q_hat": estimate_q(node),
                "visits": node.visits,
                "particles": len(node.particles),
                "discovered_by": node.discovered_by,
                "unvisited": sorted(self.unvisited_targets(node)),
            }
            for node in sorted(self.nodes(), key=lambda n: n.path)
        ]
