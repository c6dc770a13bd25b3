"""Small analytic automata used by tests, demos and the acceptance suite."""
from __future__ import annotations

from .automaton import HybridAutomaton
from .modelfile import from_dict


def single_variable(
    flows: dict[str, str],
    transitions: list[tuple[str, str, str]],
    x0: float | tuple[float, float] = 0.0,
    initial_mode: str | None = None,
    negative: tuple[str, ...] = (),
    steps: int = 1,
    bounds: tuple[float, float] | None = None,
    name: str = "toy",
) -> HybridAutomaton:
    """One variable ``x``; ``flows`` maps mode -> x' and transitions are (source, guard, target)."""
    doc = {
        "name": name,
        "variables": ["x"],
        "initial_mode": initial_mode or next(iter(flows)),
        "initial": {"x": list(x0) if isinstance(x0, tuple) else x0},
        "modes": {q: [rhs] for q, rhs in flows.items()},
        "transitions": [{"source": s, "guard": g, "target": t} for s, g, t in transitions],
        "negative": list(negative),
        "steps": steps,
    }
    if bounds is not None:
        doc["bounds"] = {"x": list(bounds)}
    return from_dict(doc)


def two_window() -> HybridAutomaton:
    """x' = 1 from x = 0; guards with exact windows (0.1, 0.4) and (0.5, 0.6), measures 0.3 and 0.1."""
    return single_variable(
        {"q": "1", "a": "0", "b": "0"},
        [("q", "x > 0.1 and x < 0.4", "a"), ("q", "x > 0.5 and x < 0.6", "b")],
        name="two_window",
    )


def rare_window(w: float, steps: int = 1) -> HybridAutomaton:
    """x' = 1 from x = 0; the only transition, into the negative mode, is open on (0.5, 0.5 + w)."""
    return single_variable(
        {"q": "1", "bad": "0"},
        [("q", f"x > 0.5 and x < {0.5 + w!r}", "bad")],
        negative=("bad",),
        steps=steps,
        bounds=(-1.0, 10.0),
        name=f"rare_window_{w}",
    )


def unit_flows(rate1: str = "1", rate2: str = "1", guard1: str = "x > 0.4", guard2: str = "x > 1.5",
               box: float | tuple[float, float] = 0.0) -> HybridAutomaton:
    """Three modes a -> b -> c with x' given per mode; used for path-condition queries."""
    return single_variable(
        {"a": rate1, "b": rate2, "c": "0"},
        [("a", guard1, "b"), ("b", guard2, "c")],
        x0=box,
        negative=("c",),
        steps=2,
        bounds=(-10.0, 10.0),
        name="unit_flows",
    )
