"""JSON model files <-> HybridAutomaton.

Schema (all keys except ``comment``, ``parameters``, ``bounds`` and ``steps`` are required)::

    {
      "name": "oscillator",
      "comment": "free text, or a list of lines",
      "variables": ["x", "v"],
      "parameters": {"a": 0.785398},
      "initial_mode": "q0",
      "initial": {"x": 0, "v": [0, 6.283185]},
      "bounds": {"x": [-10, 10], "v": [-50, 50]},
      "modes": {"q0": ["v", "-v - 4*pi^2*x"], "qe": ["0", "0"]},
      "transitions": [{"source": "q0", "guard": "x > a", "target": "qe"}],
      "negative": ["qe"],
      "steps": 5
    }
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .automaton import HybridAutomaton, Transition, check_valid, ModelError
from .expr import ExprError, parse_expr, parse_guard, to_text

REQUIRED = ("name", "variables", "initial_mode", "initial", "modes", "transitions", "negative")
OPTIONAL = ("comment", "parameters", "bounds", "steps")
BUNDLED = ("oscillator", "bouncing_ball", "sewerage", "room_heating_2x1", "navigation_3x3")


class ModelFileError(ValueError):
    pass


def _box(raw: Any, variables, where: str) -> tuple[tuple[float, float], ...]:
    if not isinstance(raw, Mapping):
        raise ModelFileError(f"{where}: expected an object mapping variables to intervals")
    extra = set(raw) - set(variables)
    if extra:
        raise ModelFileError(f"{where}: unknown variable(s) {sorted(extra)}")
    box = []
    for v in variables:
        if v not in raw:
            raise ModelFileError(f"{where}.{v}: missing")
        item = raw[v]
        if isinstance(item, (int, float)) and not isinstance(item, bool):
            box.append((float(item), float(item)))
        elif isinstance(item, list) and len(item) == 2 and all(isinstance(x, (int, float)) for x in item):
            box.append((float(item[0]), float(item[1])))
        else:
            raise ModelFileError(f"{where}.{v}: expected a number or a [low, high] pair")
    return tuple(box)


def from_dict(doc: Mapping[str, Any]) -> HybridAutomaton:
    if not isinstance(doc, Mapping):
        raise ModelFileError("model: expected a JSON object")
    if "bltl" in doc:
        raise ModelFileError(
            "bltl: temporal-logic properties are not accepted; reduce the property to reachability "
            "of negative modes (add monitor modes to the automaton) and list them under 'negative'"
        )
    unknown = set(doc) - set(REQUIRED) - set(OPTIONAL)
    if unknown:
        raise ModelFileError(f"model: unknown key(s) {sorted(unknown)}")
    missing = [k for k in REQUIRED if k not in doc]
    if missing:
        raise ModelFileError(f"model: missing key(s) {missing}")

    variables = doc["variables"]
    if not (isinstance(variables, list) and all(isinstance(v, str) for v in variables)):
        raise ModelFileError("variables: expected a list of names")
    params = doc.get("parameters", {}) or {}
    if not isinstance(params, Mapping) or not all(isinstance(x, (int, float)) for x in params.values()):
        raise ModelFileError("parameters: expected an object of numeric constants")
    clash = set(params) & set(variables)
    if clash:
        raise ModelFileError(f"parameters: names clash with variables {sorted(clash)}")

    modes_raw = doc["modes"]
    if not isinstance(modes_raw, Mapping) or not modes_raw:
        raise ModelFileError("modes: expected a non-empty object")
    flows = {}
    for q, rhs in modes_raw.items():
        if not (isinstance(rhs, list) and all(isinstance(e, (str, int, float)) for e in rhs)):
            raise ModelFileError(f"modes.{q}: expected a list of expression strings")
        if len(rhs) != len(variables):
            raise ModelFileError(f"modes.{q}: {len(rhs)} right-hand sides for {len(variables)} variables")
        parsed = []
        for j, e in enumerate(rhs):
            try:
                parsed.append(parse_expr(str(e), variables, params))
            except ExprError as exc:
                raise ModelFileError(f"modes.{q}[{j}] ({variables[j]}'): {exc}") from None
        flows[q] = tuple(parsed)

    transitions = []
    raw_tr = doc["transitions"]
    if not isinstance(raw_tr, list):
        raise ModelFileError("transitions: expected a list")
    for k, item in enumerate(raw_tr):
        if not isinstance(item, Mapping) or set(item) != {"source", "guard", "target"}:
            raise ModelFileError(f"transitions[{k}]: expected exactly the keys source, guard, target")
        try:
            g = parse_guard(str(item["guard"]), variables, params)
        except ExprError as exc:
            raise ModelFileError(f"transitions[{k}].guard: {exc}") from None
        transitions.append(Transition(k, item["source"], g, item["target"]))

    negative = doc["negative"]
    if not (isinstance(negative, list) and all(isinstance(q, str) for q in negative)):
        raise ModelFileError("negative: expected a list of mode names")
    steps = doc.get("steps", 5)
    if not isinstance(steps, int) or isinstance(steps, bool):
        raise ModelFileError("steps: expected an integer")
    comment = doc.get("comment", "")
    if isinstance(comment, list):
        comment = "\n".join(str(c) for c in comment)

    h = HybridAutomaton(
        name=str(doc["name"]),
        variables=tuple(variables),
        modes=tuple(modes_raw),
        initial_mode=doc["initial_mode"],
        init_box=_box(doc["initial"], variables, "initial"),
        flows=flows,
        transitions=tuple(transitions),
        negative=frozenset(negative),
        bounds=_box(doc["bounds"], variables, "bounds") if "bounds" in doc else None,
        steps=steps,
        params={k: float(v) for k, v in params.items()},
        comment=str(comment),
    )
    try:
        return check_valid(h)
    except ModelError as exc:
        raise ModelFileError("; ".join(exc.diagnostics)) from None


def to_dict(h: HybridAutomaton) -> dict:
    """Serialize with canonical expression text (parameters already substituted)."""

    def interval(lo, hi):
        return lo if lo == hi else [lo, hi]

    doc = {
        "name": h.name,
        "comment": h.comment,
        "variables": list(h.variables),
        "initial_mode": h.initial_mode,
        "initial": {v: interval(*b) for v, b in zip(h.variables, h.init_box)},
        "modes": {q: [to_text(e) for e in h.flows[q]] for q in h.modes},
        "transitions": [
            {"source": tr.source, "guard": to_text(tr.guard), "target": tr.target} for tr in h.transitions
        ],
        "negative": sorted(h.negative),
        "steps": h.steps,
    }
    if h.bounds is not None:
        doc["bounds"] = {v: list(b) for v, b in zip(h.variables, h.bounds)}
    return doc


def loads(text: str) -> HybridAutomaton:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(doc)


def load(path: str | Path) -> HybridAutomaton:
    """Load a model file; a bare bundled name such as ``oscillator`` also works."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        return load_bundled(str(path))
    try:
        text = p.read_text()
    except OSError as exc:
        raise ModelFileError(f"{path}: {exc.strerror}") from None
    try:
        return loads(text)
    except ModelFileError as exc:
        raise ModelFileError(f"{path}: {exc}") from None


def load_bundled(name: str) -> HybridAutomaton:
    if name not in BUNDLED:
        raise ModelFileError(f"no bundled model named {name!r}; choose from {', '.join(BUNDLED)}")
    text = resources.files("hyc").joinpath("models", f"{name}.json").read_text()
    return loads(text)
