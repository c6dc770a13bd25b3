"""Fixed-step RK4 trajectories inside a mode and the one-step composition.

Every integration in the package goes through the same grid: full steps of
size ``h`` from local time 0, then one partial RK4 step for the residual.
That makes ``flow(v, t)`` and ``Trajectory.at(t)`` agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .automaton import HybridAutomaton, Transition
from .expr import COMPILE_GLOBALS, TIME, eval_expr, py_source

DIVERGENCE_LIMIT = 1e12


class DivergenceError(ArithmeticError):
    def __init__(self, mode: str, step: int, time: float, state=None, reason: str = "non-finite state"):
        self.mode = mode
        self.step = step
        self.time = time
        self.state = state
        super().__init__(f"integration diverged in mode {mode!r} at step {step} (t={time:.6g}): {reason}")


@dataclass(frozen=True)
class IntegratorConfig:
    h: float = 1e-3
    method: str = "rk4"

    def __post_init__(self):
        if not 0 < self.h <= 0.1:
            raise ValueError(f"integrator step must lie in (0, 0.1], got {self.h}")
        n = 1.0 / self.h
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError(f"1/h must be an integer, got 1/{self.h} = {n}")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}")

    @property
    def n(self) -> int:
        return round(1.0 / self.h)


def locate(t: float, h: float) -> tuple[int, float]:
    """Split ``t`` into ``k`` full grid steps and a residual step length."""
    k = math.floor(t / h + 1e-9)
    r = t - k * h
    if abs(r) <= 1e-12:
        r = 0.0
    return k, r


class _Work:
    """Process-wide count of RK4 steps; drives the deterministic cost clock."""

    steps = 0


def work_done() -> int:
    return _Work.steps


# ---------------------------------------------------------------------------
# Compiled integrators
# ---------------------------------------------------------------------------


def _rk4_source(rhs: Sequence, variables: Sequence[str]) -> str:
    n = len(variables)
    xs = [f"_x{i}" for i in range(n)]

    def stage(k: int, state: list[str], tname: str) -> list[str]:
        names = dict(zip(variables, state))
        names[TIME] = tname
        return [f"        _k{k}_{i} = {py_source(e, names)}" for i, e in enumerate(rhs)]

    lines = [
        "def _run(_s, _t0, _h, _n, _out, _mode):",
        f"    {''.join(x + ', ' for x in xs)}= _s" if n else "    pass",
        "    _hh = _h * 0.5",
        "    _h6 = _h / 6.0",
        "    _step = 0",
        "    while _step < _n:",
        "        _t = _t0 + _step * _h",
    ]
    lines += stage(1, xs, "_t")
    lines += [f"        _y{i} = {xs[i]} + _hh * _k1_{i}" for i in range(n)]
    lines += stage(2, [f"_y{i}" for i in range(n)], "(_t + _hh)")
    lines += [f"        _y{i} = {xs[i]} + _hh * _k2_{i}" for i in range(n)]
    lines += stage(3, [f"_y{i}" for i in range(n)], "(_t + _hh)")
    lines += [f"        _y{i} = {xs[i]} + _h * _k3_{i}" for i in range(n)]
    lines += stage(4, [f"_y{i}" for i in range(n)], "(_t + _h)")
    lines += [
        f"        {xs[i]} = {xs[i]} + _h6 * (_k1_{i} + 2.0 * _k2_{i} + 2.0 * _k3_{i} + _k4_{i})"
        for i in range(n)
    ]
    lines.append("        _step += 1")
    if n:
        check = " and ".join(f"-_L <= {x} <= _L" for x in xs)
        lines += [
            f"        if not ({check}):",
            f"            raise _Div(_mode, _step, _t0 + _step * _h, ({', '.join(xs)},))",
        ]
    lines += [
        "        if _out is not None:",
        f"            _out.append(({''.join(x + ', ' for x in xs)}))",
        f"    return ({''.join(x + ', ' for x in xs)})",
    ]
    return "\n".join(lines) + "\n"


def _integrator(h: HybridAutomaton, q: str):
    key = ("rk4", q)
    fn = h._compiled.get(key)
    if fn is None:
        src = _rk4_source(h.flows[q], h.variables)
        namespace: dict = {}
        env = dict(COMPILE_GLOBALS, _Div=DivergenceError, _L=DIVERGENCE_LIMIT)
        exec(compile(src, f"<hyc:rk4:{h.name}:{q}>", "exec"), env, namespace)
        fn = h._compiled[key] = namespace["_run"]
    return fn


def _advance(h: HybridAutomaton, q: str, v: tuple, t0: float, dt: float, steps: int, out=None) -> tuple:
    fn = _integrator(h, q)
    try:
        result = fn(v, t0, dt, steps, out, q)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise DivergenceError(q, -1, t0, v, f"right-hand side left its domain ({exc})") from None
    _Work.steps += steps
    return result


def rk4_step_reference(h: HybridAutomaton, q: str, v: Sequence[float], t: float, dt: float) -> tuple:
    """One interpreted RK4 step with the same operation order as the compiled loop."""
    names = h.variables
    rhs = h.flows[q]

    def f(state, tt):
        env = dict(zip(names, state))
        return [eval_expr(e, env, tt) for e in rhs]

    hh = dt * 0.5
    k1 = f(v, t)
    k2 = f([x + hh * k for x, k in zip(v, k1)], t + hh)
    k3 = f([x + hh * k for x, k in zip(v, k2)], t + hh)
    k4 = f([x + dt * k for x, k in zip(v, k3)], t + dt)
    h6 = dt / 6.0
    return tuple(x + h6 * (a + 2.0 * b + 2.0 * c + d) for x, a, b, c, d in zip(v, k1, k2, k3, k4))


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def flow(h: HybridAutomaton, q: str, v: Sequence[float], t: float, cfg: IntegratorConfig = IntegratorConfig()) -> tuple:
    """θ_q(v, t) for t in [0, 1] (longer horizons are allowed and just take more steps)."""
    if not t >= 0.0:
        raise ValueError(f"flow time must be non-negative, got {t}")
    v = tuple(float(x) for x in v)
    k, r = locate(t, cfg.h)
    state = _advance(h, q, v, 0.0, cfg.h, k) if k else v
    if r > 0.0:
        state = _advance(h, q, state, k * cfg.h, r, 1)
    return state


class Trajectory:
    """Dense evaluator of θ_q(v, ·) on [0, 1]: grid states plus one partial step."""

    def __init__(self, h: HybridAutomaton, q: str, v: Sequence[float], cfg: IntegratorConfig = IntegratorConfig()):
        self.automaton = h
        self.mode = q
        self.start = tuple(float(x) for x in v)
        self.cfg = cfg
        out = [self.start]
        _advance(h, q, self.start, 0.0, cfg.h, cfg.n, out)
        self._grid = out
        self.work = cfg.n

    @property
    def grid(self) -> np.ndarray:
        """States at t = k*h, k = 0..1/h, as an array of shape (1/h + 1, dim)."""
        return np.array(self._grid, dtype=float).reshape(len(self._grid), -1)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.cfg.n + 1) * self.cfg.h

    def grid_state(self, k: int) -> tuple:
        return self._grid[k]

    def at(self, t: float) -> tuple:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"trajectory time must lie in [0, 1], got {t}")
        k, r = locate(t, self.cfg.h)
        state = self._grid[k]
        if r > 0.0:
            self.work += 1
            state = _advance(self.automaton, self.mode, state, k * self.cfg.h, r, 1)
        return state

    @property
    def end(self) -> tuple:
        return self._grid[-1]


def compose_step(
    h: HybridAutomaton,
    q: str,
    v: Sequence[float],
    trans: Transition | int,
    t: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    traj: Trajectory | None = None,
) -> tuple:
    """v_{q,p}(v, t) = θ_p(θ_q(v, t), 1 - t)."""
    if isinstance(trans, int):
        trans = h.transitions[trans]
    if trans.source != q:
        raise ValueError(f"transition {trans} does not leave mode {q!r}")
    if not 0.0 < t < 1.0:
        raise ValueError(f"firing time must lie in the open interval (0, 1), got {t}")
    mid = traj.at(t) if traj is not None else flow(h, q, v, t, cfg)
    return flow(h, trans.target, mid, 1.0 - t, cfg)
