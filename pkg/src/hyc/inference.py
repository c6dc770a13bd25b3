"""Bayesian confidence from trace tallies under a power-law effectiveness function.

With ``n`` positive and ``m`` negative samples and effectiveness φ(θ) = θ^α,
the posterior over the error probability θ is proportional to
θ^(αm) (1 - θ^α)^n, and the confidence that θ < δ is its mass on [0, δ].
Everything here is computed by adaptive quadrature (scipy's QUADPACK
wrapper); the integrand is rescaled by its maximum and split at its mode
and at a few posterior-width multiples so that sharply peaked posteriors
are integrated reliably.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .automaton import HybridAutomaton, outgoing
from .ode import IntegratorConfig, Trajectory
from .sampler import exact_windows

EPSABS = 1e-13  # relative to the whole integral
EPSREL = 1e-12


class ScopeError(ValueError):
    pass


@dataclass(frozen=True)
class SampleTally:
    n: int  # positive (non-counterexample) samples
    m: int = 0  # negative samples

    def __post_init__(self):
        if self.n < 0 or self.m < 0:
            raise ValueError("sample counts must be non-negative")


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise ValueError(f"effectiveness exponent must lie in (0, 1], got {alpha}")


def _log_kernel(n: int, m: int, alpha: float) -> Callable[[float], float]:
    am = alpha * m

    def logf(theta: float) -> float:
        if theta <= 0.0:
            return 0.0 if am == 0 else -math.inf
        if theta >= 1.0:
            return 0.0 if n == 0 else -math.inf
        ta = theta**alpha
        return am * math.log(theta) + n * math.log1p(-ta)

    return logf


def _mode(n: int, m: int, alpha: float) -> float:
    if m == 0:
        return 0.0
    if n == 0:
        return 1.0
    return (m / (m + n)) ** (1.0 / alpha)


def _breakpoints(n: int, m: int, alpha: float) -> list[float]:
    # in u = θ^α the kernel is a Beta(m + 1/α, n + 1) density; use its spread
    a, b = m + 1.0 / alpha, n + 1.0
    sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)))
    u0 = _mode(n, m, alpha) ** alpha
    pts = {u0}
    for k in (0.5, 1, 2, 4, 8, 16, 32, 64):
        pts.add(u0 - k * sd)
        pts.add(u0 + k * sd)
    return sorted(p ** (1.0 / alpha) for p in pts if 0.0 < p < 1.0)


class _Kernel:
    """θ^(αm) (1-θ^α)^n divided by its maximum."""

    def __init__(self, n: int, m: int, alpha: float):
        _check_alpha(alpha)
        self.n, self.m, self.alpha = n, m, alpha
        self.logf = _log_kernel(n, m, alpha)
        self.logmax = self.logf(_mode(n, m, alpha))
        self.points = _breakpoints(n, m, alpha)

    def __call__(self, theta: float) -> float:
        return math.exp(self.logf(theta) - self.logmax)

    def scale(self) -> float:
        """Rough size of the whole integral, used to make tolerances relative."""
        if not hasattr(self, "_scale"):
            cuts = [0.0] + self.points + [1.0]
            self._scale = sum(
                quad(self, lo, hi, epsabs=0.0, epsrel=1e-6, limit=100, full_output=1)[0] for lo, hi in zip(cuts, cuts[1:])
            )
        return self._scale

    def integral(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        tol = EPSABS * self.scale()
        cuts = [a] + [p for p in self.points if a < p < b] + [b]
        total = 0.0
        for lo, hi in zip(cuts, cuts[1:]):
            val, _ = quad(self, lo, hi, epsabs=tol, epsrel=EPSREL, limit=200)
            total += val
        return total


def posterior_density(tally: SampleTally, alpha: float = 1.0) -> Callable[[float], float]:
    """Normalized density f(θ | n, m) on [0, 1]."""
    k = _Kernel(tally.n, tally.m, alpha)
    z = k.integral(0.0, 1.0)

    def density(theta: float) -> float:
        if not 0.0 <= theta <= 1.0:
            return 0.0
        return k(theta) / z

    return density


def confidence(tally: SampleTally, delta: float, alpha: float = 1.0) -> float:
    """Posterior probability that the error probability is below ``delta``."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    k = _Kernel(tally.n, tally.m, alpha)
    below = k.integral(0.0, delta)
    above = k.integral(delta, 1.0)
    return min(1.0, max(0.0, below / (below + above)))


def required_samples(delta: float, target: float, alpha: float = 1.0) -> int:
    """Smallest n with confidence((n, 0), delta, alpha) >= target."""
    if not 0.0 < target < 1.0:
        raise ValueError(f"target confidence must lie in (0, 1), got {target}")

    def ok(n: int) -> bool:
        return confidence(SampleTally(n, 0), delta, alpha) >= target

    if ok(0):
        return 0
    lo, hi = 0, 1
    while not ok(hi):
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class ConfidenceReport:
    n: int
    m: int
    delta: float
    alpha: float
    confidence: float
    target: float
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ConfidenceReport":
        return cls(**d)


def confidence_report(tally: SampleTally, delta: float, target: float, alpha: float = 1.0) -> ConfidenceReport:
    c = confidence(tally, delta, alpha)
    if tally.m > 0:
        verdict = "fail"
    elif c >= target:
        verdict = "pass"
    else:
        verdict = "inconclusive"
    return ConfidenceReport(tally.n, tally.m, delta, alpha, c, target, verdict)


# ---------------------------------------------------------------------------
# Exact one-step transition probabilities (small oracle)
# ---------------------------------------------------------------------------


def window_measures(h: HybridAutomaton, q: str, v, cfg: IntegratorConfig = IntegratorConfig()) -> list[float]:
    traj = Trajectory(h, q, v, cfg)
    return [exact_windows(h, q, v, tr, cfg, traj).measure for tr in outgoing(h, q)]


def exact_transition_probability(
    h: HybridAutomaton,
    q: str | None = None,
    box=None,
    cfg: IntegratorConfig = IntegratorConfig(),
    epsabs: float = 1e-5,
) -> tuple[dict[int, float], float]:
    """Probability of each outgoing transition of ``q`` for a start uniform on ``box``.

    Returns ``(probabilities by transition index, probability of staying)``.
    The stay probability is the mass of start states whose windows are all empty.
    """
    if h.dim > 2:
        raise ScopeError(f"the quadrature oracle handles at most 2 variables, model has {h.dim}")
    q = q or h.initial_mode
    box = tuple(box) if box is not None else h.init_box
    trans = outgoing(h, q)
    free = [i for i, (lo, hi) in enumerate(box) if hi > lo]

    def point(values) -> np.ndarray:
        v = [lo for lo, _ in box]
        for i, x in zip(free, values):
            v[i] = x
        w = np.array(window_measures(h, q, v, cfg))
        out = np.zeros(len(trans) + 1)
        if w.sum() > 0:
            out[:-1] = w / w.sum()
        else:
            out[-1] = 1.0
        return out

    def integrate(fn, lo, hi):
        return quad(fn, lo, hi, epsabs=epsabs, epsrel=0.0, limit=100)[0]

    result = np.zeros(len(trans) + 1)
    for k in range(len(trans) + 1):
        if not free:
            result = point([])
            break
        if len(free) == 1:
            (i,) = free
            lo, hi = box[i]
            result[k] = integrate(lambda x: point([x])[k], lo, hi) / (hi - lo)
        else:
            i, j = free
            (lo1, hi1), (lo2, hi2) = box[i], box[j]
            inner = lambda x: integrate(lambda y: point([x, y])[k], lo2, hi2)  # noqa: E731
            result[k] = integrate(inner, lo1, hi1) / ((hi1 - lo1) * (hi2 - lo2))
    return {tr.index: float(p) for tr, p in zip(trans, result[:-1])}, float(result[-1])
