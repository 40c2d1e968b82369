"""Stochastic network calculus delay bounds for the buffered SIM link.

Traffic: Poisson packet arrivals (``arrival_rate`` packets/s) with
exponentially distributed sizes (mean ``packet_mean`` bits), drained by
a fluid server at v_data * B bit/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .config import LinkScenario


class InstabilityError(ValueError):
    """Offered load is not below the service rate."""


@dataclass(frozen=True)
class DelayBudget:
    t_b: float
    t_d: float
    d2: float

    @property
    def total(self) -> float:
        return self.d2 + self.t_b + self.t_d

    @classmethod
    def from_total(cls, T: float, d2: float, t_b: float) -> "DelayBudget":
        t_d = T - d2 - t_b
        if t_d < 0 or t_b < 0 or d2 < 0:
            raise ValueError("budget components must be non-negative")
        return cls(t_b=t_b, t_d=t_d, d2=d2)


def service_curve(v_data: float, bandwidth: float, t: float) -> float:
    if t < 0:
        raise ValueError("service curve is defined for t >= 0")
    return v_data * bandwidth * t


def optimal_mu(v_data: float, bandwidth: float, arrival_rate: float, packet_mean: float) -> float:
    capacity = v_data * bandwidth
    load = arrival_rate * packet_mean
    if capacity <= load:
        raise InstabilityError(f"service {capacity:g} bit/s does not exceed load {load:g} bit/s")
    return (capacity - load) / (capacity * packet_mean)


def queueing_exponent(v_data: float, scenario: LinkScenario) -> float:
    """Decay rate (1/s) of the queueing bound; may be <= 0 when unstable."""
    return (v_data * scenario.bandwidth - scenario.arrival_rate * scenario.packet_mean) / scenario.packet_mean


def propagation_exponent(v_data: float, scenario: LinkScenario) -> float:
    return v_data * scenario.bandwidth / (scenario.num_streams * scenario.packet_mean)


def queueing_bound(t_b: float, scenario: LinkScenario, v_data: float) -> float:
    """P{D1 > t_b} <= exp(-mu v B t_b)."""
    if t_b < 0:
        raise ValueError("t_b must be non-negative")
    mu = optimal_mu(v_data, scenario.bandwidth, scenario.arrival_rate, scenario.packet_mean)
    return math.exp(-mu * v_data * scenario.bandwidth * t_b)


def propagation_bound(t_d: float, scenario: LinkScenario, v_data: float) -> float:
    """P{D3 > t_d} for an exponential packet length."""
    if t_d < 0:
        raise ValueError("t_d must be non-negative")
    return math.exp(-propagation_exponent(v_data, scenario) * t_d)


# min-plus convolution ----------------------------------------------------------

@dataclass(frozen=True)
class ExpTail:
    """Tail function ``coef * exp(-rate * x)``."""

    rate: float
    coef: float = 1.0

    def __call__(self, x):
        return self.coef * np.exp(-self.rate * np.asarray(x, dtype=float))


def best_exp_split(a: float, c: float, x: float, ca: float = 1.0, cc: float = 1.0) -> float:
    """Minimiser t in [0, x] of ca e^{-a t} + cc e^{-c (x - t)}.

    The sum is convex in t; the stationary point solves
    a ca e^{-a t} = c cc e^{-c (x - t)}.
    """
    if x <= 0:
        return 0.0
    if a <= 0 or ca <= 0:
        # first term non-decreasing in t
        return 0.0
    if c <= 0 or cc <= 0:
        return x
    t = (math.log((a * ca) / (c * cc)) + c * x) / (a + c)
    return min(max(t, 0.0), x)


def minplus_convolve(f: Callable, g: Callable, x: float, grid: int | np.ndarray = 4001) -> float:
    """inf over 0 <= tau <= x of f(tau) + g(x - tau).

    ``grid`` is either a point count for a uniform split of [0, x] or an
    explicit array of split points. Two :class:`ExpTail` arguments are
    refined with the analytic stationary split.
    """
    if x < 0:
        raise ValueError("x must be non-negative")
    if np.isscalar(grid):
        if grid < 1:
            raise ValueError("empty grid")
        taus = np.linspace(0.0, x, int(grid)) if grid > 1 else np.array([x])
    else:
        taus = np.asarray(grid, dtype=float)
        if taus.size == 0:
            raise ValueError("empty grid")
        taus = taus[(taus >= 0) & (taus <= x)]
        if taus.size == 0:
            raise ValueError("no grid point inside [0, x]")
    best = float(np.min(np.asarray(f(taus)) + np.asarray(g(x - taus))))
    if isinstance(f, ExpTail) and isinstance(g, ExpTail):
        t = best_exp_split(f.rate, g.rate, x, f.coef, g.coef)
        best = min(best, float(f(t) + g(x - t)))
    return best


def minplus_grid(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Discrete min-plus convolution of functions sampled on a common uniform grid.

    out[i] = min_{0<=j<=i} f[j] + g[i - j]
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    n = min(f.size, g.size)
    out = np.empty(n)
    for i in range(n):
        out[i] = np.min(f[: i + 1] + g[i::-1][: i + 1])
    return out


# total bound -------------------------------------------------------------------

@dataclass(frozen=True)
class DelayBound:
    value: float      # clamped to [0, 1]
    raw: float
    t_b: float
    t_d: float
    d2: float

    @property
    def budget(self) -> DelayBudget:
        return DelayBudget(self.t_b, self.t_d, self.d2)


def total_delay_bound(T: float, scenario: LinkScenario, v_data: float, d2: float) -> DelayBound:
    """inf over t_b + t_d = T - D2 of the queueing plus propagation bounds."""
    if T <= d2:
        raise ValueError(f"threshold T={T} must exceed the transmission delay D2={d2}")
    x = T - d2
    a = queueing_exponent(v_data, scenario)
    c = propagation_exponent(v_data, scenario)
    t_b = best_exp_split(a, c, x)
    t_d = x - t_b
    raw = math.exp(-a * t_b) + math.exp(-c * t_d)
    return DelayBound(value=min(max(raw, 0.0), 1.0), raw=raw, t_b=t_b, t_d=t_d, d2=d2)


# queue simulation --------------------------------------------------------------

@dataclass(frozen=True)
class TailEstimate:
    t: np.ndarray
    tail: np.ndarray
    ci_half: np.ndarray
    waits: np.ndarray

    @property
    def departures(self) -> int:
        return int(self.waits.size)


def lindley_waits(interarrival: np.ndarray, service: np.ndarray) -> np.ndarray:
    """FIFO waiting times, W_{n+1} = max(0, W_n + S_n - A_{n+1}), W_0 = 0.

    Uses the closed form W_n = X_n - min_{k<=n} X_k with X the partial
    sums of S_{k-1} - A_k.
    """
    steps = service[:-1] - interarrival[1:]
    X = np.concatenate(([0.0], np.cumsum(steps)))
    return X - np.minimum.accumulate(X)


def simulate_queue(scenario: LinkScenario, v_data: float, horizon: float | None = None,
                   rng: np.random.Generator | None = None, t_grid=None,
                   departures: int | None = None, confidence: float = 0.95) -> TailEstimate:
    """Empirical waiting-time CCDF of the buffered FIFO fluid queue.

    Either ``horizon`` (seconds of simulated time) or ``departures`` fixes
    the run length. Returns P-hat{D1 > t} with Wilson half-widths.
    """
    rng = rng if rng is not None else np.random.default_rng(scenario.rng_seed)
    capacity = v_data * scenario.bandwidth
    lam = scenario.arrival_rate
    if t_grid is None:
        t_grid = np.linspace(0.0, 5.0 * scenario.packet_mean / max(capacity, 1e-300), 26)
    t_grid = np.asarray(t_grid, dtype=float)
    if lam == 0:
        n = departures or 1
        waits = np.zeros(n)
    else:
        if capacity <= lam * scenario.packet_mean:
            raise InstabilityError("queue grows without bound at this load")
        n = departures if departures is not None else int(np.ceil(lam * (horizon or 0.0)))
        if n < 1:
            raise ValueError("run too short for a single departure")
        inter = rng.exponential(1.0 / lam, size=n)
        service = rng.exponential(scenario.packet_mean, size=n) / capacity
        waits = lindley_waits(inter, service)
    counts = (waits[None, :] > t_grid[:, None]).sum(axis=1)
    tail = counts / waits.size
    z = stats.norm.ppf(0.5 + confidence / 2)
    n = waits.size
    denom = 1 + z * z / n
    ci = z * np.sqrt(tail * (1 - tail) / n + z * z / (4 * n * n)) / denom
    return TailEstimate(t=t_grid, tail=tail, ci_half=ci, waits=waits)


def mm1_mean_wait(arrival_rate: float, service_rate: float) -> float:
    rho = arrival_rate / service_rate
    return rho / (service_rate * (1 - rho))
