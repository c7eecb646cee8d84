"""Revisit planning under a Poisson page-change model.

A page changes at rate ``lam`` (changes per unit time) and is re-fetched
every ``interval`` time units. Freshness is 1 while the stored copy still
matches the live page; age is the time elapsed since the live page first
diverged from the stored copy. Both are time-averaged over a revisit
interval.

Frequencies are allocated under a total budget ``B = sum(f_i)`` by one of
four policies. The two optimal policies search a discrete frequency grid
exactly (dynamic programming over budget units), so they can be checked
against brute-force enumeration.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

DEFAULT_AGE_HORIZON = 1000.0


class DomainError(ValueError):
    pass


class BudgetError(ValueError):
    pass


class Saturated(ValueError):
    """Every observation saw a change, so the rate cannot be resolved."""


class IrregularHistory(ValueError):
    pass


def _check(lam: float, interval: float) -> None:
    if interval <= 0 or math.isnan(interval):
        raise DomainError(f"interval must be > 0, got {interval}")
    if lam < 0 or math.isnan(lam):
        raise DomainError(f"change rate must be >= 0, got {lam}")


def expected_freshness(lam: float, interval: float) -> float:
    """(1 - exp(-lam*I)) / (lam*I); 1 for an immutable page."""
    _check(lam, interval)
    x = lam * interval
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return -math.expm1(-x) / x


def expected_age(lam: float, interval: float) -> float:
    """I/2 - 1/lam + (1 - exp(-lam*I)) / (lam^2 * I); 0 for an immutable page."""
    _check(lam, interval)
    x = lam * interval
    if x == 0:
        return 0.0
    if math.isinf(x):
        return interval / 2
    if x < 1e-2:
        # I * (x/3! - x^2/4! + x^3/5! - ...) avoids cancellation
        g = sum((-1) ** (k + 1) * x ** k / math.factorial(k + 2) for k in range(1, 10))
        return interval * g
    return interval * (0.5 - 1.0 / x - math.expm1(-x) / (x * x))


def estimate_change_rate(n_visits: int, n_changes: int, interval: float) -> float:
    """Rate estimate from ``n_changes`` detected changes over ``n_visits``
    regular visits spaced ``interval`` apart: -ln(1 - X/n) / I."""
    if n_visits < 1:
        raise DomainError("need at least one visit")
    if not 0 <= n_changes <= n_visits:
        raise DomainError("changes must lie in [0, visits]")
    if interval <= 0:
        raise DomainError("interval must be > 0")
    if n_changes == n_visits:
        raise Saturated(f"all {n_visits} visits saw a change; rate exceeds what interval {interval} can resolve")
    if n_changes == 0:
        return 0.0
    return -math.log1p(-n_changes / n_visits) / interval


@dataclass(frozen=True)
class ObservationHistory:
    """Visits to one page: ``(visit_time, changed_since_last_visit)``.
    The first visit is the baseline; its flag is ignored."""

    visits: Tuple[Tuple[float, bool], ...]

    def __post_init__(self):
        times = [t for t, _ in self.visits]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("visit times must be strictly increasing")


def estimate_from_history(history: ObservationHistory, tolerance: float = 0.01) -> float:
    visits = history.visits
    if len(visits) < 2:
        raise DomainError("need a baseline visit plus at least one observation")
    gaps = np.diff([t for t, _ in visits])
    interval = float(gaps.mean())
    if np.any(np.abs(gaps - interval) > tolerance * interval):
        raise IrregularHistory("visit spacing varies by more than 1%")
    changes = sum(1 for _, changed in visits[1:] if changed)
    return estimate_change_rate(len(visits) - 1, changes, interval)


class Policy(enum.Enum):
    UNIFORM = "uniform"
    PROPORTIONAL = "proportional"
    OPTIMAL_FRESHNESS = "optimal-freshness"
    OPTIMAL_AGE = "optimal-age"


def page_freshness(lam: float, freq: float) -> float:
    """Freshness of one page revisited at ``freq``; an unvisited changing page counts 0."""
    if freq <= 0:
        return 1.0 if lam == 0 else 0.0
    return expected_freshness(lam, 1.0 / freq)


def page_age(lam: float, freq: float, horizon: float = DEFAULT_AGE_HORIZON) -> float:
    """Age of one page revisited at ``freq``; an unvisited page ages over the horizon."""
    if freq <= 0:
        return expected_age(lam, horizon)
    return expected_age(lam, 1.0 / freq)


@dataclass(frozen=True)
class RevisitPlan:
    policy: Policy
    rates: Tuple[float, ...]
    frequencies: Tuple[float, ...]
    budget: float
    predicted_freshness: float
    predicted_age: float
    age_horizon: float = DEFAULT_AGE_HORIZON

    def __post_init__(self):
        if any(f < 0 for f in self.frequencies):
            raise ValueError("frequencies must be >= 0")
        if sum(self.frequencies) > self.budget * (1 + 1e-9):
            raise ValueError("plan exceeds its budget")

    def contributions(self):
        n = len(self.rates)
        return [page_freshness(lam, f) / n for lam, f in zip(self.rates, self.frequencies)]

    def to_csv(self, page_ids: Optional[Sequence] = None) -> str:
        ids = page_ids if page_ids is not None else range(len(self.rates))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["page_id", "lambda", "frequency", "freshness_contribution"])
        for pid, lam, f, c in zip(ids, self.rates, self.frequencies, self.contributions()):
            w.writerow([pid, repr(float(lam)), repr(float(f)), f"{c:.9f}"])
        return buf.getvalue()


def _grid_values(rates, units: int, resolution: float, policy: Policy, horizon: float) -> np.ndarray:
    """values[i, k]: objective of page i visited at frequency k*resolution (to maximize)."""
    vals = np.empty((len(rates), units + 1))
    for i, lam in enumerate(rates):
        for k in range(units + 1):
            f = k * resolution
            if policy is Policy.OPTIMAL_FRESHNESS:
                vals[i, k] = page_freshness(lam, f)
            else:
                vals[i, k] = -page_age(lam, f, horizon)
    return vals


def grid_allocate(values: np.ndarray) -> Tuple[np.ndarray, float]:
    """Exact maximizer of ``sum_i values[i, k_i]`` subject to ``sum_i k_i <= U``
    where ``U = values.shape[1] - 1``. Returns (units per page, best total)."""
    n, width = values.shape
    u = np.arange(width)
    diff = u[:, None] - u[None, :]
    valid = diff >= 0
    prev_idx = np.where(valid, diff, 0)
    best = np.zeros(width)  # best[u]: optimum over pages so far using <= u units
    choices = np.empty((n, width), dtype=np.int64)
    for i in range(n):
        cand = np.where(valid, best[prev_idx] + values[i][None, :], -np.inf)
        choices[i] = np.argmax(cand, axis=1)
        best = cand[u, choices[i]]
    alloc = np.empty(n, dtype=np.int64)
    remaining = width - 1
    for i in range(n - 1, -1, -1):
        alloc[i] = choices[i, remaining]
        remaining -= alloc[i]
    return alloc, float(best[-1])


def plan_revisits(policy, rates: Sequence[float], budget: float, resolution: float = 0.1,
                  age_horizon: float = DEFAULT_AGE_HORIZON) -> RevisitPlan:
    policy = Policy(policy)
    rates = tuple(float(r) for r in rates)
    if not budget > 0:
        raise BudgetError(f"budget must be > 0, got {budget}")
    if not rates:
        raise DomainError("no pages to plan")
    if any(r < 0 for r in rates):
        raise DomainError("change rates must be >= 0")
    n = len(rates)
    if policy is Policy.UNIFORM:
        freqs = [budget / n] * n
    elif policy is Policy.PROPORTIONAL:
        total = sum(rates)
        freqs = [budget * r / total if total > 0 else 0.0 for r in rates]
    else:
        if not resolution > 0:
            raise DomainError("grid resolution must be > 0")
        units = int(math.floor(budget / resolution + 1e-9))
        values = _grid_values(rates, units, resolution, policy, age_horizon)
        alloc, _ = grid_allocate(values)
        freqs = [int(k) * resolution for k in alloc]
    fresh = sum(page_freshness(r, f) for r, f in zip(rates, freqs)) / n
    age = sum(page_age(r, f, age_horizon) for r, f in zip(rates, freqs)) / n
    return RevisitPlan(policy, rates, tuple(freqs), float(budget), fresh, age, age_horizon)


@dataclass(frozen=True)
class PlanEvaluation:
    avg_freshness: float
    avg_age: float
    freshness_se: float
    age_se: float


def _batch_overlaps(start, stale_from, end, edges):
    """Fresh time and age integral of each batch [edges[b], edges[b+1])."""
    fresh = np.empty(len(edges) - 1)
    age = np.empty(len(edges) - 1)
    for b in range(len(edges) - 1):
        a, z = edges[b], edges[b + 1]
        fresh[b] = np.clip(np.minimum(stale_from, z) - np.maximum(start, a), 0, None).sum()
        lo = np.maximum(stale_from, a)
        hi = np.minimum(end, z)
        ok = hi > lo
        age[b] = (((hi[ok] - stale_from[ok]) ** 2 - (lo[ok] - stale_from[ok]) ** 2) / 2).sum()
    return fresh, age


def evaluate_plan(plan, rates: Optional[Sequence[float]] = None, horizon: float = 1000.0,
                  seed=None, n_batches: int = 20) -> PlanEvaluation:
    """Discrete-event simulation of a plan: Poisson change events per page,
    visits every 1/f starting at time 0 (when all copies are fresh).

    Standard errors come from batch means over ``n_batches`` equal slices of
    the horizon.
    """
    if isinstance(plan, RevisitPlan):
        freqs = plan.frequencies
        rates = plan.rates if rates is None else rates
    else:
        freqs = tuple(plan)
    if rates is None or len(rates) != len(freqs):
        raise ValueError("need one change rate per frequency")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    edges = np.linspace(0.0, horizon, n_batches + 1)
    fresh_tot = np.zeros(n_batches)
    age_tot = np.zeros(n_batches)
    for lam, f in zip(rates, freqs):
        if f > 0:
            visits = np.arange(0.0, horizon, 1.0 / f)
        else:
            visits = np.array([0.0])
        ends = np.append(visits[1:], horizon)
        if lam > 0:
            expected = lam * horizon
            n_draw = int(expected + 10 * math.sqrt(expected) + 10)
            changes = np.cumsum(rng.exponential(1.0 / lam, n_draw))
            while changes[-1] < horizon:
                more = np.cumsum(rng.exponential(1.0 / lam, n_draw)) + changes[-1]
                changes = np.concatenate([changes, more])
            nxt = changes[np.searchsorted(changes, visits, side="right")]
        else:
            nxt = np.full(len(visits), np.inf)
        stale_from = np.minimum(nxt, ends)
        fr, ag = _batch_overlaps(visits, stale_from, ends, edges)
        fresh_tot += fr
        age_tot += ag
    width = horizon / n_batches
    n = len(freqs)
    fb = fresh_tot / (width * n)
    ab = age_tot / (width * n)
    se = lambda x: float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    return PlanEvaluation(float(fb.mean()), float(ab.mean()), se(fb), se(ab))
