"""Scheduler duties: per-host politeness, a time-of-day rate profile, a token
bucket for the global fetch rate, and crawl stop conditions.

All functions take times as epoch seconds from an injected clock.
"""

from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

DEFAULT_HOST_INTERVAL = 20.0
DEFAULT_RATE = 100.0
UNLIMITED = math.inf


@dataclass
class HostState:
    host: str
    last_contact: Optional[float] = None
    in_flight: int = 0


@dataclass(frozen=True)
class Granted:
    host: str
    at: float


@dataclass(frozen=True)
class RetryAt:
    host: str
    at: float
    busy: bool = False  # a request to this host is still in flight


class HostLedger:
    """Per-host politeness ledger shared by every dispatcher and worker."""

    def __init__(self):
        self._hosts: Dict[str, HostState] = {}
        self._lock = threading.Lock()

    def acquire(self, host: str, now: float, min_interval: float = DEFAULT_HOST_INTERVAL):
        if min_interval < 0:
            raise ValueError("min_interval must be >= 0")
        with self._lock:
            st = self._hosts.setdefault(host, HostState(host))
            ready = now if st.last_contact is None else max(now, st.last_contact + min_interval)
            if st.in_flight > 0:
                return RetryAt(host, ready, busy=True)
            if ready > now:
                return RetryAt(host, ready)
            st.last_contact = now if st.last_contact is None else max(now, st.last_contact)
            st.in_flight += 1
            return Granted(host, now)

    def release(self, host: str) -> None:
        with self._lock:
            st = self._hosts.get(host)
            if st is None or st.in_flight == 0:
                raise RuntimeError(f"release without acquire for host {host!r}")
            st.in_flight -= 1

    def state(self, host: str) -> HostState:
        with self._lock:
            st = self._hosts.get(host, HostState(host))
            return HostState(st.host, st.last_contact, st.in_flight)

    def listing(self) -> List[Tuple[str, float]]:
        """(host, last_contact) for every host ever contacted, sorted by host."""
        with self._lock:
            return sorted((h, s.last_contact) for h, s in self._hosts.items()
                          if s.last_contact is not None)

    @classmethod
    def restore(cls, listing: Iterable[Tuple[str, float]]) -> "HostLedger":
        ledger = cls()
        for host, last in listing:
            ledger._hosts[host] = HostState(host, last, 0)
        return ledger


def acquire_host_slot(ledger: HostLedger, host: str, now: float,
                      min_interval: float = DEFAULT_HOST_INTERVAL):
    return ledger.acquire(host, now, min_interval)


class ProfileError(ValueError):
    pass


def _hours(start: int, end: int) -> List[int]:
    if start < end:
        return list(range(start, end))
    return list(range(start, 24)) + list(range(0, end))  # wraps midnight


@dataclass(frozen=True)
class RateProfile:
    """Pages-per-second limits by local hour. Buckets are half-open
    ``[start, end)``; ``start > end`` wraps past midnight. Hours not covered
    by any bucket fall back to ``default``."""

    buckets: Tuple[Tuple[int, int, float], ...] = ()
    default: float = DEFAULT_RATE
    _table: Tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        table: List[Optional[float]] = [None] * 24
        for start, end, rate in self.buckets:
            if not (0 <= start <= 23 and 0 <= end <= 24) or start == end:
                raise ProfileError(f"bad hour range [{start}, {end})")
            if not rate > 0:
                raise ProfileError(f"rate must be positive, got {rate}")
            for h in _hours(start, end):
                if table[h] is not None:
                    raise ProfileError(f"hour {h} covered by two buckets")
                table[h] = float(rate)
        if not self.default > 0:
            raise ProfileError("default rate must be positive")
        object.__setattr__(self, "_table", tuple(self.default if r is None else r for r in table))

    def rate_for_hour(self, hour: int) -> float:
        return self._table[hour]


def current_rate(profile: RateProfile, now: float, timezone_offset: float = 0.0) -> float:
    local_hour = int(((now + timezone_offset) % 86400) // 3600)
    return profile.rate_for_hour(local_hour)


class TokenBucket:
    """Token bucket on an injected clock; burst equals the current rate."""

    def __init__(self, rate: float, now: float = 0.0):
        self._lock = threading.Lock()
        self.rate = float(rate)
        self.tokens = self.burst
        self.updated = now

    @property
    def burst(self) -> float:
        return max(1.0, self.rate)

    def set_rate(self, rate: float, now: float) -> None:
        with self._lock:
            self._refill(now)
            self.rate = float(rate)
            self.tokens = min(self.tokens, self.burst)

    def _refill(self, now: float) -> None:
        if now > self.updated:
            if math.isinf(self.rate):
                self.tokens = self.burst
            else:
                self.tokens = min(self.burst, self.tokens + (now - self.updated) * self.rate)
            self.updated = now

    def wait_time(self, now: float) -> float:
        """Like :meth:`try_acquire` but leaves the token in the bucket."""
        if math.isinf(self.rate):
            return 0.0
        with self._lock:
            self._refill(now)
            if self.tokens >= 1.0 - 1e-9:
                return 0.0
            return (1.0 - self.tokens) / self.rate

    def try_acquire(self, now: float) -> float:
        """Take a token and return 0, or return how long to wait for one."""
        if math.isinf(self.rate):
            return 0.0
        with self._lock:
            self._refill(now)
            if self.tokens >= 1.0 - 1e-9:
                self.tokens -= 1.0
                return 0.0
            return (1.0 - self.tokens) / self.rate


def rate_gate(limiter: TokenBucket, now: float) -> float:
    return limiter.try_acquire(now)


class StopReason(enum.Enum):
    PAGE_BUDGET = "PageBudget"
    TIME_BUDGET = "TimeBudget"
    DEPTH_EXHAUSTED = "DepthExhausted"
    FRONTIER_EXHAUSTED = "FrontierExhausted"


@dataclass(frozen=True)
class StopConditions:
    max_pages: Optional[int] = None
    max_duration: Optional[float] = None
    max_depth: Optional[int] = None

    def __post_init__(self):
        for name in ("max_pages", "max_duration", "max_depth"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def bounded(self) -> bool:
        return any(v is not None for v in (self.max_pages, self.max_duration, self.max_depth))


@dataclass(frozen=True)
class Progress:
    pages_fetched: int
    elapsed_seconds: float
    frontier_min_depth: Optional[int]  # None when nothing is pending


def should_stop(progress: Progress, limits: StopConditions) -> Optional[StopReason]:
    """None to continue, otherwise the first bound that is hit."""
    if limits.max_pages is not None and progress.pages_fetched >= limits.max_pages:
        return StopReason.PAGE_BUDGET
    if limits.max_duration is not None and progress.elapsed_seconds >= limits.max_duration:
        return StopReason.TIME_BUDGET
    if progress.frontier_min_depth is None:
        return StopReason.FRONTIER_EXHAUSTED
    if limits.max_depth is not None and progress.frontier_min_depth > limits.max_depth:
        return StopReason.DEPTH_EXHAUSTED
    return None
