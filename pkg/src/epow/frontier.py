"""Two-queue crawl frontier.

Newly discovered requests land in a bounded :class:`CircularQueue` (intake,
FIFO, rejects when full so producers feel backpressure). The master drains
it into an unbounded :class:`PriorityQueue`, which dispatch pops in
``(priority desc, seq asc)`` order.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass
from typing import Iterable, List, Optional

from .urlkit import CanonicalUrl, parse_url


class FrontierFull(Exception):
    """The intake queue is at capacity; the caller must back off."""


class QueueEmpty(LookupError):
    pass


@dataclass(frozen=True)
class CrawlRequest:
    url: CanonicalUrl
    priority: float
    depth: int
    seq: int

    def __post_init__(self):
        if not 0.0 <= self.priority <= 1.0:
            raise ValueError(f"priority out of range: {self.priority}")
        if self.depth < 0 or self.seq < 0:
            raise ValueError("depth and seq must be non-negative")

    @property
    def sort_key(self):
        return (-self.priority, self.seq)


class CircularQueue:
    """Fixed-capacity ring buffer of crawl requests, safe for many threads."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._buf: List[Optional[CrawlRequest]] = [None] * capacity
        self._head = 0
        self._len = 0
        self._lock = threading.Lock()

    def enqueue(self, request: CrawlRequest) -> None:
        with self._lock:
            if self._len == self.capacity:
                raise FrontierFull(f"circular queue full ({self.capacity})")
            self._buf[(self._head + self._len) % self.capacity] = request
            self._len += 1

    def dequeue(self) -> CrawlRequest:
        with self._lock:
            if self._len == 0:
                raise QueueEmpty("circular queue is empty")
            item = self._buf[self._head]
            self._buf[self._head] = None
            self._head = (self._head + 1) % self.capacity
            self._len -= 1
            return item

    def __len__(self) -> int:
        with self._lock:
            return self._len

    def _items_locked(self) -> List[CrawlRequest]:
        return [self._buf[(self._head + i) % self.capacity] for i in range(self._len)]

    def items(self) -> List[CrawlRequest]:
        with self._lock:
            return self._items_locked()


class PriorityQueue:
    """Max-priority queue; ties go to the smallest discovery sequence number."""

    def __init__(self):
        self._heap: list = []
        self._lock = threading.Lock()

    def push(self, request: CrawlRequest) -> None:
        with self._lock:
            heapq.heappush(self._heap, (request.sort_key, request))

    def pop(self) -> CrawlRequest:
        with self._lock:
            if not self._heap:
                raise QueueEmpty("priority queue is empty")
            return heapq.heappop(self._heap)[1]

    def peek(self) -> CrawlRequest:
        with self._lock:
            if not self._heap:
                raise QueueEmpty("priority queue is empty")
            return self._heap[0][1]

    def __len__(self) -> int:
        with self._lock:
            return len(self._heap)

    def _items_locked(self) -> List[CrawlRequest]:
        return [r for _, r in sorted(self._heap)]

    def items(self) -> List[CrawlRequest]:
        with self._lock:
            return self._items_locked()


def cq_enqueue(q: CircularQueue, r: CrawlRequest) -> None:
    q.enqueue(r)


def cq_dequeue(q: CircularQueue) -> CrawlRequest:
    return q.dequeue()


def pq_push(q: PriorityQueue, r: CrawlRequest) -> None:
    q.push(r)


def pq_pop(q: PriorityQueue) -> CrawlRequest:
    return q.pop()


@dataclass(frozen=True)
class SnapshotEntry:
    tag: str  # "CQ" or "PQ"
    request: CrawlRequest

    def to_line(self) -> str:
        r = self.request
        # url goes last: canonical URLs may contain commas
        return f"{self.tag},{r.priority:.6f},{r.depth},{r.seq},{r.url}"

    @classmethod
    def from_line(cls, line: str) -> "SnapshotEntry":
        tag, priority, depth, seq, url = line.rstrip("\n").split(",", 4)
        if tag not in ("CQ", "PQ"):
            raise ValueError(f"bad queue tag {tag!r}")
        return cls(tag, CrawlRequest(parse_url(url), float(priority), int(depth), int(seq)))


def frontier_snapshot(cq: CircularQueue, pq: PriorityQueue) -> List[SnapshotEntry]:
    """Consistent listing of everything pending: intake queue first, in FIFO
    order, then the priority queue in pop order. Both locks are held (always
    in this order) so no request can move between queues mid-listing."""
    with cq._lock, pq._lock:
        listing = [SnapshotEntry("CQ", r) for r in cq._items_locked()]
        listing += [SnapshotEntry("PQ", r) for r in pq._items_locked()]
    return listing


def restore_frontier(entries: Iterable[SnapshotEntry], capacity: int):
    cq, pq = CircularQueue(capacity), PriorityQueue()
    for e in entries:
        if e.tag == "CQ":
            cq.enqueue(e.request)
        else:
            pq.push(e.request)
    return cq, pq
