import math
import random
from bisect import insort
from collections import deque
from pathlib import Path

import pytest

from epow.clock import SimClock
from epow.config import parse_config
from epow.frontier import CircularQueue, CrawlRequest, PriorityQueue, QueueEmpty
from epow.urlkit import parse_url

TOPIC = ("quasar", "nebula", "pulsar", "magnetar", "blazar")


def req(n, priority=0.5, depth=0, seq=None):
    return CrawlRequest(parse_url(f"http://h{n % 7}.test/p/{n}"), priority, depth, n if seq is None else seq)


def config(tmp_path: Path, text: str, run_dir: str = "run"):
    return parse_config(text + f"\nrun_dir {run_dir}\n", tmp_path)


def queue_stress(n_ops: int, seed: int, capacity: int = 64):
    """Random CQ and PQ operations checked step by step against a deque
    (FIFO) and a bisect-sorted list (priority desc, seq asc). Returns the
    discrepancy count."""
    rng = random.Random(seed)
    cq, cq_ref = CircularQueue(capacity), deque()
    pq, pq_ref = PriorityQueue(), []  # pq_ref ascending by (priority, -seq): best is last
    bad = 0
    seq = 0
    url = parse_url("http://h/")
    for _ in range(n_ops // 2):
        if rng.random() < 0.55 and len(cq_ref) < capacity:
            r = CrawlRequest(url, 0.0, 0, seq)
            seq += 1
            cq.enqueue(r)
            cq_ref.append(r)
        elif cq_ref:
            bad += cq.dequeue() is not cq_ref.popleft()
        else:
            try:
                cq.dequeue()
                bad += 1
            except QueueEmpty:
                pass
        if rng.random() < 0.5:
            r = CrawlRequest(url, rng.choice([0.0, 0.25, 0.5, 1.0, rng.random()]), 0, seq)
            seq += 1
            pq.push(r)
            insort(pq_ref, r, key=lambda x: (x.priority, -x.seq))
        elif pq_ref:
            bad += pq.pop() is not pq_ref.pop()
        else:
            try:
                pq.pop()
                bad += 1
            except QueueEmpty:
                pass
    bad += cq.items() != list(cq_ref)
    bad += pq.items() != pq_ref[::-1]
    return bad


@pytest.fixture
def sim_clock():
    return SimClock(0.0)
