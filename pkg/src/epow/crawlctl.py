"""The master crawler: wires frontier, governor, downloaders, parser and
store into one control loop, plus the revisit driver.

A single master thread owns the frontier, the seen set and the store. It
pops the best pending request, asks the governor for a host slot and a
rate token, and hands the request to the downloader pool. Results come back
on a queue; the master stores them, extracts links and feeds unseen ones to
the intake queue, which it drains into the priority queue every turn.

Requests whose host is not yet due are parked per host, and a timer wakes
the host's best parked request when its politeness interval has passed.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import logging
import math
import queue
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Set, Tuple

import numpy as np

from .clock import SimClock, SystemClock
from .config import ConfigError, CrawlConfig, SimwebSpec
from .fetchnet import DownloaderPool, FetchResult, Outcome, direct_resolver, fetch
from .frontier import CircularQueue, CrawlRequest, FrontierFull, PriorityQueue, SnapshotEntry, frontier_snapshot
from .governor import (Granted, HostLedger, Progress, StopReason, TokenBucket, current_rate,
                       should_stop)
from .parsekit import PageAnalysis, analyze, fingerprint
from .revisit import Policy, RevisitPlan, plan_revisits
from .simweb import SimWebServer, SiteGraph, advance_changes, gallery_fixture, generate_site
from .store import (Checkpoint, IoFailure, PageRecord, Repository, list_checkpoints, load_latest_checkpoint,
                    recover, write_checkpoint)
from .urlkit import CanonicalUrl, SeenSet

log = logging.getLogger(__name__)

RETRYABLE = (Outcome.SERVER_ERROR, Outcome.TIMEOUT)
FAILURES = (Outcome.SERVER_ERROR, Outcome.TIMEOUT, Outcome.NETWORK_ERROR)


class StorageFailure(RuntimeError):
    pass


class NoBaseline(RuntimeError):
    pass


def build_site(spec: SimwebSpec) -> SiteGraph:
    if spec.gallery:
        return gallery_fixture()
    return generate_site(spec.seed, spec.pages, spec.hosts, spec.out_degree,
                         rates=list(spec.rates) or None, topology=spec.topology)


def mapping_resolver(table: Dict[str, Tuple[str, int]]):
    def resolve_host(url: CanonicalUrl) -> Tuple[str, int]:
        return table.get(url.host) or direct_resolver(url)
    return resolve_host


@dataclass
class Expansion:
    record: PageRecord
    body: bytes
    requests: List[CrawlRequest]
    analysis: Optional[PageAnalysis] = None
    pruned: int = 0


def analyze_and_expand(result: FetchResult, request: CrawlRequest, seen: SeenSet,
                       topic=(), max_depth: Optional[int] = None,
                       seq: Optional[Callable[[], int]] = None) -> Expansion:
    """Turn one fetch result into a page record plus follow-up requests.

    Links are resolved against the final URL after redirects. Only links
    that pass the seen-set check become requests; their priority is this
    page's relevance and their depth is one more than this page's.
    """
    outcome = result.outcome.value
    if result.outcome is not Outcome.SUCCESS:
        rec = PageRecord(request.url, result.fetched_at, result.status or 0, None,
                         depth=request.depth, outcome=outcome)
        return Expansion(rec, b"", [])
    seq = seq or itertools.count().__next__
    body = result.body
    base = result.final_url or request.url
    page = analyze(body, base, topic)
    rec = PageRecord(request.url, result.fetched_at, result.status or 0, page.fingerprint,
                     relevance=page.relevance, depth=request.depth, outcome=outcome)
    if base != request.url:
        seen.check_insert(base)
    child_depth = request.depth + 1
    if max_depth is not None and child_depth > max_depth:
        pruned = sum(1 for u in set(page.links) if u not in seen)
        return Expansion(rec, body, [], page, pruned)
    priority = round(page.relevance, 6)
    reqs = [CrawlRequest(u, priority, child_depth, seq()) for u in page.links if seen.check_insert(u)]
    return Expansion(rec, body, reqs, page)


@dataclass
class FetchLogEntry:
    seq: int
    url: str
    depth: int
    priority: float
    dispatched_at: float
    outcome: str = ""
    status: int = 0
    relevance: float = 0.0
    duplicate: bool = False


@dataclass
class CrawlReport:
    pages_fetched: int
    unique_fingerprints: int
    duplicate_pages: int
    outcome_counts: Dict[str, int]
    max_depth: int
    duration: float
    wall_seconds: float
    stop_reason: Optional[StopReason]
    politeness_violations: int
    throughput: float
    recrawled: int = 0
    checkpoints: int = 0
    retries: int = 0
    skipped: int = 0
    quarantined: Tuple[str, ...] = ()
    fetches: List[FetchLogEntry] = field(default_factory=list, repr=False)
    urls: List[str] = field(default_factory=list, repr=False)

    def rows(self) -> List[Tuple[str, object]]:
        rows = [("pages_fetched", self.pages_fetched),
                ("unique_fingerprints", self.unique_fingerprints),
                ("duplicate_pages", self.duplicate_pages)]
        rows += [(f"outcome_{k}", v) for k, v in sorted(self.outcome_counts.items())]
        rows += [("max_depth", self.max_depth),
                 ("duration_seconds", f"{self.duration:.3f}"),
                 ("wall_seconds", f"{self.wall_seconds:.3f}"),
                 ("stop_reason", self.stop_reason.value if self.stop_reason else ""),
                 ("politeness_violations", self.politeness_violations),
                 ("throughput_pages_per_second", f"{self.throughput:.2f}"),
                 ("recrawled", self.recrawled),
                 ("checkpoints", self.checkpoints),
                 ("retries", self.retries),
                 ("skipped", self.skipped),
                 ("quarantined_hosts", " ".join(self.quarantined))]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(self.rows())
        return buf.getvalue()

    def fetches_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seq", "url", "depth", "priority", "dispatched_at", "outcome", "status",
                    "relevance", "duplicate"])
        for e in self.fetches:
            w.writerow([e.seq, e.url, e.depth, f"{e.priority:.6f}", repr(e.dispatched_at), e.outcome,
                        e.status, f"{e.relevance:.6f}", int(e.duplicate)])
        return buf.getvalue()

    def summary(self) -> str:
        counts = ", ".join(f"{k} {v}" for k, v in sorted(self.outcome_counts.items())) or "none"
        return "\n".join([
            f"stop reason: {self.stop_reason.value if self.stop_reason else 'none'}",
            f"pages fetched: {self.pages_fetched} ({counts})",
            f"unique content: {self.unique_fingerprints} fingerprints, {self.duplicate_pages} duplicates",
            f"max depth: {self.max_depth}",
            f"duration: {self.duration:.1f} s crawl clock, {self.wall_seconds:.2f} s wall",
            f"throughput: {self.throughput:.1f} pages/s",
            f"politeness violations: {self.politeness_violations}",
            f"checkpoints: {self.checkpoints}, recrawled after resume: {self.recrawled}",
        ])


def _gap_violations(dispatches: List[Tuple[str, float]], interval: float) -> int:
    last: Dict[str, float] = {}
    bad = 0
    for host, at in sorted(dispatches, key=lambda d: d[1]):
        if host in last and at - last[host] < interval - 1e-9:
            bad += 1
        last[host] = at
    return bad


class Crawler:
    """One crawl run. Use :func:`run_crawl` unless you need the pieces."""

    def __init__(self, config: CrawlConfig, clock=None, resolver=None, site: Optional[SiteGraph] = None,
                 after_page: Optional[Callable] = None):
        self.config = config.validate()
        if clock is None:
            clock = SimClock() if config.clock == "simulated" else SystemClock()
        self.clock = clock
        self.after_page = after_page
        self.server: Optional[SimWebServer] = None
        self.site = site
        if resolver is None:
            if site is None and config.simweb is not None:
                self.site = build_site(config.simweb)
            if self.site is not None:
                self.server = SimWebServer(self.site, clock)
                resolver = self.server.resolver
            elif config.resolve:
                resolver = mapping_resolver(config.resolve)
        self.resolver = resolver
        seeds = list(config.seeds) or ([self.site.root] if self.site is not None else [])
        if not seeds:
            raise ConfigError("at least one seed is required", key="seed")
        self.seeds = seeds

        self.cq = CircularQueue(config.frontier_capacity)
        self.pq = PriorityQueue()
        self.seen = SeenSet()
        self.ledger = HostLedger()
        self.bucket = TokenBucket(current_rate(config.rate_profile, clock.now(), config.timezone_offset),
                                  clock.now())
        self.seq = itertools.count()
        self.parked: Dict[str, list] = {}
        self.timers: list = []  # (when, host)
        self.timer_at: Dict[str, float] = {}
        self.pending_depths: Counter = Counter()
        self.inflight: Dict[int, CrawlRequest] = {}
        self.fingerprints: Set[str] = set()
        self.retried: Set[str] = set()
        self.quarantined: Set[str] = set()
        self.streak: Counter = Counter()
        self.outcomes: Counter = Counter()
        self.fetched = 0
        self.duplicates = 0
        self.max_depth = 0
        self.pruned = 0
        self.retries = 0
        self.skipped = 0
        self.recrawled = 0
        self.checkpoints = 0
        self.ckpt_version = 0
        self.since_ckpt = 0
        self.recrawl_candidates: Set[CanonicalUrl] = set()
        self.dispatches: List[Tuple[str, float]] = []
        self.fetch_log: Dict[int, FetchLogEntry] = {}
        self.log_order: List[FetchLogEntry] = []
        self.elapsed_before = 0.0
        self.repo: Optional[Repository] = None

    # frontier bookkeeping

    def _add_pending(self, req: CrawlRequest, to_pq: bool = False) -> None:
        self.pending_depths[req.depth] += 1
        if to_pq:
            self.pq.push(req)
            return
        try:
            self.cq.enqueue(req)
        except FrontierFull:
            self._drain_cq()
            self.cq.enqueue(req)

    def _drop_pending(self, req: CrawlRequest) -> None:
        self.pending_depths[req.depth] -= 1
        if self.pending_depths[req.depth] <= 0:
            del self.pending_depths[req.depth]

    def _drain_cq(self) -> None:
        while len(self.cq):
            self.pq.push(self.cq.dequeue())

    def _park(self, req: CrawlRequest) -> None:
        heapq.heappush(self.parked.setdefault(req.url.host, []), (req.sort_key, req))

    def _set_timer(self, host: str, when: float) -> None:
        if host in self.timer_at and self.timer_at[host] <= when:
            return
        self.timer_at[host] = when
        heapq.heappush(self.timers, (when, host))

    def _fire_timers(self, now: float) -> None:
        while self.timers and self.timers[0][0] <= now:
            when, host = heapq.heappop(self.timers)
            if self.timer_at.get(host) != when:
                continue  # superseded
            del self.timer_at[host]
            heap = self.parked.get(host)
            if heap:
                self.pq.push(heapq.heappop(heap)[1])
                if not heap:
                    del self.parked[host]

    def _min_pending_depth(self) -> Optional[int]:
        if self.pending_depths:
            return min(self.pending_depths)
        if self.pruned and self.config.stop.max_depth is not None:
            return self.config.stop.max_depth + 1
        return None

    # dispatch

    def _dispatch(self, work: "queue.Queue") -> Optional[float]:
        """Hand out requests while slots allow. Returns a rate-limit wake
        time when the token bucket ran dry, else None."""
        cfg = self.config
        limit = cfg.stop.max_pages
        while len(self.inflight) < cfg.n_downloaders and len(self.pq):
            if limit is not None and self.fetched + len(self.inflight) >= limit:
                return None
            if self.since_ckpt >= cfg.checkpoint_pages:
                return None
            now = self.clock.now()
            self.bucket.set_rate(current_rate(cfg.rate_profile, now, cfg.timezone_offset), now)
            wait = self.bucket.wait_time(now)
            if wait > 0:
                return now + wait
            req = self.pq.pop()
            host = req.url.host
            if host in self.quarantined:
                self._drop_pending(req)
                self.skipped += 1
                continue
            grant = self.ledger.acquire(host, now, cfg.host_interval_seconds)
            if not isinstance(grant, Granted):
                self._park(req)
                if not grant.busy:
                    self._set_timer(host, grant.at)
                continue
            self.bucket.try_acquire(now)
            self.inflight[req.seq] = req
            self.since_ckpt += 1
            self.dispatches.append((host, now))
            entry = FetchLogEntry(req.seq, str(req.url), req.depth, req.priority, now)
            self.fetch_log[req.seq] = entry
            self.log_order.append(entry)
            work.put(req)
        return None

    # results

    def _handle(self, req: CrawlRequest, res: FetchResult) -> None:
        cfg = self.config
        host = req.url.host
        del self.inflight[req.seq]
        self.ledger.release(host)
        if self.parked.get(host):
            st = self.ledger.state(host)
            self._set_timer(host, (st.last_contact or 0.0) + cfg.host_interval_seconds)
        self.fetched += 1
        self.outcomes[res.outcome.value] += 1
        self.max_depth = max(self.max_depth, req.depth)
        if req.url in self.recrawl_candidates:
            self.recrawl_candidates.discard(req.url)
            self.recrawled += 1

        exp = analyze_and_expand(res, req, self.seen, cfg.topic, cfg.stop.max_depth, self.seq.__next__)
        entry = self.fetch_log.pop(req.seq, None)
        if exp.analysis is not None:
            if exp.record.fingerprint in self.fingerprints:
                self.duplicates += 1
                if entry:
                    entry.duplicate = True
            self.fingerprints.add(exp.record.fingerprint)
        if entry:
            entry.outcome, entry.status, entry.relevance = res.outcome.value, res.status or 0, exp.record.relevance
        try:
            stored = self.repo.put_page(exp.record, exp.body)
        except IoFailure as exc:
            self._drop_pending(req)
            log.error("storage failure: %s; writing a best-effort checkpoint", exc)
            try:
                self._checkpoint()
            except Exception:
                log.exception("best-effort checkpoint failed too")
            raise StorageFailure(str(exc)) from exc

        for child in exp.requests:
            self._add_pending(child)
        self.pruned += exp.pruned
        if res.outcome is Outcome.REDIRECT and res.redirect_target is not None:
            target = res.redirect_target
            if self.seen.check_insert(target):
                self._add_pending(CrawlRequest(target, req.priority, req.depth, self.seq.__next__()))

        if res.outcome in FAILURES:
            self.streak[host] += 1
            if self.streak[host] >= cfg.quarantine_after and host not in self.quarantined:
                log.warning("quarantining %s after %d consecutive failures", host, self.streak[host])
                self.quarantined.add(host)
                for _, parked in self.parked.pop(host, []):
                    self._drop_pending(parked)
                    self.skipped += 1
        else:
            self.streak[host] = 0
        key = str(req.url)
        if (res.outcome in RETRYABLE and key not in self.retried and cfg.retry_limit > 0
                and host not in self.quarantined):
            self.retried.add(key)
            self.retries += 1
            self._add_pending(CrawlRequest(req.url, 0.0, req.depth, self.seq.__next__()), to_pq=True)
        self._drop_pending(req)
        if self.after_page is not None:
            self.after_page(self, stored)

    # checkpoints

    def _elapsed(self) -> float:
        return self.elapsed_before + (self.clock.now() - self.started)

    def _checkpoint(self) -> None:
        self.ckpt_version += 1
        frontier = frontier_snapshot(self.cq, self.pq)
        for heap in self.parked.values():
            frontier += [SnapshotEntry("PQ", r) for _, r in sorted(heap)]
        stats = {"fetched": self.fetched, "duplicates": self.duplicates, "max_depth": self.max_depth,
                 "pruned": self.pruned, "retries": self.retries, "skipped": self.skipped,
                 "elapsed": self._elapsed(), "stored_records": len(self.repo.records()),
                 "checkpoints": self.checkpoints + 1}
        stats.update({f"outcome.{k}": v for k, v in self.outcomes.items()})
        ck = Checkpoint(
            version=self.ckpt_version, created_at=self.clock.now(), crawl_seq=self.fetched,
            next_seq=next(self.seq), frontier=frontier,
            inflight=sorted(self.inflight.values(), key=lambda r: r.seq),
            seen=[str(u) for u in self.seen.listing()], hosts=self.ledger.listing(),
            config_digest=self.config.digest(), fingerprints=sorted(self.fingerprints),
            stats=stats, retried=sorted(self.retried), quarantined=sorted(self.quarantined))
        self.seq = itertools.count(ck.next_seq)
        self.repo.sync()
        write_checkpoint(self.config.run_dir, ck)
        self.checkpoints += 1
        self.since_ckpt = len(self.inflight)
        self.last_ckpt_at = self.clock.now()

    def _start_fresh(self) -> None:
        # number past any older run in this directory so resume finds ours
        existing = list_checkpoints(self.config.run_dir)
        self.ckpt_version = existing[0][0] if existing else 0
        for url in self.seeds:
            if self.seen.check_insert(url):
                self._add_pending(CrawlRequest(url, 1.0, 0, next(self.seq)), to_pq=True)

    def _resume(self) -> None:
        ck, skipped = load_latest_checkpoint(self.config.run_dir)
        if ck is None:
            raise ConfigError(f"no usable checkpoint in {self.config.run_dir}")
        if ck.config_digest != self.config.digest():
            raise ConfigError("configuration changed since the checkpoint was written; refusing to resume")
        state = recover(ck, self.repo, max(self.config.frontier_capacity, 1))
        self.cq, self.pq, self.seen = state.cq, state.pq, state.seen
        self.ledger = state.hosts
        records = self.repo.records()
        stored_at_ckpt = int(ck.stats.get("stored_records", len(records)))
        self.recrawl_candidates = {r.url for r in records[stored_at_ckpt:]}
        # hosts contacted after the checkpoint still deserve their interval
        latest = dict(self.ledger.listing())
        for r in records[stored_at_ckpt:]:
            if r.fetched_at > latest.get(r.url.host, -math.inf):
                latest[r.url.host] = r.fetched_at
        self.ledger = HostLedger.restore(sorted(latest.items()))
        if self.clock.simulated:
            self.clock.sleep_until(max([ck.created_at] + [r.fetched_at for r in records]))
        for entry in ck.frontier:
            self.pending_depths[entry.request.depth] += 1
        for req in state.recrawl:
            self._add_pending(req, to_pq=True)
        s = ck.stats
        self.fetched = int(s.get("fetched", 0))
        self.duplicates = int(s.get("duplicates", 0))
        self.max_depth = int(s.get("max_depth", 0))
        self.pruned = int(s.get("pruned", 0))
        self.retries = int(s.get("retries", 0))
        self.skipped = int(s.get("skipped", 0))
        self.elapsed_before = float(s.get("elapsed", 0.0))
        self.checkpoints = int(s.get("checkpoints", 0))
        self.outcomes = Counter({k[len("outcome."):]: int(v) for k, v in s.items() if k.startswith("outcome.")})
        self.fingerprints = set(ck.fingerprints)
        self.retried = set(ck.retried)
        self.quarantined = set(ck.quarantined)
        self.seq = itertools.count(ck.next_seq)
        self.ckpt_version = ck.version
        log.info("resumed from checkpoint %d: %d pending, %d to recrawl", ck.version,
                 len(ck.frontier), len(state.recrawl))

    # main loop

    def run(self, resume: bool = False) -> CrawlReport:
        cfg = self.config
        wall0 = time.monotonic()
        self.repo = Repository(cfg.run_dir)
        work: "queue.Queue" = queue.Queue()
        results: "queue.Queue" = queue.Queue()
        pool = DownloaderPool(cfg.n_downloaders, work, results, cfg.fetch, self.clock, self.resolver, fetch)
        finished = False
        try:
            if resume:
                self._resume()
            self.started = self.clock.now()
            self.last_ckpt_at = self.started
            if not resume:
                self._start_fresh()
                self._checkpoint()  # a crash before the first page still has something to resume
            pool.start()
            reason = self._loop(work, results)
            while self.inflight:
                self._handle(*results.get())
            self._checkpoint()
            finished = True
        finally:
            pool.shutdown(wait=finished)
            self.repo.close()
            if self.server is not None:
                self.server.close()
        wall = time.monotonic() - wall0
        report = CrawlReport(
            pages_fetched=self.fetched, unique_fingerprints=len(self.fingerprints),
            duplicate_pages=self.duplicates, outcome_counts=dict(self.outcomes),
            max_depth=self.max_depth, duration=self._elapsed(), wall_seconds=wall, stop_reason=reason,
            politeness_violations=_gap_violations(self.dispatches, cfg.host_interval_seconds),
            throughput=(len(self.dispatches) / wall) if wall > 0 else 0.0,
            recrawled=self.recrawled, checkpoints=self.checkpoints, retries=self.retries,
            skipped=self.skipped, quarantined=tuple(sorted(self.quarantined)),
            fetches=self.log_order, urls=sorted(str(u) for u in Repository(cfg.run_dir).urls()))
        write_reports(report, cfg.run_dir)
        return report

    def _loop(self, work, results) -> StopReason:
        cfg = self.config
        deadline = None if cfg.stop.max_duration is None else self.started + cfg.stop.max_duration - self.elapsed_before
        while True:
            try:
                while True:
                    self._handle(*results.get_nowait())
            except queue.Empty:
                pass
            self._drain_cq()
            now = self.clock.now()
            self._fire_timers(now)
            progress = Progress(self.fetched, self._elapsed(), self._min_pending_depth())
            reason = should_stop(progress, cfg.stop)
            if reason is not None:
                return reason
            if now - self.last_ckpt_at >= cfg.checkpoint_seconds:
                self._checkpoint()
            if self.since_ckpt >= cfg.checkpoint_pages:
                if self.inflight:
                    self._handle(*results.get())
                else:
                    self._checkpoint()
                continue
            before = len(self.inflight)
            rate_wake = self._dispatch(work)
            if len(self.inflight) > before:
                continue
            wakes = [w for w in (rate_wake, deadline, self.timers[0][0] if self.timers else None) if w is not None]
            if self.inflight:
                timeout = None
                if not self.clock.simulated and wakes:
                    timeout = max(0.0, min(wakes) - self.clock.now())
                try:
                    self._handle(*results.get(timeout=timeout))
                except queue.Empty:
                    pass
                continue
            if not wakes:
                # nothing pending can ever become dispatchable
                log.warning("no dispatchable work left; stopping")
                return StopReason.FRONTIER_EXHAUSTED
            self.clock.sleep_until(min(wakes))


def write_reports(report: CrawlReport, run_dir) -> None:
    run_dir = Path(run_dir)
    (run_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (run_dir / "fetches.csv").write_text(report.fetches_csv(), encoding="utf-8")


def run_crawl(config: CrawlConfig, clock=None, resolver=None, resume: bool = False,
              site: Optional[SiteGraph] = None, after_page: Optional[Callable] = None) -> CrawlReport:
    return Crawler(config, clock, resolver, site, after_page).run(resume=resume)


# revisit driver

@dataclass
class FreshnessReport:
    policy: Policy
    budget: float
    horizon: float
    step: float
    n_pages: int
    fetches: int
    measured_freshness: float
    freshness_se: float
    measured_age: float
    age_se: float
    predicted_freshness: float
    predicted_age: float
    plan: RevisitPlan = field(repr=False)

    def rows(self):
        return [("policy", self.policy.value), ("budget", self.budget), ("horizon", self.horizon),
                ("step", self.step), ("pages", self.n_pages), ("fetches", self.fetches),
                ("measured_freshness", f"{self.measured_freshness:.6f}"),
                ("freshness_se", f"{self.freshness_se:.6f}"),
                ("predicted_freshness", f"{self.predicted_freshness:.6f}"),
                ("measured_age", f"{self.measured_age:.6f}"),
                ("age_se", f"{self.age_se:.6f}"),
                ("predicted_age", f"{self.predicted_age:.6f}")]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerows(self.rows())
        return buf.getvalue()

    def summary(self) -> str:
        return "\n".join([
            f"policy {self.policy.value}, budget {self.budget:g}, {self.n_pages} pages, "
            f"horizon {self.horizon:g}, {self.fetches} re-fetches",
            f"freshness: measured {self.measured_freshness:.4f} +/- {self.freshness_se:.4f}, "
            f"predicted {self.predicted_freshness:.4f}",
            f"age: measured {self.measured_age:.4f} +/- {self.age_se:.4f}, predicted {self.predicted_age:.4f}",
        ])


def _baseline(repo: Repository, site: SiteGraph) -> List[Tuple[int, PageRecord]]:
    latest: Dict[int, PageRecord] = {}
    for rec in repo.records():
        pid = site.lookup(rec.url)
        if pid is not None and rec.fingerprint is not None:
            latest[pid] = rec
    return sorted(latest.items())


def run_revisit_loop(config: CrawlConfig, policy, budget: float, *, site: Optional[SiteGraph] = None,
                     rates=None, horizon: Optional[float] = None, step: Optional[float] = None,
                     seed: Optional[int] = None, n_batches: int = 20) -> FreshnessReport:
    """Re-fetch stored pages on the plan's schedule while the simulated web
    mutates, sampling freshness and age at the middle of every time step.

    Visits of a page at frequency f fall on the grid step nearest to each
    multiple of 1/f. Change rates default to the site's true rates.
    """
    if site is None:
        if config.simweb is None:
            raise ConfigError("the revisit loop needs a simulated web (simweb_* keys)")
        site = build_site(config.simweb)
    horizon = config.revisit_horizon if horizon is None else horizon
    dt = config.revisit_step if step is None else step
    if not horizon > 0 or not dt > 0:
        raise ValueError("horizon and step must be > 0")
    seed = config.rng_seed if seed is None else seed
    repo = Repository(config.run_dir)
    try:
        base = _baseline(repo, site)
        if not base:
            raise NoBaseline(f"no stored pages of this site in {config.run_dir}; run a crawl first")
        ids = [pid for pid, _ in base]
        lam = np.asarray(site.rates[ids] if rates is None else rates, dtype=float)
        # a page that is never re-fetched ages for the whole simulated run
        age_horizon = config.revisit_age_horizon or horizon
        plan = plan_revisits(policy, lam, budget, config.revisit_resolution, age_horizon)

        clock = SimClock(0.0)
        rng = np.random.default_rng(seed)
        n = len(ids)
        stored_fp = [rec.fingerprint for _, rec in base]
        live_fp = [fingerprint(site.render(pid)) for pid in ids]
        diverged = np.array([math.inf if s == l else 0.0 for s, l in zip(stored_fp, live_fp)])
        pos = {pid: k for k, pid in enumerate(ids)}
        n_steps = max(1, int(round(horizon / dt)))
        n_batches = max(1, min(n_batches, n_steps))
        periods = [1.0 / (f * dt) if f > 0 else math.inf for f in plan.frequencies]
        visit_no = [1] * n
        next_step = [round(p) if p < math.inf else math.inf for p in periods]
        batch_of = np.minimum((np.arange(n_steps) * n_batches) // n_steps, n_batches - 1)
        fresh_sum = np.zeros(n_batches)
        age_sum = np.zeros(n_batches)
        counts = np.bincount(batch_of, minlength=n_batches).astype(float)
        fetches = 0
        with SimWebServer(site, clock) as server:
            def mutate(width):
                for pid in advance_changes(site, clock, width, rng):
                    k = pos.get(pid)
                    if k is None:
                        continue
                    live_fp[k] = fingerprint(site.render(pid))
                    if diverged[k] == math.inf:
                        diverged[k] = site.last_change[pid]
                clock.advance(width)

            for s in range(n_steps):
                for k in range(n):
                    if next_step[k] <= s:
                        res = fetch(site.url(ids[k]), config.fetch, clock, server.resolver)
                        fetches += 1
                        rec = base[k][1]
                        exp = analyze_and_expand(res, CrawlRequest(rec.url, 1.0, rec.depth, 0), SeenSet(), config.topic)
                        repo.put_page(exp.record, exp.body)
                        if exp.record.fingerprint is not None:
                            stored_fp[k] = exp.record.fingerprint
                            diverged[k] = math.inf if stored_fp[k] == live_fp[k] else clock.now()
                        visit_no[k] += 1
                        next_step[k] = round(visit_no[k] * periods[k])
                mutate(dt / 2)
                now = clock.now()
                fresh = np.array([a == b for a, b in zip(stored_fp, live_fp)])
                age = np.where(fresh, 0.0, now - np.minimum(diverged, now))
                b = batch_of[s]
                fresh_sum[b] += fresh.mean()
                age_sum[b] += age.mean()
                mutate(dt / 2)
        repo.sync()
    finally:
        repo.close()
    fb, ab = fresh_sum / counts, age_sum / counts
    se = lambda x: float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0
    total = counts.sum()
    return FreshnessReport(plan.policy, float(budget), float(horizon), float(dt), n, fetches,
                           float(fresh_sum.sum() / total), se(fb), float(age_sum.sum() / total), se(ab),
                           plan.predicted_freshness, plan.predicted_age, plan)
