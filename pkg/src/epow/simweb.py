"""Deterministic synthetic web for crawl-level tests.

A :class:`SiteGraph` is a pure function of its seed and parameters. It is
served over loopback HTTP by :class:`SimWebServer`, which routes virtual
hosts by the ``Host`` header, logs every request with its headers, and can
inject faults on chosen URLs. Page bodies carry a version stamp that
:func:`advance_changes` bumps according to each page's Poisson change rate.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import random
import socket
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .fetchnet import direct_resolver
from .urlkit import CanonicalUrl, UrlError, parse_url

log = logging.getLogger(__name__)

SIM_DOMAIN = "simweb.test"

_FILLER = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo lima mike "
    "november oscar papa quebec romeo sierra tango uniform victor whiskey xray yankee "
    "zulu amber birch cedar dune ember fjord grove harbor islet jade kelp lagoon meadow "
    "nectar orchid pebble quartz ridge summit thicket umber valley willow yarrow zephyr"
).split()


class BadParams(ValueError):
    pass


class BindFailure(OSError):
    pass


@dataclass
class SimPage:
    page_id: int
    host: str
    path: str
    links: Tuple[int, ...]
    rate: float = 0.0
    words: str = ""
    version: int = 0
    static_body: Optional[bytes] = None

    @property
    def url(self) -> str:
        return f"http://{self.host}{self.path}"


class SiteGraph:
    def __init__(self, seed: int, pages: List[SimPage], params: Optional[dict] = None):
        if not pages:
            raise BadParams("a site needs at least one page")
        self.seed = seed
        self.pages = pages
        self.params = dict(params or {})
        self.hosts = sorted({p.host for p in pages})
        self._by_url: Dict[str, int] = {}
        for p in pages:
            self._by_url[parse_url(p.url).render()] = p.page_id
        self.rates = np.array([p.rate for p in pages], dtype=float)
        self.last_change = np.full(len(pages), -np.inf)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.pages)

    def url(self, page_id: int) -> CanonicalUrl:
        return parse_url(self.pages[page_id].url)

    @property
    def root(self) -> CanonicalUrl:
        return self.url(0)

    def lookup(self, url: Union[str, CanonicalUrl]) -> Optional[int]:
        key = url.render() if isinstance(url, CanonicalUrl) else url
        return self._by_url.get(key)

    def _href(self, src: SimPage, dst: SimPage) -> str:
        if dst.host == src.host:
            return dst.path
        return dst.url

    def render(self, page_id: int) -> bytes:
        page = self.pages[page_id]
        if page.static_body is not None:
            return page.static_body
        with self._lock:
            version = page.version
        items = "\n".join(
            f'<li><a href="{self._href(page, self.pages[t])}">page {t}</a></li>' for t in page.links)
        return (
            "<!DOCTYPE html>\n<html><head>"
            f'<title>Page {page_id}</title><meta name="version" content="{version}"></head>\n'
            f"<body><h1>Page {page_id}</h1>\n<p>{page.words}</p>\n<ul>\n{items}\n</ul>\n"
            "</body></html>\n"
        ).encode("utf-8")

    def reachable(self, start: int = 0) -> set:
        seen, stack = {start}, [start]
        while stack:
            for t in self.pages[stack.pop()].links:
                if t not in seen:
                    seen.add(t)
                    stack.append(t)
        return seen


def _draw_rates(rates, n: int, rng: random.Random) -> List[float]:
    if rates is None:
        return [0.0] * n
    if isinstance(rates, (int, float)):
        return [float(rates)] * n
    if callable(rates):
        return [float(rates(rng)) for _ in range(n)]
    rates = list(rates)
    if len(rates) == n:
        return [float(r) for r in rates]
    return [float(rng.choice(rates)) for _ in range(n)]


def generate_site(seed: int, n_pages: int, n_hosts: int = 1, out_degree_mean: float = 4.0,
                  rates=None, topology: str = "random", topic: Sequence[str] = (),
                  high_fraction: float = 0.5, high_hits: int = 0, low_hits: int = 0,
                  homophily: float = 0.5) -> SiteGraph:
    """Generate a site whose every page is reachable from page 0.

    ``rates`` is None (static site), one number, a sequence of length
    ``n_pages`` (used as given), a shorter sequence (drawn from), or a
    callable taking a ``random.Random``. With ``topic`` set, a
    ``high_fraction`` share of pages mention the first ``high_hits`` topic
    terms and the rest the first ``low_hits``; ``homophily`` is the chance a
    link stays within its page's class. ``topology`` is ``random``, ``star``
    (page 0 links to all) or ``chain``.
    """
    if n_pages < 1 or n_hosts < 1:
        raise BadParams("n_pages and n_hosts must be >= 1")
    if out_degree_mean < 0 or not 0 <= high_fraction <= 1 or not 0 <= homophily <= 1:
        raise BadParams("bad generator parameters")
    if topology not in ("random", "star", "chain"):
        raise BadParams(f"unknown topology {topology!r}")
    if max(high_hits, low_hits) > len(topic):
        raise BadParams("more planted hits than topic terms")
    rng = random.Random(seed)
    hosts = [f"h{j}.{SIM_DOMAIN}" for j in range(n_hosts)]
    host_of = [0] + [i if i < n_hosts else rng.randrange(n_hosts) for i in range(1, n_pages)]
    n_high = round(n_pages * high_fraction) if topic else 0
    high = set(rng.sample(range(n_pages), n_high)) if n_high else set()

    links: List[List[int]] = [[] for _ in range(n_pages)]
    if topology == "star":
        links[0] = list(range(1, n_pages))
    elif topology == "chain":
        for i in range(n_pages - 1):
            links[i].append(i + 1)
    else:
        earlier: Tuple[List[int], List[int]] = ([], [])  # (high, low) pages so far
        earlier[0 if 0 in high else 1].append(0)
        for i in range(1, n_pages):
            same = earlier[0 if i in high else 1]
            parent = rng.choice(same) if same and rng.random() < homophily else rng.randrange(i)
            links[parent].append(i)
            same.append(i)
        classes = ([j for j in range(n_pages) if j in high], [j for j in range(n_pages) if j not in high])
        for i in range(n_pages):
            if n_pages == 1:
                break
            want = max(0, round(rng.expovariate(1 / out_degree_mean))) if out_degree_mean > 0 else 0
            mine = classes[0] if i in high else classes[1]
            for _ in range(want):
                pool = mine if mine and rng.random() < homophily else range(n_pages)
                t = rng.choice(pool)
                if t != i and t not in links[i]:
                    links[i].append(t)

    page_rates = _draw_rates(rates, n_pages, rng)
    pages = []
    for i in range(n_pages):
        words = rng.sample(_FILLER, 12)
        hits = high_hits if i in high else low_hits
        words += list(topic[:hits])
        rng.shuffle(words)
        pages.append(SimPage(i, hosts[host_of[i]], "/" if i == 0 else f"/p/{i}",
                             tuple(links[i]), page_rates[i], " ".join(words)))
    params = dict(n_pages=n_pages, n_hosts=n_hosts, out_degree_mean=out_degree_mean,
                  topology=topology, topic=tuple(topic), high_fraction=high_fraction,
                  high_hits=high_hits, low_hits=low_hits, homophily=homophily)
    site = SiteGraph(seed, pages, params)
    site.high_pages = frozenset(high)
    return site


GALLERY_OPTIONS = {
    "sort": ("date", "name", "rating", "size"),
    "thumb": ("small", "medium", "large"),
    "format": ("grid", "list"),
    "ugc": ("on", "off"),
}


def gallery_fixture(host: str = f"gallery.{SIM_DOMAIN}") -> SiteGraph:
    """One gallery page reachable through 4*3*2*2 = 48 query-string variants,
    all serving the same bytes and all linking to each other."""
    keys = list(GALLERY_OPTIONS)
    combos = list(itertools.product(*(GALLERY_OPTIONS[k] for k in keys)))
    paths = ["/gallery?" + "&".join(f"{k}={v}" for k, v in zip(keys, combo)) for combo in combos]
    items = "\n".join(f'<li><a href="{p.replace("&", "&amp;")}">view</a></li>' for p in paths)
    body = (
        "<!DOCTYPE html>\n<html><head><title>Photo gallery</title></head>\n"
        "<body><h1>Photo gallery</h1>\n<p>twelve photos of mountains and lakes</p>\n"
        f"<ul>\n{items}\n</ul>\n</body></html>\n"
    ).encode("utf-8")
    all_ids = tuple(range(len(paths)))
    pages = [SimPage(i, host, p, all_ids, 0.0, static_body=body) for i, p in enumerate(paths)]
    return SiteGraph(0, pages, {"fixture": "gallery"})


def advance_changes(site: SiteGraph, clock, dt: float, rng=None) -> List[int]:
    """Run every page's change process over ``(now, now + dt]``.

    A page changes with probability ``1 - exp(-rate*dt)``; a change bumps its
    version stamp. ``site.last_change[i]`` gets the time of the first change
    inside the window. The clock is read, not advanced.
    """
    if not dt > 0:
        raise BadParams("dt must be positive")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    now = clock.now()
    p = -np.expm1(-site.rates * dt)
    u = rng.random(len(site.pages))
    changed = np.nonzero(u < p)[0]
    if len(changed):
        lam = site.rates[changed]
        # first arrival inside the window, conditioned on at least one
        v = rng.random(len(changed))
        offsets = -np.log1p(-v * p[changed]) / lam
        with site._lock:
            for i, off in zip(changed.tolist(), offsets.tolist()):
                site.pages[i].version += 1
                site.last_change[i] = now + min(off, dt)
    return changed.tolist()


@dataclass
class Fault:
    delay: float = 0.0
    refuse: bool = False
    redirect_chain: int = 0
    oversize: int = 0
    status: Optional[int] = None


@dataclass
class RequestEntry:
    arrival: float
    host: str
    path: str
    headers: Tuple[Tuple[str, str], ...]
    finished: Optional[float] = None
    status: Optional[int] = None

    def header(self, name: str) -> Optional[str]:
        for k, v in self.headers:
            if k.lower() == name.lower():
                return v
        return None


class RequestLog:
    """Append-only log of every request the simulated web received."""

    def __init__(self):
        self._entries: List[RequestEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: RequestEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def entries(self) -> List[RequestEntry]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arrival", "finished", "host", "path", "status", "user_agent"])
        for e in self.entries():
            w.writerow([repr(e.arrival), "" if e.finished is None else repr(e.finished),
                        e.host, e.path, "" if e.status is None else e.status,
                        e.header("User-Agent") or ""])
        return buf.getvalue()


def politeness_violations(entries: Sequence[RequestEntry], min_interval: float) -> List[Tuple[str, float, float]]:
    """Pairs of consecutive same-host arrivals closer than ``min_interval``."""
    by_host: Dict[str, List[float]] = {}
    for e in entries:
        by_host.setdefault(e.host, []).append(e.arrival)
    bad = []
    for host, times in by_host.items():
        times.sort()
        for a, b in zip(times, times[1:]):
            if b - a < min_interval - 1e-9:
                bad.append((host, a, b))
    return bad


def overlapping_requests(entries: Sequence[RequestEntry]) -> List[Tuple[str, RequestEntry, RequestEntry]]:
    """Same-host requests whose [arrival, finished] intervals overlap."""
    by_host: Dict[str, List[RequestEntry]] = {}
    for e in entries:
        by_host.setdefault(e.host, []).append(e)
    bad = []
    for host, es in by_host.items():
        es.sort(key=lambda e: (e.arrival, e.finished if e.finished is not None else e.arrival))
        for a, b in zip(es, es[1:]):
            a_end = a.finished if a.finished is not None else a.arrival
            if b.arrival < a_end:
                bad.append((host, a, b))
    return bad


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "simweb/1"

    def log_message(self, fmt, *args):
        pass

    def do_GET(self):
        sim: "SimWebServer" = self.server.sim
        host = (self.headers.get("Host") or "").split(":")[0].lower()
        entry = RequestEntry(sim.clock.now(), host, self.path, tuple(self.headers.items()))
        sim.log.append(entry)
        try:
            status = self._respond(sim, host)
        finally:
            entry.finished = sim.clock.now()
        entry.status = status

    def _send(self, status: int, body: bytes = b"", headers=()):
        self.send_response(status)
        for k, v in headers:
            self.send_header(k, v)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Connection", "close")
        self.end_headers()
        self.close_connection = True
        if body:
            self.wfile.write(body)
        return status

    def _respond(self, sim: "SimWebServer", host: str) -> Optional[int]:
        path = self.path
        if path.startswith("/_hop/"):
            _, _, rest = path.partition("/_hop/")
            count, _, orig = rest.partition("/")
            if count.isdigit() and int(count) > 0:
                return self._send(301, headers=[("Location", f"http://{host}/_hop/{int(count) - 1}/{orig}")])
            path = "/" + orig
            fault = None
        else:
            fault = sim.fault_for(host, path)
        if fault is not None:
            if fault.delay:
                time.sleep(fault.delay)
            if fault.refuse:
                self.close_connection = True
                try:
                    self.connection.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                return None
            if fault.redirect_chain:
                return self._send(301, headers=[("Location", f"http://{host}/_hop/{fault.redirect_chain - 1}{path}")])
            if fault.status is not None:
                return self._send(fault.status, f"status {fault.status}\n".encode())
            if fault.oversize:
                return self._send(200, b"x" * fault.oversize, [("Content-Type", "text/html")])
        try:
            page_id = sim.site.lookup(parse_url(f"http://{host}{path}"))
        except UrlError:
            page_id = None
        if page_id is None:
            return self._send(404, b"not found\n", [("Content-Type", "text/plain")])
        return self._send(200, sim.site.render(page_id), [("Content-Type", "text/html; charset=utf-8")])


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256
    allow_reuse_address = True

    def handle_error(self, request, client_address):
        # clients that time out or refuse leave broken pipes behind
        log.debug("simweb: error serving %s", client_address, exc_info=True)


class SimWebServer:
    """Serves one :class:`SiteGraph` on a loopback port."""

    def __init__(self, site: SiteGraph, clock, host: str = "127.0.0.1", port: int = 0):
        self.site = site
        self.clock = clock
        self.log = RequestLog()
        self.faults: Dict[Tuple[str, str], Fault] = {}
        try:
            self._httpd = _Server((host, port), _Handler)
        except OSError as exc:
            raise BindFailure(str(exc)) from exc
        self._httpd.sim = self
        self.address = self._httpd.server_address[0]
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="simweb", daemon=True)
        self._thread.start()

    def add_fault(self, url: Union[str, CanonicalUrl], **kw) -> Fault:
        u = parse_url(url) if isinstance(url, str) else url
        fault = Fault(**kw)
        self.faults[(u.host, u.request_target)] = fault
        return fault

    def fault_for(self, host: str, path: str) -> Optional[Fault]:
        if not self.faults:
            return None
        try:
            target = parse_url(f"http://{host}{path}").request_target
        except UrlError:
            target = path
        return self.faults.get((host, target))

    def resolver(self, url: CanonicalUrl) -> Tuple[str, int]:
        if url.host in self.site.hosts or url.host.endswith("." + SIM_DOMAIN):
            return self.address, self.port
        return direct_resolver(url)

    @property
    def endpoints(self) -> List[str]:
        return [f"{self.address}:{self.port}"]

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(site: SiteGraph, clock, host: str = "127.0.0.1", port: int = 0) -> SimWebServer:
    return SimWebServer(site, clock, host, port)
