"""Downloader: HTTP GET with mandatory self-identification, and a worker pool."""

from __future__ import annotations

import enum
import http.client
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

from .urlkit import CanonicalUrl, UrlError, resolve

log = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "epow/0.1 (+https://example.org/epow-crawler; crawler-admin@example.org)"

Resolver = Callable[[CanonicalUrl], Tuple[str, int]]


class Outcome(enum.Enum):
    SUCCESS = "Success"
    REDIRECT = "Redirect"
    CLIENT_ERROR = "ClientError"
    SERVER_ERROR = "ServerError"
    TIMEOUT = "Timeout"
    NETWORK_ERROR = "NetworkError"
    OVERSIZE = "Oversize"


class OutOfRange(ValueError):
    pass


def classify_status(code: int) -> Outcome:
    if not 100 <= code <= 599:
        raise OutOfRange(f"HTTP status {code} outside 100..599")
    if 200 <= code < 300:
        return Outcome.SUCCESS
    if 300 <= code < 400:
        return Outcome.REDIRECT
    if 400 <= code < 500:
        return Outcome.CLIENT_ERROR
    if 500 <= code:
        return Outcome.SERVER_ERROR
    # 1xx never reaches us as a final status from http.client
    return Outcome.NETWORK_ERROR


@dataclass(frozen=True)
class FetchPolicy:
    user_agent: str = DEFAULT_USER_AGENT
    timeout: float = 10.0
    max_body_bytes: int = 2 * 1024 * 1024
    max_redirect_hops: int = 5

    def __post_init__(self):
        if not self.user_agent or not self.user_agent.strip():
            raise ValueError("user_agent is mandatory")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_body_bytes <= 0:
            raise ValueError("max_body_bytes must be positive")
        if self.max_redirect_hops < 0:
            raise ValueError("max_redirect_hops must be >= 0")


@dataclass(frozen=True)
class FetchResult:
    url: CanonicalUrl
    fetched_at: float
    outcome: Outcome
    status: Optional[int] = None
    body: Optional[bytes] = None
    content_type: Optional[str] = None
    final_url: Optional[CanonicalUrl] = None
    redirects: tuple = ()
    error: str = ""

    def __post_init__(self):
        if (self.body is not None) != (self.outcome is Outcome.SUCCESS):
            raise ValueError("body must be present exactly when outcome is Success")

    @property
    def redirect_target(self) -> Optional[CanonicalUrl]:
        return self.redirects[-1] if self.redirects else None


class _Oversize(Exception):
    pass


def direct_resolver(url: CanonicalUrl) -> Tuple[str, int]:
    host = url.host[1:-1] if url.host.startswith("[") else url.host
    return host, url.effective_port


def _get_once(url: CanonicalUrl, policy: FetchPolicy, resolver: Resolver, deadline: float):
    addr, port = resolver(url)
    remaining = deadline - time.monotonic()
    if remaining <= 0:
        raise socket.timeout("deadline passed before connect")
    cls = http.client.HTTPSConnection if url.scheme == "https" else http.client.HTTPConnection
    conn = cls(addr, port, timeout=remaining)
    try:
        conn.putrequest("GET", url.request_target, skip_host=True, skip_accept_encoding=True)
        conn.putheader("Host", url.authority)
        conn.putheader("User-Agent", policy.user_agent)
        conn.putheader("Accept", "text/html")
        conn.putheader("Connection", "close")
        conn.endheaders()
        resp = conn.getresponse()
        status = resp.status
        headers = {k.lower(): v for k, v in resp.getheaders()}
        if not 200 <= status < 300:
            return status, headers, None
        length = headers.get("content-length")
        if length is not None and length.isdigit() and int(length) > policy.max_body_bytes:
            raise _Oversize()
        chunks, total = [], 0
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise socket.timeout("body read exceeded deadline")
            if conn.sock is not None:
                conn.sock.settimeout(remaining)
            chunk = resp.read(min(65536, policy.max_body_bytes + 1 - total))
            if not chunk:
                break
            chunks.append(chunk)
            total += len(chunk)
            if total > policy.max_body_bytes:
                raise _Oversize()
        return status, headers, b"".join(chunks)
    finally:
        conn.close()


def fetch(url: CanonicalUrl, policy: FetchPolicy, clock, resolver: Optional[Resolver] = None) -> FetchResult:
    """Fetch ``url``, following at most ``policy.max_redirect_hops`` redirects.

    Never raises for network or protocol trouble; the outcome field says what
    happened. The whole fetch, redirects included, shares one deadline.
    """
    resolver = resolver or direct_resolver
    fetched_at = clock.now()
    deadline = time.monotonic() + policy.timeout
    current = url
    hops: list = []

    def result(outcome, **kw):
        return FetchResult(url=url, fetched_at=fetched_at, outcome=outcome,
                           redirects=tuple(hops), **kw)

    for hop in range(policy.max_redirect_hops + 1):
        try:
            status, headers, body = _get_once(current, policy, resolver, deadline)
        except _Oversize:
            return result(Outcome.OVERSIZE, final_url=current)
        except (socket.timeout, TimeoutError):
            return result(Outcome.TIMEOUT, error="timed out")
        except (OSError, http.client.HTTPException) as exc:
            return result(Outcome.NETWORK_ERROR, error=f"{type(exc).__name__}: {exc}")
        try:
            outcome = classify_status(status)
        except OutOfRange as exc:
            return result(Outcome.NETWORK_ERROR, status=status, error=str(exc))
        ctype = headers.get("content-type")
        if outcome is Outcome.SUCCESS:
            return result(outcome, status=status, body=body, content_type=ctype, final_url=current)
        if outcome is not Outcome.REDIRECT:
            return result(outcome, status=status, content_type=ctype)
        location = headers.get("location")
        try:
            target = resolve(current, location) if location else None
        except UrlError as exc:
            return result(Outcome.REDIRECT, status=status, error=f"bad Location: {exc}")
        if target is None:
            return result(Outcome.REDIRECT, status=status, error="redirect without Location")
        hops.append(target)
        if hop == policy.max_redirect_hops:
            return result(Outcome.REDIRECT, status=status, error="too many redirects")
        current = target
    raise AssertionError("unreachable")  # pragma: no cover


_SHUTDOWN = object()


class DownloaderPool:
    """N worker threads taking requests from ``work_source`` and putting
    ``(request, FetchResult)`` pairs on ``result_sink``.

    Requests are any object with a ``url`` attribute. A worker that hits an
    unexpected exception reports a NetworkError result for that request and
    keeps going.
    """

    def __init__(self, n: int, work_source: "queue.Queue", result_sink: "queue.Queue",
                 policy: FetchPolicy, clock, resolver: Optional[Resolver] = None,
                 fetcher: Callable = fetch):
        if n < 1:
            raise ValueError("need at least one downloader")
        self.n = n
        self.work_source = work_source
        self.result_sink = result_sink
        self.policy = policy
        self.clock = clock
        self.resolver = resolver
        self.fetcher = fetcher
        self._threads = [threading.Thread(target=self._work, name=f"downloader-{i}", daemon=True)
                         for i in range(n)]
        self._started = False

    def start(self) -> "DownloaderPool":
        if not self._started:
            self._started = True
            for t in self._threads:
                t.start()
        return self

    def submit(self, request) -> None:
        self.work_source.put(request)

    def _work(self):
        while True:
            request = self.work_source.get()
            if request is None or request is _SHUTDOWN:
                break
            try:
                res = self.fetcher(request.url, self.policy, self.clock, self.resolver)
            except Exception as exc:
                log.exception("downloader crashed on %s", request.url)
                res = FetchResult(url=request.url, fetched_at=self.clock.now(),
                                  outcome=Outcome.NETWORK_ERROR, error=f"worker error: {exc!r}")
            self.result_sink.put((request, res))

    def shutdown(self, wait: bool = True) -> None:
        for _ in self._threads:
            self.work_source.put(_SHUTDOWN)
        if wait:
            self.join()

    def join(self, timeout: Optional[float] = None) -> None:
        for t in self._threads:
            t.join(timeout)

    @property
    def alive(self) -> int:
        return sum(t.is_alive() for t in self._threads)


def run_downloader_pool(n, work_source, result_sink, policy, clock, resolver=None) -> DownloaderPool:
    """Start ``n`` downloaders; put ``None`` on ``work_source`` once per worker to stop them."""
    return DownloaderPool(n, work_source, result_sink, policy, clock, resolver).start()
