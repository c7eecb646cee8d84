"""URL parsing, canonicalization, reference resolution and the URL-seen set.

Canonical form: lowercase scheme and host, default port dropped, dot
segments removed, percent-encodings normalized, query pairs sorted by key
then value, fragment stripped. The rendered string is used as the identity
key everywhere (seen set, frontier, store, reports).
"""

from __future__ import annotations

import ipaddress
import re
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

SCHEMES = {"http": 80, "https": 443}

# RFC 3986 appendix B
_URI_RE = re.compile(r"^(([^:/?#]+):)?(//([^/?#]*))?([^?#]*)(\?([^#]*))?(#(.*))?$", re.S)
_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*$")
_HOST_RE = re.compile(r"^[a-z0-9_~\-]+(\.[a-z0-9_~\-]+)*\.?$")
_STRIP_RE = re.compile(r"[\t\n\r]")

_UNRESERVED = frozenset("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-._~")
_SUB_DELIMS = frozenset("!$&'()*+,;=")
_PCHAR = _UNRESERVED | _SUB_DELIMS | frozenset(":@")
_PATH_CHARS = _PCHAR | frozenset("/")
_QUERY_CHARS = _PCHAR | frozenset("/?")
_HEX = frozenset("0123456789abcdefABCDEF")


class UrlError(ValueError):
    """Base class for URL errors."""


class MalformedUrl(UrlError):
    pass


class UnsupportedScheme(UrlError):
    pass


def _normalize_encoding(text: str, allowed: frozenset) -> str:
    out = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "%" and i + 2 < n and text[i + 1] in _HEX and text[i + 2] in _HEX:
            decoded = chr(int(text[i + 1:i + 3], 16))
            if decoded in _UNRESERVED:
                out.append(decoded)
            else:
                out.append("%" + text[i + 1:i + 3].upper())
            i += 3
            continue
        if ch in allowed:
            out.append(ch)
        else:
            out.extend("%%%02X" % b for b in ch.encode("utf-8"))
        i += 1
    return "".join(out)


def remove_dot_segments(path: str) -> str:
    """The dot-segment removal loop of RFC 3986 section 5.2.4."""
    inp = path
    out: list[str] = []
    while inp:
        if inp.startswith("../"):
            inp = inp[3:]
        elif inp.startswith("./"):
            inp = inp[2:]
        elif inp.startswith("/./"):
            inp = inp[2:]
        elif inp == "/.":
            inp = "/"
        elif inp.startswith("/../"):
            inp = inp[3:]
            if out:
                out.pop()
        elif inp == "/..":
            inp = "/"
            if out:
                out.pop()
        elif inp in (".", ".."):
            inp = ""
        else:
            start = 1 if inp.startswith("/") else 0
            end = inp.find("/", start)
            if end == -1:
                end = len(inp)
            out.append(inp[:end])
            inp = inp[end:]
    return "".join(out)


def _parse_query(query: Optional[str]) -> tuple:
    if not query:
        return ()
    pairs = []
    for piece in query.split("&"):
        if not piece:
            continue
        key, sep, value = piece.partition("=")
        key = _normalize_encoding(key, _QUERY_CHARS)
        pairs.append((key, _normalize_encoding(value, _QUERY_CHARS) if sep else None))
    pairs.sort(key=lambda kv: (kv[0], kv[1] is not None, kv[1] or ""))
    return tuple(pairs)


def _parse_host(host: str) -> str:
    if not host:
        raise MalformedUrl("empty host")
    if host.startswith("["):
        if not host.endswith("]"):
            raise MalformedUrl(f"bad IPv6 literal {host!r}")
        try:
            addr = ipaddress.IPv6Address(host[1:-1])
        except ValueError as exc:
            raise MalformedUrl(f"bad IPv6 literal {host!r}") from exc
        return f"[{addr.compressed}]"
    host = host.lower()
    if not _HOST_RE.match(host):
        raise MalformedUrl(f"bad host {host!r}")
    return host


@dataclass(frozen=True)
class CanonicalUrl:
    scheme: str
    host: str
    port: Optional[int]
    path: str
    query: tuple = ()

    @property
    def authority(self) -> str:
        if self.port is None:
            return self.host
        return f"{self.host}:{self.port}"

    @property
    def effective_port(self) -> int:
        return self.port if self.port is not None else SCHEMES[self.scheme]

    @property
    def query_string(self) -> str:
        return "&".join(k if v is None else f"{k}={v}" for k, v in self.query)

    @property
    def request_target(self) -> str:
        qs = self.query_string
        return self.path + ("?" + qs if qs else "")

    def render(self) -> str:
        return f"{self.scheme}://{self.authority}{self.request_target}"

    def __str__(self) -> str:
        return self.render()


def _split(text: str):
    text = _STRIP_RE.sub("", text.strip())
    m = _URI_RE.match(text)
    if m is None:  # pragma: no cover - the regex matches every string
        raise MalformedUrl(text)
    return m.group(2), m.group(4), m.group(5), m.group(7)


def _build(scheme: Optional[str], authority: Optional[str], path: str, query: Optional[str]) -> CanonicalUrl:
    if not scheme:
        raise MalformedUrl("no scheme")
    if not _SCHEME_RE.match(scheme):
        raise MalformedUrl(f"bad scheme {scheme!r}")
    scheme = scheme.lower()
    if scheme not in SCHEMES:
        raise UnsupportedScheme(scheme)
    if authority is None:
        raise MalformedUrl("missing authority")
    if "@" in authority:
        raise MalformedUrl("userinfo is not supported")
    host, port = authority, None
    m = re.match(r"^(\[[^\]]*\]|[^:]*)(?::(.*))?$", authority)
    if m:
        host, port_text = m.group(1), m.group(2)
        if port_text:
            if not port_text.isdigit() or not 0 < int(port_text) < 65536:
                raise MalformedUrl(f"bad port {port_text!r}")
            port = int(port_text)
    host = _parse_host(host)
    if port == SCHEMES[scheme]:
        port = None
    path = remove_dot_segments(_normalize_encoding(path, _PATH_CHARS)) or "/"
    if not path.startswith("/"):
        path = "/" + path
    return CanonicalUrl(scheme, host, port, path, _parse_query(query))


def parse_url(text: str) -> CanonicalUrl:
    """Parse an absolute http(s) URL straight into canonical form."""
    scheme, authority, path, query = _split(text)
    return _build(scheme, authority, path, query)


def canonicalize(text: str) -> str:
    return parse_url(text).render()


def _merge(base: CanonicalUrl, ref_path: str) -> str:
    return base.path[: base.path.rfind("/") + 1] + ref_path


def resolve(base: CanonicalUrl, reference: str) -> CanonicalUrl:
    """Resolve ``reference`` against ``base`` (RFC 3986 section 5.2) and canonicalize."""
    scheme, authority, path, query = _split(reference)
    if scheme is not None:
        return _build(scheme, authority, remove_dot_segments(path), query)
    if authority is not None:
        return _build(base.scheme, authority, remove_dot_segments(path), query)
    if path == "":
        return _build(base.scheme, base.authority, base.path,
                      query if query is not None else base.query_string)
    if path.startswith("/"):
        target = remove_dot_segments(path)
    else:
        target = remove_dot_segments(_merge(base, path))
    return _build(base.scheme, base.authority, target, query)


class SeenSet:
    """Thread-safe set of canonical URLs already discovered."""

    def __init__(self, urls: Iterable[CanonicalUrl] = ()):
        self._lock = threading.Lock()
        self._urls: set = set(urls)

    def check_insert(self, url: CanonicalUrl) -> bool:
        """Insert ``url``; True only on its first sighting."""
        with self._lock:
            if url in self._urls:
                return False
            self._urls.add(url)
            return True

    def __contains__(self, url) -> bool:
        with self._lock:
            return url in self._urls

    def __len__(self) -> int:
        with self._lock:
            return len(self._urls)

    @property
    def count(self) -> int:
        return len(self)

    def __iter__(self) -> Iterator[CanonicalUrl]:
        return iter(self.listing())

    def listing(self) -> list:
        with self._lock:
            return sorted(self._urls, key=str)


def seen_check_insert(seen: SeenSet, url: CanonicalUrl) -> bool:
    return seen.check_insert(url)
