"""Tolerant link extraction, content fingerprints and topical relevance.

Link extraction is a scanner, not a parser: it looks for ``<a`` followed
by an ``href`` attribute and does not care whether tags are ever closed.
Garbage in gives a (possibly empty) list out, never an exception.
"""

from __future__ import annotations

import hashlib
import html
import re
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

from .urlkit import CanonicalUrl, UrlError, resolve

_COMMENT_RE = re.compile(r"<!--.*?(?:-->|\Z)", re.S)
_ATTR = r"""\bhref\s*=\s*(?:"([^"]*)"|'([^']*)'|([^\s"'>]+))"""
_ANCHOR_RE = re.compile(r"<a(?=[\s/])[^>]*?" + _ATTR, re.I | re.S)
_BASE_RE = re.compile(r"<base(?=[\s/])[^>]*?" + _ATTR, re.I | re.S)
_FIRST_ANCHOR_RE = re.compile(r"<a(?=[\s/>])", re.I)
_SCRIPT_RE = re.compile(r"<(script|style)\b.*?(?:</\1\s*>|\Z)", re.I | re.S)
_TAG_RE = re.compile(r"<[^>]*>?")
_TOKEN_RE = re.compile(r"[0-9a-z]+")


def _decode(body: bytes) -> str:
    return body.decode("utf-8", errors="replace")


def _attr_value(m: re.Match) -> str:
    raw = next(g for g in m.groups() if g is not None)
    return html.unescape(raw).strip()


def extract_links(body: bytes, base: CanonicalUrl) -> List[CanonicalUrl]:
    """Every recoverable anchor href, resolved, canonicalized, first occurrence kept."""
    text = _COMMENT_RE.sub(" ", _decode(body))
    first_anchor = _FIRST_ANCHOR_RE.search(text)
    limit = first_anchor.start() if first_anchor else len(text)
    base_match = _BASE_RE.search(text, 0, limit)
    if base_match:
        try:
            base = resolve(base, _attr_value(base_match))
        except UrlError:
            pass
    links, seen = [], set()
    for m in _ANCHOR_RE.finditer(text):
        href = _attr_value(m)
        if not href:
            continue
        try:
            url = resolve(base, href)
        except UrlError:
            continue
        if url not in seen:
            seen.add(url)
            links.append(url)
    return links


def fingerprint(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()


def tokenize(body: bytes) -> List[str]:
    text = _COMMENT_RE.sub(" ", _decode(body))
    text = _SCRIPT_RE.sub(" ", text)
    text = html.unescape(_TAG_RE.sub(" ", text))
    return _TOKEN_RE.findall(text.lower())


def relevance_score(body: bytes, topic: Iterable[str], tokens: Optional[Sequence[str]] = None) -> float:
    """Fraction of distinct topic terms that occur as tokens of the page text.

    An empty topic means an untargeted crawl and scores 1.
    """
    terms = {t.lower() for t in topic}
    if not terms:
        return 1.0
    present = set(tokens if tokens is not None else tokenize(body))
    return len(terms & present) / len(terms)


@dataclass(frozen=True)
class PageAnalysis:
    links: tuple
    fingerprint: str
    relevance: float
    token_count: int


def analyze(body: bytes, base: CanonicalUrl, topic: Iterable[str] = ()) -> PageAnalysis:
    tokens = tokenize(body)
    return PageAnalysis(
        links=tuple(extract_links(body, base)),
        fingerprint=fingerprint(body),
        relevance=relevance_score(body, topic, tokens),
        token_count=len(tokens),
    )
