"""Page repository and crash-safe checkpoints.

Layout of a run directory (byte layouts are documented in FORMAT.md)::

    pages.rec          append-only record log, one CRC-framed record per fetch
    pages.body         append-only body log referenced by offset/length
    checkpoint.N.ckpt  periodic snapshot of crawl state, sha256 trailer

The URL index lives in memory and is rebuilt on open by scanning
``pages.rec``. A torn record at the tail (crash mid-append) is cut off.
"""

from __future__ import annotations

import errno
import hashlib
import logging
import os
import re
import struct
import threading
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .frontier import CircularQueue, CrawlRequest, PriorityQueue, SnapshotEntry, restore_frontier
from .governor import HostLedger
from .urlkit import CanonicalUrl, SeenSet, parse_url

log = logging.getLogger(__name__)

RECORD_FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"EPOWCKPT"
CHECKPOINT_FORMAT_VERSION = 1
RECORD_FILE = "pages.rec"
BODY_FILE = "pages.body"
_CKPT_RE = re.compile(r"^checkpoint\.(\d+)\.ckpt$")

OUTCOME_CODES = {"Success": 1, "Redirect": 2, "ClientError": 3, "ServerError": 4,
                 "Timeout": 5, "NetworkError": 6, "Oversize": 7}
OUTCOME_NAMES = {v: k for k, v in OUTCOME_CODES.items()}


class StoreError(Exception):
    pass


class IoFailure(StoreError):
    pass


class StorageFull(IoFailure):
    pass


class Missing(StoreError, KeyError):
    pass


class CorruptRecord(StoreError):
    pass


class CorruptCheckpoint(StoreError):
    pass


def _io_error(exc: OSError) -> IoFailure:
    if exc.errno == errno.ENOSPC:
        return StorageFull(str(exc))
    return IoFailure(str(exc))


@dataclass(frozen=True)
class PageRecord:
    url: CanonicalUrl
    fetched_at: float
    status: int  # 0 when no HTTP status was received
    fingerprint: Optional[str]  # 64 hex chars, None without a body
    body_length: int = 0
    body_offset: int = 0
    relevance: float = 0.0
    depth: int = 0
    outcome: str = "Success"


class _Writer:
    def __init__(self):
        self.parts: List[bytes] = []

    def u8(self, v):
        self.parts.append(struct.pack(">B", v))

    def u16(self, v):
        self.parts.append(struct.pack(">H", v))

    def u32(self, v):
        self.parts.append(struct.pack(">I", v))

    def u64(self, v):
        self.parts.append(struct.pack(">Q", v))

    def f64(self, v):
        self.parts.append(struct.pack(">d", v))

    def raw(self, b: bytes):
        self.parts.append(b)

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.parts.append(b)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, error=CorruptRecord):
        self.data = data
        self.pos = 0
        self.error = error

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise self.error(f"truncated at byte {self.pos} (wanted {n})")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def _unpack(self, fmt, n):
        return struct.unpack(fmt, self.take(n))[0]

    def u8(self):
        return self._unpack(">B", 1)

    def u16(self):
        return self._unpack(">H", 2)

    def u32(self):
        return self._unpack(">I", 4)

    def u64(self):
        return self._unpack(">Q", 8)

    def f64(self):
        return self._unpack(">d", 8)

    def text(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.error(f"bad utf-8: {exc}") from exc

    @property
    def done(self) -> bool:
        return self.pos == len(self.data)


def encode_record(rec: PageRecord) -> bytes:
    w = _Writer()
    w.u8(RECORD_FORMAT_VERSION)
    w.text(rec.url.render())
    w.f64(rec.fetched_at)
    w.u16(rec.status)
    w.u8(OUTCOME_CODES[rec.outcome])
    w.u8(1 if rec.fingerprint else 0)
    w.raw(bytes.fromhex(rec.fingerprint) if rec.fingerprint else bytes(32))
    w.u64(rec.body_offset)
    w.u64(rec.body_length)
    w.f64(rec.relevance)
    w.u32(rec.depth)
    payload = w.getvalue()
    return struct.pack(">I", len(payload)) + payload + struct.pack(">I", zlib.crc32(payload))


def decode_record(payload: bytes) -> PageRecord:
    r = _Reader(payload)
    version = r.u8()
    if version != RECORD_FORMAT_VERSION:
        raise CorruptRecord(f"unknown record version {version}")
    url = r.text()
    fetched_at, status, outcome, has_fp = r.f64(), r.u16(), r.u8(), r.u8()
    fp = r.take(32)
    offset, length, relevance, depth = r.u64(), r.u64(), r.f64(), r.u32()
    if not r.done or outcome not in OUTCOME_NAMES:
        raise CorruptRecord("malformed record payload")
    try:
        url = parse_url(url)
    except ValueError as exc:
        raise CorruptRecord(f"bad url in record: {exc}") from exc
    return PageRecord(url, fetched_at, status, fp.hex() if has_fp else None,
                      length, offset, relevance, depth, OUTCOME_NAMES[outcome])


def scan_records(data: bytes) -> Tuple[List[PageRecord], int]:
    """Decode frames until the first torn or corrupt one; return the records
    and the byte length of the valid prefix."""
    records, pos = [], 0
    while pos + 4 <= len(data):
        (n,) = struct.unpack_from(">I", data, pos)
        end = pos + 4 + n + 4
        if end > len(data):
            break
        payload = data[pos + 4:pos + 4 + n]
        (crc,) = struct.unpack_from(">I", data, pos + 4 + n)
        if zlib.crc32(payload) != crc:
            break
        try:
            records.append(decode_record(payload))
        except CorruptRecord:
            break
        pos = end
    return records, pos


class Repository:
    """Append-only page store. Single writer, concurrent readers."""

    def __init__(self, run_dir):
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._index: Dict[CanonicalUrl, List[PageRecord]] = {}
        self._order: List[PageRecord] = []
        rec_path, body_path = self.dir / RECORD_FILE, self.dir / BODY_FILE
        try:
            data = rec_path.read_bytes() if rec_path.exists() else b""
            records, valid = scan_records(data)
            if valid < len(data):
                log.warning("%s: dropping %d bytes of torn tail", rec_path, len(data) - valid)
                with open(rec_path, "r+b") as fh:
                    fh.truncate(valid)
            for rec in records:
                self._add(rec)
            self._rec = open(rec_path, "ab")
            self._body = open(body_path, "ab")
        except OSError as exc:
            raise _io_error(exc) from exc
        self._body_size = self._body.seek(0, os.SEEK_END)

    def _add(self, rec: PageRecord) -> None:
        self._index.setdefault(rec.url, []).append(rec)
        self._order.append(rec)

    def put_page(self, record: PageRecord, body: bytes = b"") -> PageRecord:
        """Append ``body`` and its record; returns the record as stored."""
        expected = hashlib.sha256(body).hexdigest() if record.fingerprint else None
        if record.fingerprint != expected:
            raise ValueError("record fingerprint does not match body")
        with self._lock:
            stored = replace(record, body_offset=self._body_size, body_length=len(body))
            try:
                if body:
                    self._body.write(body)
                    self._body.flush()
                self._rec.write(encode_record(stored))
                self._rec.flush()
            except OSError as exc:
                raise _io_error(exc) from exc
            self._body_size += len(body)
            self._add(stored)
            return stored

    def read_body(self, rec: PageRecord) -> bytes:
        with open(self.dir / BODY_FILE, "rb") as fh:
            fh.seek(rec.body_offset)
            body = fh.read(rec.body_length)
        if len(body) != rec.body_length:
            raise CorruptRecord(f"body of {rec.url} truncated")
        if rec.fingerprint and hashlib.sha256(body).hexdigest() != rec.fingerprint:
            raise CorruptRecord(f"body of {rec.url} fails its digest")
        return body

    def get_page(self, url: CanonicalUrl) -> Tuple[PageRecord, bytes]:
        with self._lock:
            versions = self._index.get(url)
            if not versions:
                raise Missing(str(url))
            rec = versions[-1]
        return rec, self.read_body(rec)

    def history(self, url: CanonicalUrl) -> List[PageRecord]:
        with self._lock:
            return list(self._index.get(url, ()))

    def records(self) -> List[PageRecord]:
        with self._lock:
            return list(self._order)

    def urls(self) -> List[CanonicalUrl]:
        with self._lock:
            return list(self._index)

    def __len__(self) -> int:
        with self._lock:
            return len(self._index)

    def sync(self) -> None:
        with self._lock:
            try:
                for fh in (self._body, self._rec):
                    fh.flush()
                    os.fsync(fh.fileno())
            except OSError as exc:
                raise _io_error(exc) from exc

    def close(self) -> None:
        with self._lock:
            for fh in (self._body, self._rec):
                if not fh.closed:
                    fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def put_page(repo: Repository, record: PageRecord, body: bytes) -> PageRecord:
    return repo.put_page(record, body)


def get_page(repo: Repository, url: CanonicalUrl) -> Tuple[PageRecord, bytes]:
    return repo.get_page(url)


@dataclass
class Checkpoint:
    version: int
    created_at: float
    crawl_seq: int
    next_seq: int = 0
    frontier: List[SnapshotEntry] = field(default_factory=list)
    inflight: List[CrawlRequest] = field(default_factory=list)
    seen: List[str] = field(default_factory=list)
    hosts: List[Tuple[str, float]] = field(default_factory=list)
    config_digest: str = "0" * 64
    fingerprints: List[str] = field(default_factory=list)
    stats: Dict[str, float] = field(default_factory=dict)
    retried: List[str] = field(default_factory=list)
    quarantined: List[str] = field(default_factory=list)


def encode_checkpoint(ck: Checkpoint) -> bytes:
    w = _Writer()
    w.raw(CHECKPOINT_MAGIC)
    w.u16(CHECKPOINT_FORMAT_VERSION)
    w.u64(ck.version)
    w.f64(ck.created_at)
    w.u64(ck.crawl_seq)
    w.u64(ck.next_seq)
    w.raw(bytes.fromhex(ck.config_digest))
    w.u32(len(ck.frontier))
    for e in ck.frontier:
        w.text(e.to_line())
    w.u32(len(ck.inflight))
    for r in ck.inflight:
        w.text(SnapshotEntry("PQ", r).to_line())
    w.u32(len(ck.seen))
    for s in ck.seen:
        w.text(s)
    w.u32(len(ck.hosts))
    for host, last in ck.hosts:
        w.text(host)
        w.f64(last)
    w.u32(len(ck.fingerprints))
    for fp in ck.fingerprints:
        w.raw(bytes.fromhex(fp))
    w.u32(len(ck.stats))
    for key in sorted(ck.stats):
        w.text(key)
        w.f64(float(ck.stats[key]))
    for section in (ck.retried, ck.quarantined):
        w.u32(len(section))
        for s in section:
            w.text(s)
    body = w.getvalue()
    return body + hashlib.sha256(body).digest()


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(CHECKPOINT_MAGIC) + 32 or not data.startswith(CHECKPOINT_MAGIC):
        raise CorruptCheckpoint("not a checkpoint file (bad magic or too short)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint("integrity digest mismatch")
    r = _Reader(body, CorruptCheckpoint)
    r.take(len(CHECKPOINT_MAGIC))
    fmt = r.u16()
    if fmt != CHECKPOINT_FORMAT_VERSION:
        raise CorruptCheckpoint(f"unknown checkpoint format {fmt}")
    try:
        ck = Checkpoint(version=r.u64(), created_at=r.f64(), crawl_seq=r.u64(), next_seq=r.u64(),
                        config_digest=r.take(32).hex())
        ck.frontier = [SnapshotEntry.from_line(r.text()) for _ in range(r.u32())]
        ck.inflight = [SnapshotEntry.from_line(r.text()).request for _ in range(r.u32())]
        ck.seen = [r.text() for _ in range(r.u32())]
        ck.hosts = [(r.text(), r.f64()) for _ in range(r.u32())]
        ck.fingerprints = [r.take(32).hex() for _ in range(r.u32())]
        ck.stats = {r.text(): r.f64() for _ in range(r.u32())}
        ck.retried = [r.text() for _ in range(r.u32())]
        ck.quarantined = [r.text() for _ in range(r.u32())]
    except ValueError as exc:
        raise CorruptCheckpoint(f"bad entry: {exc}") from exc
    if not r.done:
        raise CorruptCheckpoint("trailing bytes after last section")
    return ck


def checkpoint_path(run_dir, version: int) -> Path:
    return Path(run_dir) / f"checkpoint.{version}.ckpt"


def list_checkpoints(run_dir) -> List[Tuple[int, Path]]:
    """(version, path) pairs, newest first."""
    out = []
    for p in Path(run_dir).iterdir() if Path(run_dir).exists() else ():
        m = _CKPT_RE.match(p.name)
        if m:
            out.append((int(m.group(1)), p))
    return sorted(out, reverse=True)


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


def write_checkpoint(run_dir, ck: Checkpoint, keep: int = 2) -> Path:
    """Publish atomically (temp file, fsync, rename), verify by reading back,
    then drop all but the newest ``keep`` checkpoints."""
    run_dir = Path(run_dir)
    final = checkpoint_path(run_dir, ck.version)
    tmp = final.with_suffix(".ckpt.tmp")
    data = encode_checkpoint(ck)
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, final)
        _fsync_dir(run_dir)
        load_checkpoint(final)
        for version, path in list_checkpoints(run_dir)[keep:]:
            path.unlink()
    except OSError as exc:
        raise _io_error(exc) from exc
    return final


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptCheckpoint(f"unreadable: {exc}") from exc
    return decode_checkpoint(data)


def load_latest_checkpoint(run_dir):
    """Newest checkpoint that verifies, plus ``(path, error)`` for each newer
    one that did not. Returns ``(None, skipped)`` when none is usable."""
    skipped = []
    for _, path in list_checkpoints(run_dir):
        try:
            return load_checkpoint(path), skipped
        except CorruptCheckpoint as exc:
            log.warning("skipping corrupt checkpoint %s: %s", path, exc)
            skipped.append((path, exc))
    return None, skipped


@dataclass
class RecoveredState:
    checkpoint: Checkpoint
    cq: CircularQueue
    pq: PriorityQueue
    seen: SeenSet
    hosts: HostLedger
    recrawl: List[CrawlRequest]

    def to_checkpoint(self) -> Checkpoint:
        from .frontier import frontier_snapshot
        ck = replace(self.checkpoint)
        ck.frontier = frontier_snapshot(self.cq, self.pq)
        ck.inflight = list(self.recrawl)
        ck.seen = [str(u) for u in self.seen.listing()]
        ck.hosts = self.hosts.listing()
        return ck


def recover(ck: Checkpoint, repo: Optional[Repository] = None, capacity: int = 100_000) -> RecoveredState:
    """Rebuild frontier, seen set and host ledger from a checkpoint.

    The recrawl list holds requests dispatched but not confirmed when the
    checkpoint was cut; they go back to the crawler for a second fetch.
    """
    if not isinstance(ck, Checkpoint):
        raise CorruptCheckpoint("not a checkpoint")
    cq_entries = sum(1 for e in ck.frontier if e.tag == "CQ")
    cq, pq = restore_frontier(ck.frontier, max(capacity, cq_entries, 1))
    try:
        seen = SeenSet(parse_url(u) for u in ck.seen)
    except ValueError as exc:
        raise CorruptCheckpoint(f"bad url in seen set: {exc}") from exc
    if repo is not None:
        # every stored URL was discovered before it was fetched
        missing = [r.url for r in repo.records() if r.url not in seen]
        if missing:
            log.info("%d stored URLs postdate the checkpoint and will be recrawled", len(missing))
    return RecoveredState(ck, cq, pq, seen, HostLedger.restore(ck.hosts), list(ck.inflight))
