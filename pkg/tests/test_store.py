import hashlib
import random
import struct
import zlib

import pytest

from epow.frontier import CrawlRequest, SnapshotEntry
from epow.store import (BODY_FILE, RECORD_FILE, Checkpoint, CorruptCheckpoint, Missing, PageRecord,
                        Repository, decode_checkpoint, encode_checkpoint, encode_record, get_page,
                        list_checkpoints, load_checkpoint, load_latest_checkpoint, put_page, recover,
                        scan_records, write_checkpoint)
from epow.urlkit import parse_url

OUTCOMES = ["Success", "Redirect", "ClientError", "ServerError", "Timeout", "NetworkError", "Oversize"]


def record(url, body, **kw):
    fp = hashlib.sha256(body).hexdigest() if kw.pop("with_fp", True) else None
    return PageRecord(parse_url(url), kw.pop("fetched_at", 1.5), kw.pop("status", 200), fp, **kw)


def test_put_get_round_trip(tmp_path):
    with Repository(tmp_path) as repo:
        stored = put_page(repo, record("http://h/a", b"hello"), b"hello")
        rec, body = get_page(repo, parse_url("http://h/a"))
    assert rec == stored and body == b"hello"
    assert rec.body_length == 5


def test_latest_wins_and_history(tmp_path):
    with Repository(tmp_path) as repo:
        repo.put_page(record("http://h/a", b"v1"), b"v1")
        repo.put_page(record("http://h/a", b"v2", fetched_at=9.0), b"v2")
        assert get_page(repo, parse_url("http://h/a"))[1] == b"v2"
        assert [r.fetched_at for r in repo.history(parse_url("http://h/a"))] == [1.5, 9.0]
        assert len(repo) == 1


def test_missing_and_bad_fingerprint(tmp_path):
    with Repository(tmp_path) as repo:
        with pytest.raises(Missing):
            get_page(repo, parse_url("http://h/none"))
        with pytest.raises(ValueError):
            repo.put_page(record("http://h/a", b"x"), b"y")


def test_non_success_records_have_no_body(tmp_path):
    with Repository(tmp_path) as repo:
        repo.put_page(record("http://h/e", b"", with_fp=False, status=503, outcome="ServerError"))
        rec, body = repo.get_page(parse_url("http://h/e"))
    assert rec.fingerprint is None and rec.outcome == "ServerError" and body == b""


def test_ten_thousand_random_records(tmp_path):
    rng = random.Random(2024)
    expected = []
    with Repository(tmp_path) as repo:
        for i in range(10_000):
            body = rng.randbytes(rng.randint(0, 64))
            rec = PageRecord(parse_url(f"http://h{rng.randint(0, 30)}.t/p/{i}?q={rng.random()}"),
                             rng.uniform(0, 2e9), rng.choice([200, 301, 404, 500]),
                             hashlib.sha256(body).hexdigest(), relevance=rng.random(),
                             depth=rng.randint(0, 50), outcome=rng.choice(OUTCOMES))
            expected.append((repo.put_page(rec, body), body))
    with Repository(tmp_path) as repo:
        assert repo.records() == [r for r, _ in expected]
        for rec, body in expected:
            assert repo.read_body(rec) == body


def test_record_frame_layout():
    rec = record("http://h/", b"", with_fp=False, status=404, outcome="ClientError", depth=3)
    frame = encode_record(rec)
    (n,) = struct.unpack(">I", frame[:4])
    payload = frame[4:4 + n]
    assert len(frame) == 4 + n + 4
    assert struct.unpack(">I", frame[-4:])[0] == zlib.crc32(payload)
    assert payload[0] == 1
    assert payload[1:5] == struct.pack(">I", len("http://h/")) and payload[5:14] == b"http://h/"


def test_torn_tail_dropped_on_reopen(tmp_path):
    with Repository(tmp_path) as repo:
        for i in range(5):
            repo.put_page(record(f"http://h/{i}", b"b%d" % i), b"b%d" % i)
        before = repo.get_page(parse_url("http://h/3"))
    path = tmp_path / RECORD_FILE
    data = path.read_bytes()
    sizes = [len(encode_record(r)) for r in scan_records(data)[0]]
    for cut in range(len(data) - sizes[-1] + 1, len(data)):
        path.write_bytes(data[:cut])
        with Repository(tmp_path) as repo:
            assert len(repo.records()) == 4
            assert repo.get_page(parse_url("http://h/3")) == before
        assert path.stat().st_size == len(data) - sizes[-1]


def test_corrupt_middle_record_stops_scan():
    frames = [encode_record(record(f"http://h/{i}", b"x")) for i in range(3)]
    data = bytearray(b"".join(frames))
    data[len(frames[0]) + 6] ^= 0xFF
    recs, valid = scan_records(bytes(data))
    assert len(recs) == 1 and valid == len(frames[0])


def sample_checkpoint(version=1):
    r1 = CrawlRequest(parse_url("http://h/a"), 0.5, 1, 7)
    r2 = CrawlRequest(parse_url("http://h/b,c"), 1.0, 0, 3)
    return Checkpoint(
        version=version, created_at=123.25, crawl_seq=10, next_seq=20,
        frontier=[SnapshotEntry("CQ", r1), SnapshotEntry("PQ", r2)],
        inflight=[CrawlRequest(parse_url("http://g/"), 0.0, 2, 9)],
        seen=["http://h/a", "http://h/b,c", "http://g/"], hosts=[("g", 100.0), ("h", 99.5)],
        config_digest="ab" * 32, fingerprints=["cd" * 32], stats={"fetched": 10.0, "duplicates": 2.0},
        retried=["http://g/"], quarantined=["bad.host"])


def test_checkpoint_round_trip(tmp_path):
    ck = sample_checkpoint()
    assert decode_checkpoint(encode_checkpoint(ck)) == ck
    path = write_checkpoint(tmp_path, ck)
    assert path.name == "checkpoint.1.ckpt"
    assert load_checkpoint(path) == ck


def test_checkpoint_truncation_at_every_byte_falls_back(tmp_path):
    write_checkpoint(tmp_path, sample_checkpoint(1))
    newer = write_checkpoint(tmp_path, sample_checkpoint(2))
    data = newer.read_bytes()
    for cut in range(len(data)):
        newer.write_bytes(data[:cut])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(newer)
        ck, skipped = load_latest_checkpoint(tmp_path)
        assert ck.version == 1 and [p for p, _ in skipped] == [newer]


def test_checkpoint_bit_flips_detected():
    data = encode_checkpoint(sample_checkpoint())
    rng = random.Random(1)
    for _ in range(300):
        i = rng.randrange(len(data))
        bad = bytearray(data)
        bad[i] ^= 1 << rng.randrange(8)
        with pytest.raises(CorruptCheckpoint):
            decode_checkpoint(bytes(bad))


def test_newest_checkpoint_wins_and_only_two_kept(tmp_path):
    for v in (1, 2, 3):
        write_checkpoint(tmp_path, sample_checkpoint(v))
    assert [v for v, _ in list_checkpoints(tmp_path)] == [3, 2]
    assert load_latest_checkpoint(tmp_path)[0].version == 3
    assert load_latest_checkpoint(tmp_path / "nothing") == (None, [])


def test_recover_restores_structures_and_is_idempotent():
    ck = sample_checkpoint()
    state = recover(ck)
    assert [r.seq for r in state.cq.items()] == [7]
    assert [r.seq for r in state.pq.items()] == [3]
    assert state.seen.count == 3
    assert state.hosts.listing() == [("g", 100.0), ("h", 99.5)]
    assert [r.seq for r in state.recrawl] == [9]
    again = recover(state.to_checkpoint())
    assert again.to_checkpoint() == state.to_checkpoint()
    assert sorted(state.to_checkpoint().seen) == sorted(ck.seen)


def test_recover_after_clean_checkpoint_has_nothing_to_recrawl():
    ck = sample_checkpoint()
    ck.inflight = []
    assert recover(ck).recrawl == []


def test_body_log_is_append_only(tmp_path):
    with Repository(tmp_path) as repo:
        repo.put_page(record("http://h/1", b"first"), b"first")
        snap_body = (tmp_path / BODY_FILE).read_bytes()
        snap_rec = (tmp_path / RECORD_FILE).read_bytes()
        repo.put_page(record("http://h/2", b"second"), b"second")
    assert (tmp_path / BODY_FILE).read_bytes().startswith(snap_body)
    assert (tmp_path / RECORD_FILE).read_bytes().startswith(snap_rec)
