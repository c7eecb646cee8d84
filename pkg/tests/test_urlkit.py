import threading

import pytest
from hypothesis import given, strategies as st

from epow.urlkit import (MalformedUrl, SeenSet, UnsupportedScheme, canonicalize, parse_url,
                         remove_dot_segments, resolve, seen_check_insert)
from epow.simweb import gallery_fixture

RFC_BASE = "http://a/b/c/d;p?q"

# reference resolution table; expected values are then canonicalized
# (fragment dropped, empty path rendered as "/")
RFC_CASES = [
    ("g", "http://a/b/c/g"),
    ("./g", "http://a/b/c/g"),
    ("g/", "http://a/b/c/g/"),
    ("/g", "http://a/g"),
    ("//g", "http://g/"),
    ("?y", "http://a/b/c/d;p?y"),
    ("g?y", "http://a/b/c/g?y"),
    ("#s", "http://a/b/c/d;p?q"),
    ("g#s", "http://a/b/c/g"),
    ("g?y#s", "http://a/b/c/g?y"),
    (";x", "http://a/b/c/;x"),
    ("g;x", "http://a/b/c/g;x"),
    ("g;x?y#s", "http://a/b/c/g;x?y"),
    ("", "http://a/b/c/d;p?q"),
    (".", "http://a/b/c/"),
    ("./", "http://a/b/c/"),
    ("..", "http://a/b/"),
    ("../", "http://a/b/"),
    ("../g", "http://a/b/g"),
    ("../..", "http://a/"),
    ("../../", "http://a/"),
    ("../../g", "http://a/g"),
    ("../../../g", "http://a/g"),
    ("../../../../g", "http://a/g"),
    ("/./g", "http://a/g"),
    ("/../g", "http://a/g"),
    ("g.", "http://a/b/c/g."),
    (".g", "http://a/b/c/.g"),
    ("g..", "http://a/b/c/g.."),
    ("..g", "http://a/b/c/..g"),
    ("./../g", "http://a/b/g"),
    ("./g/.", "http://a/b/c/g/"),
    ("g/./h", "http://a/b/c/g/h"),
    ("g/../h", "http://a/b/c/h"),
    ("g;x=1/./y", "http://a/b/c/g;x=1/y"),
    ("g;x=1/../y", "http://a/b/c/y"),
    ("g?y/./x", "http://a/b/c/g?y/./x"),
    ("g?y/../x", "http://a/b/c/g?y/../x"),
    ("g#s/./x", "http://a/b/c/g"),
    ("g#s/../x", "http://a/b/c/g"),
]


def test_parse_identity():
    u = parse_url("http://example.com/")
    assert (u.scheme, u.host, u.port, u.path, u.query) == ("http", "example.com", None, "/", ())
    assert str(u) == "http://example.com/"


def test_parse_normalizes_case_port_dots_query_fragment():
    assert canonicalize("HTTP://Example.COM:80/a/../b?z=1&a=2#f") == "http://example.com/b?a=2&z=1"


@pytest.mark.parametrize("text", ["mailto:x@y.z", "ftp://h/x", "javascript:alert(1)", "data:text/plain,hi"])
def test_unsupported_schemes(text):
    with pytest.raises(UnsupportedScheme):
        parse_url(text)


@pytest.mark.parametrize("text", ["example.com/x", "/relative", "http://", "http://bad host/", "http://h:port/"])
def test_malformed(text):
    with pytest.raises(MalformedUrl):
        parse_url(text)


def test_default_ports_dropped_and_others_kept():
    assert str(parse_url("https://h:443/")) == "https://h/"
    assert str(parse_url("http://h:8080/")) == "http://h:8080/"
    assert str(parse_url("https://h:80/")) == "https://h:80/"


def test_percent_encoding_normalized():
    # unreserved escapes are decoded, other escapes get uppercase hex
    assert str(parse_url("http://h/%7euser/%2f%41")) == "http://h/~user/%2FA"
    assert str(parse_url("http://h/a b")) == "http://h/a%20b"


def test_duplicate_query_keys_kept_in_sorted_order():
    assert str(parse_url("http://h/?b=2&a=9&b=1")) == "http://h/?a=9&b=1&b=2"


@pytest.mark.parametrize("ref,expected", RFC_CASES)
def test_resolve_reference_table(ref, expected):
    assert str(resolve(parse_url(RFC_BASE), ref)) == expected


def test_resolve_spec_examples():
    assert str(resolve(parse_url("http://h/a/b"), "../c")) == "http://h/c"
    assert str(resolve(parse_url("http://h/a/b"), "")) == "http://h/a/b"
    assert str(resolve(parse_url("http://h/"), "//other.com/x")) == "http://other.com/x"


def test_resolve_rejects_other_schemes():
    with pytest.raises(UnsupportedScheme):
        resolve(parse_url("http://h/"), "mailto:a@b.c")


def test_remove_dot_segments_examples():
    assert remove_dot_segments("/a/b/c/./../../g") == "/a/g"
    assert remove_dot_segments("mid/content=5/../6") == "mid/6"


_seg = st.text(alphabet="abcXYZ019-._~%2F", min_size=0, max_size=6)
_pairs = st.lists(st.tuples(st.text(alphabet="abkz", min_size=1, max_size=3),
                            st.text(alphabet="0129xy", max_size=3)), max_size=5)


@st.composite
def urls(draw):
    scheme = draw(st.sampled_from(["http", "HTTP", "https", "hTtPs"]))
    host = draw(st.sampled_from(["example.com", "EXAMPLE.com", "a.b.c", "h0.simweb.test", "127.0.0.1"]))
    port = draw(st.sampled_from(["", ":80", ":443", ":8080"]))
    path = "/".join(draw(st.lists(st.sampled_from(["a", "b", ".", "..", "c%7e", "x y"]), max_size=5)))
    pairs = draw(_pairs)
    query = ("?" + "&".join(f"{k}={v}" for k, v in pairs)) if pairs else ""
    frag = draw(st.sampled_from(["", "#frag"]))
    return f"{scheme}://{host}{port}/{path}{query}{frag}"


@given(urls())
def test_canonicalization_idempotent(text):
    u = parse_url(text)
    assert parse_url(u.render()) == u
    assert u.render() == canonicalize(u.render())


@given(_pairs.filter(bool), st.randoms(use_true_random=False))
def test_query_permutation_invariance(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = parse_url("http://h/p?" + "&".join(f"{k}={v}" for k, v in pairs))
    b = parse_url("http://h/p?" + "&".join(f"{k}={v}" for k, v in shuffled))
    assert a == b


def test_seen_insert_idempotent():
    seen = SeenSet()
    u = parse_url("http://h/x")
    assert seen_check_insert(seen, u) is True
    assert seen_check_insert(seen, u) is False
    assert seen.count == 1 and u in seen


def test_gallery_variants_are_distinct_urls():
    site = gallery_fixture()
    seen = SeenSet()
    results = [seen.check_insert(site.url(i)) for i in range(len(site))]
    assert results == [True] * 48
    assert len(seen) == 48


def test_seen_concurrent_inserts_count_distinct_once():
    seen = SeenSet()
    urls_ = [parse_url(f"http://h/{i % 500}") for i in range(4000)]
    wins = []
    lock = threading.Lock()

    def worker(chunk):
        mine = sum(seen.check_insert(u) for u in chunk)
        with lock:
            wins.append(mine)

    threads = [threading.Thread(target=worker, args=(urls_[i::8],)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(wins) == 500 == len(seen)
