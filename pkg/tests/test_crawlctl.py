import math

import pytest

from epow.clock import SimClock
from epow.crawlctl import (Crawler, NoBaseline, StorageFailure, analyze_and_expand, run_crawl,
                           run_revisit_loop)
from epow.fetchnet import FetchResult, Outcome
from epow.frontier import CrawlRequest
from epow.governor import StopReason
from epow.revisit import Policy
from epow.simweb import generate_site, overlapping_requests, politeness_violations
from epow.store import IoFailure, Repository, load_latest_checkpoint
from epow.urlkit import SeenSet, parse_url

from conftest import TOPIC, config


class Crash(Exception):
    pass


def crawl(tmp_path, text, site=None, run_dir="run", **kw):
    cfg = config(tmp_path, text, run_dir)
    crawler = Crawler(cfg, site=site, **kw)
    return crawler, crawler.run()


# page expansion

BASE = parse_url("http://a.test/dir/page")
BODY = b"""<html><body><p>quasar sighting</p>
<a href="one">1</a> <a href="/two">2</a> <a href="http://b.test/three#frag">3</a>
<a href="one">again</a></body></html>"""


def ok(body=BODY, url=BASE, final=None):
    return FetchResult(url, 5.0, Outcome.SUCCESS, 200, body, "text/html", final or url)


def test_expand_three_unseen_links():
    seen = SeenSet()
    seen.check_insert(BASE)
    exp = analyze_and_expand(ok(), CrawlRequest(BASE, 1.0, 2, 0), seen, topic=("quasar", "nebula"))
    assert [str(r.url) for r in exp.requests] == [
        "http://a.test/dir/one", "http://a.test/two", "http://b.test/three"]
    assert all(r.priority == 0.5 and r.depth == 3 for r in exp.requests)
    assert len({r.seq for r in exp.requests}) == 3
    assert exp.record.relevance == 0.5 and exp.record.depth == 2 and exp.record.status == 200
    assert exp.body == BODY and exp.record.fingerprint is not None


def test_expand_all_links_seen():
    seen = SeenSet()
    for u in ("http://a.test/dir/one", "http://a.test/two", "http://b.test/three"):
        seen.check_insert(parse_url(u))
    exp = analyze_and_expand(ok(), CrawlRequest(BASE, 1.0, 0, 0), seen, topic=("quasar",))
    assert exp.requests == []


def test_expand_resolves_against_final_url():
    final = parse_url("http://c.test/moved/")
    exp = analyze_and_expand(ok(final=final), CrawlRequest(BASE, 1.0, 0, 0), SeenSet())
    assert "http://c.test/moved/one" in {str(r.url) for r in exp.requests}


def test_expand_failure_and_depth_limit():
    res = FetchResult(BASE, 1.0, Outcome.CLIENT_ERROR, 404)
    exp = analyze_and_expand(res, CrawlRequest(BASE, 1.0, 0, 0), SeenSet())
    assert exp.record.fingerprint is None and exp.record.outcome == "ClientError" and exp.requests == []
    exp = analyze_and_expand(ok(), CrawlRequest(BASE, 1.0, 3, 0), SeenSet(), max_depth=3)
    assert exp.requests == [] and exp.pruned == 3


# whole crawls on the simulated web

def test_star_site_crawled_completely(tmp_path):
    _, rep = crawl(tmp_path, "simweb_pages 4\nsimweb_hosts 1\nsimweb_topology star\n")
    assert rep.stop_reason is StopReason.FRONTIER_EXHAUSTED
    assert rep.pages_fetched == 4 and rep.max_depth == 1
    assert rep.urls == sorted(["http://h0.simweb.test/"] + [f"http://h0.simweb.test/p/{i}" for i in (1, 2, 3)])
    # one host at the default 20 s interval
    assert [round(f.dispatched_at) for f in rep.fetches] == [0, 20, 40, 60]
    assert (tmp_path / "run" / "report.csv").read_text().startswith("metric,value\npages_fetched,4\n")


def test_page_budget(tmp_path):
    _, rep = crawl(tmp_path, "simweb_pages 4\nsimweb_hosts 1\nsimweb_topology star\nmax_pages 2\n")
    assert rep.stop_reason is StopReason.PAGE_BUDGET and rep.pages_fetched == 2


def test_depth_budget(tmp_path):
    _, rep = crawl(tmp_path, "simweb_pages 10\nsimweb_hosts 2\nsimweb_topology chain\nmax_depth 3\n")
    assert rep.stop_reason is StopReason.DEPTH_EXHAUSTED
    assert rep.pages_fetched == 4 and rep.max_depth == 3


def test_time_budget(tmp_path):
    _, rep = crawl(tmp_path, "simweb_pages 50\nsimweb_hosts 1\nsimweb_topology chain\nmax_duration 100\n")
    assert rep.stop_reason is StopReason.TIME_BUDGET
    assert rep.duration >= 100 and rep.pages_fetched == 5  # t = 0, 20, ..., 80; the budget ends at 100


def test_gallery_dedup(tmp_path):
    _, rep = crawl(tmp_path, "simweb_gallery yes\n")
    assert rep.pages_fetched == 48
    assert rep.unique_fingerprints == 1 and rep.duplicate_pages == 47


def test_politeness_from_server_log(tmp_path):
    crawler, rep = crawl(tmp_path, "simweb_pages 120\nsimweb_hosts 6\nsimweb_seed 3\nn_downloaders 8\n")
    entries = crawler.server.log.entries()
    assert len(entries) == rep.pages_fetched == 120
    assert politeness_violations(entries, 20.0) == []
    assert overlapping_requests(entries) == []
    assert rep.politeness_violations == 0


def test_configured_interval_respected(tmp_path):
    crawler, rep = crawl(tmp_path, "simweb_pages 60\nsimweb_hosts 3\nhost_interval_seconds 7.5\n"
                                   "n_downloaders 4\n")
    entries = crawler.server.log.entries()
    assert len(entries) == 60
    assert politeness_violations(entries, 7.5) == []
    assert politeness_violations(entries, 7.6) != []  # the interval is used, not padded


def test_outcomes_sum_to_pages_fetched(tmp_path):
    site = generate_site(4, 80, 5)
    cfg = config(tmp_path, "simweb_pages 80\nhost_interval_seconds 1\n")
    crawler = Crawler(cfg, site=site)
    crawler.server.add_fault(site.url(5), status=404)
    crawler.server.add_fault(site.url(6), status=503)
    rep = crawler.run()
    assert sum(rep.outcome_counts.values()) == rep.pages_fetched
    assert rep.outcome_counts["ClientError"] == 1
    assert rep.outcome_counts["ServerError"] == 2 and rep.retries == 1  # retried exactly once
    assert len(rep.fetches) == rep.pages_fetched


def test_failing_host_is_quarantined(tmp_path):
    site = generate_site(0, 30, 1, topology="star")
    cfg = config(tmp_path, "simweb_pages 30\nhost_interval_seconds 1\n")
    crawler = Crawler(cfg, site=site)
    for i in range(1, 30):
        crawler.server.add_fault(site.url(i), status=500)
    rep = crawler.run()
    assert rep.quarantined == ("h0.simweb.test",)
    assert rep.outcome_counts["ServerError"] == 10
    assert rep.skipped > 0 and rep.pages_fetched == 11


def test_relevance_ordering(tmp_path):
    # planted topical pages link mostly to each other; the best-first
    # frontier should spend its early fetches on them
    for seed in range(3):
        site = generate_site(seed, 200, 20, topic=TOPIC, high_hits=4, low_hits=1, homophily=0.8)
        _, rep = crawl(tmp_path, "topic " + " ".join(TOPIC) + "\nsimweb_pages 200\nsimweb_hosts 20\n"
                       "host_interval_seconds 0\nn_downloaders 1\n",
                       site=site, run_dir=f"run{seed}")
        early = [f for f in rep.fetches if f.depth > 0][:50]
        high = sum(site.lookup(parse_url(f.url)) in site.high_pages for f in early)
        assert high / len(early) >= 0.70, (seed, high)


def test_storage_failure_leaves_checkpoint(tmp_path, monkeypatch):
    real_put = Repository.put_page
    calls = []

    def failing_put(self, record, body=b""):
        calls.append(record)
        if len(calls) == 7:
            raise IoFailure("disk full")
        return real_put(self, record, body)

    monkeypatch.setattr(Repository, "put_page", failing_put)
    cfg = config(tmp_path, "simweb_pages 40\nsimweb_hosts 4\n")
    with pytest.raises(StorageFailure):
        run_crawl(cfg)
    ck, _ = load_latest_checkpoint(cfg.run_dir)
    assert ck is not None and ck.stats["fetched"] == 7


def test_resume_needs_checkpoint_and_same_config(tmp_path):
    from epow.config import ConfigError
    cfg = config(tmp_path, "simweb_pages 10\nsimweb_hosts 2\n")
    with pytest.raises(ConfigError):
        run_crawl(cfg, resume=True)
    run_crawl(cfg)
    with pytest.raises(ConfigError):
        run_crawl(config(tmp_path, "simweb_pages 11\nsimweb_hosts 2\n"), resume=True)


CRASH_CONF = "simweb_pages 300\nsimweb_hosts 10\nsimweb_seed 11\nn_downloaders 4\ncheckpoint_pages 25\n"


@pytest.mark.parametrize("kill_at", [1, 25, 26, 137, 299])
def test_crash_and_resume_gives_same_url_set(tmp_path, kill_at):
    _, full = crawl(tmp_path, CRASH_CONF, run_dir="full")

    def killer(crawler, record):
        if crawler.fetched == kill_at:
            raise Crash()

    cfg = config(tmp_path, CRASH_CONF, "crashed")
    with pytest.raises(Crash):
        Crawler(cfg, after_page=killer).run()
    crawler = Crawler(cfg)
    resumed = crawler.run(resume=True)
    assert resumed.urls == full.urls
    assert len(full.urls) == 300
    assert resumed.recrawled <= 25
    assert politeness_violations(crawler.server.log.entries(), 20.0) == []


# revisit loop

def crawled_site(tmp_path, text):
    cfg = config(tmp_path, text)
    run_crawl(cfg)
    return cfg


def test_revisit_needs_baseline(tmp_path):
    cfg = config(tmp_path, "simweb_pages 5\n")
    with pytest.raises(NoBaseline):
        run_revisit_loop(cfg, Policy.UNIFORM, 1.0, horizon=1, step=0.5)


def test_static_site_stays_fresh(tmp_path):
    cfg = crawled_site(tmp_path, "simweb_pages 20\nsimweb_hosts 2\nhost_interval_seconds 0\n")
    rep = run_revisit_loop(cfg, Policy.UNIFORM, 5.0, horizon=20, step=0.5)
    assert rep.measured_freshness == 1.0 and rep.measured_age == 0.0
    assert rep.n_pages == 20 and rep.fetches > 0


def test_single_page_matches_closed_form(tmp_path):
    cfg = crawled_site(tmp_path, "simweb_pages 1\nsimweb_rates 1\n")
    rep = run_revisit_loop(cfg, Policy.UNIFORM, 1.0, horizon=2000, step=0.1, seed=5)
    assert rep.predicted_freshness == pytest.approx(1 - math.exp(-1), abs=1e-3)
    assert abs(rep.measured_freshness - rep.predicted_freshness) < 0.02
    assert abs(rep.measured_age - rep.predicted_age) < 0.02
    assert rep.fetches == 1999  # every 10th step of 20000, step 0 excluded
    assert len(Repository(cfg.run_dir).records()) == 1 + 1999


def test_fresh_run_in_used_directory_resumes_its_own_state(tmp_path):
    run_crawl(config(tmp_path, "simweb_pages 60\nsimweb_hosts 3\ncheckpoint_pages 5\n"))
    cfg = config(tmp_path, "simweb_pages 8\nsimweb_hosts 3\ncheckpoint_pages 5\n")
    first = run_crawl(cfg)
    again = run_crawl(cfg, resume=True)  # would refuse on a stale checkpoint's digest
    assert again.pages_fetched == first.pages_fetched == 8


def test_revisit_age_horizon_defaults_to_run_horizon(tmp_path):
    cfg = crawled_site(tmp_path, "simweb_pages 5\nsimweb_rates 0.5 50\nhost_interval_seconds 0\n")
    rep = run_revisit_loop(cfg, Policy.OPTIMAL_FRESHNESS, 1.0, horizon=30, step=0.1)
    assert rep.plan.age_horizon == 30
