import pytest

from epow import cli
from epow.store import IoFailure, Repository


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_crawl_writes_reports(tmp_path, capsys):
    conf = write(tmp_path, "c.conf", "simweb_pages 12\nsimweb_hosts 3\nrun_dir out\n")
    assert cli.main(["crawl", "--config", str(conf)]) == 0
    out = capsys.readouterr()
    assert "pages fetched: 12" in out.out and "WARNING" not in out.err
    assert (tmp_path / "out" / "report.csv").exists() and (tmp_path / "out" / "fetches.csv").exists()
    assert cli.main(["crawl", "--config", str(conf), "--resume"]) == 0


def test_config_errors_exit_2(tmp_path, capsys):
    conf = write(tmp_path, "bad.conf", "seed http://a/\npolitenes 5\n")
    assert cli.main(["crawl", "--config", str(conf)]) == 2
    assert "line 2: politenes: unknown key" in capsys.readouterr().err
    assert cli.main(["crawl", "--config", str(tmp_path / "missing.conf")]) == 2


def test_robots_warning_for_outside_hosts(tmp_path, capsys):
    # TEST-NET address: never routed, so the single fetch just times out
    conf = write(tmp_path, "w.conf", "seed http://192.0.2.1/\nmax_pages 1\ntimeout 0.2\nhost_interval_seconds 0\n")
    assert cli.main(["crawl", "--config", str(conf)]) == 0
    err = capsys.readouterr().err
    assert "does not read robots.txt" in err and "192.0.2.1" in err


def test_local_host_detection():
    assert cli._is_local("h3.simweb.test", {})
    assert cli._is_local("127.0.0.1", {}) and cli._is_local("[::1]", {})
    assert cli._is_local("my.site", {"my.site": ("127.0.0.1", 8000)})
    assert not cli._is_local("example.org", {})


def test_storage_failure_exit_3(tmp_path, monkeypatch):
    def broken(self, record, body=b""):
        raise IoFailure("disk full")

    monkeypatch.setattr(Repository, "put_page", broken)
    conf = write(tmp_path, "c.conf", "simweb_pages 5\n")
    assert cli.main(["crawl", "--config", str(conf)]) == 3


def test_eval(tmp_path, capsys):
    run = write(tmp_path, "run.txt", "d1\nd2\nd3\nd4\n")
    rel = write(tmp_path, "rel.txt", "d1\nd3\n")
    assert cli.main(["eval", "--run", str(run), "--relevant", str(rel)]) == 0
    out = capsys.readouterr()
    assert out.out.startswith("k,recall,precision\n1,0.500000,1.000000\n2,0.500000,0.500000\n")
    assert "precision: 0.5000" in out.err
    target = tmp_path / "report.csv"
    assert cli.main(["eval", "--run", str(run), "--relevant", str(rel), "--out", str(target)]) == 0
    assert target.read_text() == out.out
    assert cli.main(["eval", "--run", str(tmp_path / "nope"), "--relevant", str(rel)]) == 1


def test_revisit(tmp_path, capsys):
    conf = write(tmp_path, "r.conf", "simweb_pages 10\nsimweb_hosts 2\nsimweb_rates 0.5 2\n"
                                     "host_interval_seconds 0\nrun_dir out\n")
    assert cli.main(["revisit", "--config", str(conf), "--policy", "uniform", "--budget", "5"]) == 1
    assert "run a crawl first" in capsys.readouterr().err
    assert cli.main(["crawl", "--config", str(conf)]) == 0
    assert cli.main(["revisit", "--config", str(conf), "--policy", "optimal-freshness", "--budget", "5",
                     "--horizon", "10", "--step", "0.1"]) == 0
    assert "freshness: measured" in capsys.readouterr().out
    assert (tmp_path / "out" / "revisit.csv").read_text().startswith("metric,value\npolicy,optimal-freshness\n")
    assert (tmp_path / "out" / "revisit_plan.csv").read_text().startswith("page_id,lambda,frequency")


def test_simulate_writes_log(tmp_path, capsys):
    log = tmp_path / "req.csv"
    assert cli.main(["simulate", "--pages", "5", "--hosts", "2", "--duration", "0.2", "--log", str(log)]) == 0
    assert "simweb serving 5 pages" in capsys.readouterr().out
    assert log.read_text().startswith("arrival,finished,host,path,status,user_agent")


def test_bad_arguments_exit_nonzero():
    with pytest.raises(SystemExit) as err:
        cli.main(["revisit", "--config", "x", "--policy", "greedy", "--budget", "1"])
    assert err.value.code == 2
