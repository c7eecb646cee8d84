"""Command line entry point: ``epow crawl|simulate|revisit|eval``."""

from __future__ import annotations

import argparse
import ipaddress
import logging
import sys
import time
from pathlib import Path

from .clock import SystemClock
from .config import ConfigError, load_config
from .crawlctl import NoBaseline, StorageFailure, run_crawl, run_revisit_loop
from .irmetrics import MetricsError, evaluation_report, partition, read_id_file, summary_lines
from .revisit import Policy
from .simweb import SIM_DOMAIN, SimWebServer, gallery_fixture, generate_site

log = logging.getLogger("epow")

ROBOTS_WARNING = """\
************************************************************************
WARNING: this crawler does not read robots.txt. It is pointed at hosts
outside the loopback and simulated web: {hosts}
Only crawl sites you operate or have permission to crawl.
************************************************************************"""


def _is_local(host: str, resolve) -> bool:
    if host == SIM_DOMAIN or host.endswith("." + SIM_DOMAIN) or host == "localhost":
        return True
    addr = resolve.get(host, (host, 0))[0].strip("[]")
    try:
        return ipaddress.ip_address(addr).is_loopback
    except ValueError:
        return False


def cmd_crawl(args) -> int:
    cfg = load_config(args.config)
    if cfg.simweb is None:
        outside = sorted({u.host for u in cfg.seeds if not _is_local(u.host, cfg.resolve)})
        if outside:
            print(ROBOTS_WARNING.format(hosts=", ".join(outside)), file=sys.stderr)
    report = run_crawl(cfg, resume=args.resume)
    print(report.summary())
    print(f"reports written to {cfg.run_dir}")
    return 0


def cmd_simulate(args) -> int:
    site = gallery_fixture() if args.gallery else generate_site(args.seed, args.pages, args.hosts)
    server = SimWebServer(site, SystemClock(), port=args.port)
    print(f"simweb serving {len(site)} pages on {', '.join(server.endpoints)}")
    print(f"hosts: {', '.join(site.hosts[:5])}{' ...' if len(site.hosts) > 5 else ''}")
    print(f"root: {site.root}")
    print("point a crawl at it with: resolve <host> " + server.endpoints[0])
    sys.stdout.flush()
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
        Path(args.log).write_text(server.log.to_csv(), encoding="utf-8")
        print(f"{len(server.log)} requests logged to {args.log}")
    return 0


def cmd_revisit(args) -> int:
    cfg = load_config(args.config)
    report = run_revisit_loop(cfg, args.policy, args.budget, horizon=args.horizon, step=args.step)
    out = Path(cfg.run_dir)
    (out / "revisit.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "revisit_plan.csv").write_text(report.plan.to_csv(), encoding="utf-8")
    print(report.summary())
    print(f"reports written to {out}")
    return 0


def cmd_eval(args) -> int:
    ranking = read_id_file(args.run)
    relevant = read_id_file(args.relevant)
    text = evaluation_report(ranking, relevant)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    p = partition(ranking, relevant, set(ranking) | set(relevant))
    for line in summary_lines(p):
        print(line, file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epow", description="Polite parallel web crawler.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crawl", help="run or resume a crawl")
    p.add_argument("--config", required=True, help="key/value config file")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    p.set_defaults(func=cmd_crawl)

    p = sub.add_parser("simulate", help="serve a synthetic web on loopback")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pages", type=int, default=100)
    p.add_argument("--hosts", type=int, default=10)
    p.add_argument("--gallery", action="store_true", help="serve the 48-URL gallery instead")
    p.add_argument("--port", type=int, default=0, help="0 picks a free port")
    p.add_argument("--duration", type=float, default=None, help="stop after this many seconds")
    p.add_argument("--log", default="simweb_requests.csv", help="request log written on shutdown")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("revisit", help="re-fetch a crawled simulated site under a revisit policy")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", required=True, choices=[x.value for x in Policy])
    p.add_argument("--budget", required=True, type=float, help="total re-fetches per unit time")
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--step", type=float, default=None)
    p.set_defaults(func=cmd_revisit)

    p = sub.add_parser("eval", help="precision/recall report for a ranked run")
    p.add_argument("--run", required=True, help="one document id per line, in rank order")
    p.add_argument("--relevant", required=True, help="one relevant document id per line")
    p.add_argument("--out", help="write the report here instead of standard output")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NoBaseline, MetricsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StorageFailure as exc:
        print(f"storage failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
