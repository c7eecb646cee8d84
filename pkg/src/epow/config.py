"""Run configuration: a plain-text ``key value`` file, ``#`` starts a comment.

Unknown keys are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .fetchnet import DEFAULT_USER_AGENT, FetchPolicy
from .governor import DEFAULT_HOST_INTERVAL, DEFAULT_RATE, ProfileError, RateProfile, StopConditions
from .urlkit import CanonicalUrl, UrlError, parse_url


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line, self.key = line, key
        where = f"line {line}: " if line is not None else ""
        what = f"{key}: " if key else ""
        super().__init__(f"{where}{what}{message}")


@dataclass(frozen=True)
class SimwebSpec:
    seed: int = 0
    pages: int = 100
    hosts: int = 10
    out_degree: float = 4.0
    rates: Tuple[float, ...] = ()
    topology: str = "random"
    gallery: bool = False


@dataclass
class CrawlConfig:
    seeds: List[CanonicalUrl] = field(default_factory=list)
    topic: Tuple[str, ...] = ()
    n_downloaders: int = 4
    frontier_capacity: int = 10_000
    host_interval_seconds: float = DEFAULT_HOST_INTERVAL
    rate_profile: RateProfile = field(default_factory=RateProfile)
    timezone_offset: float = 0.0
    stop: StopConditions = field(default_factory=StopConditions)
    checkpoint_pages: int = 100
    checkpoint_seconds: float = 60.0
    fetch: FetchPolicy = field(default_factory=FetchPolicy)
    run_dir: Path = Path("run")
    rng_seed: int = 0
    resolve: Dict[str, Tuple[str, int]] = field(default_factory=dict)
    clock: str = "real"
    simweb: Optional[SimwebSpec] = None
    revisit_horizon: float = 1000.0
    revisit_step: float = 0.05
    revisit_resolution: float = 0.1
    revisit_age_horizon: Optional[float] = None
    retry_limit: int = 1
    quarantine_after: int = 10

    def validate(self) -> "CrawlConfig":
        if self.n_downloaders < 1:
            raise ConfigError("must be >= 1", key="n_downloaders")
        if self.frontier_capacity < 1:
            raise ConfigError("must be >= 1", key="frontier_capacity")
        if self.host_interval_seconds < 0:
            raise ConfigError("must be >= 0", key="host_interval_seconds")
        if self.checkpoint_pages < 1:
            raise ConfigError("must be >= 1", key="checkpoint_pages")
        if self.checkpoint_seconds <= 0:
            raise ConfigError("must be > 0", key="checkpoint_seconds")
        if self.clock not in ("real", "simulated"):
            raise ConfigError("must be 'real' or 'simulated'", key="clock")
        if not self.seeds and self.simweb is None:
            raise ConfigError("at least one seed is required", key="seed")
        if self.simweb is None and not self.stop.bounded:
            raise ConfigError("set max_pages, max_duration or max_depth for a crawl of the open web",
                              key="max_pages")
        if self.revisit_step <= 0 or self.revisit_horizon <= 0 or self.revisit_resolution <= 0:
            raise ConfigError("revisit horizon, step and resolution must be > 0")
        return self

    def digest(self) -> str:
        """Digest of everything that shapes what gets crawled; resuming under
        a different digest is refused."""
        parts = [
            "seeds=" + " ".join(str(s) for s in self.seeds),
            "topic=" + " ".join(self.topic),
            f"capacity={self.frontier_capacity}",
            f"interval={self.host_interval_seconds!r}",
            f"rates={self.rate_profile.buckets!r}/{self.rate_profile.default!r}",
            f"stop={self.stop!r}",
            f"fetch={self.fetch!r}",
            f"simweb={self.simweb!r}",
        ]
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()


def _number(text: str, kind=float, allow_unlimited=False):
    if allow_unlimited and text.lower() in ("unlimited", "inf", "none"):
        return None if kind is int else math.inf
    value = kind(text)
    if isinstance(value, float) and math.isnan(value):
        raise ValueError("nan")
    return value


_SCALARS = {
    "n_downloaders": ("n_downloaders", int),
    "frontier_capacity": ("frontier_capacity", int),
    "host_interval_seconds": ("host_interval_seconds", float),
    "timezone_offset_seconds": ("timezone_offset", float),
    "checkpoint_pages": ("checkpoint_pages", int),
    "checkpoint_seconds": ("checkpoint_seconds", float),
    "rng_seed": ("rng_seed", int),
    "revisit_horizon": ("revisit_horizon", float),
    "revisit_step": ("revisit_step", float),
    "revisit_resolution": ("revisit_resolution", float),
    "revisit_age_horizon": ("revisit_age_horizon", float),
}
_NON_NEGATIVE = {"host_interval_seconds", "n_downloaders", "frontier_capacity", "checkpoint_pages",
                 "checkpoint_seconds"}
_STOP_KEYS = {"max_pages": int, "max_duration": float, "max_depth": int}
_FETCH_KEYS = {"timeout": float, "max_body_bytes": int, "max_redirect_hops": int}
_SIMWEB_KEYS = {"simweb_seed": ("seed", int), "simweb_pages": ("pages", int),
                "simweb_hosts": ("hosts", int), "simweb_out_degree": ("out_degree", float),
                "simweb_topology": ("topology", str)}
KNOWN_KEYS = (set(_SCALARS) | set(_STOP_KEYS) | set(_FETCH_KEYS) | set(_SIMWEB_KEYS)
              | {"seed", "topic", "rate", "default_rate", "user_agent", "run_dir", "resolve",
                 "clock", "simweb_rates", "simweb_gallery"})


def parse_config(text: str, base_dir: Path = Path(".")) -> CrawlConfig:
    cfg = CrawlConfig()
    stop: Dict[str, object] = {}
    fetch: Dict[str, object] = {"user_agent": DEFAULT_USER_AGENT}
    sim: Dict[str, object] = {}
    buckets: List[Tuple[int, int, float]] = []
    default_rate = DEFAULT_RATE
    run_dir = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        key, rest = key.strip(), rest.strip()
        args = rest.split()
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown key", lineno, key)
        if not args:
            raise ConfigError("missing value", lineno, key)
        try:
            if key == "seed":
                cfg.seeds.extend(parse_url(a) for a in args)
            elif key == "topic":
                cfg.topic += tuple(a.lower() for a in args)
            elif key in _SCALARS:
                attr, kind = _SCALARS[key]
                value = _number(args[0], kind)
                if key in _NON_NEGATIVE and value < 0:
                    raise ConfigError(f"must be >= 0, got {args[0]}", lineno, key)
                setattr(cfg, attr, value)
            elif key in _STOP_KEYS:
                stop[key] = _number(args[0], _STOP_KEYS[key], allow_unlimited=True)
                if stop[key] == math.inf:
                    stop[key] = None
            elif key in _FETCH_KEYS:
                fetch[key] = _number(args[0], _FETCH_KEYS[key])
            elif key == "user_agent":
                fetch["user_agent"] = rest
            elif key == "rate":
                if len(args) != 3:
                    raise ConfigError("expected: rate <start_hour> <end_hour> <pages_per_sec>", lineno, key)
                buckets.append((int(args[0]), int(args[1]), _number(args[2], allow_unlimited=True)))
            elif key == "default_rate":
                default_rate = _number(args[0], allow_unlimited=True)
            elif key == "run_dir":
                run_dir = rest
            elif key == "resolve":
                host, _, port = args[1].rpartition(":")
                cfg.resolve[args[0].lower()] = (host, int(port))
            elif key == "clock":
                cfg.clock = args[0]
            elif key in _SIMWEB_KEYS:
                attr, kind = _SIMWEB_KEYS[key]
                sim[attr] = kind(args[0])
            elif key == "simweb_rates":
                sim["rates"] = tuple(float(a) for a in args)
            elif key == "simweb_gallery":
                sim["gallery"] = args[0].lower() in ("1", "yes", "true", "on")
        except ConfigError:
            raise
        except (ValueError, UrlError, IndexError) as exc:
            raise ConfigError(f"bad value {rest!r} ({exc})", lineno, key) from exc

    try:
        cfg.rate_profile = RateProfile(tuple(buckets), default_rate)
        cfg.stop = StopConditions(**stop)
        cfg.fetch = FetchPolicy(**fetch)
    except (ProfileError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if sim:
        cfg.simweb = SimwebSpec(**sim)
        if "clock" not in {l.split("#", 1)[0].split(" ", 1)[0].strip() for l in text.splitlines()}:
            cfg.clock = "simulated"
    cfg.run_dir = (base_dir / run_dir) if run_dir else base_dir / "run"
    return cfg.validate()


def load_config(path) -> CrawlConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, path.parent)
