"""EPOW: a polite, parallel web crawler with freshness-aware revisiting."""

__version__ = "0.1.0"
