"""Injectable clocks.

Everything that reads or waits on time takes a clock object, so crawls
against the synthetic web can run on simulated time.
"""

import threading
import time


class SystemClock:
    """Wall-clock time."""

    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def sleep_until(self, when: float) -> None:
        self.sleep(when - self.now())

    @property
    def simulated(self) -> bool:
        return False


class SimClock:
    """Manually advanced clock; sleeping advances time instantly.

    Safe for concurrent readers. Time never moves backwards.
    """

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("cannot move a clock backwards")
        with self._lock:
            self._now += seconds
            return self._now

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)

    def sleep_until(self, when: float) -> None:
        with self._lock:
            if when > self._now:
                self._now = float(when)

    @property
    def simulated(self) -> bool:
        return True
