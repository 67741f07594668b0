"""Store-and-forward FIFO links.

A link fed by a single time-ordered input can be evaluated analytically: the
caller passes the arrival instant and gets back the instant the packet reaches
the far end. Arrivals must be presented in non-decreasing time order.

Buffer occupancy is measured as unserialized work: the bytes the link still
has to put on the wire at a given instant.
"""

from __future__ import annotations

from fractions import Fraction

from .sim import S


class FifoLink:
    def __init__(self, rate_bps: float, propagation_ns: int = 0,
                 buffer_bytes: int | None = None, name: str = "link") -> None:
        if rate_bps <= 0:
            raise ValueError("link rate must be positive")
        self.rate_bps = rate_bps
        self.propagation_ns = propagation_ns
        self.buffer_bytes = buffer_bytes
        self.name = name
        self.busy_until = 0
        self.dropped = 0
        self.carried = 0
        self._last_arrival = 0
        self._bytes_per_ns = rate_bps / 8 / S
        self._ser_cache: dict[int, int] = {}

    def serialization_ns(self, size: int) -> int:
        ns = self._ser_cache.get(size)
        if ns is None:
            ns = round(Fraction(size * 8 * S) / Fraction(self.rate_bps))
            self._ser_cache[size] = ns
        return ns

    def occupancy(self, t: int) -> float:
        """Bytes still to be serialized at ``t``."""
        backlog = self.busy_until - t
        return backlog * self._bytes_per_ns if backlog > 0 else 0.0

    def transmit(self, size: int, t: int) -> int:
        """Offer ``size`` bytes arriving at ``t``; returns far-end arrival or -1 on drop."""
        if t < self._last_arrival:
            raise ValueError(f"{self.name}: arrivals out of order ({t} < {self._last_arrival})")
        self._last_arrival = t
        busy = self.busy_until
        if busy > t:
            cap = self.buffer_bytes
            if cap is not None and (busy - t) * self._bytes_per_ns + size > cap:
                self.dropped += 1
                return -1
            start = busy
        else:
            start = t
        ser = self._ser_cache.get(size)
        if ser is None:
            ser = self.serialization_ns(size)
        done = start + ser
        self.busy_until = done
        self.carried += 1
        return done + self.propagation_ns


def serialization_seconds(size_bytes: int, rate_bps: float) -> float:
    return size_bytes * 8 / rate_bps
