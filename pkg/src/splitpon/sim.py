"""Discrete-event engine, integer-nanosecond clock and seeded random streams."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

NS = 1
US = 1_000
MS = 1_000_000
S = 1_000_000_000


def to_ns(seconds: float) -> int:
    """Round a duration in seconds to the nearest integer nanosecond."""
    return int(round(seconds * S))


def to_seconds(t_ns: int) -> float:
    return t_ns / S


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class ConfigurationError(ValueError):
    pass


@dataclass(order=True)
class Event:
    fire_at: int
    sequence_tiebreak: int = field(default=-1)
    action: Callable[[Any], None] = field(default=None, compare=False)
    arg: Any = field(default=None, compare=False)


class Engine:
    """Single-threaded event loop.

    Events fire in ``(fire_at, insertion order)`` order. ``now`` is the
    timestamp of the event being dispatched.
    """

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, Callable[[Any], None], Any]] = []
        self._counter = itertools.count()
        self.dispatched = 0

    def at(self, fire_at: int, action: Callable[[Any], None], arg: Any = None) -> int:
        if fire_at < self.now:
            raise SchedulingError(
                f"event at {fire_at} ns scheduled from {self.now} ns")
        seq = next(self._counter)
        heapq.heappush(self._queue, (fire_at, seq, action, arg))
        return seq

    def after(self, delay: int, action: Callable[[Any], None], arg: Any = None) -> int:
        return self.at(self.now + delay, action, arg)

    def schedule(self, event: Event) -> Event:
        event.sequence_tiebreak = self.at(event.fire_at, event.action, event.arg)
        return event

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end``; returns the count."""
        queue = self._queue
        pop = heapq.heappop
        n = 0
        while queue and queue[0][0] <= t_end:
            fire_at, _, action, arg = pop(queue)
            self.now = fire_at
            action(arg)
            n += 1
        if queue and self.now < t_end:
            self.now = t_end
        self.dispatched += n
        return n

    def run(self) -> int:
        """Run until the queue is empty."""
        n = 0
        queue = self._queue
        pop = heapq.heappop
        while queue:
            fire_at, _, action, arg = pop(queue)
            self.now = fire_at
            action(arg)
            n += 1
        self.dispatched += n
        return n

    def __len__(self) -> int:
        return len(self._queue)

    def pending_args(self) -> Iterator[Any]:
        for entry in self._queue:
            yield entry[3]


class RngStream:
    """One independent random stream per stochastic entity.

    The stream is derived from ``(master_seed, stream_id)`` with numpy's
    ``SeedSequence`` spawn keys, so draws on one stream never shift another.
    Samples are produced in blocks for speed; the block size does not change
    the sequence.
    """

    BLOCK = 4096

    def __init__(self, master_seed: int, stream_id: int) -> None:
        if not 0 <= master_seed < 2**64:
            raise ConfigurationError("master_seed must be a 64-bit unsigned integer")
        self.master_seed = master_seed
        self.stream_id = stream_id
        seq = np.random.SeedSequence(master_seed, spawn_key=(stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(seq))
        self._normals: list[float] = []
        self._exps: list[float] = []
        self._unifs: list[float] = []

    def standard_normal(self) -> float:
        if not self._normals:
            self._normals = self._gen.standard_normal(self.BLOCK).tolist()
            self._normals.reverse()
        return self._normals.pop()

    def standard_exponential(self) -> float:
        if not self._exps:
            self._exps = self._gen.standard_exponential(self.BLOCK).tolist()
            self._exps.reverse()
        return self._exps.pop()

    def uniform(self) -> float:
        """Uniform variate on [0, 1)."""
        if not self._unifs:
            self._unifs = self._gen.random(self.BLOCK).tolist()
            self._unifs.reverse()
        return self._unifs.pop()


def normal_sample(stream: RngStream, mean: float, sigma: float) -> float:
    """Draw from Normal(mean, sigma**2), in seconds.

    One variate is consumed even when ``sigma == 0`` so that runs which differ
    only in sigma stay aligned on the same underlying draws.
    """
    if sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    z = stream.standard_normal()
    if sigma == 0:
        return mean
    return mean + sigma * z


# Stream labels. Every stochastic entity owns exactly one.
STREAM_DEGRADE_DOWN = 1
STREAM_DEGRADE_UP = 2
STREAM_HOST_CU = 3
STREAM_HOST_DU = 4
STREAM_HOST_UE = 5
STREAM_PROBE = 6
