"""
Event Windowing
===============
Turns an asynchronous event stream into spatio-temporal event clusters using
a hybrid constant-count / constant-time strategy.

WINDOW RULES:
- Windows tile the stream without overlap. A nominal window spans
  [t_{i-1}, t_{i+1}) = [start, start + 2*dt_initial) around its center t_i
- A window with fewer than n_min events absorbs the next nominal step of
  length dt_initial and is re-centered on the midpoint of its new span
- Merging stops at dt_max total span or after log2(dt_max/dt_initial) merges;
  a window still below n_min is emitted and flagged as undersized
- A window with more than n_max events keeps the n_max events closest to its
  center (earlier event wins a tie); the rest are discarded
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from config import WindowConfig
from errors import UnsortedStream


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EventStream:
    """Column-wise event storage: time (s), pixel position, polarity (+1/-1)."""
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.polarity) == n):
            raise ValueError("Event columns must have equal length")
        if not np.all(np.isin(self.polarity, (-1, 1))):
            raise ValueError("Event polarity must be -1 or 1")

    @classmethod
    def from_arrays(cls, t, x, y, polarity=None) -> "EventStream":
        t = np.asarray(t, dtype=float)
        if polarity is None:
            polarity = np.ones(len(t), dtype=int)
        return cls(
            t=t,
            x=np.asarray(x, dtype=float),
            y=np.asarray(y, dtype=float),
            polarity=np.asarray(polarity, dtype=int),
        )

    @classmethod
    def empty(cls) -> "EventStream":
        return cls.from_arrays([], [], [], [])

    def __len__(self) -> int:
        return len(self.t)

    def subset(self, index) -> "EventStream":
        return EventStream(self.t[index], self.x[index], self.y[index], self.polarity[index])

    @property
    def xy(self) -> np.ndarray:
        """Pixel positions as an (N, 2) array."""
        return np.column_stack([self.x, self.y])

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))


@dataclass(frozen=True)
class EventCluster:
    """Events of one spatio-temporal window, sorted by time."""
    events: EventStream
    t_center: float
    t_start: float
    t_end: float
    undersized: bool = False

    def __len__(self) -> int:
        return len(self.events)


def cluster_events(stream: EventStream, cfg: WindowConfig) -> List[EventCluster]:
    """
    Split a time-sorted stream into event clusters.

    Args:
        stream: Events sorted by timestamp
        cfg: Window sizes and count limits

    Returns:
        Clusters with strictly increasing centers; empty for an empty stream

    Raises:
        UnsortedStream: If timestamps decrease anywhere
    """
    if len(stream) == 0:
        return []
    if not stream.is_sorted():
        raise UnsortedStream("Event timestamps must be non-decreasing")

    t = stream.t
    dt = cfg.dt_initial
    last_t = t[-1]
    start = t[0]
    clusters: List[EventCluster] = []

    while start <= last_t:
        span = 2.0 * dt
        lo = int(np.searchsorted(t, start, side="left"))
        hi = int(np.searchsorted(t, start + span, side="left"))

        merges = 0
        while (
            hi - lo < cfg.n_min
            and merges < cfg.max_merges
            and span + dt <= cfg.dt_max + 1e-12
            and start + span <= last_t
        ):
            span += dt
            merges += 1
            hi = int(np.searchsorted(t, start + span, side="left"))

        stop = start + span
        count = hi - lo
        if count == 0:
            start = stop
            continue

        center = start + 0.5 * span
        index = np.arange(lo, hi)
        if count > cfg.n_max:
            # Primary key distance to center, secondary key arrival order
            order = np.lexsort((index, np.abs(t[index] - center)))
            index = np.sort(index[order[:cfg.n_max]])

        undersized = count < cfg.n_min
        if merges or undersized:
            logger.debug(
                "window center=%.6f merges=%d events=%d undersized=%s",
                center, merges, count, undersized,
            )

        clusters.append(EventCluster(
            events=stream.subset(index),
            t_center=float(center),
            t_start=float(start),
            t_end=float(stop),
            undersized=undersized,
        ))
        start = stop

    return clusters
