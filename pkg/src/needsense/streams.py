"""Timestamped message streams with originating-time semantics.

Every message carries the time its data originated at the source, and all
cross-stream machinery (joins, resampling, windows, replay) is defined over
those times.  This is what makes live incremental execution and offline
batch recomputation of a recorded session produce identical results: both
see the same originating times regardless of processing latency.

Time resolution is one millisecond; producers are expected to round
originating times to 3 decimal places (the wire precision) so in-memory
values match what survives a save/load round trip.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable

# Fixed stream vocabulary; wiring with any other name is an error.
KNOWN_STREAM_NAMES = (
    "gaze_raw",
    "gaze_direction",
    "gaze_target",
    "need_mutual",
    "need_confirmatory",
    "utterance",
    "need_language",
    "fusion_frame",
    "need_fused",
    "label",
)


class StreamError(Exception):
    """Base class for stream wiring and delivery errors."""


class WiringError(StreamError):
    """Unknown stream name or invalid operator parameters."""


class OrderingError(StreamError):
    """Originating-time ordering violated on a stream."""


@dataclass(frozen=True)
class TimestampedMessage:
    """A payload stamped with the time its data originated, in seconds."""

    originating_time: float
    payload: Any


@dataclass(frozen=True)
class PipelineClock:
    """Replay/live mode marker.  In replay mode the scheduler delivers
    messages in global originating-time order across all streams."""

    mode: str = "replay"
    replay_speed: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in ("live", "replay"):
            raise WiringError(f"unknown clock mode {self.mode!r}")
        if not self.replay_speed > 0:
            raise WiringError("replay_speed must be > 0")


class Stream:
    """An ordered, append-only message stream with one producer.

    Subscribers are invoked synchronously in subscription order; per-stream
    delivery therefore equals originating-time order by construction.
    """

    def __init__(self, name: str):
        self.name = name
        self.messages: list[TimestampedMessage] = []
        self.last_time: float | None = None
        self._subscribers: list[Callable[[TimestampedMessage], None]] = []

    def subscribe(self, fn: Callable[[TimestampedMessage], None]) -> None:
        self._subscribers.append(fn)

    def emit(self, t: float, payload: Any) -> None:
        if self.last_time is not None and t <= self.last_time:
            raise OrderingError(
                f"stream {self.name}: originating time {t} not after {self.last_time}"
            )
        msg = TimestampedMessage(t, payload)
        self.last_time = t
        self.messages.append(msg)
        for fn in self._subscribers:
            fn(msg)


class _Ticker:
    """Fixed-cadence tick source.  Tick k fires at round(k/cadence, 3)."""

    def __init__(self, cadence_hz: float, fn: Callable[[float], None]):
        if not cadence_hz > 0:
            raise WiringError("cadence must be > 0")
        self.cadence = cadence_hz
        self.fn = fn
        self._k = 0

    def next_time(self) -> float:
        return round(self._k / self.cadence, 3)

    def fire_until(self, limit: float, inclusive: bool) -> None:
        while True:
            t = self.next_time()
            if t < limit or (inclusive and t == limit):
                self._k += 1
                self.fn(t)
            else:
                break


class Pipeline:
    """A set of named streams plus the scheduler that drives them.

    Driving rule: before a message at time t is delivered, all pending
    ticks strictly before t fire; ticks at exactly t fire only once time
    moves past t (or at finalize).  A hold that samples "inputs with
    originating time <= tick" therefore always sees the message that
    arrived exactly at the tick.
    """

    def __init__(self, clock: PipelineClock | None = None):
        self.clock = clock or PipelineClock()
        self.streams: dict[str, Stream] = {}
        self._tickers: list[_Ticker] = []
        self.error_counts: dict[str, int] = {}
        self.drop_counts: dict[str, int] = {}
        self._finalized = False

    def stream(self, name: str) -> Stream:
        if name not in KNOWN_STREAM_NAMES:
            raise WiringError(f"unknown stream name {name!r}")
        if name not in self.streams:
            self.streams[name] = Stream(name)
        return self.streams[name]

    def add_ticker(self, cadence_hz: float, fn: Callable[[float], None]) -> None:
        self._tickers.append(_Ticker(cadence_hz, fn))

    def advance_to(self, t: float) -> None:
        for ticker in self._tickers:
            ticker.fire_until(t, inclusive=False)

    def emit(self, name: str, t: float, payload: Any) -> None:
        if self._finalized:
            raise StreamError("pipeline already finalized")
        self.advance_to(t)
        self.stream(name).emit(t, payload)

    def finalize(self, t_end: float) -> None:
        """Fire all remaining ticks up to and including t_end and flush
        any buffering operators.  No further emissions are accepted."""
        for ticker in self._tickers:
            ticker.fire_until(t_end, inclusive=True)
        self._finalized = True
        for fn in getattr(self, "_finalizers", []):
            fn()

    def add_finalizer(self, fn: Callable[[], None]) -> None:
        if not hasattr(self, "_finalizers"):
            self._finalizers: list[Callable[[], None]] = []
        self._finalizers.append(fn)

    def _count_error(self, name: str) -> None:
        self.error_counts[name] = self.error_counts.get(name, 0) + 1

    def _count_drop(self, name: str) -> None:
        self.drop_counts[name] = self.drop_counts.get(name, 0) + 1


def map_stream(
    pipe: Pipeline, src: str, dst: str, fn: Callable[[Any], Any]
) -> Stream:
    """Apply a pure function to each payload, keeping originating times.

    A payload on which fn raises is dropped and counted against the
    output stream's error counter.
    """
    out = pipe.stream(dst)

    def on_message(msg: TimestampedMessage) -> None:
        try:
            payload = fn(msg.payload)
        except Exception:
            pipe._count_error(dst)
            return
        out.emit(msg.originating_time, payload)

    pipe.stream(src).subscribe(on_message)
    return out


def sliding_window(pipe: Pipeline, src: str, dst: str, size: int) -> Stream:
    """Emit the last `size` payloads (oldest first) at each input message's
    time, starting once `size` inputs exist.  No output during warm-up."""
    if size < 1:
        raise WiringError("window size must be >= 1")
    out = pipe.stream(dst)
    buf: list[Any] = []

    def on_message(msg: TimestampedMessage) -> None:
        buf.append(msg.payload)
        if len(buf) > size:
            del buf[0]
        if len(buf) == size:
            out.emit(msg.originating_time, tuple(buf))

    pipe.stream(src).subscribe(on_message)
    return out


def sample_hold(
    pipe: Pipeline, src: str, dst: str, cadence_hz: float, initial: Any
) -> Stream:
    """Causal zero-order hold: at every tick emit the most recent input
    payload with originating time <= tick, or `initial` before any input."""
    out = pipe.stream(dst)
    held = [initial]

    def on_message(msg: TimestampedMessage) -> None:
        held[0] = msg.payload

    def on_tick(t: float) -> None:
        out.emit(t, held[0])

    pipe.stream(src).subscribe(on_message)
    pipe.add_ticker(cadence_hz, on_tick)
    return out


def join_nearest(
    pipe: Pipeline, primary: str, secondary: str, tolerance: float, dst: str
) -> Stream:
    """Pair each primary message with the nearest-in-time secondary message
    within +/- tolerance; ties go to the earlier secondary.

    Output carries the primary's originating time and the payload pair.
    Primaries with no secondary in range are dropped and counted.  A
    primary is decided as soon as the secondary stream has advanced past
    its tolerance horizon, or at finalize.
    """
    if tolerance < 0:
        raise WiringError("tolerance must be >= 0")
    out = pipe.stream(dst)
    pending: list[TimestampedMessage] = []
    secondaries: list[TimestampedMessage] = []

    def decide(p: TimestampedMessage) -> None:
        best = None
        best_dist = None
        for s in secondaries:
            dist = abs(s.originating_time - p.originating_time)
            if dist <= tolerance and (best_dist is None or dist < best_dist):
                best, best_dist = s, dist
        if best is None:
            pipe._count_drop(dst)
        else:
            out.emit(p.originating_time, (p.payload, best.payload))

    def flush() -> None:
        horizon = secondaries[-1].originating_time if secondaries else None
        while pending:
            p = pending[0]
            if horizon is not None and horizon >= p.originating_time + tolerance:
                decide(p)
                del pending[0]
            else:
                break

    def on_primary(msg: TimestampedMessage) -> None:
        pending.append(msg)
        flush()

    def on_secondary(msg: TimestampedMessage) -> None:
        secondaries.append(msg)
        flush()

    def on_finalize() -> None:
        while pending:
            decide(pending.pop(0))

    pipe.stream(primary).subscribe(on_primary)
    pipe.stream(secondary).subscribe(on_secondary)
    pipe.add_finalizer(on_finalize)
    return out


# Canonical cross-stream order for replay tiebreaks at equal times.
_REPLAY_ORDER = {name: i for i, name in enumerate(KNOWN_STREAM_NAMES)}


def replay(
    pipe: Pipeline,
    messages: Iterable[tuple[str, TimestampedMessage]],
    duration: float,
) -> None:
    """Deliver recorded (stream, message) pairs in global originating-time
    order, then finalize at `duration`.  Ties across streams break by the
    canonical stream order so replay is deterministic."""
    ordered = sorted(
        messages,
        key=lambda sm: (sm[1].originating_time, _REPLAY_ORDER[sm[0]]),
    )
    for name, msg in ordered:
        pipe.emit(name, msg.originating_time, msg.payload)
    pipe.finalize(duration)


def tick_times(duration: float, cadence_hz: float) -> list[float]:
    """All tick times in [0, duration] at the given cadence, rounded to
    the millisecond wire precision.  Count is floor(duration*cadence)+1."""
    if not cadence_hz > 0:
        raise WiringError("cadence must be > 0")
    ticks = []
    k = 0
    while True:
        t = round(k / cadence_hz, 3)
        if t > duration:
            break
        ticks.append(t)
        k += 1
    return ticks
