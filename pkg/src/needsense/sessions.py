"""Persisted session recordings and their export to training data.

A session file is line-oriented UTF-8 text: a header, the need-level
label spans, then every recorded message.  Times carry 3 decimal places
and need values 6; the canonical form orders messages globally by
(time, stream), which keeps files diffable, byte-reproducible, and
directly replayable in time order.

Two stores share this format: raw recordings (gaze observations and
utterances) and derived recordings (per-tick model outputs), produced by
the first training stage and consumed by the second.
"""

from __future__ import annotations

import re
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .gaze import GazeObservation
from .language import Utterance
from .streams import KNOWN_STREAM_NAMES, TimestampedMessage

FORMAT_VERSION = 1

# Streams with a defined on-disk payload encoding.
STORABLE_STREAMS = (
    "gaze_raw",
    "utterance",
    "need_mutual",
    "need_confirmatory",
    "need_language",
    "need_fused",
)

NEED_STREAMS = ("need_mutual", "need_confirmatory", "need_language")

_STREAM_ORDER = {name: i for i, name in enumerate(KNOWN_STREAM_NAMES)}
_SESSION_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class NeedLevelLabel(Enum):
    """The five annotated need levels; levels 2 and 3 mean the robot
    should help."""

    FLOW = "Flow"
    L0 = "L0"
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"

    @property
    def weight(self) -> int:
        """Weight used by the session-average help statistic."""
        return {"Flow": -1, "L0": 0, "L1": 1, "L2": 2, "L3": 3}[self.value]

    @property
    def binary(self) -> int:
        return 1 if self in (NeedLevelLabel.L2, NeedLevelLabel.L3) else 0


@dataclass(frozen=True)
class LabelSpan:
    """Half-open span [start, end) carrying one need level."""

    start: float
    end: float
    level: NeedLevelLabel


class SessionFormatError(ValueError):
    """Malformed session data; carries the offending line number if known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def fmt_time(t: float) -> str:
    return f"{round(t, 3) + 0.0:.3f}"


def fmt_value(v: float) -> str:
    return f"{round(v, 6) + 0.0:.6f}"


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


@dataclass
class SessionRecord:
    """One recorded session: all message streams plus the label track."""

    session_id: str
    duration: float
    streams: dict[str, list[TimestampedMessage]] = field(default_factory=dict)
    labels: list[LabelSpan] = field(default_factory=list)

    def messages(self, name: str) -> list[TimestampedMessage]:
        return self.streams.get(name, [])

    def all_messages(self) -> list[tuple[str, TimestampedMessage]]:
        """Every message, globally ordered by (time, canonical stream)."""
        out = [
            (name, msg)
            for name, msgs in self.streams.items()
            for msg in msgs
        ]
        out.sort(key=lambda nm: (nm[1].originating_time, _STREAM_ORDER[nm[0]]))
        return out

    def validate(self) -> None:
        if not _SESSION_ID_RE.match(self.session_id):
            raise SessionFormatError(f"invalid session id {self.session_id!r}")
        if not self.duration > 0:
            raise SessionFormatError("duration must be > 0")
        for name, msgs in self.streams.items():
            if name not in STORABLE_STREAMS:
                raise SessionFormatError(f"unknown stream name {name!r}")
            last = None
            for msg in msgs:
                t = msg.originating_time
                if not 0.0 <= t <= self.duration:
                    raise SessionFormatError(
                        f"stream {name}: time {t} outside [0, {self.duration}]"
                    )
                if last is not None and t <= last:
                    raise SessionFormatError(
                        f"stream {name}: non-monotone time {t} after {last}"
                    )
                last = t
        _validate_labels(self.labels, self.duration)

    def to_lines(self) -> list[str]:
        """Canonical serialization.  Identity under save/load requires the
        record's times and values to already be at wire precision."""
        lines = [
            f"format_version={FORMAT_VERSION} session_id={self.session_id} "
            f"duration={fmt_time(self.duration)}"
        ]
        for span in sorted(self.labels, key=lambda s: s.start):
            lines.append(
                f"stream=label start={fmt_time(span.start)} "
                f"end={fmt_time(span.end)} level={span.level.value}"
            )
        for name, msg in self.all_messages():
            lines.append(_message_line(name, msg))
        return lines

    def save(self, path: str | Path) -> None:
        self.validate()
        Path(path).write_text(
            "\n".join(self.to_lines()) + "\n", encoding="utf-8"
        )


def _message_line(name: str, msg: TimestampedMessage) -> str:
    t = fmt_time(msg.originating_time)
    if name == "gaze_raw":
        obs: GazeObservation = msg.payload
        return (
            f"stream=gaze_raw t={t} yaw={fmt_value(obs.yaw)} "
            f"pitch={fmt_value(obs.pitch)} conf={fmt_value(obs.confidence)}"
        )
    if name == "utterance":
        return f'stream=utterance t={t} text="{_escape(msg.payload)}"'
    return f"stream={name} t={t} v={fmt_value(msg.payload)}"


def _validate_labels(
    labels: list[LabelSpan],
    duration: float,
    lines: dict[float, int] | None = None,
) -> None:
    lines = lines or {}
    if not labels:
        raise SessionFormatError("session has no label spans")
    spans = sorted(labels, key=lambda s: s.start)
    for span in spans:
        if not span.start < span.end:
            raise SessionFormatError(
                f"label span start {span.start} not before end {span.end}",
                lines.get(span.start),
            )
    if spans[0].start != 0.0:
        raise SessionFormatError(
            f"label coverage starts at {spans[0].start}, expected 0.0",
            lines.get(spans[0].start),
        )
    for prev, cur in zip(spans, spans[1:]):
        if cur.start < prev.end:
            raise SessionFormatError(
                f"label overlap at {fmt_time(cur.start)}", lines.get(cur.start)
            )
        if cur.start > prev.end:
            raise SessionFormatError(
                f"label gap at {fmt_time(prev.end)}", lines.get(cur.start)
            )
    if spans[-1].end != duration:
        raise SessionFormatError(
            f"label coverage ends at {spans[-1].end}, expected {duration}",
            lines.get(spans[-1].start),
        )


_FIELD_RE = re.compile(r'(\w+)=("(?:[^"\\]|\\.)*"|\S+)')


def _parse_fields(line: str, line_no: int) -> dict[str, str]:
    fields: dict[str, str] = {}
    pos = 0
    for m in _FIELD_RE.finditer(line):
        if line[pos:m.start()].strip():
            raise SessionFormatError(
                f"unparseable text {line[pos:m.start()].strip()!r}", line_no
            )
        key, raw = m.group(1), m.group(2)
        if key in fields:
            raise SessionFormatError(f"duplicate field {key!r}", line_no)
        fields[key] = raw
        pos = m.end()
    if line[pos:].strip():
        raise SessionFormatError(f"unparseable text {line[pos:].strip()!r}", line_no)
    return fields


def _parse_float(fields: dict[str, str], key: str, line_no: int) -> float:
    if key not in fields:
        raise SessionFormatError(f"missing field {key!r}", line_no)
    try:
        v = float(fields[key])
    except ValueError:
        raise SessionFormatError(f"bad number for {key!r}: {fields[key]}", line_no)
    if not np.isfinite(v):
        raise SessionFormatError(f"non-finite value for {key!r}", line_no)
    return v


def parse_session(lines: list[str], source: str = "<memory>") -> SessionRecord:
    """Parse and validate a session; errors name the offending line."""
    rows = [
        (i + 1, line.rstrip("\n"))
        for i, line in enumerate(lines)
        if line.strip()
    ]
    if not rows:
        raise SessionFormatError(f"{source}: empty session file")
    line_no, header = rows[0]
    fields = _parse_fields(header, line_no)
    if fields.get("format_version") != str(FORMAT_VERSION):
        raise SessionFormatError(
            f"unsupported or missing format_version in header", line_no
        )
    session_id = fields.get("session_id", "")
    if not _SESSION_ID_RE.match(session_id):
        raise SessionFormatError(f"invalid session id {session_id!r}", line_no)
    duration = _parse_float(fields, "duration", line_no)

    streams: dict[str, list[TimestampedMessage]] = {}
    last_t: dict[str, float] = {}
    labels: list[LabelSpan] = []
    label_lines: dict[float, int] = {}

    for line_no, line in rows[1:]:
        fields = _parse_fields(line, line_no)
        name = fields.get("stream")
        if name is None:
            raise SessionFormatError("missing stream field", line_no)
        if name == "label":
            start = _parse_float(fields, "start", line_no)
            end = _parse_float(fields, "end", line_no)
            level_text = fields.get("level", "")
            try:
                level = NeedLevelLabel(level_text)
            except ValueError:
                raise SessionFormatError(
                    f"unknown need level {level_text!r}", line_no
                )
            labels.append(LabelSpan(start, end, level))
            label_lines[start] = line_no
            continue
        if name not in STORABLE_STREAMS:
            raise SessionFormatError(f"unknown stream name {name!r}", line_no)
        t = _parse_float(fields, "t", line_no)
        if not 0.0 <= t <= duration:
            raise SessionFormatError(
                f"stream {name}: time {t} outside [0, {duration}]", line_no
            )
        if name in last_t and t <= last_t[name]:
            raise SessionFormatError(
                f"stream {name}: non-monotone time {t} after {last_t[name]}",
                line_no,
            )
        last_t[name] = t
        payload = _parse_payload(name, fields, line_no)
        streams.setdefault(name, []).append(TimestampedMessage(t, payload))

    _validate_labels(labels, duration, label_lines)
    return SessionRecord(session_id, duration, streams, labels)


def _parse_payload(name: str, fields: dict[str, str], line_no: int):
    if name == "gaze_raw":
        conf = _parse_float(fields, "conf", line_no)
        if not 0.0 <= conf <= 1.0:
            raise SessionFormatError(f"conf {conf} outside [0, 1]", line_no)
        return GazeObservation(
            yaw=_parse_float(fields, "yaw", line_no),
            pitch=_parse_float(fields, "pitch", line_no),
            confidence=conf,
        )
    if name == "utterance":
        raw = fields.get("text")
        if raw is None or not (raw.startswith('"') and raw.endswith('"')):
            raise SessionFormatError("utterance missing quoted text", line_no)
        text = _unescape(raw[1:-1])
        if not text.strip():
            raise SessionFormatError("utterance text is empty", line_no)
        return text
    v = _parse_float(fields, "v", line_no)
    if not 0.0 <= v <= 1.0:
        raise SessionFormatError(f"need value {v} outside [0, 1]", line_no)
    return v


def load(path: str | Path) -> SessionRecord:
    path = Path(path)
    return parse_session(
        path.read_text(encoding="utf-8").splitlines(), source=str(path)
    )


def save(record: SessionRecord, path: str | Path) -> None:
    record.save(path)


def label_at(record: SessionRecord, t: float) -> NeedLevelLabel:
    """The need level at time t; span starts are inclusive, ends exclusive."""
    if not 0.0 <= t < record.duration:
        raise ValueError(f"time {t} outside [0, {record.duration})")
    spans = sorted(record.labels, key=lambda s: s.start)
    starts = [s.start for s in spans]
    idx = bisect_right(starts, t) - 1
    span = spans[idx]
    if not span.start <= t < span.end:
        raise ValueError(f"no label span covers time {t}")
    return span.level


def binary_label_at(record: SessionRecord, t: float) -> int:
    """1 when the user needs the robot's help (levels 2 and 3), else 0."""
    return label_at(record, t).binary


@dataclass
class TrainingMatrix:
    """Windowed feature rows with binary labels and per-row provenance.

    Anchors are (session_id, anchor time) pairs defining the canonical row
    ordering that downstream training relies on for reproducibility.
    """

    features: np.ndarray
    labels: np.ndarray
    anchors: list[tuple[str, float]]
    provenance: str

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.labels) != len(self.features) or len(self.anchors) != len(
            self.features
        ):
            raise ValueError("features, labels and anchors must align")
        if len(self.labels) and not set(np.unique(self.labels)) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")

    @property
    def n_rows(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def export_language_corpus(
    records: list[SessionRecord],
) -> list[tuple[Utterance, int]]:
    """One labeled row per utterance, labeled by the need level at the
    utterance's finalization time."""
    rows = []
    for record in sorted(records, key=lambda r: r.session_id):
        for msg in record.messages("utterance"):
            rows.append(
                (
                    Utterance(msg.payload, msg.originating_time),
                    binary_label_at(record, msg.originating_time),
                )
            )
    return rows


def export_fusion_matrix(
    records: list[SessionRecord], window: int
) -> TrainingMatrix:
    """Sliding-window rows over the per-tick need streams.

    Each row concatenates `window` consecutive (mutual, confirmatory,
    language) frames oldest first and is labeled at the newest tick.
    Warm-up ticks and the unlabeled final grid point (at exactly the
    session duration) contribute no rows.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    blocks = []
    label_blocks = []
    anchors: list[tuple[str, float]] = []
    ordered = sorted(records, key=lambda r: r.session_id)
    for record in ordered:
        for name in NEED_STREAMS:
            if name not in record.streams:
                raise SessionFormatError(
                    f"session {record.session_id} missing stream {name!r}"
                )
        times = [m.originating_time for m in record.messages(NEED_STREAMS[0])]
        series = []
        for name in NEED_STREAMS:
            msgs = record.messages(name)
            if [m.originating_time for m in msgs] != times:
                raise SessionFormatError(
                    f"session {record.session_id}: stream {name!r} not on the "
                    "common tick grid"
                )
            series.append([m.payload for m in msgs])
        frames = np.array(series, dtype=np.float64).T
        if len(frames) < window:
            continue
        rows = sliding_window_view(frames, (window, 3)).reshape(-1, window * 3)
        for i, anchor_t in enumerate(times[window - 1:]):
            if anchor_t >= record.duration:
                continue
            blocks.append(rows[i])
            label_blocks.append(binary_label_at(record, anchor_t))
            anchors.append((record.session_id, anchor_t))
    features = (
        np.array(blocks, dtype=np.float64)
        if blocks
        else np.empty((0, window * 3), dtype=np.float64)
    )
    provenance = (
        f"fusion_export window={window} "
        f"sessions={','.join(r.session_id for r in ordered)}"
    )
    return TrainingMatrix(
        features=features,
        labels=np.array(label_blocks, dtype=np.int64),
        anchors=anchors,
        provenance=provenance,
    )
