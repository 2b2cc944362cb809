"""Synthetic labeled sessions for training and evaluation.

A scenario script is a list of segments, each with a duration, a
need-level label, a gaze behavior, and scheduled utterances.  Simulation
renders the script into a session record: gaze observations at 30 Hz
following the behavior's fixation point plus seeded Gaussian angular
noise, utterances at their scheduled times, and one label span per
segment.  Everything is deterministic per seed.

The benchmark suite correlates the cues with the labels the way a desk
assembly task would: flowing work keeps eyes on the task, brief
task/robot alternation marks rising uncertainty, and outright appeals
combine a sustained look at the robot with help-seeking phrasing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gaze import GazeObservation, GazeThresholds
from .sessions import (
    LabelSpan,
    NeedLevelLabel,
    SessionFormatError,
    SessionRecord,
    _escape,
    _parse_fields,
    _parse_float,
    _unescape,
    fmt_time,
)
from .streams import TimestampedMessage

FRAME_HZ = 30.0

SCRIPT_VERSION = 1

# Fixation points as multiples of the center-box half-widths; three
# half-widths out is unambiguous even with several sigma of noise.
_TASK_MULT = (0.0, -3.0)
_ROBOT_MULT = (0.0, 0.0)
_AWAY_MULT = (3.0, 3.0)


def _parse_behavior(text: str) -> tuple[str, float | None]:
    if text in ("fix-task", "fix-robot", "fix-away"):
        return text, None
    if text.startswith("alternate:"):
        try:
            period = float(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad alternation period in {text!r}")
        if not period > 0:
            raise ValueError("alternation period must be > 0")
        return "alternate", period
    raise ValueError(f"unknown gaze behavior {text!r}")


@dataclass(frozen=True)
class SegmentSpec:
    """One scripted segment: `utterances` holds (offset, text) pairs
    with offsets relative to the segment start."""

    duration: float
    level: NeedLevelLabel
    behavior: str
    utterances: tuple[tuple[float, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError("segment duration must be > 0")
        _parse_behavior(self.behavior)
        last = None
        for offset, text in self.utterances:
            if not 0.0 <= offset < self.duration:
                raise ValueError(
                    f"utterance offset {offset} outside segment of "
                    f"duration {self.duration}"
                )
            if last is not None and offset <= last:
                raise ValueError("utterance offsets must strictly increase")
            if not text.strip():
                raise ValueError("utterance text must be non-empty")
            last = offset


@dataclass(frozen=True)
class ScenarioScript:
    segments: tuple[SegmentSpec, ...]
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("script needs at least one segment")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    @property
    def duration(self) -> float:
        t = 0.0
        for seg in self.segments:
            t = round(t + seg.duration, 3)
        return t


def _fixation(
    behavior: str, period: float | None, tau: float, th: GazeThresholds
) -> tuple[float, float]:
    if behavior == "fix-task":
        mult = _TASK_MULT
    elif behavior == "fix-robot":
        mult = _ROBOT_MULT
    elif behavior == "fix-away":
        mult = _AWAY_MULT
    else:  # alternate: even glances on the task, odd on the robot
        mult = _TASK_MULT if int(tau // period) % 2 == 0 else _ROBOT_MULT
    return mult[0] * th.yaw_center, mult[1] * th.pitch_center


def simulate(
    script: ScenarioScript,
    session_id: str,
    thresholds: GazeThresholds | None = None,
) -> SessionRecord:
    """Render a script into a session record.

    Gaze frames run at 30 Hz over [0, duration); angles are rounded to
    the 6-decimal wire precision so the in-memory record equals its own
    save/load round trip.
    """
    th = thresholds or GazeThresholds()
    rng = np.random.default_rng(script.seed)

    bounds = [0.0]
    for seg in script.segments:
        bounds.append(round(bounds[-1] + seg.duration, 3))
    duration = bounds[-1]
    labels = [
        LabelSpan(bounds[i], bounds[i + 1], seg.level)
        for i, seg in enumerate(script.segments)
    ]

    utterances: list[TimestampedMessage] = []
    for i, seg in enumerate(script.segments):
        for offset, text in seg.utterances:
            t = round(bounds[i] + offset, 3)
            if t >= bounds[i + 1]:
                raise ValueError(
                    f"utterance at offset {offset} rounds past its segment"
                )
            utterances.append(TimestampedMessage(t, text))
    for a, b in zip(utterances, utterances[1:]):
        if b.originating_time <= a.originating_time:
            raise ValueError(
                f"utterances collide at t={a.originating_time}"
            )

    frames: list[TimestampedMessage] = []
    seg_idx = 0
    k = 0
    while True:
        t = round(k / FRAME_HZ, 3)
        if t >= duration:
            break
        while t >= bounds[seg_idx + 1]:
            seg_idx += 1
        seg = script.segments[seg_idx]
        behavior, period = _parse_behavior(seg.behavior)
        yaw, pitch = _fixation(behavior, period, t - bounds[seg_idx], th)
        if script.noise > 0:
            yaw += float(rng.normal(0.0, script.noise))
            pitch += float(rng.normal(0.0, script.noise))
        frames.append(
            TimestampedMessage(
                t, GazeObservation(round(yaw, 6), round(pitch, 6), 1.0)
            )
        )
        k += 1

    streams: dict[str, list[TimestampedMessage]] = {"gaze_raw": frames}
    if utterances:
        streams["utterance"] = utterances
    record = SessionRecord(
        session_id=session_id,
        duration=duration,
        streams=streams,
        labels=labels,
    )
    record.validate()
    return record


def script_to_lines(script: ScenarioScript) -> list[str]:
    lines = [
        f"script_version={SCRIPT_VERSION} seed={script.seed} "
        f"noise={script.noise!r}"
    ]
    for seg in script.segments:
        lines.append(
            f"segment duration={fmt_time(seg.duration)} "
            f"label={seg.level.value} gaze={seg.behavior}"
        )
        for offset, text in seg.utterances:
            lines.append(
                f'utterance offset={fmt_time(offset)} text="{_escape(text)}"'
            )
    return lines


def save_script(script: ScenarioScript, path: str | Path) -> None:
    Path(path).write_text(
        "\n".join(script_to_lines(script)) + "\n", encoding="utf-8"
    )


def parse_script(lines: list[str], source: str = "<memory>") -> ScenarioScript:
    """Parse a script file; errors carry the offending line number."""
    rows = [
        (i + 1, line.rstrip("\n"))
        for i, line in enumerate(lines)
        if line.strip()
    ]
    if not rows:
        raise SessionFormatError(f"{source}: empty script file")
    line_no, header = rows[0]
    fields = _parse_fields(header, line_no)
    if fields.get("script_version") != str(SCRIPT_VERSION):
        raise SessionFormatError(
            "unsupported or missing script_version in header", line_no
        )
    try:
        seed = int(fields.get("seed", "0"))
    except ValueError:
        raise SessionFormatError(f"bad seed {fields.get('seed')!r}", line_no)
    noise = _parse_float(fields, "noise", line_no) if "noise" in fields else 0.0

    segments: list[SegmentSpec] = []
    current: dict | None = None

    def close_current() -> None:
        if current is not None:
            try:
                segments.append(
                    SegmentSpec(
                        duration=current["duration"],
                        level=current["level"],
                        behavior=current["behavior"],
                        utterances=tuple(current["utterances"]),
                    )
                )
            except ValueError as exc:
                raise SessionFormatError(str(exc), current["line"])

    for line_no, line in rows[1:]:
        keyword, _, rest = line.strip().partition(" ")
        fields = _parse_fields(rest, line_no)
        if keyword == "segment":
            close_current()
            level_text = fields.get("label", "")
            try:
                level = NeedLevelLabel(level_text)
            except ValueError:
                raise SessionFormatError(
                    f"unknown need level {level_text!r}", line_no
                )
            behavior = fields.get("gaze", "")
            try:
                _parse_behavior(behavior)
            except ValueError as exc:
                raise SessionFormatError(str(exc), line_no)
            current = {
                "duration": _parse_float(fields, "duration", line_no),
                "level": level,
                "behavior": behavior,
                "utterances": [],
                "line": line_no,
            }
        elif keyword == "utterance":
            if current is None:
                raise SessionFormatError(
                    "utterance before any segment", line_no
                )
            raw = fields.get("text")
            if raw is None or not (raw.startswith('"') and raw.endswith('"')):
                raise SessionFormatError("utterance missing quoted text", line_no)
            current["utterances"].append(
                (_parse_float(fields, "offset", line_no), _unescape(raw[1:-1]))
            )
        else:
            raise SessionFormatError(
                f"unrecognized script line {keyword!r}", line_no
            )
    close_current()
    if not segments:
        raise SessionFormatError(f"{source}: script has no segments")
    try:
        return ScenarioScript(tuple(segments), noise=noise, seed=seed)
    except ValueError as exc:
        raise SessionFormatError(str(exc))


def load_script(path: str | Path) -> ScenarioScript:
    path = Path(path)
    return parse_script(
        path.read_text(encoding="utf-8").splitlines(), source=str(path)
    )


# Phrase banks for the benchmark suite.  Vocabulary deliberately bleeds
# across classes (question words in non-help segments, "let me" on both
# sides) so the language model is informative but imperfect.
FLOW_PHRASES = (
    "okay this piece goes here",
    "that looks right",
    "nice it fits",
    "building the next part now",
    "this one is easy",
    "there we go",
)
L0_PHRASES = (
    "hmm okay",
    "let me think",
    "hold on a moment",
)
L1_PHRASES = (
    "where does this one go",
    "hmm not sure about this",
    "wait that seems wrong",
    "is this the right piece",
)
L2_PHRASES = (
    "let me check the instructions",
    "i should look at the manual",
    "maybe the picture shows it",
    "let me see that diagram again",
)
L3_PHRASES = (
    "can you help me",
    "i need help with this",
    "what do i do next",
    "which piece goes here",
    "help please",
    "robot can you show me",
)

_SEGMENT_KINDS = {
    "Flow": (NeedLevelLabel.FLOW, "fix-task", (8.0, 12.0), FLOW_PHRASES),
    "L0": (NeedLevelLabel.L0, "fix-task", (4.0, 6.0), L0_PHRASES),
    "L1": (NeedLevelLabel.L1, "alternate:3.0", (6.0, 9.0), L1_PHRASES),
    "L2": (NeedLevelLabel.L2, "alternate:1.5", (6.0, 9.0), L2_PHRASES),
    "L3": (NeedLevelLabel.L3, "fix-robot", (5.0, 8.0), L3_PHRASES),
}


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def benchmark_suite(
    n_sessions: int = 20, seed: int = 0, noise: float = 0.02
) -> list[ScenarioScript]:
    """Deterministic family of scripts whose gaze patterns and phrasing
    correlate with the L2/L3 spans, with enough ambiguity that no single
    model is sufficient.  Every session contains both classes."""
    if n_sessions < 1:
        raise ValueError("n_sessions must be >= 1")
    scripts = []
    for i in range(n_sessions):
        rng = np.random.default_rng([seed, i])
        plan = [
            "Flow",
            _pick(rng, ("L0", "L1")),
            _pick(rng, ("L2", "L3")),
            _pick(rng, ("Flow", "L1")),
            _pick(rng, ("L2", "L3")),
        ]
        segments = []
        for kind in plan:
            level, behavior, (lo, hi), bank = _SEGMENT_KINDS[kind]
            dur = round(float(rng.uniform(lo, hi)), 3)
            utts = []
            offset = round(1.0 + float(rng.uniform(0.0, 1.0)), 3)
            while offset < dur - 1.0:
                utts.append((offset, _pick(rng, bank)))
                offset = round(offset + 3.5 + float(rng.uniform(0.0, 2.5)), 3)
            segments.append(SegmentSpec(dur, level, behavior, tuple(utts)))
        scripts.append(
            ScenarioScript(
                tuple(segments),
                noise=noise,
                seed=int(rng.integers(2**31)),
            )
        )
    return scripts
