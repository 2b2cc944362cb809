"""Decision-level fusion of the per-modality need models.

The three need streams are resampled onto a shared tick grid with a
causal zero-order hold, each tick's triple becomes a FusionFrame, a
sliding window of W frames is concatenated into one feature vector, and
a random forest maps the vector to the final binary help decision.

Training is two-stage: stage 1 replays raw recordings through the gaze
and language models and persists their per-tick outputs as derived
sessions; stage 2 exports windowed rows from those sessions and fits the
forest.  Because both stages and the live path quantize times to 3
decimals and need values to 6 before any windowing, a live replay of a
recorded session reproduces the batch predictions bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import ForestConfig, RFModel, fit_forest
from .gaze import GazeConfig, GazeNeedTracker
from .language import NBModel
from .sessions import (
    NEED_STREAMS,
    SessionFormatError,
    SessionRecord,
    TrainingMatrix,
    export_fusion_matrix,
)
from .streams import Pipeline, TimestampedMessage, replay


@dataclass(frozen=True)
class FusionFrame:
    """Per-tick triple of model outputs, all held values in [0, 1]."""

    t: float
    mutual: float
    confirmatory: float
    language: float

    def __post_init__(self) -> None:
        for v in (self.mutual, self.confirmatory, self.language):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"need value {v} outside [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.mutual, self.confirmatory, self.language)


@dataclass(frozen=True)
class WindowedFeatureVector:
    """Concatenation of W frames oldest to newest, each contributing
    (mutual, confirmatory, language); anchored at the newest frame."""

    values: tuple[float, ...]
    anchor_t: float

    def __post_init__(self) -> None:
        if len(self.values) % 3 != 0 or not self.values:
            raise ValueError("dimension must be a positive multiple of 3")


@dataclass(frozen=True)
class FusedDecision:
    """One output line of the running system: the three held model values
    at the tick, the forest score, and the binary decision."""

    t: float
    mutual: float
    confirmatory: float
    language: float
    score: float
    label: int


def assemble(frames: list[FusionFrame], window: int) -> list[WindowedFeatureVector]:
    """Batch sliding window over a frame sequence; nothing is emitted
    until `window` frames exist (no padding)."""
    if window < 1:
        raise ValueError("window must be >= 1")
    out = []
    for i in range(window - 1, len(frames)):
        chunk = frames[i - window + 1 : i + 1]
        values = tuple(v for f in chunk for v in f.as_tuple())
        out.append(WindowedFeatureVector(values=values, anchor_t=chunk[-1].t))
    return out


def wire_gaze(pipe: Pipeline, config: GazeConfig) -> None:
    """gaze_raw -> need_mutual + need_confirmatory, one value per frame,
    rounded to wire precision so live values match persisted ones."""
    tracker = GazeNeedTracker(config)
    mutual = pipe.stream("need_mutual")
    conf = pipe.stream("need_confirmatory")

    def on_frame(msg: TimestampedMessage) -> None:
        frame = tracker.update(msg.originating_time, msg.payload)
        mutual.emit(msg.originating_time, round(frame.mutual, 6))
        conf.emit(msg.originating_time, round(frame.confirmatory, 6))

    pipe.stream("gaze_raw").subscribe(on_frame)


def wire_language(pipe: Pipeline, model: NBModel) -> None:
    """utterance -> need_language at the utterance's originating time.
    Utterances that tokenize to nothing produce no output (counted)."""
    lang = pipe.stream("need_language")

    def on_utterance(msg: TimestampedMessage) -> None:
        v = model.predict_text(msg.payload)
        if v is None:
            pipe._count_drop("need_language")
            return
        lang.emit(msg.originating_time, round(v, 6))

    pipe.stream("utterance").subscribe(on_utterance)


def make_frames(pipe: Pipeline, cadence_hz: float) -> None:
    """Zero-order hold of the three need streams onto one tick grid;
    emits one FusionFrame per tick on fusion_frame.  All initials 0.0."""
    held = {"need_mutual": 0.0, "need_confirmatory": 0.0, "need_language": 0.0}
    frames = pipe.stream("fusion_frame")

    for name in NEED_STREAMS:
        def on_need(msg: TimestampedMessage, name: str = name) -> None:
            held[name] = msg.payload

        pipe.stream(name).subscribe(on_need)

    def on_tick(t: float) -> None:
        frames.emit(
            t,
            FusionFrame(
                t=t,
                mutual=held["need_mutual"],
                confirmatory=held["need_confirmatory"],
                language=held["need_language"],
            ),
        )

    pipe.add_ticker(cadence_hz, on_tick)


def wire_fused(
    pipe: Pipeline, model: RFModel, window: int, sink: list[FusedDecision]
) -> None:
    """fusion_frame -> need_fused via the forest over a W-frame window.
    No decisions during warm-up.  Scores are wire-rounded; vote fractions
    are never close enough to 0.5 for that to flip the label."""
    if window < 1:
        raise ValueError("window must be >= 1")
    fused = pipe.stream("need_fused")
    buf: list[FusionFrame] = []

    def on_frame(msg: TimestampedMessage) -> None:
        buf.append(msg.payload)
        if len(buf) > window:
            del buf[0]
        if len(buf) < window:
            return
        vec = np.array(
            [v for f in buf for v in f.as_tuple()], dtype=np.float64
        )
        labels, scores = model.predict_batch(vec[None, :])
        score = round(float(scores[0]), 6)
        frame: FusionFrame = msg.payload
        fused.emit(frame.t, score)
        sink.append(
            FusedDecision(
                t=frame.t,
                mutual=frame.mutual,
                confirmatory=frame.confirmatory,
                language=frame.language,
                score=score,
                label=int(labels[0]),
            )
        )

    pipe.stream("fusion_frame").subscribe(on_frame)


def _replay_raw(pipe: Pipeline, record: SessionRecord) -> None:
    messages = [
        (name, msg)
        for name in ("gaze_raw", "utterance")
        for msg in record.messages(name)
    ]
    replay(pipe, messages, record.duration)


def stage1_materialize(
    record: SessionRecord,
    nb_model: NBModel,
    gaze_config: GazeConfig,
    cadence_hz: float,
) -> SessionRecord:
    """Stage 1 of training: replay one raw session through the gaze and
    language models and persist their held per-tick outputs as a derived
    session.  Labels are copied unchanged."""
    pipe = Pipeline()
    wire_gaze(pipe, gaze_config)
    wire_language(pipe, nb_model)
    make_frames(pipe, cadence_hz)
    _replay_raw(pipe, record)
    frames = [m.payload for m in pipe.stream("fusion_frame").messages]
    streams = {
        "need_mutual": [TimestampedMessage(f.t, f.mutual) for f in frames],
        "need_confirmatory": [
            TimestampedMessage(f.t, f.confirmatory) for f in frames
        ],
        "need_language": [TimestampedMessage(f.t, f.language) for f in frames],
    }
    return SessionRecord(
        session_id=record.session_id,
        duration=record.duration,
        streams=streams,
        labels=list(record.labels),
    )


def stage2_train(
    records: list[SessionRecord], window: int, config: ForestConfig
) -> RFModel:
    """Stage 2 of training: export windowed rows from derived sessions
    and fit the forest."""
    if not records:
        raise ValueError("no derived sessions to train on")
    return train_rf(export_fusion_matrix(records, window), config)


def train_rf(matrix: TrainingMatrix, config: ForestConfig) -> RFModel:
    """Fit the forest on the matrix in canonical row order, so permuting
    the rows of an otherwise identical matrix changes nothing."""
    order = sorted(range(matrix.n_rows), key=lambda i: matrix.anchors[i])
    return fit_forest(matrix.features[order], matrix.labels[order], config)


def predict_rf(model: RFModel, vector) -> tuple[int, float]:
    """(label, score) for one feature vector; score is the fraction of
    trees voting for help, label 1 iff score >= 0.5."""
    if isinstance(vector, WindowedFeatureVector):
        vector = vector.values
    arr = np.asarray(vector, dtype=np.float64).reshape(1, -1)
    labels, scores = model.predict_batch(arr)
    return int(labels[0]), float(scores[0])


def session_frames(record: SessionRecord) -> list[FusionFrame]:
    """Reconstruct the per-tick frames of a derived session, checking
    that all three need streams share one tick grid."""
    for name in NEED_STREAMS:
        if name not in record.streams:
            raise SessionFormatError(
                f"session {record.session_id} missing stream {name!r}"
            )
    times = [m.originating_time for m in record.messages(NEED_STREAMS[0])]
    columns = []
    for name in NEED_STREAMS:
        msgs = record.messages(name)
        if [m.originating_time for m in msgs] != times:
            raise SessionFormatError(
                f"session {record.session_id}: stream {name!r} not on the "
                "common tick grid"
            )
        columns.append([m.payload for m in msgs])
    return [
        FusionFrame(t=t, mutual=m, confirmatory=c, language=l)
        for t, m, c, l in zip(times, *columns)
    ]


def predict_session(
    record: SessionRecord, model: RFModel, window: int
) -> list[FusedDecision]:
    """Batch predictions for every full window of a derived session,
    including the final grid point at the session duration."""
    frames = session_frames(record)
    vectors = assemble(frames, window)
    if not vectors:
        return []
    X = np.array([v.values for v in vectors], dtype=np.float64)
    labels, scores = model.predict_batch(X)
    out = []
    for i, vec in enumerate(vectors):
        frame = frames[window - 1 + i]
        out.append(
            FusedDecision(
                t=vec.anchor_t,
                mutual=frame.mutual,
                confirmatory=frame.confirmatory,
                language=frame.language,
                score=round(float(scores[i]), 6),
                label=int(labels[i]),
            )
        )
    return out


def live_decisions(
    record: SessionRecord,
    nb_model: NBModel,
    rf_model: RFModel,
    gaze_config: GazeConfig,
    cadence_hz: float,
    window: int,
) -> list[FusedDecision]:
    """Run the full live pipeline over a raw session's messages in
    originating-time order and collect the per-tick decisions."""
    pipe = Pipeline()
    sink: list[FusedDecision] = []
    wire_gaze(pipe, gaze_config)
    wire_language(pipe, nb_model)
    make_frames(pipe, cadence_hz)
    wire_fused(pipe, rf_model, window, sink)
    _replay_raw(pipe, record)
    return sink
