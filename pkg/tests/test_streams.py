"""Stream substrate: ordering, joins, resampling, windows, replay."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from needsense.streams import (
    OrderingError,
    Pipeline,
    PipelineClock,
    TimestampedMessage,
    WiringError,
    join_nearest,
    map_stream,
    replay,
    sample_hold,
    sliding_window,
    tick_times,
)


def collect(pipe: Pipeline, name: str) -> list[tuple[float, object]]:
    return [(m.originating_time, m.payload) for m in pipe.stream(name).messages]


class TestEmit:
    def test_subscribers_see_messages_in_order(self):
        pipe = Pipeline()
        seen = []
        pipe.stream("need_mutual").subscribe(
            lambda m: seen.append((m.originating_time, m.payload))
        )
        pipe.emit("need_mutual", 1.0, 0.4)
        pipe.emit("need_mutual", 2.0, 0.5)
        assert seen == [(1.0, 0.4), (2.0, 0.5)]

    def test_equal_time_rejected(self):
        pipe = Pipeline()
        pipe.emit("need_mutual", 2.0, 0.4)
        with pytest.raises(OrderingError):
            pipe.emit("need_mutual", 2.0, 0.5)

    def test_backward_time_rejected(self):
        pipe = Pipeline()
        pipe.emit("need_mutual", 2.0, 0.4)
        with pytest.raises(OrderingError):
            pipe.emit("need_mutual", 1.5, 0.5)

    def test_unknown_stream_rejected_at_wiring(self):
        pipe = Pipeline()
        with pytest.raises(WiringError):
            pipe.stream("bogus")

    def test_payloads_immutable(self):
        msg = TimestampedMessage(1.0, 0.4)
        with pytest.raises(AttributeError):
            msg.payload = 0.5

    def test_clock_modes(self):
        assert PipelineClock("live").mode == "live"
        with pytest.raises(WiringError):
            PipelineClock("warp")
        with pytest.raises(WiringError):
            PipelineClock(replay_speed=0.0)


class TestMapStream:
    def test_double(self):
        pipe = Pipeline()
        map_stream(pipe, "need_mutual", "need_fused", lambda v: v * 2)
        pipe.emit("need_mutual", 1.0, 2)
        pipe.emit("need_mutual", 2.0, 3)
        assert collect(pipe, "need_fused") == [(1.0, 4), (2.0, 6)]

    def test_identity(self):
        pipe = Pipeline()
        map_stream(pipe, "need_mutual", "need_fused", lambda v: v)
        for k in range(5):
            pipe.emit("need_mutual", float(k + 1), k)
        assert collect(pipe, "need_fused") == collect(pipe, "need_mutual")

    def test_empty(self):
        pipe = Pipeline()
        map_stream(pipe, "need_mutual", "need_fused", lambda v: v)
        assert collect(pipe, "need_fused") == []

    def test_failure_drops_and_counts(self):
        pipe = Pipeline()
        map_stream(pipe, "need_mutual", "need_fused", lambda v: 1 / v)
        pipe.emit("need_mutual", 1.0, 2)
        pipe.emit("need_mutual", 2.0, 0)
        pipe.emit("need_mutual", 3.0, 4)
        assert collect(pipe, "need_fused") == [(1.0, 0.5), (3.0, 0.25)]
        assert pipe.error_counts["need_fused"] == 1


class TestJoinNearest:
    def wire(self, tolerance):
        pipe = Pipeline()
        join_nearest(pipe, "need_mutual", "need_language", tolerance, "need_fused")
        return pipe

    def test_exact_match(self):
        pipe = self.wire(0.1)
        pipe.emit("need_language", 1.0, "s")
        pipe.emit("need_mutual", 1.0, "p")
        pipe.finalize(2.0)
        assert collect(pipe, "need_fused") == [(1.0, ("p", "s"))]

    def test_nearest_wins(self):
        pipe = self.wire(0.5)
        pipe.emit("need_language", 0.9, "early")
        pipe.emit("need_mutual", 1.0, "p")
        pipe.emit("need_language", 1.2, "late")
        pipe.finalize(2.0)
        assert collect(pipe, "need_fused") == [(1.0, ("p", "early"))]

    def test_outside_tolerance_dropped_and_counted(self):
        pipe = self.wire(0.5)
        pipe.emit("need_mutual", 1.0, "p")
        pipe.emit("need_language", 2.0, "far")
        pipe.finalize(3.0)
        assert collect(pipe, "need_fused") == []
        assert pipe.drop_counts["need_fused"] == 1

    def test_tie_breaks_to_earlier_secondary(self):
        pipe = self.wire(0.5)
        pipe.emit("need_language", 0.8, "before")
        pipe.emit("need_mutual", 1.0, "p")
        pipe.emit("need_language", 1.2, "after")
        pipe.finalize(2.0)
        assert collect(pipe, "need_fused") == [(1.0, ("p", "before"))]

    def test_deterministic_across_arrival_interleaving(self):
        # same message sets, different interleavings, same pairs
        def run(order):
            pipe = self.wire(0.3)
            for name, t, v in order:
                pipe.emit(name, t, v)
            pipe.finalize(5.0)
            return collect(pipe, "need_fused")

        a = run([
            ("need_language", 0.9, "x"),
            ("need_mutual", 1.0, "p1"),
            ("need_language", 1.8, "y"),
            ("need_mutual", 2.0, "p2"),
        ])
        b = run([
            ("need_mutual", 1.0, "p1"),
            ("need_mutual", 2.0, "p2"),
            ("need_language", 0.9, "x"),
            ("need_language", 1.8, "y"),
        ])
        assert a == b == [(1.0, ("p1", "x")), (2.0, ("p2", "y"))]


class TestSampleHold:
    def test_initial_until_first_input(self):
        pipe = Pipeline()
        sample_hold(pipe, "need_language", "need_fused", 10.0, 0.0)
        pipe.emit("need_language", 0.95, 0.8)
        pipe.finalize(1.5)
        out = collect(pipe, "need_fused")
        for t, v in out:
            assert v == (0.0 if t < 1.0 else 0.8)
        assert [t for t, _ in out] == [round(k / 10, 3) for k in range(16)]

    def test_no_input_emits_initial_forever(self):
        pipe = Pipeline()
        sample_hold(pipe, "need_language", "need_fused", 10.0, 0.3)
        pipe.finalize(0.5)
        assert collect(pipe, "need_fused") == [
            (round(k / 10, 3), 0.3) for k in range(6)
        ]

    def test_latest_at_or_before_tick(self):
        pipe = Pipeline()
        sample_hold(pipe, "need_language", "need_fused", 10.0, 0.0)
        pipe.emit("need_language", 1.0, 0.2)
        pipe.emit("need_language", 1.05, 0.9)
        pipe.finalize(1.2)
        out = dict(collect(pipe, "need_fused"))
        assert out[1.0] == 0.2
        assert out[1.1] == 0.9

    @given(
        times_values=st.lists(
            st.tuples(
                st.integers(min_value=1, max_value=48),
                st.floats(0, 1, allow_nan=False),
            ),
            max_size=12,
        ),
        cut=st.integers(min_value=0, max_value=48),
    )
    @settings(max_examples=60, deadline=None)
    def test_causality_under_truncation(self, times_values, cut):
        # output at ticks <= T only depends on inputs at times <= T
        msgs = sorted({round(k / 10, 3): v for k, v in times_values}.items())
        t_cut = round(cut / 10, 3)

        def run(messages):
            pipe = Pipeline()
            sample_hold(pipe, "need_language", "need_fused", 10.0, 0.0)
            for t, v in messages:
                pipe.emit("need_language", t, v)
            pipe.finalize(5.0)
            return collect(pipe, "need_fused")

        full = [o for o in run(msgs) if o[0] <= t_cut]
        truncated = [
            o for o in run([m for m in msgs if m[0] <= t_cut]) if o[0] <= t_cut
        ]
        assert full == truncated


class TestSlidingWindow:
    def test_size_one_wraps_input(self):
        pipe = Pipeline()
        sliding_window(pipe, "need_mutual", "fusion_frame", 1)
        for k in range(4):
            pipe.emit("need_mutual", float(k + 1), k)
        assert collect(pipe, "fusion_frame") == [
            (float(k + 1), (k,)) for k in range(4)
        ]

    def test_w3_example(self):
        pipe = Pipeline()
        sliding_window(pipe, "need_mutual", "fusion_frame", 3)
        for k, p in enumerate("abcd"):
            pipe.emit("need_mutual", float(k + 1), p)
        assert collect(pipe, "fusion_frame") == [
            (3.0, ("a", "b", "c")),
            (4.0, ("b", "c", "d")),
        ]

    def test_100_ticks_w20_gives_81_windows_matching_offline_slices(self):
        pipe = Pipeline()
        sliding_window(pipe, "need_mutual", "fusion_frame", 20)
        for k in range(100):
            pipe.emit("need_mutual", round(k / 10, 3), k)
        out = collect(pipe, "fusion_frame")
        assert len(out) == 81
        for i, (t, window) in enumerate(out):
            assert t == round((i + 19) / 10, 3)
            assert window == tuple(range(i, i + 20))

    def test_no_output_during_warmup(self):
        pipe = Pipeline()
        sliding_window(pipe, "need_mutual", "fusion_frame", 5)
        for k in range(4):
            pipe.emit("need_mutual", float(k + 1), k)
        assert collect(pipe, "fusion_frame") == []

    def test_bad_size_rejected(self):
        with pytest.raises(WiringError):
            sliding_window(Pipeline(), "need_mutual", "fusion_frame", 0)

    @given(
        n=st.integers(min_value=0, max_value=60),
        w=st.integers(min_value=1, max_value=25),
    )
    @settings(max_examples=60, deadline=None)
    def test_output_count(self, n, w):
        pipe = Pipeline()
        sliding_window(pipe, "need_mutual", "fusion_frame", w)
        for k in range(n):
            pipe.emit("need_mutual", float(k + 1), k)
        assert len(collect(pipe, "fusion_frame")) == max(0, n - w + 1)


class TestReplay:
    def test_global_time_order_with_stream_tiebreak(self):
        pipe = Pipeline()
        delivered = []
        for name in ("gaze_raw", "utterance"):
            pipe.stream(name).subscribe(
                lambda m, name=name: delivered.append((name, m.originating_time))
            )
        messages = [
            ("utterance", TimestampedMessage(1.0, "hi")),
            ("gaze_raw", TimestampedMessage(0.5, "g1")),
            ("gaze_raw", TimestampedMessage(1.0, "g2")),
            ("utterance", TimestampedMessage(0.2, "yo")),
        ]
        replay(pipe, messages, 2.0)
        assert delivered == [
            ("utterance", 0.2),
            ("gaze_raw", 0.5),
            ("gaze_raw", 1.0),  # gaze_raw precedes utterance at equal times
            ("utterance", 1.0),
        ]

    def test_replay_reemits_stored_messages_exactly(self):
        messages = [
            ("need_mutual", TimestampedMessage(round(k / 7, 3), k / 10))
            for k in range(10)
        ]
        pipe = Pipeline()
        replay(pipe, list(messages), 3.0)
        assert pipe.stream("need_mutual").messages == [m for _, m in messages]

    @given(ticks=st.sets(st.integers(min_value=0, max_value=40), max_size=15))
    @settings(max_examples=50, deadline=None)
    def test_per_stream_delivery_equals_time_order(self, ticks):
        messages = []
        for k in sorted(ticks):
            name = "need_mutual" if k % 2 else "need_language"
            messages.append((name, TimestampedMessage(round(k / 10, 3), k)))
        pipe = Pipeline()
        seen = {"need_mutual": [], "need_language": []}
        for name in seen:
            pipe.stream(name).subscribe(
                lambda m, name=name: seen[name].append(m.originating_time)
            )
        replay(pipe, messages, 5.0)
        for name, times in seen.items():
            assert times == sorted(times)


class TestTickTimes:
    def test_endpoint_included(self):
        assert tick_times(1.0, 10.0) == [round(k / 10, 3) for k in range(11)]

    def test_count_formula(self):
        for duration in (0.05, 0.1, 1.0, 2.35, 9.9, 10.0):
            ticks = tick_times(duration, 10.0)
            assert len(ticks) == int(duration * 10) + 1

    def test_bad_cadence(self):
        with pytest.raises(WiringError):
            tick_times(1.0, 0.0)
