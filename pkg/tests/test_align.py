import pytest

from conftest import make_trace
from ntpdetect.align import (NOLOG, AlignedWindow, LogStream, SplitSpec, TemplatedTrace,
                             make_single_log_sequences, make_windows, read_windows,
                             temporal_split, write_windows)


def _trace(ids, times):
    return TemplatedTrace("t", "normal", tuple(ids), tuple(a for a, _ in times),
                          tuple(b for _, b in times))


def test_sliding_windows():
    tr = _trace([0, 1, 2, 3, 4], [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)])
    logs = LogStream([100], [7])
    ws, dropped = make_windows(tr, logs, 3)
    assert [(w.span_inputs, w.span_target) for w in ws] == [((0, 1, 2), 3), ((1, 2, 3), 4)]
    assert dropped == 0


def test_block_and_target():
    tr = _trace([0, 1, 2, 3], [(10, 20), (20, 30), (30, 40), (41, 45)])
    logs = LogStream([12, 35, 50], [5, 6, 7])
    (w,), dropped = make_windows(tr, logs, 3, max_block_logs=4)
    assert w.log_block == (5, 6, NOLOG, NOLOG)
    assert w.log_target == 7 and (w.window_start, w.window_end) == (10, 40)


def test_boundary_log_goes_to_block_not_target():
    tr = _trace([0, 1, 2], [(10, 20), (20, 40), (45, 50)])
    logs = LogStream([40, 41], [1, 2])
    (w,), _ = make_windows(tr, logs, 2)
    assert w.log_block[0] == 1 and w.log_target == 2


def test_missing_target_dropped():
    tr = _trace([0, 1, 2, 3], [(10, 20), (20, 30), (30, 40), (41, 45)])
    ws, dropped = make_windows(tr, LogStream([12, 35], [5, 6]), 3)
    assert ws == [] and dropped == 1


def test_block_keeps_most_recent():
    tr = _trace([0, 1], [(0, 100), (100, 200)])
    logs = LogStream([1, 2, 3, 4, 300], [1, 2, 3, 4, 9])
    (w,), _ = make_windows(tr, logs, 1, max_block_logs=2)
    assert w.log_block == (3, 4)


def test_short_trace_no_windows():
    tr = _trace([0, 1, 2], [(0, 1), (1, 2), (2, 3)])
    assert make_windows(tr, LogStream([9], [1]), 3) == ([], 0)


def test_window_invariants():
    with pytest.raises(ValueError):
        AlignedWindow("t", (0,), (NOLOG,), 1, NOLOG, 0, 1)
    with pytest.raises(ValueError):
        AlignedWindow("t", (0,), (NOLOG,), 1, 2, 5, 1)


def test_single_log_sequences():
    assert make_single_log_sequences([1, 2, 3, 4], 2) == [((1, 2), 3), ((2, 3), 4)]
    assert make_single_log_sequences([1, 2], 2) == []
    assert all(t == 7 for _, t in make_single_log_sequences([7, 7, 7, 7], 2))


def test_window_dump_round_trip(tmp_path):
    w = AlignedWindow("t", (0, 1), (3, NOLOG), 2, 4, 0, 9, 5)
    write_windows([w, w], tmp_path / "w.jsonl")
    assert read_windows(tmp_path / "w.jsonl") == [w, w]


def _traces(labels):
    return [make_trace(f"t{k}", [(100 * k, 100 * k + 50)], label=l) for k, l in enumerate(labels)]


def test_split_counts():
    split = temporal_split(_traces(["normal"] * 10), [])
    assert len(split.train_traces) == 7 and len(split.test_traces) == 3
    assert split.split_time == 601


def test_split_discards_early_anomalies():
    labels = ["normal"] * 3 + ["anomaly"] + ["normal"] * 7 + ["anomaly"]
    split = temporal_split(_traces(labels), [], SplitSpec(0.7))
    ids = lambda ts: {t.trace_id for t in ts}
    assert "t3" not in ids(split.train_traces) | ids(split.test_traces)
    assert [t.trace_id for t in split.discarded] == ["t3"]
    assert "t11" in ids(split.test_traces)
    assert all(t.label == "normal" for t in split.train_traces)


def test_split_logs():
    traces = _traces(["normal"] * 10)
    logs = LogStream([10, 75, 120, 680, 720], [1, 2, 3, 4, 5])
    split = temporal_split(traces, logs)
    assert split.train_logs.timestamps.tolist() == [10, 120]   # 75 lies in a gap
    assert split.test_logs.timestamps.tolist() == [680, 720]


def test_split_needs_ten_normals():
    with pytest.raises(ValueError):
        temporal_split(_traces(["normal"] * 9), [])
    with pytest.raises(ValueError):
        SplitSpec(1.0)


def test_log_stream_sorted():
    with pytest.raises(ValueError):
        LogStream([2, 1], [0, 0])
