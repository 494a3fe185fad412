import json

import pytest

from ntpdetect import ingest
from ntpdetect.ingest import (END, START, FormatError, RawLogLine, RawSpan, ValidationError,
                              augment_trace, read_logs, read_traces, write_logs, write_traces)


def _jsonl(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows))
    return path


def test_read_log_row(tmp_path):
    p = _jsonl(tmp_path / "l.jsonl", [{"ts": 100, "msg": "server started", "label": "normal"}])
    logs = read_logs(p)
    assert logs == [RawLogLine(100, "server started", "normal")]
    assert logs.malformed == 0


def test_empty_file(tmp_path):
    p = tmp_path / "l.jsonl"
    p.write_text("")
    assert read_logs(p) == []
    assert read_traces(p) == []


def test_missing_msg_counted(tmp_path):
    p = _jsonl(tmp_path / "l.jsonl", [{"ts": 1, "msg": "a"}, {"ts": 2}, {"ts": 3, "msg": "b"}])
    logs = read_logs(p)
    assert [l.message for l in logs] == ["a", "b"]
    assert logs.malformed == 1


def test_mostly_malformed_is_format_error(tmp_path):
    p = _jsonl(tmp_path / "l.jsonl", ["not json", "{", {"ts": 1, "msg": "ok"}])
    with pytest.raises(FormatError):
        read_logs(p)


def test_csv_logs(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("ts,msg,label,src\n5,hello world,anomaly,n1\n")
    assert read_logs(p, "csv") == [RawLogLine(5, "hello world", "anomaly", "n1")]


def _span(tid, sid, start, end, label=None, **kw):
    row = {"trace_id": tid, "span_id": sid, "start": start, "end": end, "name": "op"}
    if label:
        row["label"] = label
    row.update(kw)
    return row


def test_spans_sorted_within_trace(tmp_path):
    p = _jsonl(tmp_path / "t.jsonl", [_span("t1", "b", 5, 6), _span("t1", "a", 3, 4)])
    (trace,) = read_traces(p)
    assert [s.start_time for s in trace.spans] == [3, 5]


def test_grouping_and_label(tmp_path):
    rows = [_span("t1", "a", 0, 1), _span("t2", "b", 2, 3), _span("t2", "c", 3, 4, "anomaly"),
            _span("t2", "d", 4, 5)]
    traces = read_traces(_jsonl(tmp_path / "t.jsonl", rows))
    assert [t.trace_id for t in traces] == ["t1", "t2"]
    assert [t.label for t in traces] == ["normal", "anomaly"]


def test_reversed_span_names_span(tmp_path):
    p = _jsonl(tmp_path / "t.jsonl", [_span("t1", "bad-span", 10, 4)])
    with pytest.raises(ValidationError, match="bad-span"):
        read_traces(p)


def test_adapter_and_units(tmp_path):
    adapter_file = tmp_path / "a.txt"
    adapter_file.write_text("# foreign layout\ntime = ts\nbody = msg\n@unit = ms\n")
    p = _jsonl(tmp_path / "l.jsonl", [{"time": 2, "body": "x y"}])
    (line,) = read_logs(p, adapter=ingest.load_adapter(adapter_file))
    assert line.timestamp == 2000 and line.message == "x y"


def test_augment(trace_factory):
    t = trace_factory("t", [(0, 5), (5, 9), (9, 20)])
    aug = augment_trace(t)
    assert [s.name for s in aug.spans] == [START, "s0", "s1", "s2", END]
    assert aug.spans[0].start_time == aug.spans[0].end_time == 0
    assert aug.spans[-1].start_time == aug.spans[-1].end_time == 20
    # not idempotent
    assert len(augment_trace(aug)) == 7


def test_augment_single_span(trace_factory):
    aug = augment_trace(trace_factory("t", [(3, 8)]))
    assert [(s.start_time, s.end_time) for s in aug.spans] == [(3, 3), (3, 8), (8, 8)]


def test_round_trip(tmp_path, trace_factory):
    logs = [RawLogLine(1, "a b", "normal", "x"), RawLogLine(2, "c", None)]
    write_logs(logs, tmp_path / "l.jsonl")
    assert read_logs(tmp_path / "l.jsonl") == logs
    traces = [trace_factory("t1", [(0, 1), (1, 2)]), trace_factory("t2", [(5, 6)], label="anomaly")]
    write_traces(traces, tmp_path / "t.jsonl")
    assert read_traces(tmp_path / "t.jsonl") == traces
    write_traces(traces, tmp_path / "t.csv", "csv")
    assert read_traces(tmp_path / "t.csv", "csv") == traces


def test_http_fields_round_trip(tmp_path):
    span = RawSpan("t", "s", 0, 1, "glance", "/v2/images", "http", "GET")
    write_traces([ingest.RawTrace("t", (span,))], tmp_path / "t.jsonl")
    assert read_traces(tmp_path / "t.jsonl")[0].spans[0] == span
