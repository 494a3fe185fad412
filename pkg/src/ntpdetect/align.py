"""Training and test examples: span windows, their log blocks, and the temporal split.

A window holds ``window_size`` consecutive span templates of one (augmented)
trace and targets the span that follows. Its log block is every log whose
timestamp lies between the start of the first and the end of the last
input span, in time order, keeping the most recent ``max_block_logs``. Its
log target is the first log strictly after the window end; windows without
one are dropped.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ingest import ANOMALY, NORMAL

NOLOG = -1


@dataclass(frozen=True)
class TemplatedTrace:
    """An augmented trace reduced to span template ids and span times."""

    trace_id: str
    label: str
    template_ids: tuple
    starts: tuple
    ends: tuple

    def __post_init__(self):
        if not len(self.template_ids) == len(self.starts) == len(self.ends):
            raise ValueError(f"trace {self.trace_id}: ragged templated trace")

    def __len__(self):
        return len(self.template_ids)

    @property
    def start_time(self):
        return self.starts[0]

    @property
    def end_time(self):
        return max(self.ends)


class LogStream:
    """Time-sorted log template ids with their timestamps and labels."""

    def __init__(self, timestamps, template_ids, labels=None):
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.template_ids = np.asarray(template_ids, dtype=np.int64)
        if labels is None:
            labels = [None] * len(self.timestamps)
        self.labels = list(labels)
        if not len(self.timestamps) == len(self.template_ids) == len(self.labels):
            raise ValueError("ragged log stream")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("log stream must be sorted by timestamp")

    def __len__(self):
        return len(self.timestamps)

    def subset(self, keep):
        keep = np.asarray(keep, dtype=bool)
        return LogStream(self.timestamps[keep], self.template_ids[keep],
                         [l for l, k in zip(self.labels, keep) if k])


@dataclass(frozen=True)
class AlignedWindow:
    trace_id: str
    span_inputs: tuple
    log_block: tuple
    span_target: int
    log_target: int
    window_start: int
    window_end: int
    log_target_index: int = -1   # position of the target log in its stream

    def __post_init__(self):
        if self.window_end < self.window_start:
            raise ValueError("window ends before it starts")
        if self.log_target == NOLOG:
            raise ValueError("a window needs a log target")

    def to_json(self) -> dict:
        row = asdict(self)
        row["span_inputs"] = list(self.span_inputs)
        row["log_block"] = list(self.log_block)
        return row

    @classmethod
    def from_json(cls, row) -> "AlignedWindow":
        row = dict(row)
        row["span_inputs"] = tuple(row["span_inputs"])
        row["log_block"] = tuple(row["log_block"])
        return cls(**row)


def make_windows(trace: TemplatedTrace, logs: LogStream, window_size: int = 3,
                 max_block_logs: int = 32):
    """Windows for one trace; returns ``(windows, dropped)``."""
    if window_size < 1 or max_block_logs < 1:
        raise ValueError("window_size and max_block_logs must be positive")
    windows, dropped = [], 0
    ts = logs.timestamps
    for i in range(len(trace) - window_size):
        start = trace.starts[i]
        end = trace.ends[i + window_size - 1]
        lo = np.searchsorted(ts, start, side="left")
        hi = np.searchsorted(ts, end, side="right")
        if hi >= len(ts):
            dropped += 1
            continue
        block = logs.template_ids[max(lo, hi - max_block_logs):hi].tolist()
        block += [NOLOG] * (max_block_logs - len(block))
        windows.append(AlignedWindow(
            trace_id=trace.trace_id,
            span_inputs=tuple(trace.template_ids[i:i + window_size]),
            log_block=tuple(block),
            span_target=trace.template_ids[i + window_size],
            log_target=int(logs.template_ids[hi]),
            window_start=int(start),
            window_end=int(end),
            log_target_index=int(hi),
        ))
    return windows, dropped


def make_single_log_sequences(template_ids, history: int = 10):
    """Sliding ``(inputs, target)`` pairs over a log template stream."""
    ids = [int(i) for i in template_ids]
    return [(tuple(ids[k:k + history]), ids[k + history]) for k in range(len(ids) - history)]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    split_time: int = None  # set by temporal_split

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


@dataclass
class Split:
    split_time: int
    train_traces: list
    train_logs: object
    test_traces: list
    test_logs: object
    discarded: list = field(default_factory=list)


def _within(times, intervals):
    """Boolean mask of ``times`` falling inside any closed interval."""
    times = np.asarray(times, dtype=np.int64)
    if not intervals:
        return np.zeros(len(times), dtype=bool)
    intervals = sorted(intervals)
    merged = [list(intervals[0])]
    for a, b in intervals[1:]:
        if a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    starts = np.array([a for a, _ in merged], dtype=np.int64)
    ends = np.array([b for _, b in merged], dtype=np.int64)
    k = np.searchsorted(starts, times, side="right") - 1
    ok = k >= 0
    ok[ok] = times[ok] <= ends[k[ok]]
    return ok


def _subset_logs(logs, keep):
    if isinstance(logs, LogStream):
        return logs.subset(keep)
    return [l for l, k in zip(logs, keep) if k]


def _log_times(logs):
    if isinstance(logs, LogStream):
        return logs.timestamps
    return np.array([l.timestamp for l in logs], dtype=np.int64)


def temporal_split(traces, logs, spec: SplitSpec = SplitSpec()) -> Split:
    """Cut the timeline where ``train_fraction`` of the normal traces have started.

    Training keeps only the normal traces before the cut and the logs inside
    their time intervals; anomalous traces before the cut are discarded.
    Everything starting at or after the cut is test data.
    """
    traces = sorted(traces, key=lambda t: (t.start_time, t.trace_id))
    normal_starts = [t.start_time for t in traces if t.label == NORMAL]
    if len(normal_starts) < 10:
        raise ValueError(f"need at least 10 normal traces to split, got {len(normal_starts)}")
    # round away float noise such as 0.7 * 10 = 7.000000000000001
    k = math.ceil(round(spec.train_fraction * len(normal_starts), 9))
    split_time = normal_starts[k - 1] + 1
    before = [t for t in traces if t.start_time < split_time]
    train = [t for t in before if t.label == NORMAL]
    discarded = [t for t in before if t.label == ANOMALY]
    test = [t for t in traces if t.start_time >= split_time]
    times = _log_times(logs)
    train_logs = _subset_logs(logs, _within(times, [(t.start_time, t.end_time) for t in train]))
    test_logs = _subset_logs(logs, times >= split_time)
    return Split(split_time, train, train_logs, test, test_logs, discarded)


# --------------------------------------------------------------------------
# dumps

def write_windows(windows, path):
    with open(path, "w") as fh:
        for w in windows:
            fh.write(json.dumps(w.to_json()) + "\n")


def read_windows(path) -> list:
    return [AlignedWindow.from_json(json.loads(line))
            for line in Path(path).read_text().splitlines() if line.strip()]


def windows_to_arrays(windows) -> dict:
    """Stack windows into the array dict the joint trainer consumes."""
    if not windows:
        return {"span_inputs": np.zeros((0, 0), np.int64), "log_block": np.zeros((0, 0), np.int64),
                "span_target": np.zeros(0, np.int64), "log_target": np.zeros(0, np.int64)}
    return {
        "span_inputs": np.array([w.span_inputs for w in windows], dtype=np.int64),
        "log_block": np.array([w.log_block for w in windows], dtype=np.int64),
        "span_target": np.array([w.span_target for w in windows], dtype=np.int64),
        "log_target": np.array([w.log_target for w in windows], dtype=np.int64),
    }
