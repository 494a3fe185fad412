"""Reading raw logs and trace spans into canonical records.

Two line-oriented layouts are understood, JSONL and CSV with a header row.
Field names follow the canonical schema::

    logs:   ts, msg, label?, src?
    spans:  trace_id, span_id, start, end, name,
            http_path?, http_scheme?, http_method?, label?

Datasets with other column names are read through an adapter, a small
``key = value`` file mapping external column names onto canonical ones.
Timestamps are normalised to integer microseconds on the way in.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional

logger = logging.getLogger(__name__)

NORMAL = "normal"
ANOMALY = "anomaly"
LABELS = (NORMAL, ANOMALY)

START = "<START>"
END = "<END>"

LOG_FIELDS = ("ts", "msg", "label", "src")
SPAN_FIELDS = ("trace_id", "span_id", "start", "end", "name",
               "http_path", "http_scheme", "http_method", "label")

_UNIT_SCALE = {"us": 1, "ms": 1_000, "s": 1_000_000, "ns": 0.001}


class FormatError(ValueError):
    """Input does not look like the selected format at all."""


class ValidationError(ValueError):
    """A record is well formed but violates a record invariant."""


@dataclass(frozen=True)
class RawLogLine:
    timestamp: int
    message: str
    label: Optional[str] = None
    source_id: str = ""

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValidationError(f"negative timestamp {self.timestamp}")
        if not self.message.strip():
            raise ValidationError("empty log message")
        if self.label is not None and self.label not in LABELS:
            raise ValidationError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class RawSpan:
    trace_id: str
    span_id: str
    start_time: int
    end_time: int
    name: str
    http_path: Optional[str] = None
    http_scheme: Optional[str] = None
    http_method: Optional[str] = None
    label: Optional[str] = None

    def __post_init__(self):
        if not self.trace_id:
            raise ValidationError(f"span {self.span_id!r} has an empty trace_id")
        if self.end_time < self.start_time:
            raise ValidationError(
                f"span {self.span_id!r} ends before it starts "
                f"({self.end_time} < {self.start_time})")
        if self.label is not None and self.label not in LABELS:
            raise ValidationError(f"span {self.span_id!r}: unknown label {self.label!r}")


@dataclass(frozen=True)
class RawTrace:
    trace_id: str
    spans: tuple
    label: str = NORMAL

    def __post_init__(self):
        if not self.spans:
            raise ValidationError(f"trace {self.trace_id!r} has no spans")
        starts = [s.start_time for s in self.spans]
        if any(b < a for a, b in zip(starts, starts[1:])):
            raise ValidationError(f"trace {self.trace_id!r}: spans not sorted by start_time")
        if any(s.trace_id != self.trace_id for s in self.spans):
            raise ValidationError(f"trace {self.trace_id!r} holds spans of another trace")

    @property
    def start_time(self) -> int:
        return self.spans[0].start_time

    @property
    def end_time(self) -> int:
        return max(s.end_time for s in self.spans)

    def __len__(self):
        return len(self.spans)


class Records(list):
    """A list of parsed records that also remembers how many rows were rejected."""

    def __init__(self, items=(), malformed=0):
        super().__init__(items)
        self.malformed = malformed


# --------------------------------------------------------------------------
# adapters

@dataclass
class Adapter:
    """Column renames plus timestamp unit for a foreign dataset layout.

    ``columns`` maps an external column name to a canonical field name. The
    special key ``@unit`` (one of us, ms, s, ns) scales numeric timestamps.
    Which external column anchors the log timestamp (e.g. send vs. receive
    time) is simply whichever one is mapped onto ``ts``.
    """

    columns: dict = field(default_factory=dict)
    unit: str = "us"

    def apply(self, row: Mapping) -> dict:
        if not self.columns:
            return dict(row)
        out = {}
        for key, value in row.items():
            out[self.columns.get(key, key)] = value
        return out


def load_adapter(path) -> Adapter:
    columns, unit = {}, "us"
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'external = field'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "@unit":
            if value not in _UNIT_SCALE:
                raise FormatError(f"{path}:{lineno}: unknown unit {value!r}")
            unit = value
        else:
            columns[key] = value
    return Adapter(columns, unit)


# --------------------------------------------------------------------------
# row parsing

def _timestamp(value, unit="us") -> int:
    if isinstance(value, bool) or value is None or value == "":
        raise ValueError("missing timestamp")
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
            return int(round(dt.timestamp() * 1_000_000))
    if not math.isfinite(value):
        raise ValueError("non-finite timestamp")
    return int(round(value * _UNIT_SCALE[unit]))


def _opt(row, key):
    value = row.get(key)
    if value is None or value == "":
        return None
    return str(value)


def _iter_rows(path: Path, fmt: str) -> Iterator[Optional[dict]]:
    """Yield one dict per non-blank row; None for rows that cannot be decoded."""
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "jsonl":
            for line in fh:
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError:
                    yield None
                    continue
                yield row if isinstance(row, dict) else None
        elif fmt == "csv":
            for row in csv.DictReader(fh):
                if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
                    continue
                yield row
        else:
            raise ValueError(f"unsupported format {fmt!r}")


def _read(path, fmt, adapter, parse) -> Records:
    path = Path(path)
    adapter = adapter or Adapter()
    good, bad = [], 0
    for row in _iter_rows(path, fmt):
        if row is None:
            bad += 1
            continue
        try:
            good.append(parse(adapter.apply(row), adapter.unit))
        except ValidationError:
            raise
        except (KeyError, ValueError, TypeError):
            bad += 1
    total = len(good) + bad
    if bad:
        logger.warning("%s: %d of %d rows malformed and skipped", path, bad, total)
    if total and bad * 2 > total:
        raise FormatError(f"{path}: {bad} of {total} rows malformed; wrong format selected?")
    return Records(good, malformed=bad)


def _parse_log(row, unit) -> RawLogLine:
    msg = row["msg"]
    if not isinstance(msg, str) or not msg.strip():
        raise ValueError("empty msg")
    try:
        return RawLogLine(_timestamp(row["ts"], unit), msg, _opt(row, "label"),
                          _opt(row, "src") or "")
    except ValidationError as exc:
        raise ValueError(str(exc)) from None


def _parse_span(row, unit) -> RawSpan:
    for key in ("trace_id", "span_id", "name"):
        if not _opt(row, key):
            raise KeyError(key)
    if _opt(row, "label") not in (None,) + LABELS:
        raise ValueError("unknown label")
    return RawSpan(
        trace_id=str(row["trace_id"]),
        span_id=str(row["span_id"]),
        start_time=_timestamp(row["start"], unit),
        end_time=_timestamp(row["end"], unit),
        name=str(row["name"]),
        http_path=_opt(row, "http_path"),
        http_scheme=_opt(row, "http_scheme"),
        http_method=_opt(row, "http_method"),
        label=_opt(row, "label"),
    )


def read_logs(path, fmt: str = "jsonl", adapter: Adapter = None) -> Records:
    """Read log lines in file order.

    Rows that fail schema validation are skipped and counted in the
    ``malformed`` attribute of the result. When more than half of the
    rows are malformed, :class:`FormatError` is raised instead.
    """
    return _read(path, fmt, adapter, _parse_log)


def group_spans(spans: Iterable[RawSpan]) -> list:
    """Group spans into traces ordered by first start time, then trace id."""
    by_id = {}
    for span in spans:
        by_id.setdefault(span.trace_id, []).append(span)
    traces = []
    for trace_id, members in by_id.items():
        members.sort(key=lambda s: (s.start_time, s.end_time, s.span_id))
        label = ANOMALY if any(s.label == ANOMALY for s in members) else NORMAL
        traces.append(RawTrace(trace_id, tuple(members), label))
    traces.sort(key=lambda t: (t.start_time, t.trace_id))
    return traces


def read_traces(path, fmt: str = "jsonl", adapter: Adapter = None) -> Records:
    """Read spans and group them into traces sorted by start time.

    A trace is labelled anomalous when any of its spans is. A span whose end
    precedes its start raises :class:`ValidationError` naming the span.
    """
    spans = _read(path, fmt, adapter, _parse_span)
    return Records(group_spans(spans), malformed=spans.malformed)


def augment_trace(trace: RawTrace) -> RawTrace:
    """Wrap a trace in zero-length ``<START>`` and ``<END>`` spans.

    Not idempotent: every call adds two more spans.
    """
    first, last = trace.spans[0], trace.spans[-1]
    head = RawSpan(trace.trace_id, f"{trace.trace_id}:start",
                   first.start_time, first.start_time, START)
    tail = RawSpan(trace.trace_id, f"{trace.trace_id}:end",
                   last.end_time, last.end_time, END)
    return replace(trace, spans=(head,) + tuple(trace.spans) + (tail,))


# --------------------------------------------------------------------------
# writing

def log_to_row(line: RawLogLine) -> dict:
    row = {"ts": line.timestamp, "msg": line.message}
    if line.label is not None:
        row["label"] = line.label
    if line.source_id:
        row["src"] = line.source_id
    return row


def span_to_row(span: RawSpan) -> dict:
    row = {"trace_id": span.trace_id, "span_id": span.span_id,
           "start": span.start_time, "end": span.end_time, "name": span.name}
    for key in ("http_path", "http_scheme", "http_method", "label"):
        value = getattr(span, key)
        if value is not None:
            row[key] = value
    return row


def _write(rows, path, fmt, fields):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fmt == "jsonl":
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        elif fmt == "csv":
            writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        else:
            raise ValueError(f"unsupported format {fmt!r}")


def write_logs(lines: Iterable[RawLogLine], path, fmt: str = "jsonl"):
    _write((log_to_row(l) for l in lines), path, fmt, LOG_FIELDS)


def write_traces(traces: Iterable[RawTrace], path, fmt: str = "jsonl"):
    rows = (span_to_row(s) for t in traces for s in t.spans)
    _write(rows, path, fmt, SPAN_FIELDS)


def sort_logs(lines: Iterable[RawLogLine]) -> list:
    # stable: equal timestamps keep file order
    return sorted(lines, key=lambda l: l.timestamp)
