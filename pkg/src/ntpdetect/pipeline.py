"""Stage functions shared by the command line and the test-suite.

Each stage takes in-memory records and returns in-memory results; the CLI
is responsible for reading and writing files around them.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .align import LogStream, TemplatedTrace, make_single_log_sequences, make_windows
from .detect import AnomalyVerdict, hits_top_k
from .ingest import ANOMALY, NORMAL, augment_trace, sort_logs
from .miner import LOG, SPAN, UNKNOWN, TemplateMiner
from .models import JointModel, ModelConfig, SingleModel
from .vocab import build_dictionary, template_matrix

logger = logging.getLogger(__name__)


@dataclass
class Templated:
    log_miner: TemplateMiner
    span_miner: TemplateMiner
    logs: LogStream
    traces: list   # TemplatedTrace, sorted by start time


def template_corpus(logs, traces, log_miner: TemplateMiner, span_miner: TemplateMiner,
                    mine=True) -> Templated:
    """Map raw logs and (augmented) traces to template ids.

    With ``mine`` false both miners are used read-only and unseen messages
    become UNKNOWN.
    """
    logs = sort_logs(logs)
    log_fn = log_miner.mine if mine else log_miner.match_only
    span_fn = span_miner.mine_span if mine else span_miner.match_span
    log_ids = [log_fn(l.message) for l in logs]
    labels = [l.label for l in logs]
    stream = LogStream([l.timestamp for l in logs], log_ids, labels)
    out = []
    for trace in sorted(traces, key=lambda t: (t.start_time, t.trace_id)):
        aug = augment_trace(trace)
        out.append(TemplatedTrace(
            trace.trace_id, trace.label,
            tuple(span_fn(s) for s in aug.spans),
            tuple(s.start_time for s in aug.spans),
            tuple(s.end_time for s in aug.spans),
        ))
    return Templated(log_miner, span_miner, stream, out)


def vocabulary(miner: TemplateMiner, max_len: int):
    """Word dictionary and template-word matrix for one modality."""
    dictionary = build_dictionary(miner.templates, miner.modality)
    matrix, truncated = template_matrix(miner.templates, dictionary, max_len)
    if truncated:
        logger.warning("%d %s templates truncated to %d words", truncated, miner.modality, max_len)
    return dictionary, matrix


@dataclass
class WindowSet:
    windows: list
    dropped: int
    per_trace: "OrderedDict[str, list]" = field(default_factory=OrderedDict)
    labels: dict = field(default_factory=dict)


def build_windows(traces, logs: LogStream, window_size=3, max_block_logs=32) -> WindowSet:
    """Windows for every trace, in trace order, plus the number dropped."""
    ws = WindowSet([], 0)
    for trace in traces:
        windows, dropped = make_windows(trace, logs, window_size, max_block_logs)
        ws.windows.extend(windows)
        ws.dropped += dropped
        ws.per_trace[trace.trace_id] = windows
        ws.labels[trace.trace_id] = trace.label
    return ws


def log_sequences(logs: LogStream, history=10):
    pairs = make_single_log_sequences(logs.template_ids, history)
    if not pairs:
        return {"inputs": np.zeros((0, history), np.int64), "targets": np.zeros(0, np.int64)}
    return {"inputs": np.array([p[0] for p in pairs], dtype=np.int64),
            "targets": np.array([p[1] for p in pairs], dtype=np.int64)}


def make_model(kind, span_vocab=None, log_vocab=None, config=ModelConfig(), seed=0):
    """``kind`` is one of joint, trace or log; vocabs are (dictionary, matrix)."""
    def parts(v):
        dictionary, matrix = v
        return len(dictionary), matrix, dictionary.pad_index
    if kind == "joint":
        return JointModel(parts(span_vocab), parts(log_vocab), config, seed)
    if kind == "trace":
        return SingleModel(*parts(span_vocab), config, seed, SPAN)
    if kind == "log":
        return SingleModel(*parts(log_vocab), config, seed, LOG)
    raise ValueError(f"unknown model kind {kind!r}")


def training_arrays(kind, windows_arrays=None, log_arrays=None):
    if kind == "joint":
        return dict(windows_arrays)
    if kind == "trace":
        return {"inputs": windows_arrays["span_inputs"], "targets": windows_arrays["span_target"]}
    if kind == "log":
        return dict(log_arrays)
    raise ValueError(f"unknown model kind {kind!r}")


def _window_matrix(windows):
    return (np.array([w.span_inputs for w in windows], dtype=np.int64),
            np.array([w.log_block for w in windows], dtype=np.int64),
            np.array([w.span_target for w in windows], dtype=np.int64),
            np.array([w.log_target for w in windows], dtype=np.int64))


def window_hits(model, windows, trace_top_k=1, logs_top_k=20):
    """Per-window ``(span_hit, log_hit)``; ``log_hit`` is None for a trace-only model.

    UNKNOWN targets (templates never seen while mining) are always misses.
    """
    span_inputs, log_block, span_target, log_target = _window_matrix(windows)
    if model.kind == "joint":
        span_p, log_p = model.predict_proba(span_inputs, log_block)
        return (hits_top_k(span_p, span_target, trace_top_k, UNKNOWN),
                hits_top_k(log_p, log_target, logs_top_k, UNKNOWN))
    if model.modality != SPAN:
        raise ValueError("trace scoring needs a joint or span model")
    return hits_top_k(model.predict_proba(span_inputs), span_target, trace_top_k, UNKNOWN), None


def score_traces(model, window_set: WindowSet, trace_top_k=1, logs_top_k=20, threshold=None):
    """One verdict per scoreable trace.

    A window counts as an error when its next span misses the top
    ``trace_top_k``, or, for the joint model, when its next log misses the
    top ``logs_top_k``. Traces without windows are skipped and counted.
    """
    ids = [tid for tid, ws in window_set.per_trace.items() if ws]
    skipped = len(window_set.per_trace) - len(ids)
    flat = [w for tid in ids for w in window_set.per_trace[tid]]
    verdicts = []
    if not flat:
        return verdicts, skipped
    span_hit, log_hit = window_hits(model, flat, trace_top_k, logs_top_k)
    ok = span_hit if log_hit is None else span_hit & log_hit
    pos = 0
    for tid in ids:
        n = len(window_set.per_trace[tid])
        err = int(n - ok[pos:pos + n].sum())
        flags = [] if log_hit is None else [NORMAL if h else ANOMALY for h in log_hit[pos:pos + n]]
        rate = err / n
        pred = "" if threshold is None else (ANOMALY if rate > threshold else NORMAL)
        verdicts.append(AnomalyVerdict(tid, rate, pred, flags, n, err))
        pos += n
    return verdicts, skipped


def score_logs(model, logs: LogStream, history=10, logs_top_k=20):
    """Per-log flags for a single-modality log model; the first ``history`` logs are unscored."""
    data = log_sequences(logs, history)
    if len(data["targets"]) == 0:
        return np.zeros(0, dtype=bool)
    hits = hits_top_k(model.predict_proba(data["inputs"]), data["targets"], logs_top_k, UNKNOWN)
    return ~hits
