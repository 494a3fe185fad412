import collections

import pytest

from ntpdetect.ingest import augment_trace, read_logs, read_traces
from ntpdetect.miner import LOG_MINER, SPAN, SPAN_MINER, TemplateMiner
from ntpdetect.synth import (AnomalySpec, Choice, SpanStep, WorkloadGrammar, default_grammars,
                             generate, oracle_templates, workload_span_templates, LogEmission)


def _mined_counts(corpus):
    logs, spans = TemplateMiner(LOG_MINER), TemplateMiner(SPAN_MINER, SPAN)
    for l in corpus.logs:
        logs.mine(l.message)
    for t in corpus.traces:
        for s in augment_trace(t).spans:
            spans.mine_span(s)
    return {"span": len(spans.templates), "log": len(logs.templates)}


def test_rate_zero_all_normal():
    c = generate(n_traces=12, seed=1)
    assert all(r["label"] == "normal" for r in c.truth)


def test_anomaly_count_and_kinds():
    c = generate(n_traces=200, anomaly=AnomalySpec(0.1), seed=2)
    anomalous = [r for r in c.truth if r["label"] == "anomaly"]
    assert abs(len(anomalous) - 20) <= 1
    assert all("kind" in r for r in anomalous)
    assert set(collections.Counter(r["kind"] for r in anomalous)) == {
        "span_drop", "span_swap", "foreign_span_insert", "log_burst_foreign", "log_missing"}


def test_span_drop_shortens_chain():
    steps = tuple(SpanStep(f"op{k}", logs=(LogEmission(f"op{k} ran"),)) for k in range(5))
    g = WorkloadGrammar("w", steps)
    c = generate([g], n_traces=1, anomaly=AnomalySpec(0.9, ("span_drop",)), seed=0)
    assert len(c.traces[0].spans) == 4 and c.truth[0]["label"] == "anomaly"


def test_logs_inside_spans():
    c = generate(n_traces=30, anomaly=AnomalySpec(0.2), seed=3)
    spans = {t.trace_id: t.spans for t in c.traces}
    for log in c.logs:
        assert any(s.start_time <= log.timestamp <= s.end_time for s in spans[log.source_id])


def test_oracle_counting():
    def step(name, n_logs=2):
        return SpanStep(name, logs=tuple(LogEmission(f"{name} line{k} said {{x}}") for k in range(n_logs)))
    gs = [WorkloadGrammar(f"g{w}", tuple(step(f"w{w}s{k}") for k in range(4))) for w in range(3)]
    assert oracle_templates(gs) == {"span": 14, "log": 24}
    shared = step("auth")
    gs2 = [WorkloadGrammar(f"g{w}", (shared,) + tuple(step(f"w{w}s{k}") for k in range(3)))
           for w in range(3)]
    assert oracle_templates(gs2)["span"] == 1 + 9 + 2
    uniq = workload_span_templates(gs2)
    assert all(len(v) == 3 for v in uniq.values())


@pytest.mark.parametrize("seed", [0, 1])
def test_miner_recovers_oracle(seed):
    c = generate(n_traces=60, seed=seed)
    assert _mined_counts(c) == oracle_templates(default_grammars())


def test_seeded_bytes(tmp_path):
    for sub in ("a", "b"):
        generate(n_traces=20, anomaly=AnomalySpec(0.2), seed=5).write(tmp_path / sub)
    for name in ("logs.jsonl", "traces.jsonl", "truth.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(read_traces(tmp_path / "a/traces.jsonl")) == 20
    assert len(read_logs(tmp_path / "a/logs.jsonl")) > 0


def test_grammar_validation():
    with pytest.raises(ValueError):
        WorkloadGrammar("w", (SpanStep("a"),))
    with pytest.raises(ValueError):
        Choice((SpanStep("a"),), ("cue",))
    with pytest.raises(ValueError):
        AnomalySpec(0.1, ("nope",))
    with pytest.raises(ValueError):
        generate(n_traces=0)
