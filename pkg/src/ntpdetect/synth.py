"""Labelled synthetic telemetry: workload grammars emitting correlated spans and logs.

Every trace walks one workload's span chain; every span emits its bound log
lines inside its own time interval. Some workloads branch, and the branch
taken is announced by a cue log in the preceding span, so a model that sees
logs can predict the next span where a span-only model has to guess.

Anomalies are injected per trace:

* ``span_drop`` removes one span (and its logs)
* ``span_swap`` exchanges two neighbouring spans
* ``foreign_span_insert`` inserts a span never seen in normal operation
* ``log_burst_foreign`` adds a burst of unfamiliar error logs at a span start
* ``log_missing`` silences the logs of one span
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .ingest import ANOMALY, NORMAL, RawLogLine, RawSpan, RawTrace, write_logs, write_traces
from .miner import tokenize

SPAN_KINDS = ("span_drop", "span_swap", "foreign_span_insert")
LOG_KINDS = ("log_burst_foreign", "log_missing")
ANOMALY_KINDS = SPAN_KINDS + LOG_KINDS

_SLOT = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class LogEmission:
    template: str
    count: tuple = (1, 1)   # inclusive range, drawn uniformly


@dataclass(frozen=True)
class SpanStep:
    """One operation; an HTTP call when ``method`` is set, else an RPC named ``name``."""

    name: str
    method: Optional[str] = None
    path: Optional[str] = None
    scheme: str = "http"
    logs: tuple = ()
    duration_us: int = 2_000
    jitter_us: int = 400

    @property
    def is_http(self):
        return self.method is not None

    def descriptor(self) -> str:
        if self.is_http:
            return f"{self.method} {self.scheme}://{self.path}"
        return self.name


@dataclass(frozen=True)
class Choice:
    """Alternative steps; the previous span emits ``cues[k]`` when option k is taken."""

    options: tuple
    cues: tuple

    def __post_init__(self):
        if len(self.options) != len(self.cues) or len(self.options) < 2:
            raise ValueError("a Choice needs at least two options, one cue each")


@dataclass(frozen=True)
class WorkloadGrammar:
    name: str
    span_chain: tuple
    gap_us: int = 300

    def __post_init__(self):
        if len(self.span_chain) < 2:
            raise ValueError(f"workload {self.name!r}: chain needs at least two spans")
        if isinstance(self.span_chain[0], Choice):
            raise ValueError(f"workload {self.name!r}: chain cannot open with a Choice")

    def steps(self):
        """Every distinct SpanStep this grammar can emit."""
        for item in self.span_chain:
            yield from (item.options if isinstance(item, Choice) else (item,))

    def cue_templates(self):
        for item in self.span_chain:
            if isinstance(item, Choice):
                yield from item.cues


@dataclass(frozen=True)
class AnomalySpec:
    rate: float = 0.1
    kinds: tuple = ANOMALY_KINDS

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("anomaly rate must lie in [0, 1)")
        unknown = set(self.kinds) - set(ANOMALY_KINDS)
        if unknown:
            raise ValueError(f"unknown anomaly kinds {sorted(unknown)}")
        if self.rate > 0 and not self.kinds:
            raise ValueError("a positive rate needs at least one anomaly kind")


# --------------------------------------------------------------------------
# the default three workloads

def _logs(*templates):
    out = []
    for t in templates:
        out.append(t if isinstance(t, LogEmission) else LogEmission(t))
    return tuple(out)


AUTH = SpanStep("keystone_auth", "POST", "/keystone/v3/auth/tokens", logs=_logs(
    "keystone.token issued token {tok} for user {user}",
    "keystone.token validated scope project {proj}",
))

FOREIGN_SPANS = (
    SpanStep("retry_request(oslo,messaging)", logs=()),
    SpanStep("cinder_volume", "GET", "/cinder/v3/{proj}/volumes/{id}/detail", logs=()),
    SpanStep("evacuate_host(nova,conductor)", logs=()),
)

FOREIGN_LOGS = (
    "ERROR oslo.db lost connection to database host {host} retrying in {n} seconds",
    "ERROR rabbitmq heartbeat missed on channel {conn}",
    "ERROR timeout waiting on reply to message {id}",
    "CRITICAL disk quota exceeded on node {host}",
)


_OPENING = ("enter", "{op} started {req}")
_CLOSING = (("checkpoint", "{op} persisted after {n} ms"), ("exit", "{op} finished"))


def _with_chatter(step: SpanStep) -> SpanStep:
    """Wrap a step's logs in per-operation debug lines.

    Each line opens with a token unique to the operation, so every such
    template sits alone in the miner tree, and repeats the operation name
    so lines of different operations share few words. Real services are
    chatty, and a log vocabulary well above ``logs_top_k`` keeps the top-k
    rule selective.
    """
    op = re.sub(r"\W+", ".", step.name).strip(".")
    line = lambda tag, text: LogEmission(f"{op}.{tag} " + text.replace("{op}", op))
    return dataclasses.replace(step, logs=(line(*_OPENING),) + step.logs
                               + tuple(line(*c) for c in _CLOSING))


def _chatty(grammar: WorkloadGrammar) -> WorkloadGrammar:
    chain = []
    for item in grammar.span_chain:
        if isinstance(item, Choice):
            item = Choice(tuple(_with_chatter(o) for o in item.options), item.cues)
        else:
            item = _with_chatter(item)
        chain.append(item)
    return dataclasses.replace(grammar, span_chain=tuple(chain))


def default_grammars():
    """Image, server and network workloads sharing one authentication span."""
    image = WorkloadGrammar("create_image", (
        AUTH,
        SpanStep("glance_create", "POST", "/glance/v2/images", logs=_logs(
            "glance.api accepted image create request {req}",
            "glance.registry stored image record {id} status queued",
        )),
        SpanStep("glance_upload", "PUT", "/glance/v2/images/{id}/file", logs=_logs(
            "glance.api receiving image data stream {id}",
            LogEmission("glance.store wrote chunk {n} of image {id}", (1, 3)),
        )),
        SpanStep("upload_image_data(glance,store)", logs=_logs(
            "glance.store backend file persisted image {id} size {n}",
        )),
        SpanStep("verify_checksum(glance,store)", logs=_logs(
            "glance.store computed checksum {hash} for image {id}",
            "glance.registry image {id} transitioned to active",
        )),
        SpanStep("glance_get", "GET", "/glance/v2/images/{id}", logs=_logs(
            "glance.api image details served for {id}",
        )),
        SpanStep("glance_delete", "DELETE", "/glance/v2/images/{id}", logs=_logs(
            "glance.api image delete request {id} accepted",
            "glance.registry image record {id} marked deleted",
        )),
    ))
    server = WorkloadGrammar("create_server", (
        AUTH,
        SpanStep("nova_boot", "POST", "/nova/v2.1/{proj}/servers", logs=_logs(
            "nova.api boot request {req} for flavor {flavor}",
            "nova.conductor scheduling instance {id}",
        )),
        SpanStep("schedule_instance(nova,scheduler)", logs=_logs(
            "nova.scheduler filtered hosts down to {n} candidates",
            "nova.scheduler selected host {host} weight {w}",
        )),
        SpanStep("build_and_run_instance(nova,compute)", logs=_logs(
            "nova.compute claim successful on node {host}",
            "nova.compute spawning instance {id} on hypervisor",
        )),
        Choice(
            options=(
                SpanStep("allocate_network(nova,compute)", logs=_logs(
                    "nova.network allocated port {port} for instance {id}",
                )),
                SpanStep("attach_volume(nova,compute)", logs=_logs(
                    "nova.volume attached volume {vol} to instance {id}",
                )),
            ),
            cues=(
                "nova.compute instance {id} requests network setup",
                "nova.compute instance {id} requests block device mapping",
            ),
        ),
        SpanStep("nova_show", "GET", "/nova/v2.1/{proj}/servers/{id}", logs=_logs(
            "nova.api server {id} state active reported",
        )),
        SpanStep("nova_delete", "DELETE", "/nova/v2.1/{proj}/servers/{id}", logs=_logs(
            "nova.api terminate request for server {id}",
            "nova.compute instance {id} destroyed cleanly",
        )),
    ))
    network = WorkloadGrammar("create_network", (
        AUTH,
        SpanStep("neutron_net_create", "POST", "/neutron/v2.0/{proj}/networks", logs=_logs(
            "neutron.api create network request {req}",
            "neutron.db network {id} persisted for tenant {proj}",
        )),
        SpanStep("create_network(neutron,plugin)", logs=_logs(
            "neutron.plugin segment allocated vlan {n}",
        )),
        Choice(
            options=(
                SpanStep("neutron_subnet", "PUT", "/neutron/v2.0/subnets/{id}", logs=_logs(
                    "neutron.api subnet {id} allocated cidr {cidr}",
                )),
                SpanStep("update_dhcp_port(neutron,dhcp)", logs=_logs(
                    "neutron.dhcp port {port} reloaded for network {id}",
                )),
            ),
            cues=(
                "neutron.plugin subnet allocation requested for {id}",
                "neutron.plugin dhcp refresh scheduled on agent {host}",
            ),
        ),
        SpanStep("neutron_net_show", "GET", "/neutron/v2.0/networks/{id}", logs=_logs(
            "neutron.api network {id} status reported",
        )),
        SpanStep("neutron_net_delete", "DELETE", "/neutron/v2.0/networks/{id}", logs=_logs(
            "neutron.api delete network {id} accepted",
            "neutron.db network {id} removed",
        )),
    ))
    return tuple(_chatty(g) for g in (image, server, network))


# --------------------------------------------------------------------------
# oracle

def _masked(text):
    return tuple(tokenize(_SLOT.sub("<*>", text)))


def _span_template(step: SpanStep):
    return _masked(step.descriptor())


def oracle_templates(grammars, include_sentinels=True) -> dict:
    """Exact number of distinct span and log templates a normal corpus contains."""
    spans, logs = set(), set()
    for g in grammars:
        for step in g.steps():
            spans.add(_span_template(step))
            logs.update(_masked(e.template) for e in step.logs)
        logs.update(_masked(c) for c in g.cue_templates())
    n_span = len(spans) + (2 if include_sentinels else 0)
    return {"span": n_span, "log": len(logs)}


def workload_span_templates(grammars) -> dict:
    """Template token tuples unique to each workload (shared ones excluded)."""
    owners = {}
    for g in grammars:
        for step in g.steps():
            owners.setdefault(_span_template(step), set()).add(g.name)
    out = {g.name: set() for g in grammars}
    for tpl, names in owners.items():
        if len(names) == 1:
            out[next(iter(names))].add(tpl)
    return out


# --------------------------------------------------------------------------
# generation

class _Params:
    """Random slot values; always alphanumeric with a digit so they never equal a constant."""

    def __init__(self, rng):
        self.rng = rng

    def __call__(self, slot):
        return f"{slot}{int(self.rng.integers(10_000, 1_000_000))}"

    def fill(self, text, fixed):
        return _SLOT.sub(lambda m: fixed.setdefault(m.group(1), self(m.group(1))), text)


@dataclass
class _PlannedSpan:
    step: SpanStep
    logs: list                 # (template, extra kwargs) in emission order
    foreign: bool = False
    silent: bool = False
    burst: list = field(default_factory=list)


@dataclass
class SynthCorpus:
    logs: list
    traces: list
    truth: list

    def write(self, out_dir, fmt="jsonl"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_logs(self.logs, out_dir / f"logs.{fmt}", fmt)
        write_traces(self.traces, out_dir / f"traces.{fmt}", fmt)
        with open(out_dir / "truth.jsonl", "w") as fh:
            for row in self.truth:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        return out_dir


def _plan(grammar, rng):
    planned = []
    for item in grammar.span_chain:
        if isinstance(item, Choice):
            k = int(rng.integers(len(item.options)))
            # the cue closes the previous span's log stream
            planned[-1].logs.append(item.cues[k])
            step = item.options[k]
        else:
            step = item
        logs = []
        for emission in step.logs:
            lo, hi = emission.count
            logs.extend([emission.template] * int(rng.integers(lo, hi + 1)))
        planned.append(_PlannedSpan(step, logs))
    return planned


def _mutate(planned, kind, rng):
    n = len(planned)
    if kind == "span_drop":
        del planned[int(rng.integers(1, n))]
    elif kind == "span_swap":
        # swap two neighbours with different operations
        candidates = [i for i in range(1, n - 1) if planned[i].step != planned[i + 1].step]
        i = candidates[int(rng.integers(len(candidates)))]
        planned[i], planned[i + 1] = planned[i + 1], planned[i]
    elif kind == "foreign_span_insert":
        step = FOREIGN_SPANS[int(rng.integers(len(FOREIGN_SPANS)))]
        planned.insert(int(rng.integers(1, n + 1)), _PlannedSpan(step, [], foreign=True))
    elif kind == "log_burst_foreign":
        i = int(rng.integers(1, n))
        size = int(rng.integers(2, 5))
        planned[i].burst = [FOREIGN_LOGS[int(rng.integers(len(FOREIGN_LOGS)))] for _ in range(size)]
    elif kind == "log_missing":
        i = int(rng.integers(1, n))
        planned[i].silent = True
    else:
        raise ValueError(kind)
    return planned


def _render(trace_id, planned, t0, rng, params, label):
    spans, logs = [], []
    fixed = {}  # slot values shared across one trace (same image id, etc.)
    t = t0
    for k, ps in enumerate(planned):
        step = ps.step
        dur = step.duration_us + int(rng.integers(-step.jitter_us, step.jitter_us + 1))
        start, end = t, t + dur
        path = params.fill(step.path, fixed) if step.path else None
        spans.append(RawSpan(trace_id, f"{trace_id}-s{k:02d}", start, end, step.name,
                             http_path=path, http_scheme=step.scheme if step.is_http else None,
                             http_method=step.method, label=label))
        lines = list(ps.burst) + ([] if ps.silent else list(ps.logs))
        # strictly inside the span, evenly spread
        for j, template in enumerate(lines):
            ts = start + (j + 1) * dur // (len(lines) + 1)
            logs.append(RawLogLine(ts, params.fill(template, fixed), label, source_id=trace_id))
        t = end + int(rng.integers(50, 150))
    return spans, logs, t


def generate(grammars=None, n_traces=100, anomaly: AnomalySpec = AnomalySpec(0.0), seed=0,
             start_time=1_000_000) -> SynthCorpus:
    """Draw ``n_traces`` traces round-robin over the grammars, back to back in time."""
    if n_traces < 1:
        raise ValueError("n_traces must be positive")
    grammars = tuple(grammars or default_grammars())
    rng = np.random.default_rng(seed)
    params = _Params(rng)
    n_anom = int(round(anomaly.rate * n_traces))
    anomalous = set(rng.choice(n_traces, size=n_anom, replace=False).tolist()) if n_anom else set()
    kinds = {}
    for j, idx in enumerate(sorted(anomalous)):
        kinds[idx] = anomaly.kinds[j % len(anomaly.kinds)]
    traces, logs, truth = [], [], []
    t = start_time
    for idx in range(n_traces):
        grammar = grammars[idx % len(grammars)]
        trace_id = f"t{idx:06d}"
        planned = _plan(grammar, rng)
        kind = kinds.get(idx)
        if kind is not None:
            planned = _mutate(planned, kind, rng)
        label = ANOMALY if kind else NORMAL
        spans, trace_logs, t_end = _render(trace_id, planned, t, rng, params, label)
        traces.append(RawTrace(trace_id, tuple(spans), label))
        logs.extend(trace_logs)
        row = {"trace_id": trace_id, "label": label, "workload": grammar.name}
        if kind:
            row["kind"] = kind
        truth.append(row)
        t = t_end + grammar.gap_us + int(rng.integers(0, 200))
    logs.sort(key=lambda l: l.timestamp)
    return SynthCorpus(logs, traces, truth)
