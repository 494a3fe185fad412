"""Command line entry point: ``ntpdetect <command> [options]``.

Commands talk to each other only through files. Every output directory
gets ``config.json`` (the effective configuration) and ``manifest.json``
(content hashes of inputs and outputs).

Exit codes: 0 ok, 1 usage error, 2 data error, 3 quality gate failed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import align, detect, embed, ingest, models, pipeline, synth
from .detect import DetectionConfig, default_grid
from .miner import LOG, SPAN, MinerConfig, TemplateMiner, load_templates
from .vocab import WordDictionary, build_dictionary, template_matrix

logger = logging.getLogger("ntpdetect")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATE = 0, 1, 2, 3


@dataclass
class RunConfig:
    # template mining
    log_similarity: float = 0.5
    log_depth: int = 4
    span_similarity: float = 0.4
    span_depth: int = 4
    max_children: int = 100
    max_log_size: int = 32
    max_span_size: int = 16
    # dataset
    window_size: int = 3
    max_block_logs: int = 32
    log_history: int = 10
    train_fraction: float = 0.7
    # model
    embedding_dim: int = 256
    embedding_std: float = 1.0
    hidden_dim: int = 256
    layers: int = 2
    fusion_dim: int = 256
    forget_bias: float = 1.0
    # optimisation
    learning_rate: float = 0.001
    momentum: float = 0.9
    batch_size: int = 256
    epochs: int = 100
    checkpoint_every: int = 0
    seed: int = 0
    # detection
    logs_top_k: int = 20
    trace_top_k: int = 1
    threshold_grid: list = field(default_factory=lambda: list(default_grid()))

    def miner(self, modality) -> MinerConfig:
        if modality == LOG:
            return MinerConfig(self.log_similarity, self.log_depth, self.max_children)
        return MinerConfig(self.span_similarity, self.span_depth, self.max_children)

    def model(self) -> models.ModelConfig:
        return models.ModelConfig(self.embedding_dim, self.hidden_dim, self.layers,
                                  self.fusion_dim, self.forget_bias,
                                  embedding_std=self.embedding_std)

    def detection(self) -> DetectionConfig:
        return DetectionConfig(self.logs_top_k, self.trace_top_k, tuple(self.threshold_grid))

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# file helpers

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(out_dir: Path, command, config: RunConfig, inputs=(), stats=None):
    """Config and content hashes of inputs and every file in ``out_dir``.

    Paths are recorded by name only so that reruns elsewhere produce the
    same manifest.
    """
    _dump_json(asdict(config), out_dir / "config.json")
    outputs = {p.name: sha256(p) for p in sorted(out_dir.iterdir())
               if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "command": command,
        "config": asdict(config),
        "inputs": {Path(p).name: sha256(p) for p in inputs},
        "outputs": outputs,
        "stats": stats or {},
    }
    _dump_json(manifest, out_dir / "manifest.json")
    return manifest


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_corpus(args):
    adapter = ingest.load_adapter(args.adapter) if getattr(args, "adapter", None) else None
    logs = ingest.read_logs(args.logs, args.format, adapter)
    traces = ingest.read_traces(args.traces, args.format, adapter)
    if not traces:
        raise ValueError(f"{args.traces}: no traces")
    if not logs:
        raise ValueError(f"{args.logs}: no log lines")
    for name, recs in (("logs", logs), ("spans", traces)):
        if recs.malformed:
            logger.warning("skipped %d malformed %s rows", recs.malformed, name)
    return logs, traces


TEMPLATE_FILES = {LOG: "log_templates.jsonl", SPAN: "span_templates.jsonl"}
VOCAB_FILES = {LOG: "log_vocab.jsonl", SPAN: "span_vocab.jsonl"}


def _load_miners(src: Path, cfg: RunConfig):
    return {m: TemplateMiner.load(src / TEMPLATE_FILES[m], cfg.miner(m), m) for m in (LOG, SPAN)}


def _vocabs(src: Path, cfg: RunConfig):
    """(dictionary, template matrix) per modality from a dump directory."""
    out = {}
    for m, max_len in ((LOG, cfg.max_log_size), (SPAN, cfg.max_span_size)):
        dictionary = WordDictionary.load(src / VOCAB_FILES[m])
        matrix, _ = template_matrix(load_templates(src / TEMPLATE_FILES[m], m), dictionary, max_len)
        out[m] = (dictionary, matrix)
    return out


def _write_log_stream(stream: align.LogStream, path):
    with open(path, "w") as fh:
        for ts, tid, label in zip(stream.timestamps, stream.template_ids, stream.labels):
            fh.write(json.dumps({"ts": int(ts), "template": int(tid), "label": label}) + "\n")


def _read_log_stream(path) -> align.LogStream:
    rows = [json.loads(l) for l in Path(path).read_text().splitlines() if l.strip()]
    return align.LogStream([r["ts"] for r in rows], [r["template"] for r in rows],
                           [r["label"] for r in rows])


# --------------------------------------------------------------------------
# commands

def cmd_synth(args, cfg: RunConfig):
    out = _out_dir(args)
    kinds = tuple(args.kinds.split(",")) if args.kinds else synth.ANOMALY_KINDS
    spec = synth.AnomalySpec(args.anomaly_rate, kinds)
    corpus = synth.generate(synth.default_grammars(), args.n_traces, spec, cfg.seed)
    corpus.write(out)
    n_anom = sum(r["label"] == ingest.ANOMALY for r in corpus.truth)
    oracle = synth.oracle_templates(synth.default_grammars())
    write_manifest(out, "synth", cfg, stats={
        "traces": len(corpus.traces), "logs": len(corpus.logs), "anomalous_traces": n_anom,
        "oracle_templates": oracle})
    print(f"{len(corpus.traces)} traces ({n_anom} anomalous), {len(corpus.logs)} logs -> {out}")
    return EXIT_OK


def cmd_mine(args, cfg: RunConfig):
    out = _out_dir(args)
    logs, traces = _read_corpus(args)
    tpl = pipeline.template_corpus(logs, traces, TemplateMiner(cfg.miner(LOG), LOG),
                                   TemplateMiner(cfg.miner(SPAN), SPAN), mine=True)
    stats = {}
    for m, miner, max_len in ((LOG, tpl.log_miner, cfg.max_log_size),
                              (SPAN, tpl.span_miner, cfg.max_span_size)):
        miner.dump(out / TEMPLATE_FILES[m])
        dictionary = build_dictionary(miner.templates, m)
        dictionary.dump(out / VOCAB_FILES[m])
        _, truncated = template_matrix(miner.templates, dictionary, max_len)
        stats[m] = {"templates": len(miner), "words": len(dictionary), "truncated": truncated}
        print(f"{m}: {len(miner)} templates, {len(dictionary)} words")
    write_manifest(out, "mine", cfg, [args.logs, args.traces], stats)
    return EXIT_OK


def cmd_build(args, cfg: RunConfig):
    out = _out_dir(args)
    src = Path(args.templates)
    logs, traces = _read_corpus(args)
    miners = _load_miners(src, cfg)
    # the dumped templates are final, so lookups never alter them
    tpl = pipeline.template_corpus(logs, traces, miners[LOG], miners[SPAN], mine=False)
    split = align.temporal_split(tpl.traces, tpl.logs,
                                 align.SplitSpec(cfg.train_fraction))
    train = pipeline.build_windows(split.train_traces, split.train_logs,
                                   cfg.window_size, cfg.max_block_logs)
    test = pipeline.build_windows(split.test_traces, split.test_logs,
                                  cfg.window_size, cfg.max_block_logs)
    for m in (LOG, SPAN):
        shutil.copyfile(src / TEMPLATE_FILES[m], out / TEMPLATE_FILES[m])
        shutil.copyfile(src / VOCAB_FILES[m], out / VOCAB_FILES[m])
    align.write_windows(train.windows, out / "train_windows.jsonl")
    align.write_windows(test.windows, out / "test_windows.jsonl")
    _write_log_stream(split.train_logs, out / "train_logs.jsonl")
    _write_log_stream(split.test_logs, out / "test_logs.jsonl")
    with open(out / "test_traces.jsonl", "w") as fh:
        for t in split.test_traces:
            fh.write(json.dumps({"trace_id": t.trace_id, "label": t.label}) + "\n")
    unknown = {LOG: int(np.sum(tpl.logs.template_ids == 0)),
               SPAN: sum(tid == 0 for t in tpl.traces for tid in t.template_ids)}
    stats = {
        "split_time": int(split.split_time),
        "train_traces": len(split.train_traces), "test_traces": len(split.test_traces),
        "discarded_anomalous": len(split.discarded),
        "train_windows": len(train.windows), "test_windows": len(test.windows),
        "dropped_train": train.dropped, "dropped_test": test.dropped,
        "train_logs": len(split.train_logs), "test_logs": len(split.test_logs),
        "unknown_templates": unknown,
    }
    write_manifest(out, "build-dataset", cfg, [args.logs, args.traces], stats)
    print(f"split at {split.split_time}: {len(train.windows)} train windows, "
          f"{len(test.windows)} test windows, {train.dropped + test.dropped} dropped")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig):
    out = _out_dir(args)
    ds = Path(args.dataset)
    vocabs = _vocabs(ds, cfg)
    model = pipeline.make_model(args.model, vocabs[SPAN], vocabs[LOG], cfg.model(), cfg.seed)
    if args.model == "log":
        data = pipeline.log_sequences(_read_log_stream(ds / "train_logs.jsonl"), cfg.log_history)
    else:
        arr = align.windows_to_arrays(align.read_windows(ds / "train_windows.jsonl"))
        data = pipeline.training_arrays(args.model, arr)
    model.meta.update({"model": args.model, "log_history": cfg.log_history,
                       "window_size": cfg.window_size})
    res = models.train(model, data, cfg.epochs, cfg.batch_size, cfg.seed, cfg.learning_rate,
                       cfg.momentum, out, cfg.checkpoint_every or None)
    last = res.curve[-1]
    write_manifest(out, "train", cfg, [ds / "train_windows.jsonl", ds / "train_logs.jsonl"],
                   {"examples": models.dataset_size(data), "final_loss": last["total"],
                    "model": args.model})
    print(f"trained {args.model} model on {models.dataset_size(data)} examples; "
          f"final mean loss {last['total']:.4f}")
    return EXIT_OK


def _holdout(ids, frac):
    """First ``frac`` of ids (time order) pick the threshold, the rest are reported."""
    if not 0 < frac < 1:
        raise UsageError("--holdout must lie strictly between 0 and 1")
    k = int(round(frac * len(ids)))
    return set(ids[:k])


def _gate(args, report):
    if args.min_f1 is not None and report.f1 < args.min_f1:
        print(f"F1 {report.f1:.3f} below gate {args.min_f1}", file=sys.stderr)
        return EXIT_GATE
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig):
    out = _out_dir(args)
    ds = Path(args.dataset)
    model = models.load_model(args.checkpoint)
    det = cfg.detection()
    result = {"checkpoint": sha256(args.checkpoint)}
    if getattr(model, "modality", None) == LOG:
        stream = _read_log_stream(ds / "test_logs.jsonl")
        history = model.meta.get("log_history", cfg.log_history)
        flags = pipeline.score_logs(model, stream, history, det.logs_top_k)
        truth = [l == ingest.ANOMALY for l in stream.labels[history:]]
        report = detect.evaluate(flags, np.array(truth, dtype=bool))
        with open(out / "log_verdicts.jsonl", "w") as fh:
            for ts, flag in zip(stream.timestamps[history:], flags):
                fh.write(json.dumps({"ts": int(ts), "label_pred":
                                     ingest.ANOMALY if flag else ingest.NORMAL}) + "\n")
        result["logs"] = report.to_json()
        _dump_json(result, out / "report.json")
        (out / "report.txt").write_text("logs\n" + report.table() + "\n")
        write_manifest(out, "detect", cfg, [args.checkpoint], {"scored_logs": len(flags)})
        print("logs\n" + report.table())
        return _gate(args, report)

    windows = align.read_windows(ds / "test_windows.jsonl")
    traces = [json.loads(l) for l in (ds / "test_traces.jsonl").read_text().splitlines() if l]
    ws = pipeline.WindowSet(windows, 0)
    for t in traces:
        ws.per_trace[t["trace_id"]] = []
        ws.labels[t["trace_id"]] = t["label"]
    for w in windows:
        ws.per_trace[w.trace_id].append(w)
    verdicts, skipped = pipeline.score_traces(model, ws, det.trace_top_k, det.logs_top_k)
    ids = [v.trace_id for v in verdicts]
    select = _holdout(ids, args.holdout) if args.holdout else set(ids)
    report_on = [v for v in verdicts if v.trace_id not in select] if args.holdout else verdicts
    if args.threshold is not None:
        theta = args.threshold
    else:
        theta, _ = detect.sweep_threshold(
            [(v.span_error_rate, ws.labels[v.trace_id]) for v in verdicts if v.trace_id in select],
            det.threshold_grid)
    for v in verdicts:
        v.trace_label_pred = ingest.ANOMALY if v.span_error_rate > theta else ingest.NORMAL
    report = detect.evaluate([v.trace_label_pred for v in report_on],
                             [ws.labels[v.trace_id] for v in report_on])
    detect.write_verdicts(verdicts, out / "verdicts.jsonl")
    result.update({"threshold": theta, "skipped_traces": skipped, "traces": report.to_json(),
                   "holdout": args.holdout})
    text = f"traces (threshold {theta})\n{report.table()}\n"
    if model.kind == "joint":
        test_logs = _read_log_stream(ds / "test_logs.jsonl")
        flags = [f == ingest.ANOMALY for v in verdicts for f in v.per_log_flags]
        truth = [test_logs.labels[w.log_target_index] == ingest.ANOMALY
                 for tid in ids for w in ws.per_trace[tid]]
        log_report = detect.evaluate(np.array(flags, dtype=bool), np.array(truth, dtype=bool))
        result["logs"] = log_report.to_json()
        text += f"logs (per window target)\n{log_report.table()}\n"
    _dump_json(result, out / "report.json")
    (out / "report.txt").write_text(text)
    write_manifest(out, "detect", cfg, [args.checkpoint, ds / "test_windows.jsonl"],
                   {"scored_traces": len(verdicts), "skipped_traces": skipped})
    print(text, end="")
    return _gate(args, report)


def cmd_eval(args, cfg: RunConfig):
    verdicts = detect.read_verdicts(args.verdicts)
    truth = {}
    for line in Path(args.truth).read_text().splitlines():
        if line.strip():
            row = json.loads(line)
            truth[row["trace_id"]] = row["label"]
    missing = [v.trace_id for v in verdicts if v.trace_id not in truth]
    if missing:
        raise ValueError(f"{len(missing)} verdicts have no truth row, e.g. {missing[0]}")
    if args.threshold is not None:
        preds = detect.predict_labels([v.span_error_rate for v in verdicts], args.threshold)
        theta = args.threshold
    elif args.sweep:
        theta, _ = detect.sweep_threshold([(v.span_error_rate, truth[v.trace_id]) for v in verdicts],
                                          cfg.detection().threshold_grid)
        preds = detect.predict_labels([v.span_error_rate for v in verdicts], theta)
    else:
        preds = [v.trace_label_pred for v in verdicts]
        theta = None
    report = detect.evaluate(preds, [truth[v.trace_id] for v in verdicts])
    if args.out:
        out = _out_dir(args)
        _dump_json({"threshold": theta, "traces": report.to_json()}, out / "report.json")
        (out / "report.txt").write_text(report.table() + "\n")
        write_manifest(out, "eval", cfg, [args.verdicts, args.truth])
    print(report.table())
    return _gate(args, report)


def cmd_embed(args, cfg: RunConfig):
    out = _out_dir(args)
    model = models.load_model(args.checkpoint)
    src = Path(args.templates)
    modalities = [args.modality] if args.modality else (
        [model.modality] if model.kind == "single" else [SPAN, LOG])
    stats = {}
    for m in modalities:
        templates = load_templates(src / TEMPLATE_FILES[m], m)
        dictionary = WordDictionary.load(src / VOCAB_FILES[m])
        table = embed.extract(model, m, dictionary, templates, provenance=sha256(args.checkpoint))
        embed.write_embeddings(table, out / f"embeddings_{m}.csv")
        embed.write_projection(table, embed.project_2d(table), out / f"projection_{m}.csv")
        stats[m] = len(table)
        print(f"{m}: {len(table)} template vectors")
    write_manifest(out, "embed", cfg, [args.checkpoint], stats)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def _add_config_flags(p):
    group = p.add_argument_group("configuration overrides")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seed":
            group.add_argument(flag, type=int, default=None, help="random seed")
        elif f.name == "threshold_grid":
            group.add_argument(flag, default=None, help="comma separated thresholds")
        else:
            group.add_argument(flag, type=type(f.default), default=None, dest=f.name)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig values")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(common)

    corpus = _Parser(add_help=False)
    corpus.add_argument("--logs", required=True)
    corpus.add_argument("--traces", required=True)
    corpus.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    corpus.add_argument("--adapter", help="column mapping file for foreign schemas")

    gate = _Parser(add_help=False)
    gate.add_argument("--min-f1", type=float, default=None, help="exit 3 when F1 is lower")
    gate.add_argument("--threshold", type=float, default=None, help="fixed threshold, no sweep")

    parser = _Parser(prog="ntpdetect", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic corpus")
    p.add_argument("--n-traces", type=int, default=2000)
    p.add_argument("--anomaly-rate", type=float, default=0.1)
    p.add_argument("--kinds", help=f"comma separated subset of {','.join(synth.ANOMALY_KINDS)}")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mine", parents=[common, corpus], help="mine log and span templates")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("build-dataset", parents=[common, corpus], help="split and window a corpus")
    p.add_argument("--templates", required=True, help="output directory of `mine`")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=("joint", "trace", "log"), default="joint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common, gate], help="score the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--holdout", type=float, default=None,
                   help="choose the threshold on this leading fraction of test traces only")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common, gate], help="metrics for stored verdicts")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--truth", required=True, help="JSONL with trace_id and label")
    p.add_argument("--sweep", action="store_true", help="re-sweep the threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", parents=[common], help="export template embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--templates", required=True, help="directory holding template and vocab dumps")
    p.add_argument("--modality", choices=(LOG, SPAN), default=None)
    p.set_defaults(func=cmd_embed)
    return parser


def resolve_config(args) -> RunConfig:
    """Defaults, then the --config file, then explicit flags."""
    values = asdict(RunConfig())
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name == "threshold_grid":
            v = [float(x) for x in v.split(",")]
        values[f.name] = v
    cfg = RunConfig.from_dict(values)
    cfg.detection()  # validates top-k and the grid
    cfg.model()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        try:
            cfg = resolve_config(args)
        except (ValueError, TypeError, json.JSONDecodeError) as exc:
            raise UsageError(f"bad configuration: {exc}") from exc
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"ntpdetect: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ingest.FormatError, ingest.ValidationError, models.TrainingDiverged,
            ValueError, KeyError, IndexError, OSError) as exc:
        print(f"ntpdetect: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
