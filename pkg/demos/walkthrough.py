"""Small end-to-end run on a synthetic three-workload corpus.

Trains a joint model for a few epochs, prints detection metrics for the
joint and trace-only models, and lists the nearest neighbours of a few
span templates. Takes roughly a minute.

    python3 demos/walkthrough.py [--traces 600] [--epochs 15]
"""

import argparse

from ntpdetect import align, pipeline, synth
from ntpdetect.detect import sweep_threshold
from ntpdetect.embed import extract, nearest
from ntpdetect.miner import LOG, LOG_MINER, SPAN, SPAN_MINER, TemplateMiner
from ntpdetect.models import ModelConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--traces", type=int, default=600)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    corpus = synth.generate(n_traces=args.traces, anomaly=synth.AnomalySpec(0.1), seed=args.seed)
    tpl = pipeline.template_corpus(corpus.logs, corpus.traces, TemplateMiner(LOG_MINER, LOG),
                                   TemplateMiner(SPAN_MINER, SPAN))
    print(f"{len(corpus.traces)} traces, {len(corpus.logs)} logs; "
          f"{len(tpl.span_miner)} span and {len(tpl.log_miner)} log templates")

    split = align.temporal_split(tpl.traces, tpl.logs)
    train_set = pipeline.build_windows(split.train_traces, split.train_logs)
    test_set = pipeline.build_windows(split.test_traces, split.test_logs)
    print(f"train {len(split.train_traces)} traces / {len(train_set.windows)} windows, "
          f"test {len(split.test_traces)} traces")

    vocabs = pipeline.vocabulary(tpl.span_miner, 16), pipeline.vocabulary(tpl.log_miner, 32)
    arrays = align.windows_to_arrays(train_set.windows)
    config = ModelConfig(embedding_dim=128, hidden_dim=64, layers=1, fusion_dim=64, embedding_std=2.0)
    models = {}
    for kind in ("joint", "trace"):
        model = pipeline.make_model(kind, *vocabs, config, seed=1)
        res = train(model, pipeline.training_arrays(kind, arrays), epochs=args.epochs, batch_size=256, seed=1)
        verdicts, _ = pipeline.score_traces(model, test_set)
        theta, rep = sweep_threshold([(v.span_error_rate, test_set.labels[v.trace_id]) for v in verdicts])
        print(f"{kind:>5}: final loss {res.curve[-1]['total']:.3f}  theta {theta:.2f}  "
              f"f1 {rep.f1:.3f}  recall {rep.recall:.3f}  precision {rep.precision:.3f}")
        models[kind] = model

    table = extract(models["joint"], SPAN, templates=tpl.span_miner.templates)
    for tid in table.ids[2:5]:
        near = ", ".join(f"{table.labels[i]!r} ({d:.2f})" for i, d in nearest(table, int(tid), 3))
        print(f"{table.labels[int(tid)]!r} is closest to {near}")


if __name__ == "__main__":
    main()
