"""Drive the full command-line pipeline into one directory."""

import json

from ntpdetect.cli import main

SMALL = {"embedding_dim": 8, "hidden_dim": 8, "layers": 1, "fusion_dim": 8,
         "epochs": 2, "batch_size": 32}


def run(args):
    code = main([str(a) for a in args])
    if code != 0:
        raise AssertionError(f"{args[0]} exited with {code}")


def full_pipeline(root, config=SMALL, n_traces=120, seed=0, anomaly_rate=0.1):
    """synth → mine → build-dataset → train → detect → embed; returns the stage directories."""
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(config))
    d = {k: root / k for k in ("corpus", "mined", "dataset", "model", "detect", "embed")}
    common = ["--config", cfg, "--seed", seed]
    run(["synth", "--out", d["corpus"], "--n-traces", n_traces,
         "--anomaly-rate", anomaly_rate, *common])
    corpus = ["--logs", d["corpus"] / "logs.jsonl", "--traces", d["corpus"] / "traces.jsonl"]
    run(["mine", "--out", d["mined"], *corpus, *common])
    run(["build-dataset", "--out", d["dataset"], "--templates", d["mined"], *corpus, *common])
    run(["train", "--out", d["model"], "--dataset", d["dataset"], *common])
    run(["detect", "--out", d["detect"], "--checkpoint", d["model"] / "checkpoint.ckpt",
         "--dataset", d["dataset"], *common])
    run(["embed", "--out", d["embed"], "--checkpoint", d["model"] / "checkpoint.ckpt",
         "--templates", d["mined"], *common])
    return d
