"""Next-template-prediction models and their training loop.

Three models share one building block, a branch made of a word-embedding
table, mean pooling of word vectors into template vectors, and a stack of
gated recurrent cells:

* :class:`SingleModel` predicts the next template of one modality (logs or
  spans) from a fixed-length history of templates.
* :class:`JointModel` runs a span branch over a window of span templates and
  a log branch over the log block recorded during that window, concatenates
  their final states, passes them through a shared linear fusion layer, and
  predicts both the next span and the next log. Its loss is the sum of the
  two cross-entropies.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import neural
from .align import NOLOG
from .neural import DTYPE, Linear, LSTMStack, SGD, batch_cross_entropy, softmax

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 256
    hidden_dim: int = 256
    layers: int = 2
    fusion_dim: int = 256
    forget_bias: float = 1.0
    # word vectors start as N(0, embedding_std^2) draws; recurrent and linear
    # weights as U(-1/sqrt(hidden_dim), 1/sqrt(hidden_dim))
    embedding_init: str = "normal"
    embedding_std: float = 1.0
    pooling: str = "mean"

    def __post_init__(self):
        if self.pooling != "mean":
            raise ValueError(f"unsupported pooling {self.pooling!r}")
        if self.embedding_init not in ("normal", "uniform"):
            raise ValueError(f"unsupported embedding_init {self.embedding_init!r}")
        if not self.embedding_std > 0:
            raise ValueError("embedding_std must be positive")


def pooling_matrix(template_words, pad_index, n_words):
    """Row t holds the mean-pooling weights of template t over the word table."""
    template_words = np.asarray(template_words, dtype=np.int64)
    P = np.zeros((template_words.shape[0], n_words), dtype=DTYPE)
    for t, row in enumerate(template_words):
        words = row[row != pad_index]
        if len(words):
            np.add.at(P[t], words, 1.0 / len(words))
    return P


class TemplateEncoder:
    """Word embeddings mean-pooled into one vector per template."""

    def __init__(self, n_words, template_words, pad_index, embedding_dim, rng, init="normal",
                 std=1.0):
        self.template_words = np.asarray(template_words, dtype=np.int64)
        self.pad_index = int(pad_index)
        if init == "normal":
            table = std * rng.standard_normal((n_words, embedding_dim))
        else:
            table = neural.uniform_init(rng, (n_words, embedding_dim), 1.0 / np.sqrt(embedding_dim))
        self.params = {"E": np.asarray(table, dtype=DTYPE)}
        self.pool = pooling_matrix(self.template_words, self.pad_index, n_words)

    @property
    def n_templates(self):
        return self.template_words.shape[0]

    def template_vectors(self):
        return self.pool @ self.params["E"]

    def encode(self, template_ids):
        """Vectors for an int array of template ids; ids < 0 (padding) map to zeros."""
        ids = np.asarray(template_ids, dtype=np.int64)
        if ids.size and ids.max() >= self.n_templates:
            raise IndexError(f"template id {ids.max()} outside vocabulary of {self.n_templates}")
        vectors = self.template_vectors()[np.maximum(ids, 0)]
        if ids.size and ids.min() < 0:
            vectors[ids < 0] = 0.0
        return vectors

    def backward(self, template_ids, grad_vectors):
        ids = np.asarray(template_ids, dtype=np.int64).reshape(-1)
        g = grad_vectors.reshape(len(ids), -1)
        keep = ids >= 0
        d_templates = np.zeros((self.n_templates, g.shape[1]), dtype=DTYPE)
        np.add.at(d_templates, ids[keep], g[keep])
        return {"E": self.pool.T @ d_templates}


def encode_template(encoder: TemplateEncoder, padded) -> np.ndarray:
    """Mean of the word vectors at non-pad positions; zero vector when all are pads."""
    idx = np.asarray(padded.word_indices if hasattr(padded, "word_indices") else padded)
    words = idx[idx != encoder.pad_index]
    if not len(words):
        return np.zeros(encoder.params["E"].shape[1], dtype=DTYPE)
    return encoder.params["E"][words].mean(axis=0)


class _Branch:
    """Encoder plus recurrent stack for one modality."""

    def __init__(self, n_words, template_words, pad_index, config: ModelConfig, rng):
        self.encoder = TemplateEncoder(n_words, template_words, pad_index,
                                       config.embedding_dim, rng, config.embedding_init,
                                       config.embedding_std)
        self.stack = LSTMStack(config.embedding_dim, config.hidden_dim, config.layers,
                               rng, config.forget_bias)

    def named_params(self, prefix):
        out = {f"{prefix}.enc.E": self.encoder.params["E"]}
        for k, cell in enumerate(self.stack.cells):
            for name, arr in cell.params.items():
                out[f"{prefix}.rnn.{k}.{name}"] = arr
        return out

    def forward(self, ids, mask=None):
        xs = self.encoder.encode(ids)
        h, cache = self.stack.forward(xs, mask)
        return h, (ids, cache)

    def backward(self, cache, dh, prefix):
        ids, stack_cache = cache
        dxs, cell_grads = self.stack.backward(stack_cache, dh)
        grads = {f"{prefix}.enc.E": self.encoder.backward(ids, dxs)["E"]}
        for k, g in enumerate(cell_grads):
            for name, arr in g.items():
                grads[f"{prefix}.rnn.{k}.{name}"] = arr
        return grads


class SingleModel:
    """Next-template prediction over one modality."""

    kind = "single"

    def __init__(self, n_words, template_words, pad_index, config=ModelConfig(), seed=0,
                 modality="span", meta=None):
        rng = np.random.default_rng(seed)
        self.config = config
        self.seed = seed
        self.modality = modality
        self.meta = dict(meta or {})
        self.branch = _Branch(n_words, template_words, pad_index, config, rng)
        n_templates = self.branch.encoder.n_templates
        self.head = Linear(config.hidden_dim, n_templates, rng)

    @property
    def n_templates(self):
        return self.head.out_dim

    @property
    def encoder(self):
        return self.branch.encoder

    def params(self):
        out = self.branch.named_params(self.modality)
        out["head.W"] = self.head.params["W"]
        out["head.b"] = self.head.params["b"]
        return out

    def hidden(self, inputs):
        h, _ = self.branch.forward(np.asarray(inputs, dtype=np.int64))
        return h

    def predict_proba(self, inputs, chunk=1024):
        inputs = np.atleast_2d(np.asarray(inputs, dtype=np.int64))
        if inputs.size and (inputs.min() < 0 or inputs.max() >= self.n_templates):
            raise IndexError("template id outside the model vocabulary; map unseen ids to UNKNOWN")
        out = [softmax(self.head.forward(self.hidden(inputs[s:s + chunk])))
               for s in range(0, len(inputs), chunk)]
        return np.concatenate(out) if out else np.zeros((0, self.n_templates))

    def loss_and_grads(self, batch):
        X = np.asarray(batch["inputs"], dtype=np.int64)
        y = np.asarray(batch["targets"], dtype=np.int64)
        B = len(y)
        h, cache = self.branch.forward(X)
        probs = softmax(self.head.forward(h))
        losses = batch_cross_entropy(probs, y)
        dlogits = probs.copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits /= B
        dh, head_grads = self.head.backward(h, dlogits)
        grads = self.branch.backward(cache, dh, self.modality)
        grads["head.W"] = head_grads["W"]
        grads["head.b"] = head_grads["b"]
        return {"total": losses, self.modality: losses}, grads


def forward_single(model: SingleModel, inputs) -> np.ndarray:
    """Probability vector over templates for one history of template ids."""
    return model.predict_proba(np.asarray(inputs, dtype=np.int64)[None, :])[0]


class JointModel:
    """Span and log branches fused into shared features with two output heads."""

    kind = "joint"

    def __init__(self, span_vocab, log_vocab, config=ModelConfig(), seed=0, meta=None):
        """``span_vocab`` and ``log_vocab`` are ``(n_words, template_words, pad_index)``."""
        rng = np.random.default_rng(seed)
        self.config = config
        self.seed = seed
        self.meta = dict(meta or {})
        self.span = _Branch(*span_vocab, config, rng)
        self.log = _Branch(*log_vocab, config, rng)
        fused_in = self.span.stack.hidden_dim + self.log.stack.hidden_dim
        self.fusion = Linear(fused_in, config.fusion_dim, rng)
        self.span_head = Linear(config.fusion_dim, self.span.encoder.n_templates, rng)
        self.log_head = Linear(config.fusion_dim, self.log.encoder.n_templates, rng)

    def params(self):
        out = self.span.named_params("span")
        out.update(self.log.named_params("log"))
        for name, layer in (("fusion", self.fusion), ("span_head", self.span_head),
                            ("log_head", self.log_head)):
            out[f"{name}.W"] = layer.params["W"]
            out[f"{name}.b"] = layer.params["b"]
        return out

    def _forward(self, span_inputs, log_block):
        span_inputs = np.asarray(span_inputs, dtype=np.int64)
        log_block = np.asarray(log_block, dtype=np.int64)
        if log_block.ndim == 1:
            log_block = log_block[None, :]
        if span_inputs.size and span_inputs.min() < 0:
            raise IndexError("negative span template id")
        mask = log_block != NOLOG
        # drop trailing all-padding columns
        used = np.flatnonzero(mask.any(axis=0))
        width = used[-1] + 1 if len(used) else 0
        log_block, mask = log_block[:, :width], mask[:, :width]
        hs, span_cache = self.span.forward(span_inputs)
        hl, log_cache = self.log.forward(log_block, mask)
        fused_in = np.concatenate([hs, hl], axis=1)
        fused = self.fusion.forward(fused_in)
        span_probs = softmax(self.span_head.forward(fused))
        log_probs = softmax(self.log_head.forward(fused))
        return span_probs, log_probs, (span_cache, log_cache, fused_in, fused, hs.shape[1])

    def predict_proba(self, span_inputs, log_block, chunk=1024):
        span_inputs = np.atleast_2d(np.asarray(span_inputs, dtype=np.int64))
        log_block = np.atleast_2d(np.asarray(log_block, dtype=np.int64))
        sp, lp = [], []
        for s in range(0, len(span_inputs), chunk):
            a, b, _ = self._forward(span_inputs[s:s + chunk], log_block[s:s + chunk])
            sp.append(a)
            lp.append(b)
        if not sp:
            return (np.zeros((0, self.span_head.out_dim)), np.zeros((0, self.log_head.out_dim)))
        return np.concatenate(sp), np.concatenate(lp)

    def loss_and_grads(self, batch):
        s_target = np.asarray(batch["span_target"], dtype=np.int64)
        l_target = np.asarray(batch["log_target"], dtype=np.int64)
        B = len(s_target)
        span_probs, log_probs, cache = self._forward(batch["span_inputs"], batch["log_block"])
        span_cache, log_cache, fused_in, fused, split = cache
        span_losses = batch_cross_entropy(span_probs, s_target)
        log_losses = batch_cross_entropy(log_probs, l_target)
        rows = np.arange(B)
        d_span = span_probs.copy()
        d_span[rows, s_target] -= 1.0
        d_log = log_probs.copy()
        d_log[rows, l_target] -= 1.0
        d_span /= B
        d_log /= B
        d_fused_s, g_span_head = self.span_head.backward(fused, d_span)
        d_fused_l, g_log_head = self.log_head.backward(fused, d_log)
        d_in, g_fusion = self.fusion.backward(fused_in, d_fused_s + d_fused_l)
        grads = self.span.backward(span_cache, d_in[:, :split], "span")
        grads.update(self.log.backward(log_cache, d_in[:, split:], "log"))
        for name, g in (("fusion", g_fusion), ("span_head", g_span_head), ("log_head", g_log_head)):
            grads[f"{name}.W"] = g["W"]
            grads[f"{name}.b"] = g["b"]
        losses = {"span": span_losses, "log": log_losses, "total": span_losses + log_losses}
        return losses, grads


def forward_joint(model: JointModel, window):
    """(span probabilities, log probabilities) for one aligned window."""
    sp, lp = model.predict_proba([list(window.span_inputs)], [list(window.log_block)])
    return sp[0], lp[0]


def joint_loss(span_probs, log_probs, span_target, log_target) -> float:
    return (neural.cross_entropy(span_probs, span_target)
            + neural.cross_entropy(log_probs, log_target))


# --------------------------------------------------------------------------
# checkpoints

def save_model(model, path, extra_meta=None):
    tensors = dict(model.params())
    meta = {"kind": model.kind, "config": asdict(model.config), "seed": model.seed}
    if isinstance(model, SingleModel):
        meta["modality"] = model.modality
        tensors[f"{model.modality}.templates"] = model.encoder.template_words
        meta["pad_index"] = {model.modality: model.encoder.pad_index}
    else:
        tensors["span.templates"] = model.span.encoder.template_words
        tensors["log.templates"] = model.log.encoder.template_words
        meta["pad_index"] = {"span": model.span.encoder.pad_index,
                             "log": model.log.encoder.pad_index}
    meta.update(model.meta)
    meta.update(extra_meta or {})
    neural.save_checkpoint(path, tensors, meta)


def load_model(path):
    tensors, meta = neural.load_checkpoint(path)
    config = ModelConfig(**meta["config"])
    if meta["kind"] == "single":
        mod = meta["modality"]
        words = tensors[f"{mod}.templates"]
        n_words = tensors[f"{mod}.enc.E"].shape[0]
        model = SingleModel(n_words, words, meta["pad_index"][mod], config, meta["seed"], mod)
    elif meta["kind"] == "joint":
        vocab = {}
        for mod in ("span", "log"):
            vocab[mod] = (tensors[f"{mod}.enc.E"].shape[0], tensors[f"{mod}.templates"],
                          meta["pad_index"][mod])
        model = JointModel(vocab["span"], vocab["log"], config, meta["seed"])
    else:
        raise ValueError(f"{path}: unknown model kind {meta['kind']!r}")
    params = model.params()
    for name, arr in params.items():
        if tensors[name].shape != arr.shape:
            raise ValueError(f"{path}: {name} has shape {tensors[name].shape}, expected {arr.shape}")
        arr[...] = tensors[name]
    core = {"kind", "config", "seed", "modality", "pad_index"}
    model.meta = {k: v for k, v in meta.items() if k not in core}
    return model


# --------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    curve: list
    checkpoint: Path = None


def _batch(dataset, idx):
    return {k: v[idx] for k, v in dataset.items()}


def dataset_size(dataset) -> int:
    sizes = {len(v) for v in dataset.values()}
    if len(sizes) != 1:
        raise ValueError("dataset arrays differ in length")
    return sizes.pop()


def train(model, dataset: dict, epochs=100, batch_size=256, seed=0,
          learning_rate=0.001, momentum=0.9, out_dir=None, checkpoint_every=None,
          callback=None) -> TrainResult:
    """Minibatch SGD with momentum over a dict of equally long arrays.

    The order is reshuffled every epoch from a generator seeded with
    ``seed``. Each curve entry holds the mean per-example losses seen
    during that epoch. A ``callback`` returning true ends training after
    the current epoch.
    """
    n = dataset_size(dataset)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    opt = SGD(learning_rate, momentum)
    params = model.params()
    out_dir = Path(out_dir) if out_dir is not None else None
    curve = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        sums = {}
        for b, start in enumerate(range(0, n, batch_size)):
            losses, grads = model.loss_and_grads(_batch(dataset, order[start:start + batch_size]))
            total = float(losses["total"].sum())
            if not math.isfinite(total):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            for key, vals in losses.items():
                sums[key] = sums.get(key, 0.0) + float(vals.sum())
            opt.step(params, grads)
        row = {"epoch": epoch}
        row.update({k: v / n for k, v in sums.items()})
        curve.append(row)
        logger.info("epoch %d mean loss %.6f", epoch, row["total"])
        stop = callback is not None and callback(row)
        if out_dir is not None and checkpoint_every and epoch % checkpoint_every == 0 and epoch != epochs:
            save_model(model, out_dir / f"checkpoint_epoch{epoch:04d}.ckpt")
        if stop:
            break
    result = TrainResult(curve)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        result.checkpoint = out_dir / "checkpoint.ckpt"
        save_model(model, result.checkpoint)
        write_loss_curve(curve, out_dir / "loss.csv")
    return result


def write_loss_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss_span", "mean_loss_log", "mean_loss_total"])
        for row in curve:
            w.writerow([row["epoch"]] + [
                "" if row.get(k) is None else repr(row[k]) for k in ("span", "log", "total")])


def top1_accuracy(probs, targets) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(targets)))
