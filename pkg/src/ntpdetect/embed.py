"""Template embeddings (span2vec / log2vec) pulled out of a trained model.

A template's vector is the mean of its learned word vectors over non-pad
positions, the same pooling the model applies on its input side.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .miner import UNKNOWN

logger = logging.getLogger(__name__)


@dataclass
class EmbeddingTable:
    modality: str
    ids: np.ndarray          # template ids, ascending
    vectors: np.ndarray      # one row per id
    provenance: str = ""
    labels: dict = None      # template id -> text, for exports

    def __len__(self):
        return len(self.ids)

    def vector(self, template_id):
        pos = np.searchsorted(self.ids, template_id)
        if pos >= len(self.ids) or self.ids[pos] != template_id:
            raise KeyError(f"template {template_id} not in table")
        return self.vectors[pos]


def _encoder(model, modality):
    if getattr(model, "kind", None) == "joint":
        return getattr(model, modality).encoder
    if model.modality != modality:
        raise ValueError(f"model covers {model.modality}, not {modality}")
    return model.encoder


def extract(model, modality: str, dictionary=None, templates=None, provenance="") -> EmbeddingTable:
    """Pooled vectors for every mined template (UNKNOWN excluded).

    ``dictionary`` and ``templates``, when given, are checked against the
    model's vocabulary.
    """
    enc = _encoder(model, modality)
    n_words = enc.params["E"].shape[0]
    if dictionary is not None and len(dictionary) != n_words:
        raise ValueError(f"dictionary has {len(dictionary)} words, model has {n_words}")
    if templates is not None and len(templates) + 1 != enc.n_templates:
        raise ValueError(f"{len(templates)} templates given, model knows {enc.n_templates - 1}")
    vectors = enc.template_vectors()
    ids = np.arange(enc.n_templates)
    keep = ids != UNKNOWN
    labels = None
    if templates is not None:
        labels = {t.template_id: " ".join(t.tokens) for t in templates}
    return EmbeddingTable(modality, ids[keep], vectors[keep].copy(), provenance, labels)


def distances(table: EmbeddingTable, template_id, metric="cosine"):
    v = table.vector(template_id)
    X = table.vectors
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1) * np.linalg.norm(v)
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(norms > 0, X @ v / norms, 0.0)
        return 1.0 - sim
    if metric == "euclidean":
        return np.linalg.norm(X - v, axis=1)
    raise ValueError(f"unknown metric {metric!r}")


def pairwise_distances(vectors, metric="cosine"):
    X = np.asarray(vectors, dtype=float)
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1)
        outer = np.outer(norms, norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(outer > 0, (X @ X.T) / outer, 0.0)
        return 1.0 - sim
    if metric == "euclidean":
        sq = np.sum(X * X, axis=1)
        return np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0))
    raise ValueError(f"unknown metric {metric!r}")


def nearest(table: EmbeddingTable, template_id, n=5, metric="cosine"):
    """The ``n`` closest other templates as ``(id, distance)``, ties to the lower id."""
    d = distances(table, template_id, metric)
    order = np.lexsort((table.ids, d))
    out = [(int(table.ids[k]), float(d[k])) for k in order if table.ids[k] != template_id]
    return out[:n]


def project_2d(table: EmbeddingTable):
    """Centre and project onto the top two principal directions.

    Each direction is signed so that its largest-magnitude component is
    positive, which makes the output deterministic. Returns a list of
    ``(template_id, x, y)``.
    """
    if len(table) < 3:
        raise ValueError("need at least three templates to project")
    X = table.vectors - table.vectors.mean(axis=0)
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    scale = s[0] if len(s) else 0.0
    directions = np.zeros((2, X.shape[1]))
    rank = int(np.sum(s > max(scale, 1.0) * 1e-10)) if len(s) else 0
    for k in range(min(rank, 2)):
        d = vt[k]
        if d[np.argmax(np.abs(d))] < 0:
            d = -d
        directions[k] = d
    if rank < 2:
        warnings.warn(f"embedding table has rank {rank}; missing coordinates set to 0")
    coords = X @ directions.T
    return [(int(i), float(x), float(y)) for i, (x, y) in zip(table.ids, coords)]


def write_embeddings(table: EmbeddingTable, path):
    dim = table.vectors.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["template_id", "modality"] + [f"v{k}" for k in range(dim)])
        for tid, vec in zip(table.ids, table.vectors):
            w.writerow([int(tid), table.modality] + [repr(float(x)) for x in vec])


def write_projection(table: EmbeddingTable, points, path):
    labels = table.labels or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["template_id", "label", "x", "y"])
        for tid, x, y in points:
            w.writerow([tid, labels.get(tid, str(tid)), repr(x), repr(y)])


def group_distance_stats(table: EmbeddingTable, groups: dict, metric="cosine"):
    """Mean intra-group and inter-group distances for each named group of template ids.

    Returns ``{name: (intra, inter)}`` where ``inter`` averages distances
    from the group's members to members of every other group.
    """
    members = {name: [int(i) for i in ids] for name, ids in groups.items()}
    all_ids = [i for ids in members.values() for i in ids]
    pos = {tid: k for k, tid in enumerate(all_ids)}
    D = pairwise_distances(np.array([table.vector(i) for i in all_ids]), metric)
    stats = {}
    for name, ids in members.items():
        own = [pos[i] for i in ids]
        other = [pos[i] for n, o in members.items() if n != name for i in o]
        block = D[np.ix_(own, own)]
        n = len(own)
        intra = (block.sum() - np.trace(block)) / (n * (n - 1)) if n > 1 else 0.0
        inter = D[np.ix_(own, other)].mean() if other else float("nan")
        stats[name] = (float(intra), float(inter))
    return stats
