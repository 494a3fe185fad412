"""Fixed-depth similarity-tree template mining for log lines and span descriptors.

Messages are bucketed by token count, routed down ``tree_depth - 2`` levels
keyed by their leading tokens, and compared against the candidate groups in
the reached leaf. Similarity is the fraction of positions holding identical
tokens. A message joins the most similar group clearing the threshold
(lowest template id on ties), and positions where it disagrees with the
group are replaced by the wildcard; otherwise it founds a new group.

Template id 0 is reserved for UNKNOWN in every modality.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .ingest import END, START, RawSpan

UNKNOWN = 0

LOG = "log"
SPAN = "span"
MODALITIES = (LOG, SPAN)

_SPLIT = re.compile(r"[\s/:=,()]+")
_DIGIT = re.compile(r"\d")


def tokenize(text: str) -> list:
    return [tok for tok in _SPLIT.split(text) if tok]


@dataclass(frozen=True)
class MinerConfig:
    similarity_threshold: float = 0.5
    tree_depth: int = 4
    max_children: int = 100
    wildcard_token: str = "<*>"

    def __post_init__(self):
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must lie in (0, 1]")
        if self.tree_depth < 2:
            raise ValueError("tree_depth must be at least 2")
        if self.max_children < 2:
            raise ValueError("max_children must be at least 2")


# parser settings used for the two modalities
LOG_MINER = MinerConfig(similarity_threshold=0.5, tree_depth=4)
SPAN_MINER = MinerConfig(similarity_threshold=0.4, tree_depth=4)


@dataclass
class TemplateRecord:
    template_id: int
    tokens: list
    modality: str
    support_count: int = 1

    def text(self) -> str:
        return " ".join(self.tokens)

    def to_json(self) -> dict:
        return {"id": self.template_id, "modality": self.modality,
                "tokens": list(self.tokens), "support": self.support_count}


@dataclass
class _Node:
    children: dict = field(default_factory=dict)
    groups: list = field(default_factory=list)


def span_descriptor(span: RawSpan) -> str:
    """Text describing what a span does: its HTTP call if any, else its RPC name."""
    if span.name in (START, END):
        return span.name
    if span.http_path or span.http_method:
        method = span.http_method or ""
        scheme = span.http_scheme or ""
        return f"{method} {scheme}://{span.http_path or ''}".strip()
    return span.name


class TemplateMiner:
    """Mutable mining state for one modality.

    Call :meth:`mine` while building the template set, then use
    :meth:`match_only` for lookups that must not change it.
    """

    def __init__(self, config: MinerConfig = LOG_MINER, modality: str = LOG):
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        self.config = config
        self.modality = modality
        self.templates = []
        self._root = _Node()

    def __len__(self):
        return len(self.templates)

    def template(self, template_id: int) -> TemplateRecord:
        if template_id == UNKNOWN:
            raise KeyError("UNKNOWN has no template record")
        return self.templates[template_id - 1]

    # -- tree walking -------------------------------------------------------

    def _route_key(self, token):
        return self.config.wildcard_token if _DIGIT.search(token) else token

    def _leaf(self, tokens, create):
        node = self._root.children.get(len(tokens))
        if node is None:
            if not create:
                return None
            node = self._root.children[len(tokens)] = _Node()
        wildcard = self.config.wildcard_token
        for token in tokens[: self.config.tree_depth - 2]:
            key = self._route_key(token)
            child = node.children.get(key)
            if child is None:
                # a full node sends newcomers to its catch-all child
                if len(node.children) >= self.config.max_children:
                    key = wildcard
                child = node.children.get(key)
                if child is None:
                    if not create:
                        return None
                    child = node.children[key] = _Node()
            node = child
        return node

    def _similarity(self, template_tokens, tokens):
        same = sum(1 for a, b in zip(template_tokens, tokens) if a == b)
        return same / len(tokens)

    def _best(self, leaf, tokens):
        best_id, best_sim = None, -1.0
        for tid in leaf.groups:  # ascending ids, so strict > keeps the lowest on ties
            sim = self._similarity(self.templates[tid - 1].tokens, tokens)
            if sim >= self.config.similarity_threshold and sim > best_sim:
                best_id, best_sim = tid, sim
        return best_id

    # -- public API ---------------------------------------------------------

    def mine(self, message: str) -> int:
        """Assign ``message`` to a template, creating or generalising one."""
        tokens = tokenize(message)
        if not tokens:
            raise ValueError("message has no tokens")
        leaf = self._leaf(tokens, create=True)
        tid = self._best(leaf, tokens)
        if tid is None:
            tid = len(self.templates) + 1
            self.templates.append(TemplateRecord(tid, tokens, self.modality))
            leaf.groups.append(tid)
            return tid
        record = self.templates[tid - 1]
        wildcard = self.config.wildcard_token
        record.tokens = [a if a == b else wildcard for a, b in zip(record.tokens, tokens)]
        record.support_count += 1
        return tid

    def match_only(self, message: str) -> int:
        """Look up ``message`` without changing any state; UNKNOWN when nothing fits."""
        tokens = tokenize(message)
        if not tokens:
            return UNKNOWN
        leaf = self._leaf(tokens, create=False)
        if leaf is None:
            return UNKNOWN
        tid = self._best(leaf, tokens)
        return UNKNOWN if tid is None else tid

    def mine_span(self, span: RawSpan) -> int:
        return self.mine(span_descriptor(span))

    def match_span(self, span: RawSpan) -> int:
        return self.match_only(span_descriptor(span))

    # -- persistence --------------------------------------------------------

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.templates:
                fh.write(json.dumps(record.to_json()) + "\n")

    @classmethod
    def from_templates(cls, records, config: MinerConfig, modality: str) -> "TemplateMiner":
        """Rebuild a frozen miner from dumped templates, keeping their ids."""
        miner = cls(config, modality)
        records = sorted(records, key=lambda r: r.template_id)
        for expected, record in enumerate(records, 1):
            if record.template_id != expected:
                raise ValueError(f"template ids not contiguous at {record.template_id}")
            miner.templates.append(record)
            miner._leaf(record.tokens, create=True).groups.append(record.template_id)
        return miner

    @classmethod
    def load(cls, path, config: MinerConfig, modality: str) -> "TemplateMiner":
        return cls.from_templates(load_templates(path, modality), config, modality)


def load_templates(path, modality: str = None) -> list:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        if modality is not None and row["modality"] != modality:
            raise ValueError(f"{path}: expected {modality} templates, got {row['modality']}")
        records.append(TemplateRecord(row["id"], list(row["tokens"]),
                                      row["modality"], row["support"]))
    return records
