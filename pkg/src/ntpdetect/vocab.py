"""Word dictionaries over template tokens and fixed-length padded templates."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .miner import LOG, MODALITIES, SPAN, UNKNOWN

PAD_LOG = "<SPECLOG>"
PAD_SPAN = "<SPECSPAN>"
UNK_WORD = "<UNKWORD>"
RESERVED = (PAD_LOG, PAD_SPAN, UNK_WORD)

DEFAULT_MAX_LEN = {LOG: 32, SPAN: 16}


class WordDictionary:
    """Bijective word/index map; the reserved tokens take indices 0, 1 and 2."""

    def __init__(self, modality: str, words):
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        words = list(words)
        if tuple(words[: len(RESERVED)]) != RESERVED:
            raise ValueError("reserved tokens must occupy the lowest indices")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words")
        self.modality = modality
        self.index_to_word = words
        self.word_to_index = {w: i for i, w in enumerate(words)}

    def __len__(self):
        return len(self.index_to_word)

    def __contains__(self, word):
        return word in self.word_to_index

    @property
    def pad_token(self) -> str:
        return PAD_LOG if self.modality == LOG else PAD_SPAN

    @property
    def pad_index(self) -> int:
        return self.word_to_index[self.pad_token]

    @property
    def unk_index(self) -> int:
        return self.word_to_index[UNK_WORD]

    def index(self, word: str) -> int:
        return self.word_to_index.get(word, self.unk_index)

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for i, word in enumerate(self.index_to_word):
                fh.write(json.dumps({"word": word, "index": i, "modality": self.modality}) + "\n")

    @classmethod
    def load(cls, path) -> "WordDictionary":
        rows = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()
                if line.strip()]
        if not rows:
            raise ValueError(f"{path}: empty dictionary")
        rows.sort(key=lambda r: r["index"])
        if [r["index"] for r in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: indices are not contiguous from 0")
        return cls(rows[0]["modality"], [r["word"] for r in rows])


def build_dictionary(templates, modality: str) -> WordDictionary:
    """Reserved tokens first, then every template token in order of first appearance."""
    templates = list(templates)
    if not templates:
        raise ValueError("cannot build a dictionary from zero templates")
    words = list(RESERVED)
    seen = set(words)
    for t in templates:
        if t.modality != modality:
            raise ValueError(f"template {t.template_id} is {t.modality}, expected {modality}")
        for token in t.tokens:
            if token not in seen:
                seen.add(token)
                words.append(token)
    return WordDictionary(modality, words)


@dataclass(frozen=True)
class PaddedTemplate:
    template_id: int
    word_indices: tuple
    truncated: bool = False


def pad_template(t, dictionary: WordDictionary, max_len: int) -> PaddedTemplate:
    """Map tokens to indices, right-pad with the modality pad token or truncate."""
    if max_len < 1:
        raise ValueError("max_len must be positive")
    indices = [dictionary.index(tok) for tok in t.tokens]
    truncated = len(indices) > max_len
    indices = indices[:max_len] + [dictionary.pad_index] * (max_len - len(indices))
    return PaddedTemplate(t.template_id, tuple(indices), truncated)


def decode(padded: PaddedTemplate, dictionary: WordDictionary) -> list:
    pad = dictionary.pad_index
    return [dictionary.index_to_word[i] for i in padded.word_indices if i != pad]


def template_matrix(templates, dictionary: WordDictionary, max_len: int):
    """Word-index matrix with one row per template id, row 0 standing for UNKNOWN.

    Returns ``(matrix, truncations)``. UNKNOWN is encoded as the single word
    ``<UNKWORD>``.
    """
    templates = sorted(templates, key=lambda t: t.template_id)
    if [t.template_id for t in templates] != list(range(1, len(templates) + 1)):
        raise ValueError("template ids must run 1..n")
    matrix = np.full((len(templates) + 1, max_len), dictionary.pad_index, dtype=np.int64)
    matrix[UNKNOWN, 0] = dictionary.unk_index
    truncations = 0
    for t in templates:
        padded = pad_template(t, dictionary, max_len)
        matrix[t.template_id] = padded.word_indices
        truncations += padded.truncated
    return matrix, truncations
