"""Word-to-tag lexicon and the structured tag-embedding initializer.

The lexicon maps surface aliases (single words or phrases) onto typed tags.
Tagging is a greedy left-to-right longest-match scan over words; spans that
match nothing are dropped as noise.
"""
from __future__ import annotations

import csv
import functools
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable

import numpy as np

from .orders import (
    N_PROPERTY_TYPES,
    PROPERTY_ORDER,
    PROPERTY_VALUES,
    PropertyType,
    TOTAL_TAGS,
    TagToken,
)

_WORD_RE = re.compile(r"[a-z0-9]+")


def _normalize_words(text: str) -> list[tuple[str, int, int]]:
    """Lowercased word stream with character spans."""
    return [(m.group(0), m.start(), m.end()) for m in _WORD_RE.finditer(text.lower())]


@dataclass(frozen=True)
class LexiconEntry:
    tag: TagToken
    alias: tuple[str, ...]  # normalized word sequence
    order: int              # file order, kept for reproducible iteration


class Lexicon:
    """Immutable alias index; aliases must be unique across the lexicon."""

    def __init__(self, entries: Iterable[LexiconEntry]):
        self.entries: tuple[LexiconEntry, ...] = tuple(entries)
        self._index: dict[tuple[str, ...], TagToken] = {}
        self.max_alias_words = 1
        for entry in self.entries:
            if entry.alias in self._index:
                raise ValueError(f"duplicate alias {' '.join(entry.alias)!r}")
            self._index[entry.alias] = entry.tag
            self.max_alias_words = max(self.max_alias_words, len(entry.alias))

    def aliases_for(self, tag: TagToken) -> list[str]:
        return [" ".join(e.alias) for e in self.entries if e.tag == tag]

    def tag_with_spans(self, text: str) -> list[tuple[TagToken, int, int]]:
        words = _normalize_words(text)
        out: list[tuple[TagToken, int, int]] = []
        i = 0
        while i < len(words):
            matched = False
            for length in range(min(self.max_alias_words, len(words) - i), 0, -1):
                key = tuple(w for w, _, _ in words[i:i + length])
                tag = self._index.get(key)
                if tag is not None:
                    out.append((tag, words[i][1], words[i + length - 1][2]))
                    i += length
                    matched = True
                    break
            if not matched:
                i += 1
        return out

    def tag(self, text: str) -> list[TagToken]:
        return [tag for tag, _, _ in self.tag_with_spans(text)]


def tag_utterances(text: str, lexicon: Lexicon) -> list[TagToken]:
    """Greedy longest-match tagging of a turn of utterances."""
    return lexicon.tag(text)


def load_lexicon(path=None) -> Lexicon:
    """Load `type,value,alias` records; default is the packaged lexicon."""
    if path is None:
        source = resources.files("turnslu.data").joinpath("lexicon.csv")
        raw = source.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as handle:
            raw = handle.read()
    entries = []
    for order, row in enumerate(csv.reader(raw.splitlines())):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise ValueError(f"bad lexicon record {row!r}")
        type_name, value_name, alias = (part.strip() for part in row)
        tag = TagToken.make(type_name, value_name)
        alias_words = tuple(w for w, _, _ in _normalize_words(alias))
        if not alias_words:
            raise ValueError(f"alias for {tag} normalizes to nothing")
        entries.append(LexiconEntry(tag, alias_words, order))
    return Lexicon(entries)


@functools.lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    return load_lexicon()


def init_tag_embeddings(n_types: int = N_PROPERTY_TYPES) -> np.ndarray:
    """Structured init, one row per inventory tag, dimension 1 + 2*n_types.

    Row layout: [0] the tag's global index; per type i (1-based), [2i-1] a
    0/1 membership flag and [2i] the index within that type.
    """
    if n_types != N_PROPERTY_TYPES:
        raise ValueError(f"expected {N_PROPERTY_TYPES} tag types, got {n_types}")
    dim = 1 + 2 * n_types
    table = np.zeros((TOTAL_TAGS, dim), dtype=np.float64)
    row = 0
    for type_pos, ptype in enumerate(PROPERTY_ORDER, start=1):
        for value_id in range(len(PROPERTY_VALUES[ptype])):
            table[row, 0] = row
            table[row, 2 * type_pos - 1] = 1.0
            table[row, 2 * type_pos] = value_id
            row += 1
    assert row == TOTAL_TAGS
    return table
