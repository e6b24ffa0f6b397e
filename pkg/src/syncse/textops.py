"""Pure text operations: list parsing, filtering, dedup, n-gram diversity."""

from __future__ import annotations

import re
from typing import NamedTuple, Sequence

# Leading enumeration markers a model puts in front of list items:
# "1.", "12)", "-", "*".
_ENUM_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s*|[-*]\s+)")

_QUOTE_PAIRS = [('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’")]


def strip_enumeration(line: str) -> str:
    """Drop a leading list marker, surrounding quote pair, and whitespace."""
    text = _ENUM_RE.sub("", line, count=1).strip()
    for left, right in _QUOTE_PAIRS:
        if len(text) >= 2 and text.startswith(left) and text.endswith(right):
            text = text[1:-1].strip()
            break
    return text


class ParsedSentences(NamedTuple):
    sentences: list[str]
    shortfall: bool


def parse_sentence_list(raw: str, expected: int) -> ParsedSentences:
    """Split a model completion into individual sentences.

    Splits on newlines, strips enumeration markers / quotes / whitespace,
    drops empty lines, and keeps at most `expected` items.  A shortfall
    (fewer than `expected` parsed) is flagged, not raised.
    """
    sentences = []
    for line in raw.splitlines():
        text = strip_enumeration(line)
        if text:
            sentences.append(text)
        if len(sentences) == expected:
            break
    return ParsedSentences(sentences, len(sentences) < expected)


def word_count(sentence: str) -> int:
    return len(sentence.split())


def filter_max_words(sentences: Sequence[str], limit: int = 32) -> list[str]:
    """Keep sentences of at most `limit` whitespace tokens, order preserved."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    return [s for s in sentences if word_count(s) <= limit]


def normalize_sentence(sentence: str) -> str:
    """Normalization used for duplicate and echo detection.

    Collapses internal whitespace, strips terminal '.', '!', '?', lowercases.
    """
    return " ".join(sentence.split()).rstrip(".!?").lower()


def dedup(sentences: Sequence[str]) -> list[str]:
    """Remove sentences equal after normalization; first occurrence wins."""
    seen: set[str] = set()
    kept = []
    for s in sentences:
        key = normalize_sentence(s)
        if key not in seen:
            seen.add(key)
            kept.append(s)
    return kept


def distinct_ngram_ratio(sentences: Sequence[str], n: int) -> float:
    """|unique word n-grams| / |total word n-grams| over the corpus."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not sentences:
        raise ValueError("empty corpus")
    total = 0
    unique: set[tuple[str, ...]] = set()
    for s in sentences:
        tokens = s.split()
        for i in range(len(tokens) - n + 1):
            unique.add(tuple(tokens[i : i + n]))
            total += 1
    if total == 0:
        raise ValueError(f"no {n}-grams in corpus")
    return len(unique) / total
