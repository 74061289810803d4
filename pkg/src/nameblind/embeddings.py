"""Pretrained word vectors and per-individual name vectors.

Vector files use the common text format: a ``<count> <dimension>`` header
line, then one token followed by ``dimension`` whitespace-separated reals
per line. Tokens are normalized (lowercased, surrounding punctuation
stripped) both on load and on lookup, since pretrained vocabularies are
predominantly lowercase.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from enum import Enum

import numpy as np

_STRIP_CHARS = string.punctuation + string.whitespace


class EmbeddingFormatError(ValueError):
    """A word-vector file does not match the expected text format."""


class Coverage(str, Enum):
    """Which of a record's two name tokens were found in the table."""

    BOTH_FOUND = "both-found"
    FIRST_ONLY = "first-only"
    LAST_ONLY = "last-only"
    NONE = "none"


def normalize_token(token: str) -> str:
    """Lowercase a token and strip surrounding punctuation/whitespace."""
    return token.strip(_STRIP_CHARS).lower()


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable token -> vector map; safe for concurrent reads."""

    dimension: int
    entries: dict[str, np.ndarray]

    def get(self, token: str | None) -> np.ndarray | None:
        """Vector for a token, or None when absent (never a default)."""
        if token is None:
            return None
        key = normalize_token(token)
        if not key:
            return None
        return self.entries.get(key)

    def __contains__(self, token: str) -> bool:
        return self.get(token) is not None

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class NameVector:
    """A single vector for one individual plus its lookup coverage."""

    vector: np.ndarray
    coverage: Coverage


def load_embeddings(path, allowlist=None) -> EmbeddingTable:
    """Read a word-vector text file into an EmbeddingTable.

    Args:
        path: file whose first line is "<count> <dimension>" and whose
            remaining lines are a token plus `dimension` decimal reals.
        allowlist: optional set of tokens to keep. Full embedding files are
            multi-gigabyte, so callers typically pass the set of name tokens
            present in their dataset. Matching happens on normalized tokens.

    Raises:
        EmbeddingFormatError: malformed header, zero dimension, or a line
            whose vector length disagrees with the header (the message
            reports the offending line number).
    """
    wanted = None
    if allowlist is not None:
        wanted = {normalize_token(t) for t in allowlist}
    entries: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingFormatError(
                f"{path}: line 1: expected '<count> <dimension>' header, got {header!r}"
            )
        try:
            int(parts[0])  # declared count; informational only
            dimension = int(parts[1])
        except ValueError as exc:
            raise EmbeddingFormatError(
                f"{path}: line 1: non-integer header field in {header!r}"
            ) from exc
        if dimension <= 0:
            raise EmbeddingFormatError(
                f"{path}: vector dimension must be positive, got {dimension}"
            )
        for line_no, line in enumerate(fh, start=2):
            fields = line.split()
            if not fields:
                continue
            token = normalize_token(fields[0])
            values = fields[1:]
            if len(values) != dimension:
                raise EmbeddingFormatError(
                    f"{path}: line {line_no}: expected {dimension} components, "
                    f"got {len(values)}"
                )
            if not token or (wanted is not None and token not in wanted):
                continue
            try:
                vector = np.array(values, dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(
                    f"{path}: line {line_no}: non-numeric vector component"
                ) from exc
            entries[token] = vector
    return EmbeddingTable(dimension=dimension, entries=entries)


def save_embeddings(table: EmbeddingTable, path) -> None:
    """Write the table back in the same text format (exact round-trip)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.entries)} {table.dimension}\n")
        for token, vector in table.entries.items():
            values = " ".join(repr(float(v)) for v in vector)
            fh.write(f"{token} {values}\n")


def name_vector(table: EmbeddingTable, first: str | None, last: str | None) -> NameVector:
    """Combine a first and a last name into one vector.

    Both names found: elementwise mean of the two vectors. Exactly one
    found: that vector unchanged. Neither found: zero vector with coverage
    "none" -- such records are excluded from penalty statistics rather than
    given a made-up vector, which would add noise to the very quantity
    being constrained.
    """
    fv = table.get(first)
    lv = table.get(last)
    if fv is not None and lv is not None:
        return NameVector(0.5 * (fv + lv), Coverage.BOTH_FOUND)
    if fv is not None:
        return NameVector(fv.copy(), Coverage.FIRST_ONLY)
    if lv is not None:
        return NameVector(lv.copy(), Coverage.LAST_ONLY)
    return NameVector(np.zeros(table.dimension), Coverage.NONE)


def batch_name_vectors(table, first_names, last_names):
    """Name vectors for aligned lists of first/last names.

    Returns an (n, dimension) matrix, the per-record Coverage list, and a
    boolean include mask that is False where neither name was found.
    """
    if len(first_names) != len(last_names):
        raise ValueError("first_names and last_names must have equal length")
    vectors = np.zeros((len(first_names), table.dimension))
    coverages = []
    for i, (first, last) in enumerate(zip(first_names, last_names)):
        nv = name_vector(table, first, last)
        vectors[i] = nv.vector
        coverages.append(nv.coverage)
    include = np.array([c is not Coverage.NONE for c in coverages], dtype=bool)
    return vectors, coverages, include


def collect_name_tokens(first_names, last_names) -> set[str]:
    """Normalized, non-empty name tokens -- the natural load allowlist."""
    tokens = set()
    for name in list(first_names) + list(last_names):
        if name is None:
            continue
        token = normalize_token(name)
        if token:
            tokens.add(token)
    return tokens
