"""Tokenization and hashed bag-of-token features.

The feature space is a fixed power-of-two dimension filled by a seeded
64-bit hash (the "hashing trick"), so encoders have a corpus-independent
input width. Unigrams and adjacent-token bigrams are counted, then the
vector is scaled to unit Euclidean norm.

Reproducibility constants (do not change without bumping file format
versions): the hash is BLAKE2b with digest_size=8 and key HASH_KEY; the
low 64 bits are taken little-endian and masked to the feature dimension.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

# Tokens are lowercase words, numbers (decimal point kept inside a digit
# run), or a percent sign; everything else separates tokens.
_TOKEN_RE = re.compile(r"\d+(?:\.\d+)?|[a-z]+|%")

HASH_KEY = b"rowfuse-feat-v1"

MIN_DIMENSION = 1 << 10


@dataclass(frozen=True)
class SparseVector:
    """Sparse unit-norm feature vector in a fixed dimension.

    ``entries`` maps feature index to weight; indices are all < dimension
    and explicit zeros are never stored.
    """

    dimension: int
    entries: dict[int, float]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (indices, values) sorted by index, for deterministic math."""
        if not self.entries:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
        idx = np.array(sorted(self.entries), dtype=np.int64)
        vals = np.array([self.entries[i] for i in idx], dtype=np.float64)
        return idx, vals

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.entries.values()))


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word / number / ``%`` tokens."""
    return _TOKEN_RE.findall(text.lower())


def hash_index(feature: str, dimension: int) -> int:
    """Map a feature string into 0..dimension-1 with the fixed seeded hash."""
    digest = blake2b(feature.encode("utf-8"), digest_size=8, key=HASH_KEY).digest()
    return int.from_bytes(digest, "little") & (dimension - 1)


def _check_dimension(dimension: int) -> None:
    if dimension < MIN_DIMENSION or dimension & (dimension - 1):
        raise ValueError(
            f"feature dimension must be a power of two >= {MIN_DIMENSION}, got {dimension}"
        )


def token_counts(tokens: list[str], dimension: int, bigrams: bool = True) -> dict[int, float]:
    """Raw hashed counts of unigrams (and adjacent bigrams) before normalization.

    Unigrams and bigrams live in disjoint hash namespaces ("u:" / "b:") so a
    token never collides with itself as part of a pair by construction.
    """
    _check_dimension(dimension)
    counts: dict[int, float] = {}
    for tok in tokens:
        i = hash_index("u:" + tok, dimension)
        counts[i] = counts.get(i, 0.0) + 1.0
    if bigrams:
        for a, b in zip(tokens, tokens[1:]):
            i = hash_index("b:" + a + "\x1f" + b, dimension)
            counts[i] = counts.get(i, 0.0) + 1.0
    return counts


def normalize_counts(counts: dict[int, float], dimension: int) -> SparseVector:
    """Scale hashed counts to unit Euclidean norm (empty input -> zero vector)."""
    norm = math.sqrt(sum(v * v for v in counts.values()))
    if norm == 0.0:
        return SparseVector(dimension, {})
    return SparseVector(dimension, {i: v / norm for i, v in counts.items()})


def hash_features(tokens: list[str], dimension: int, bigrams: bool = True) -> SparseVector:
    """Unit-norm hashed unigram+bigram vector of a token list."""
    return normalize_counts(token_counts(tokens, dimension, bigrams=bigrams), dimension)
