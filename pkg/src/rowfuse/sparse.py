"""Okapi BM25 inverted index over fused blocks.

Serves two roles: a lexical baseline retriever and the miner that picks
the highest-scoring non-answer block as a training negative.

Scoring: for each unique query term t (first-occurrence order) present in
document D,

    score(q, D) += idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(D) / avgdl))
    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))

Query term multiplicity is ignored. Accumulation happens in query-term
order per document, so a brute-force evaluation of the same formula in
the same term order is bitwise identical.

Index file format ("BM25", little-endian throughout):
    magic       4 bytes  b"BM25"
    version     u32      currently 1
    k1, b       f64, f64
    N           u32      document count
    doc_lengths N x u32
    block ids   N x (u16 length + UTF-8 bytes)
    term count  u32
    per term:   u16 length + UTF-8 bytes, u32 postings count,
                postings as (u32 ordinal, u32 term frequency) pairs
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

from .corpus import FusedBlock
from .results import RetrievalResult
from .text import tokenize

MAGIC = b"BM25"
VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class IndexFormatError(ValueError):
    """Index file is corrupt or has an unsupported version."""


@dataclass
class Bm25Index:
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    avg_doc_length: float
    n_docs: int
    k1: float
    b: float
    block_ids: list[str]

    def ordinal_of(self, block_id: str) -> int:
        if not hasattr(self, "_ordinals"):
            self._ordinals = {bid: i for i, bid in enumerate(self.block_ids)}
        return self._ordinals[block_id]

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_bm25_index(blocks: list[FusedBlock], k1: float = DEFAULT_K1,
                     b: float = DEFAULT_B) -> Bm25Index:
    """Index the tokenized linearized text of each block."""
    if not blocks:
        raise ValueError("cannot build a BM25 index over an empty block list")
    if k1 <= 0:
        raise ValueError(f"k1 must be > 0, got {k1}")
    if not 0 <= b <= 1:
        raise ValueError(f"b must be in [0, 1], got {b}")

    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for ordinal, block in enumerate(blocks):
        tokens = tokenize(block.linearized_text)
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))

    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=sum(doc_lengths) / len(doc_lengths),
        n_docs=len(blocks),
        k1=k1,
        b=b,
        block_ids=[blk.block_id for blk in blocks],
    )


def unique_query_terms(query: str) -> list[str]:
    """Tokenized query terms, deduplicated in first-occurrence order."""
    seen: set[str] = set()
    terms = []
    for tok in tokenize(query):
        if tok not in seen:
            seen.add(tok)
            terms.append(tok)
    return terms


def bm25_scores(index: Bm25Index, query: str) -> dict[int, float]:
    """Scores for every document sharing at least one term with the query.

    Documents absent from the result have score 0.
    """
    scores: dict[int, float] = {}
    for term in unique_query_terms(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for ordinal, tf in plist:
            dl = index.doc_lengths[ordinal]
            denom = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
            scores[ordinal] = scores.get(ordinal, 0.0) + idf * tf * (index.k1 + 1.0) / denom
    return scores


def bm25_topk(index: Bm25Index, query: str, k: int,
              question_id: str = "") -> RetrievalResult:
    """Top-k blocks by descending score, ties broken by ascending ordinal.

    Blocks with score 0 (no term overlap) are excluded, so the result may
    hold fewer than k entries or be empty.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = bm25_scores(index, query)
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    return RetrievalResult(
        question_id=question_id,
        hits=[(index.block_ids[ordinal], score) for ordinal, score in ranked],
    )


def _write_str(out: list[bytes], s: str) -> None:
    data = s.encode("utf-8")
    if len(data) > 0xFFFF:
        raise ValueError(f"string too long to serialize ({len(data)} bytes)")
    out.append(struct.pack("<H", len(data)))
    out.append(data)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexFormatError(f"{self.path}: truncated file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (length,) = self.unpack("<H")
        return self.take(length).decode("utf-8")


def save_bm25_index(index: Bm25Index, path: str | Path) -> None:
    """Write the versioned binary index file described in the module docstring."""
    out: list[bytes] = [MAGIC, struct.pack("<I", VERSION)]
    out.append(struct.pack("<dd", index.k1, index.b))
    out.append(struct.pack("<I", index.n_docs))
    out.append(struct.pack(f"<{index.n_docs}I", *index.doc_lengths))
    for block_id in index.block_ids:
        _write_str(out, block_id)
    terms = sorted(index.postings)
    out.append(struct.pack("<I", len(terms)))
    for term in terms:
        _write_str(out, term)
        plist = index.postings[term]
        out.append(struct.pack("<I", len(plist)))
        for ordinal, tf in plist:
            out.append(struct.pack("<II", ordinal, tf))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(out))
    tmp.replace(path)


def load_bm25_index(path: str | Path) -> Bm25Index:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != MAGIC:
        raise IndexFormatError(f"{path}: not a BM25 index file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise IndexFormatError(f"{path}: unsupported index version {version}")
    k1, b = reader.unpack("<dd")
    (n_docs,) = reader.unpack("<I")
    doc_lengths = list(reader.unpack(f"<{n_docs}I"))
    block_ids = [reader.read_str() for _ in range(n_docs)]
    (n_terms,) = reader.unpack("<I")
    postings: dict[str, list[tuple[int, int]]] = {}
    for _ in range(n_terms):
        term = reader.read_str()
        (count,) = reader.unpack("<I")
        plist = []
        for _ in range(count):
            ordinal, tf = reader.unpack("<II")
            plist.append((ordinal, tf))
        postings[term] = plist
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=sum(doc_lengths) / n_docs if n_docs else 0.0,
        n_docs=n_docs,
        k1=k1,
        b=b,
        block_ids=block_ids,
    )
