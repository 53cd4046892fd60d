"""Corpus data model: tables, passages, links, fused blocks, QA instances.

A fused block is one table row concatenated with the passages linked to
that row; every table row yields exactly one block. Blocks are the unit
of retrieval everywhere downstream.

File schemas (line-delimited JSON, UTF-8, one record per line):
    tables:   {"table_id", "title", "header": [...], "rows": [[...], ...]}
    passages: {"passage_id", "title", "text"}
    links:    {"table_id", "row_index", "passage_id"}
    qa:       {"question_id", "q", "a", "table_id", "oracle_block" (optional)}
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path

from .jsonl import RecordError, read_records


class CorpusError(ValueError):
    """Invalid corpus content (duplicate ids, dangling references, ...)."""


@dataclass(frozen=True)
class Table:
    table_id: str
    title: str
    header: list[str]
    rows: list[list[str]]


@dataclass(frozen=True)
class Passage:
    passage_id: str
    title: str
    text: str


@dataclass(frozen=True)
class EntityLink:
    table_id: str
    row_index: int
    passage_id: str


@dataclass(frozen=True)
class FusedBlock:
    """One table row plus its linked passages, with cached linearization."""

    block_id: str
    table_id: str
    table_title: str
    row_index: int
    header: list[str]
    row_cells: list[str]
    passages: list[Passage]
    linearized_text: str


@dataclass(frozen=True)
class QAInstance:
    """A question with its answer, gold table, and that table's blocks.

    ``answer_blocks`` is derived: the ids of blocks among ``block_ids``
    whose linearized text contains the answer (see answer_match).
    ``oracle_block`` is the ground-truth supporting block and exists only
    in synthetic corpora.
    """

    question_id: str
    question: str
    answer: str
    table_id: str
    block_ids: list[str]
    answer_blocks: list[str]
    oracle_block: str | None = None


@dataclass
class Corpus:
    tables: dict[str, Table] = field(default_factory=dict)
    passages: dict[str, Passage] = field(default_factory=dict)
    links: list[EntityLink] = field(default_factory=list)


def block_id_for(table_id: str, row_index: int) -> str:
    """Deterministic block id for a (table, row) pair."""
    return f"{table_id}:{row_index}"


def _require(record: dict, keys: list[str], path: Path, lineno: int) -> None:
    for key in keys:
        if key not in record:
            raise RecordError(f"{path}:{lineno}: missing field {key!r}")


def load_corpus(tables_path: str | Path, passages_path: str | Path,
                links_path: str | Path) -> Corpus:
    """Load and validate a corpus from record files.

    Rejects duplicate ids, malformed rows, and links that reference an
    unknown table/passage or an out-of-range row, naming the offending
    line. An empty links file is valid (table-only blocks).
    """
    tables_path = Path(tables_path)
    passages_path = Path(passages_path)
    links_path = Path(links_path)
    corpus = Corpus()

    for lineno, rec in read_records(tables_path):
        _require(rec, ["table_id", "title", "header", "rows"], tables_path, lineno)
        table_id = str(rec["table_id"])
        header = [str(h) for h in rec["header"]]
        rows = [[str(c) for c in row] for row in rec["rows"]]
        if table_id in corpus.tables:
            raise CorpusError(f"{tables_path}:{lineno}: duplicate table_id {table_id!r}")
        if not header:
            raise CorpusError(f"{tables_path}:{lineno}: table {table_id!r} has no columns")
        if any(not name for name in header):
            raise CorpusError(f"{tables_path}:{lineno}: table {table_id!r} has an empty header name")
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise CorpusError(
                    f"{tables_path}:{lineno}: table {table_id!r} row {i} has "
                    f"{len(row)} cells, expected {len(header)}"
                )
        corpus.tables[table_id] = Table(table_id, str(rec["title"]), header, rows)

    for lineno, rec in read_records(passages_path):
        _require(rec, ["passage_id", "title", "text"], passages_path, lineno)
        passage_id = str(rec["passage_id"])
        if passage_id in corpus.passages:
            raise CorpusError(f"{passages_path}:{lineno}: duplicate passage_id {passage_id!r}")
        corpus.passages[passage_id] = Passage(passage_id, str(rec["title"]), str(rec["text"]))

    for lineno, rec in read_records(links_path):
        _require(rec, ["table_id", "row_index", "passage_id"], links_path, lineno)
        link = EntityLink(str(rec["table_id"]), int(rec["row_index"]), str(rec["passage_id"]))
        table = corpus.tables.get(link.table_id)
        if table is None:
            raise CorpusError(f"{links_path}:{lineno}: link references unknown table {link.table_id!r}")
        if not 0 <= link.row_index < len(table.rows):
            raise CorpusError(
                f"{links_path}:{lineno}: link row_index {link.row_index} out of range "
                f"for table {link.table_id!r} ({len(table.rows)} rows)"
            )
        if link.passage_id not in corpus.passages:
            raise CorpusError(f"{links_path}:{lineno}: link references unknown passage {link.passage_id!r}")
        corpus.links.append(link)

    return corpus


def linearize_parts(title: str, header: list[str], cells: list[str],
                    passages: list[Passage]) -> str:
    """Deterministic block serialization.

    Table title, then "[ROW]", then "<header> is <cell> ;" per column, then
    "[PASSAGE] <title> : <text>" per linked passage. Single spaces between
    parts, no trailing whitespace.
    """
    parts = [title, "[ROW]"]
    for name, cell in zip(header, cells):
        parts.append(f"{name} is {cell} ;")
    for passage in passages:
        parts.append(f"[PASSAGE] {passage.title} : {passage.text}")
    return " ".join(p for p in parts if p).strip()


def build_fused_blocks(corpus: Corpus) -> list[FusedBlock]:
    """One block per (table, row), ordered by (table_id, row_index).

    A block's passages are the ones linked to its row, in links-file
    order, deduplicated by passage_id. A row with no links yields a
    table-only block.
    """
    linked: dict[tuple[str, int], list[Passage]] = {}
    for link in corpus.links:
        key = (link.table_id, link.row_index)
        passages = linked.setdefault(key, [])
        if all(p.passage_id != link.passage_id for p in passages):
            passages.append(corpus.passages[link.passage_id])

    blocks: list[FusedBlock] = []
    for table_id in sorted(corpus.tables):
        table = corpus.tables[table_id]
        for row_index, cells in enumerate(table.rows):
            passages = linked.get((table_id, row_index), [])
            text = linearize_parts(table.title, table.header, cells, passages)
            blocks.append(FusedBlock(
                block_id=block_id_for(table_id, row_index),
                table_id=table_id,
                table_title=table.title,
                row_index=row_index,
                header=table.header,
                row_cells=cells,
                passages=passages,
                linearized_text=text,
            ))
    return blocks


def linearize_block(block: FusedBlock) -> str:
    """Serialize a block; equals the block's cached ``linearized_text``."""
    return linearize_parts(block.table_title, block.header, block.row_cells, block.passages)


_STRIP_CHARS = string.punctuation + string.whitespace


def match_tokens(text: str) -> list[str]:
    """Normalize for answer matching: lowercase whitespace-split tokens with
    leading/trailing punctuation stripped; tokens emptied by stripping drop out."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP_CHARS)
        if tok:
            out.append(tok)
    return out


def answer_match(block: FusedBlock, answer: str) -> bool:
    """True iff the normalized answer occurs as a contiguous token
    subsequence of the block's normalized linearized text."""
    if not answer or not answer.strip():
        raise ValueError("answer string must be non-empty")
    needle = match_tokens(answer)
    if not needle:
        return False
    haystack = match_tokens(block.linearized_text)
    n = len(needle)
    for start in range(len(haystack) - n + 1):
        if haystack[start:start + n] == needle:
            return True
    return False


def lexical_links(corpus: Corpus) -> list[EntityLink]:
    """Fallback linker: link a row to a passage when any cell string equals
    the passage title after normalization. Used when no links are supplied."""
    by_title: dict[tuple[str, ...], list[str]] = {}
    for passage in corpus.passages.values():
        key = tuple(match_tokens(passage.title))
        if key:
            by_title.setdefault(key, []).append(passage.passage_id)

    links: list[EntityLink] = []
    for table_id in sorted(corpus.tables):
        table = corpus.tables[table_id]
        for row_index, cells in enumerate(table.rows):
            seen: set[str] = set()
            for cell in cells:
                for passage_id in by_title.get(tuple(match_tokens(cell)), []):
                    if passage_id not in seen:
                        seen.add(passage_id)
                        links.append(EntityLink(table_id, row_index, passage_id))
    return links


def load_qa(qa_path: str | Path, corpus: Corpus,
            blocks: list[FusedBlock]) -> list[QAInstance]:
    """Load QA instances, deriving each question's block list and answer blocks."""
    qa_path = Path(qa_path)
    by_table: dict[str, list[FusedBlock]] = {}
    for block in blocks:
        by_table.setdefault(block.table_id, []).append(block)

    instances: list[QAInstance] = []
    seen_ids: set[str] = set()
    for lineno, rec in read_records(qa_path):
        _require(rec, ["question_id", "q", "a", "table_id"], qa_path, lineno)
        question_id = str(rec["question_id"])
        if question_id in seen_ids:
            raise CorpusError(f"{qa_path}:{lineno}: duplicate question_id {question_id!r}")
        seen_ids.add(question_id)
        table_id = str(rec["table_id"])
        if table_id not in corpus.tables:
            raise CorpusError(f"{qa_path}:{lineno}: unknown table_id {table_id!r}")
        table_blocks = by_table.get(table_id, [])
        if not table_blocks:
            raise CorpusError(f"{qa_path}:{lineno}: table {table_id!r} has no blocks")
        answer = str(rec["a"])
        answer_blocks = [b.block_id for b in table_blocks if answer_match(b, answer)]
        oracle = rec.get("oracle_block")
        if oracle is not None:
            oracle = str(oracle)
            if oracle not in {b.block_id for b in table_blocks}:
                raise CorpusError(
                    f"{qa_path}:{lineno}: oracle_block {oracle!r} is not a block of table {table_id!r}"
                )
        instances.append(QAInstance(
            question_id=question_id,
            question=str(rec["q"]),
            answer=answer,
            table_id=table_id,
            block_ids=[b.block_id for b in table_blocks],
            answer_blocks=answer_blocks,
            oracle_block=oracle,
        ))
    return instances
