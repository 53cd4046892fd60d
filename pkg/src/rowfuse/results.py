"""Ranked retrieval results, shared by the sparse and dense retrievers."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class RetrievalResult:
    """Ranked (block_id, score) list for one question, descending score."""

    question_id: str = ""
    hits: list[tuple[str, float]] = field(default_factory=list)

    def block_ids(self, k: int | None = None) -> list[str]:
        hits = self.hits if k is None else self.hits[:k]
        return [block_id for block_id, _ in hits]
