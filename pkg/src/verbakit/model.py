"""Core domain types: tables, KB sub-graphs, passages, QA pairs, records.

Every type is a frozen dataclass with tuple-valued containers, so loaded
corpora are immutable and safe to share across threads. Invariants are
enforced at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .textnorm import normalize_answer

TITLE_ATTR = "[title]"


def _as_tuple(values: Iterable) -> tuple:
    return values if isinstance(values, tuple) else tuple(values)


@dataclass(frozen=True)
class Cell:
    """One table cell; text may be empty."""

    text: str

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class TableRow:
    cells: tuple[Cell, ...]

    def __post_init__(self):
        object.__setattr__(self, "cells", _as_tuple(self.cells))

    def texts(self) -> tuple[str, ...]:
        return tuple(c.text for c in self.cells)


@dataclass(frozen=True)
class Table:
    """A (possibly ragged) table; normalize_table makes it rectangular."""

    table_id: str
    page_title: str
    section_title: str
    headers: tuple[str, ...]
    rows: tuple[TableRow, ...]

    def __post_init__(self):
        object.__setattr__(self, "headers", _as_tuple(self.headers))
        object.__setattr__(self, "rows", _as_tuple(self.rows))

    @property
    def title(self) -> str:
        """Page title with the section title folded in when present."""
        if self.section_title:
            return f"{self.page_title} - {self.section_title}"
        return self.page_title


@dataclass(frozen=True)
class KBEdge:
    relation: str
    object: str

    def __post_init__(self):
        if not self.relation:
            raise ValueError("KB edge relation must be nonempty")


@dataclass(frozen=True)
class KBSubGraph:
    """One central entity and its outgoing (relation, object) edges."""

    graph_id: str
    subject: str
    edges: tuple[KBEdge, ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", _as_tuple(self.edges))
        if not self.subject:
            raise ValueError(f"sub-graph {self.graph_id!r}: subject must be nonempty")
        if not self.edges:
            raise ValueError(f"sub-graph {self.graph_id!r}: edges must be nonempty")


@dataclass(frozen=True)
class Passage:
    doc_id: str
    title: str
    text: str


@dataclass(frozen=True)
class QAExample:
    """A question with its accepted answers; entities are used for KB mining only."""

    question: str
    answers: tuple[str, ...]
    question_entities: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "answers", _as_tuple(self.answers))
        object.__setattr__(self, "question_entities", _as_tuple(self.question_entities))
        if not self.answers:
            raise ValueError(f"question {self.question!r}: answers must be nonempty")
        for answer in self.answers:
            if not normalize_answer(answer):
                raise ValueError(
                    f"question {self.question!r}: answer {answer!r} is empty after normalization"
                )


@dataclass(frozen=True)
class Pair:
    """(attribute, value); the attribute "[title]" is reserved for titles."""

    attribute: str
    value: str

    def __post_init__(self):
        if not self.attribute:
            raise ValueError("pair attribute must be nonempty")


@dataclass(frozen=True)
class Provenance:
    """Where a record came from: a table row or a KB subject."""

    kind: str  # "table" | "kb"
    source_id: str
    row_index: Optional[int] = None
    subject: Optional[str] = None


@dataclass(frozen=True)
class StructuredRecord:
    """Unified generator input: a title plus ordered attribute/value pairs."""

    record_id: str
    title: str
    pairs: tuple[Pair, ...]
    provenance: Optional[Provenance] = None

    def __post_init__(self):
        object.__setattr__(self, "pairs", _as_tuple(self.pairs))
        if not self.pairs:
            raise ValueError(f"record {self.record_id!r}: pairs must be nonempty")
        n_titles = sum(1 for p in self.pairs if p.attribute == TITLE_ATTR)
        if n_titles > 1:
            raise ValueError(f"record {self.record_id!r}: more than one {TITLE_ATTR} pair")

    def value_pairs(self) -> tuple[Pair, ...]:
        """All pairs except the reserved title pair."""
        return tuple(p for p in self.pairs if p.attribute != TITLE_ATTR)

    def reference_text(self) -> str:
        """Attributes and values of all pairs, title included, as one string.

        This is the reference side for ROUGE-based filtering and beam
        re-ranking. A synthetic title pair is prepended when the stored pairs
        lack one, so the title always contributes tokens.
        """
        parts = []
        if not any(p.attribute == TITLE_ATTR for p in self.pairs):
            parts.append(f"{TITLE_ATTR} {self.title}")
        parts.extend(f"{p.attribute} {p.value}" for p in self.pairs)
        return " ".join(parts)


@dataclass(frozen=True)
class TrainingExample:
    """A data-to-text pair: structured source and target sentence."""

    source: StructuredRecord
    target: str

    def __post_init__(self):
        if not self.target:
            raise ValueError(f"training example {self.source.record_id!r}: target must be nonempty")
