"""Representation transforms between structured sources and generator inputs.

Covers triple→pair conversion, table-row and sub-graph record building,
record splitting and serialization for generators, table normalization
heuristics, de-duplication, and raw linearization with the "|" row separator
and the "empty" filler token.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .model import (
    TITLE_ATTR,
    Cell,
    KBSubGraph,
    Pair,
    Provenance,
    StructuredRecord,
    Table,
    TableRow,
)

# Head marker for context/title triples in ontology-annotated triple sets.
TABLE_CONTEXT = "[TABLECONTEXT]"
# Filler written into padded cells by normalize_table.
EMPTY_TOKEN = "empty"

DEFAULT_MAX_PAIRS = 7
DEFAULT_MAX_CELL_WORDS = 80


@dataclass(frozen=True)
class Triple:
    """(head, relation, tail) as found in ontology-annotated data-to-text sets."""

    head: str
    relation: str
    tail: str

    def __post_init__(self):
        if not self.relation:
            raise ValueError("triple relation must be nonempty")


def _is_title_triple(t: Triple) -> bool:
    return t.relation == TITLE_ATTR or t.head == TABLE_CONTEXT


def triples_to_pairs(triples: Sequence[Triple]) -> tuple[str, list[Pair]]:
    """Drop triple heads, keeping (relation, tail) pairs in input order.

    A triple whose relation is "[title]" (or whose head is the reserved
    context token) becomes the title pair. Identical duplicate title triples
    collapse to one; distinct ones are an error.
    """
    if not triples:
        raise ValueError("triples must be nonempty")
    title = ""
    pairs: list[Pair] = []
    seen_title = False
    title_tails = []
    for t in triples:
        if _is_title_triple(t):
            if t.tail not in title_tails:
                title_tails.append(t.tail)
            if len(title_tails) > 1:
                raise ValueError(f"multiple distinct title triples: {title_tails!r}")
            if not seen_title:
                title = t.tail
                pairs.append(Pair(TITLE_ATTR, t.tail))
                seen_title = True
        else:
            pairs.append(Pair(t.relation, t.tail))
    return title, pairs


def row_to_record(table: Table, row_index: int) -> StructuredRecord:
    """Turn one row of a normalized table into a title+pairs record.

    The title pair comes first, then one (header, cell) pair per nonempty
    cell in column order. Cells padded with the filler token count as
    nonempty and are kept.
    """
    if not 0 <= row_index < len(table.rows):
        raise ValueError(f"table {table.table_id!r}: row index {row_index} out of range")
    row = table.rows[row_index]
    if len(row.cells) != len(table.headers):
        raise ValueError(
            f"table {table.table_id!r}: row {row_index} has {len(row.cells)} cells "
            f"for {len(table.headers)} headers (not normalized)"
        )
    title = table.title
    pairs = [Pair(TITLE_ATTR, title)]
    for header, cell in zip(table.headers, row.cells):
        if cell.text:
            pairs.append(Pair(header, cell.text))
    return StructuredRecord(
        record_id=f"{table.table_id}-r{row_index}",
        title=title,
        pairs=tuple(pairs),
        provenance=Provenance(kind="table", source_id=table.table_id, row_index=row_index),
    )


def subgraph_to_record(g: KBSubGraph) -> StructuredRecord:
    """Treat the subject entity as the title; one pair per edge, in order."""
    pairs = [Pair(TITLE_ATTR, g.subject)]
    pairs.extend(Pair(e.relation, e.object) for e in g.edges)
    return StructuredRecord(
        record_id=g.graph_id,
        title=g.subject,
        pairs=tuple(pairs),
        provenance=Provenance(kind="kb", source_id=g.graph_id, subject=g.subject),
    )


def split_record(rec: StructuredRecord, max_pairs: int = DEFAULT_MAX_PAIRS) -> list[StructuredRecord]:
    """Partition value pairs into consecutive groups of at most max_pairs.

    Every output record repeats the title pair first and gets the id suffix
    "-g0", "-g1", ... Concatenating the groups reproduces the original
    value-pair sequence.
    """
    if max_pairs < 1:
        raise ValueError("max_pairs must be >= 1")
    title_pair = next((p for p in rec.pairs if p.attribute == TITLE_ATTR), None)
    if title_pair is None:
        title_pair = Pair(TITLE_ATTR, rec.title)
    values = rec.value_pairs()
    groups = [values[i:i + max_pairs] for i in range(0, len(values), max_pairs)] or [()]
    return [
        StructuredRecord(
            record_id=f"{rec.record_id}-g{i}",
            title=rec.title,
            pairs=(title_pair, *group),
            provenance=rec.provenance,
        )
        for i, group in enumerate(groups)
    ]


def serialize_record(rec: StructuredRecord) -> str:
    """One-way generator serialization: "<H> attr <T> value" per pair."""
    return " ".join(f"<H> {p.attribute} <T> {p.value}" for p in rec.pairs)


def _truncate_cell(cell: Cell, max_words: int) -> Cell:
    if cell.word_count > max_words:
        return Cell(" ".join(cell.text.split()[:max_words]))
    return cell


def normalize_table(t: Table, max_cell_words: int = DEFAULT_MAX_CELL_WORDS) -> Table:
    """Make a table rectangular and bound its cell lengths. Idempotent.

    Rows are padded with the filler token or truncated to the header width;
    cells longer than max_cell_words keep only their first max_cell_words
    words; missing headers default to "column 1..n" sized to the widest row.
    """
    if not t.rows:
        raise ValueError(f"table {t.table_id!r}: cannot normalize a table with no rows")
    headers = t.headers
    if not headers:
        width = max(len(r.cells) for r in t.rows)
        if width == 0:
            raise ValueError(f"table {t.table_id!r}: no headers and no cells")
        headers = tuple(f"column {i + 1}" for i in range(width))
    width = len(headers)
    rows = []
    for row in t.rows:
        cells = [_truncate_cell(c, max_cell_words) for c in row.cells[:width]]
        cells.extend(Cell(EMPTY_TOKEN) for _ in range(width - len(cells)))
        rows.append(TableRow(tuple(cells)))
    return Table(
        table_id=t.table_id,
        page_title=t.page_title,
        section_title=t.section_title,
        headers=headers,
        rows=tuple(rows),
    )


def _dedup_key(t: Table, max_cell_words: int):
    try:
        n = normalize_table(t, max_cell_words)
    except ValueError:
        # Tables that cannot be normalized (no rows) key on their raw shape.
        return (t.page_title, t.headers, tuple(r.texts() for r in t.rows))
    return (n.page_title, n.headers, tuple(r.texts() for r in n.rows))


def dedup_tables(tables: Sequence[Table], max_cell_words: int = DEFAULT_MAX_CELL_WORDS) -> list[Table]:
    """Keep the first of any tables equal in (page_title, headers, rows)
    after normalization; ids and section titles are excluded from the key."""
    seen = set()
    kept = []
    for t in tables:
        key = _dedup_key(t, max_cell_words)
        if key not in seen:
            seen.add(key)
            kept.append(t)
    return kept


def row_line(texts: Sequence[str]) -> str:
    """One linearized row: cells joined by ", " between "|" separators."""
    return "| " + ", ".join(texts) + " |"


def linearize_raw(t: Table) -> str:
    """Flatten a normalized table: TITLE line, then header and data rows."""
    lines = [row_line(t.headers)]
    lines.extend(row_line(r.texts()) for r in t.rows)
    return f"TITLE: {t.page_title}\n" + " ".join(lines)


def linearize_subgraph(g: KBSubGraph) -> str:
    """Flatten a sub-graph in the same row style: one row per edge."""
    lines = [row_line((e.relation, e.object)) for e in g.edges]
    return f"TITLE: {g.subject}\n" + " ".join(lines)
