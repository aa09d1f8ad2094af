"""Chunking, BM25 inverted index, search, hot-swap augmentation, and R@k.

Chunks are ~budget-word retrieval units cut greedily from unit streams (row
texts, generated sentences, passage texts). The index is standard Okapi
BM25 over tokenize(title + " " + text):

    idf(t)     = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(q,d) = sum_t idf(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len/avg_len))

summed over the query's unique terms in first-occurrence order. Indexes are
immutable; augmentation returns a new value equivalent to a full rebuild.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .convert import row_line
from .corpus import CorpusError, write_lines_atomic
from .model import KBSubGraph, Passage, QAExample, Table
from .textnorm import answer_token_lists, contains_tokens, normalize_answer, tokenize
from .verbalizer import VerbalizedDoc

DEFAULT_BUDGET = 100
DEFAULT_K1 = 0.9
DEFAULT_B = 0.4
DEFAULT_KS = (20, 100)

SOURCE_KINDS = ("text", "table-raw", "table-verbalized", "kb-raw", "kb-verbalized")


@dataclass(frozen=True)
class Chunk:
    """One retrieval unit. forced_split marks pieces of an oversize unit."""

    chunk_id: str
    parent_doc_id: str
    title: str
    text: str
    source_kind: str
    forced_split: bool = False

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source_kind {self.source_kind!r}")

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class ChunkUnit:
    """One chunkable unit of text with its parent document's metadata."""

    text: str
    parent_doc_id: str
    title: str
    source_kind: str


def _greedy_groups(texts: Sequence[str], budget: int) -> list[tuple[list[str], bool]]:
    """Greedily pack whitespace-normalized texts into <= budget-word groups.

    A single text longer than budget is cut at word boundaries into
    budget-word pieces, each its own flagged group. Empty texts are dropped.
    """
    groups: list[tuple[list[str], bool]] = []
    current: list[str] = []
    current_wc = 0
    for text in texts:
        words = text.split()
        if not words:
            continue
        if len(words) > budget:
            if current:
                groups.append((current, False))
                current, current_wc = [], 0
            for i in range(0, len(words), budget):
                groups.append(([" ".join(words[i:i + budget])], True))
            continue
        if current and current_wc + len(words) > budget:
            groups.append((current, False))
            current, current_wc = [], 0
        current.append(" ".join(words))
        current_wc += len(words)
    if current:
        groups.append((current, False))
    return groups


def chunk_units(units: Iterable[ChunkUnit], budget: int = DEFAULT_BUDGET) -> list[Chunk]:
    """Cut a unit stream into chunks of about budget words.

    Units accumulate while the running total stays within budget; a chunk
    also closes when the parent document changes, so no chunk spans two
    documents. Unit-internal whitespace is normalized to single spaces, which
    makes chunk concatenation reproduce the joined unit stream exactly.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    chunks: list[Chunk] = []
    counters: dict[str, int] = {}
    pending_meta = None
    pending: list[str] = []

    def flush():
        if pending_meta is None:
            return
        parent, title, kind = pending_meta
        for texts, forced in _greedy_groups(pending, budget):
            n = counters.get(parent, 0)
            counters[parent] = n + 1
            chunks.append(
                Chunk(
                    chunk_id=f"{parent}-c{n}",
                    parent_doc_id=parent,
                    title=title,
                    text=" ".join(texts),
                    source_kind=kind,
                    forced_split=forced,
                )
            )

    for unit in units:
        meta = (unit.parent_doc_id, unit.title, unit.source_kind)
        if meta != pending_meta:
            flush()
            pending_meta = meta
            pending = []
        pending.append(unit.text)
    flush()
    return chunks


def chunk_passages(passages: Sequence[Passage], budget: int = DEFAULT_BUDGET) -> list[Chunk]:
    """One unit per passage; oversize passages get forced splits."""
    units = [ChunkUnit(p.text, p.doc_id, p.title, "text") for p in passages]
    return chunk_units(units, budget)


def chunk_verbalized_docs(
    docs: Sequence[VerbalizedDoc], budget: int = DEFAULT_BUDGET
) -> list[Chunk]:
    """Chunk generated documents unit by unit (one unit per row group)."""
    units = []
    for doc in docs:
        kind = "table-verbalized" if doc.provenance.kind == "table" else "kb-verbalized"
        units.extend(ChunkUnit(t, doc.doc_id, doc.title, kind) for t in doc.unit_texts())
    return chunk_units(units, budget)


def chunk_raw_tables(tables: Sequence[Table], budget: int = DEFAULT_BUDGET) -> list[Chunk]:
    """Chunk linearized rows of normalized tables.

    The header row is repeated as the first unit of every chunk so each chunk
    is self-describing; row packing uses the budget left after the header.
    """
    chunks = []
    for t in tables:
        header = " ".join(row_line(t.headers).split())
        effective = max(1, budget - len(header.split()))
        row_texts = [row_line(r.texts()) for r in t.rows]
        for i, (texts, forced) in enumerate(_greedy_groups(row_texts, effective)):
            chunks.append(
                Chunk(
                    chunk_id=f"{t.table_id}-c{i}",
                    parent_doc_id=t.table_id,
                    title=t.title,
                    text=" ".join([header] + texts),
                    source_kind="table-raw",
                    forced_split=forced,
                )
            )
    return chunks


def chunk_raw_subgraphs(graphs: Sequence[KBSubGraph], budget: int = DEFAULT_BUDGET) -> list[Chunk]:
    """Chunk flattened sub-graphs, one linearized edge per unit."""
    units = []
    for g in graphs:
        units.extend(
            ChunkUnit(row_line((e.relation, e.object)), g.graph_id, g.subject, "kb-raw")
            for e in g.edges
        )
    return chunk_units(units, budget)


@dataclass(frozen=True)
class DocIndex:
    """Immutable Okapi BM25 inverted index.

    postings map each term to (ordinal, term frequency) entries sorted by
    ordinal; ordinals index chunk_ids / doc_lengths / source_kinds. chunks
    holds the indexed corpus when available (build_index keeps it; a loaded
    index has it only if the chunks are re-attached); search works without
    it, answer-containment evaluation does not.
    """

    k1: float
    b: float
    chunk_ids: tuple[str, ...]
    doc_lengths: tuple[int, ...]
    source_kinds: tuple[str, ...]
    postings: dict
    avg_doc_len: float
    chunks: Optional[tuple[Chunk, ...]] = None

    @property
    def n_docs(self) -> int:
        return len(self.chunk_ids)

    def chunk_by_id(self, chunk_id: str) -> Chunk:
        if self.chunks is None:
            raise ValueError("index has no attached chunks; load it with its chunk corpus")
        if not hasattr(self, "_by_id"):
            object.__setattr__(self, "_by_id", {c.chunk_id: c for c in self.chunks})
        return self._by_id[chunk_id]


def _index_tokens(chunk: Chunk) -> list[str]:
    return tokenize(chunk.title + " " + chunk.text)


def build_index(
    chunks: Sequence[Chunk], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> DocIndex:
    """Build an index over tokenize(title + " " + text) of each chunk."""
    ids = []
    seen = set()
    lengths = []
    kinds = []
    postings: dict[str, list[tuple[int, int]]] = {}
    for ordinal, chunk in enumerate(chunks):
        if chunk.chunk_id in seen:
            raise ValueError(f"duplicate chunk_id {chunk.chunk_id!r}")
        seen.add(chunk.chunk_id)
        ids.append(chunk.chunk_id)
        kinds.append(chunk.source_kind)
        tokens = _index_tokens(chunk)
        lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))
    avg = sum(lengths) / len(lengths) if lengths else 0.0
    return DocIndex(
        k1=k1,
        b=b,
        chunk_ids=tuple(ids),
        doc_lengths=tuple(lengths),
        source_kinds=tuple(kinds),
        postings={t: tuple(p) for t, p in postings.items()},
        avg_doc_len=avg,
        chunks=tuple(chunks),
    )


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    score: float
    rank: int


def _query_terms(query: str) -> list[str]:
    terms = []
    for tok in tokenize(query):
        if tok not in terms:
            terms.append(tok)
    return terms


def search(index: DocIndex, query: str, k: int) -> list[SearchHit]:
    """Top-k chunks by BM25 score; ties break on chunk_id.

    Only chunks with score > 0 are returned, so fewer than k hits is
    possible.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores: dict[int, float] = {}
    n = index.n_docs
    for term in _query_terms(query):
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
        for ordinal, tf in plist:
            norm = tf + index.k1 * (1 - index.b + index.b * index.doc_lengths[ordinal] / index.avg_doc_len)
            scores[ordinal] = scores.get(ordinal, 0.0) + idf * tf * (index.k1 + 1) / norm
    ranked = sorted(
        (o for o, s in scores.items() if s > 0.0),
        key=lambda o: (-scores[o], index.chunk_ids[o]),
    )
    return [
        SearchHit(chunk_id=index.chunk_ids[o], score=scores[o], rank=i + 1)
        for i, o in enumerate(ranked[:k])
    ]


def augment_index(index: DocIndex, new_chunks: Sequence[Chunk]) -> DocIndex:
    """Extend an index with new chunks; equivalent to a full rebuild.

    Existing chunks keep their postings; only the corpus statistics (N,
    average length, document frequencies) shift. New chunk ids must not
    collide with indexed ones.
    """
    existing = set(index.chunk_ids)
    ids = list(index.chunk_ids)
    lengths = list(index.doc_lengths)
    kinds = list(index.source_kinds)
    postings = {t: list(p) for t, p in index.postings.items()}
    for offset, chunk in enumerate(new_chunks):
        if chunk.chunk_id in existing:
            raise ValueError(f"chunk_id collision on augment: {chunk.chunk_id!r}")
        existing.add(chunk.chunk_id)
        ordinal = index.n_docs + offset
        ids.append(chunk.chunk_id)
        kinds.append(chunk.source_kind)
        tokens = _index_tokens(chunk)
        lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for term, tf in counts.items():
            postings.setdefault(term, []).append((ordinal, tf))
    if index.chunks is not None:
        chunks = index.chunks + tuple(new_chunks)
    else:
        chunks = None
    avg = sum(lengths) / len(lengths) if lengths else 0.0
    return DocIndex(
        k1=index.k1,
        b=index.b,
        chunk_ids=tuple(ids),
        doc_lengths=tuple(lengths),
        source_kinds=tuple(kinds),
        postings={t: tuple(p) for t, p in postings.items()},
        avg_doc_len=avg,
        chunks=chunks,
    )


@dataclass(frozen=True)
class RecallReport:
    """R@k: fraction of questions with an answer-bearing chunk in the top k."""

    per_k: dict
    n_questions: int


def recall_at_k(
    index: DocIndex, qas: Sequence[QAExample], ks: Sequence[int] = DEFAULT_KS
) -> RecallReport:
    """Answer-containment recall of the top-k retrievals per question.

    Containment is checked against chunk text only (titles score retrieval
    but do not count as evidence). Requires an index with attached chunks.
    """
    ks = list(ks)
    if not ks or any(k < 1 for k in ks) or ks != sorted(ks):
        raise ValueError("ks must be a nonempty ascending list of positive integers")
    if index.chunks is None:
        raise ValueError("index has no attached chunks; load it with its chunk corpus")
    hits_at = {k: 0 for k in ks}
    max_k = ks[-1]
    for qa in qas:
        needles = answer_token_lists(qa.answers)
        best_rank = None
        for hit in search(index, qa.question, max_k):
            chunk = index.chunk_by_id(hit.chunk_id)
            if contains_tokens(tokenize(normalize_answer(chunk.text)), needles):
                best_rank = hit.rank
                break
        if best_rank is not None:
            for k in ks:
                if best_rank <= k:
                    hits_at[k] += 1
    n = len(qas)
    per_k = {k: (hits_at[k] / n if n else 0.0) for k in ks}
    return RecallReport(per_k=per_k, n_questions=n)


# --- persistence ---------------------------------------------------------

_MAGIC = b"VFIDX1"


def save_index(index: DocIndex, path) -> None:
    """Write the binary index format (see format notes in this function).

    Layout, all integers little-endian: magic "VFIDX1"; header k1 (f64),
    b (f64), N (u64), avg_doc_len (f64); term dictionary as u64 count then
    per term (sorted) u32 byte length, UTF-8 bytes, u32 document frequency;
    postings per term in dictionary order as df pairs of (u32 ordinal delta,
    u32 term frequency); doc table as u64 count then per chunk u32+bytes
    chunk_id, u32 token length, u32+bytes source_kind. Chunk text/titles are
    not stored; they live in the chunk JSONL. The file is written atomically
    (temp file + rename).
    """
    terms = sorted(index.postings)
    directory = os.path.dirname(os.path.abspath(str(path)))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".idx")
    try:
        with os.fdopen(fd, "wb") as out:
            _write_index(index, terms, out)
        os.replace(tmp_path, str(path))
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _write_index(index: DocIndex, terms, out) -> None:
    out.write(_MAGIC)
    out.write(struct.pack("<ddQd", index.k1, index.b, index.n_docs, index.avg_doc_len))
    out.write(struct.pack("<Q", len(terms)))
    for term in terms:
        raw = term.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
        out.write(struct.pack("<I", len(index.postings[term])))
    for term in terms:
        previous = 0
        for i, (ordinal, tf) in enumerate(index.postings[term]):
            delta = ordinal if i == 0 else ordinal - previous
            out.write(struct.pack("<II", delta, tf))
            previous = ordinal
    out.write(struct.pack("<Q", index.n_docs))
    for chunk_id, length, kind in zip(index.chunk_ids, index.doc_lengths, index.source_kinds):
        raw_id = chunk_id.encode("utf-8")
        raw_kind = kind.encode("utf-8")
        out.write(struct.pack("<I", len(raw_id)))
        out.write(raw_id)
        out.write(struct.pack("<I", length))
        out.write(struct.pack("<I", len(raw_kind)))
        out.write(raw_kind)


def load_index(path, chunks: Optional[Sequence[Chunk]] = None) -> DocIndex:
    """Read a saved index; optionally re-attach its chunk corpus.

    When chunks are given they must match the doc table (same ids in the
    same order); containment-based evaluation needs them.
    """
    with open(path, "rb") as handle:
        data = handle.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not an index file (bad magic)")
    offset = len(_MAGIC)

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    def take_bytes(n):
        nonlocal offset
        raw = data[offset:offset + n]
        offset += n
        return raw

    k1, b, n_docs, avg = take("<ddQd")
    (term_count,) = take("<Q")
    terms = []
    dfs = []
    for _ in range(term_count):
        (length,) = take("<I")
        terms.append(take_bytes(length).decode("utf-8"))
        (df,) = take("<I")
        dfs.append(df)
    postings = {}
    for term, df in zip(terms, dfs):
        entries = []
        ordinal = 0
        for i in range(df):
            delta, tf = take("<II")
            ordinal = delta if i == 0 else ordinal + delta
            entries.append((ordinal, tf))
        postings[term] = tuple(entries)
    (doc_count,) = take("<Q")
    if doc_count != n_docs:
        raise ValueError(f"{path}: doc table count {doc_count} != header N {n_docs}")
    ids, lengths, kinds = [], [], []
    for _ in range(doc_count):
        (id_len,) = take("<I")
        ids.append(take_bytes(id_len).decode("utf-8"))
        (doc_len,) = take("<I")
        lengths.append(doc_len)
        (kind_len,) = take("<I")
        kinds.append(take_bytes(kind_len).decode("utf-8"))
    attached = None
    if chunks is not None:
        if [c.chunk_id for c in chunks] != ids:
            raise ValueError(f"{path}: provided chunks do not match the index doc table")
        attached = tuple(chunks)
    return DocIndex(
        k1=k1,
        b=b,
        chunk_ids=tuple(ids),
        doc_lengths=tuple(lengths),
        source_kinds=tuple(kinds),
        postings=postings,
        avg_doc_len=avg,
        chunks=attached,
    )


# --- chunk JSONL ----------------------------------------------------------


def chunks_to_jsonl(chunks: Iterable[Chunk]):
    for c in chunks:
        yield json.dumps(
            {
                "chunk_id": c.chunk_id,
                "parent_doc_id": c.parent_doc_id,
                "title": c.title,
                "text": c.text,
                "source_kind": c.source_kind,
            },
            ensure_ascii=False,
        ) + "\n"


def save_chunks(path, chunks: Sequence[Chunk]) -> int:
    return write_lines_atomic(path, chunks_to_jsonl(chunks))


def load_chunks(path) -> list[Chunk]:
    """Load a chunk corpus; the forced_split flag is construction-time only
    and not persisted."""
    chunks = []
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(path, line_no, f"malformed JSON: {exc.msg}") from exc
            required = ("chunk_id", "parent_doc_id", "title", "text", "source_kind")
            if not isinstance(obj, dict):
                raise CorpusError(path, line_no, "expected a JSON object")
            for name in required:
                if name not in obj:
                    raise CorpusError(path, line_no, f"missing field {name}")
                if not isinstance(obj[name], str):
                    raise CorpusError(path, line_no, f"field {name} must be a string")
            for name in obj:
                if name not in required:
                    raise CorpusError(path, line_no, f"unexpected field {name}")
            if obj["chunk_id"] in seen:
                raise CorpusError(path, line_no, f"duplicate chunk_id {obj['chunk_id']!r}")
            seen.add(obj["chunk_id"])
            try:
                chunks.append(
                    Chunk(
                        chunk_id=obj["chunk_id"],
                        parent_doc_id=obj["parent_doc_id"],
                        title=obj["title"],
                        text=obj["text"],
                        source_kind=obj["source_kind"],
                    )
                )
            except ValueError as exc:
                raise CorpusError(path, line_no, str(exc)) from exc
    return chunks
