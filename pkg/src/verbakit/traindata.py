"""Retriever training-data construction with iterative hard-negative mining.

Positives come from the answer-bearing rows/sub-graphs of mined questions,
padded to ~100 words with other rows of the same table; negatives are the
top-ranked chunks for the question that do not contain the answer. A later
mining pass over a joint index swaps in harder negatives while keeping the
first-round positives.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .convert import linearize_subgraph, row_line
from .corpus import CorpusError, write_lines_atomic
from .curation import MinedTriple
from .model import KBSubGraph, Table
from .retrieval import DocIndex, search
from .textnorm import answer_token_lists, contains_tokens, normalize_answer, rouge1, tokenize
from .verbalizer import VerbalizedDoc

FORMATS = ("raw", "verbalized")
DEFAULT_MIN_POSITIVE_WORDS = 100
# How deep to walk the ranked list while collecting non-answer negatives.
DEFAULT_NEGATIVE_POOL = 100

FLAG_NO_NEGATIVES = "no-negatives"
FLAG_NEGATIVES_UNCHANGED = "negatives-unchanged"


@dataclass(frozen=True)
class RetrieverTrainingInstance:
    """(question, positives, negatives); flags carry construction warnings."""

    question: str
    answers: tuple[str, ...]
    positives: tuple[str, ...]
    negatives: tuple[str, ...]
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        object.__setattr__(self, "positives", tuple(self.positives))
        object.__setattr__(self, "negatives", tuple(self.negatives))
        object.__setattr__(self, "flags", tuple(self.flags))
        if not self.positives:
            raise ValueError(f"instance for {self.question!r} has no positives")


def _contains(text: str, needles) -> bool:
    return contains_tokens(tokenize(normalize_answer(text)), needles)


def check_instances(instances: Sequence[RetrieverTrainingInstance]) -> None:
    """Containment re-check: every positive holds an answer, no negative does."""
    for inst in instances:
        needles = answer_token_lists(inst.answers)
        for text in inst.positives:
            if not _contains(text, needles):
                raise ValueError(f"instance for {inst.question!r}: positive lacks the answer")
        for text in inst.negatives:
            if _contains(text, needles):
                raise ValueError(f"instance for {inst.question!r}: negative contains the answer")


def _collect_negatives(
    neg_index: DocIndex, question: str, needles, n_negatives: int, pool: int
) -> list[str]:
    if n_negatives == 0:
        return []
    negatives = []
    for hit in search(neg_index, question, max(pool, n_negatives)):
        chunk = neg_index.chunk_by_id(hit.chunk_id)
        if _contains(chunk.text, needles):
            continue
        negatives.append(chunk.text)
        if len(negatives) >= n_negatives:
            break
    return negatives


def _docs_by_source(docs: Optional[Sequence[VerbalizedDoc]]) -> dict:
    return {d.provenance.source_id: d for d in docs or ()}


def _table_positive_raw(table: Table, answer_rows, other_rows, rng, min_words) -> str:
    parts = [" ".join(row_line(table.headers).split())]
    parts.extend(" ".join(row_line(table.rows[r].texts()).split()) for r in answer_rows)
    pool = list(other_rows)
    rng.shuffle(pool)
    text = " ".join(parts)
    while len(text.split()) < min_words and pool:
        parts.append(" ".join(row_line(table.rows[pool.pop()].texts()).split()))
        text = " ".join(parts)
    return text


def _table_positive_verbalized(doc: VerbalizedDoc, answer_rows, rng, min_words) -> tuple[str, bool]:
    """Returns (text, ok); ok is False when no answer-row unit exists."""
    unit_texts = doc.unit_texts()
    keep = [i for i, key in enumerate(doc.unit_keys) if key in answer_rows]
    if not keep:
        return "", False
    parts = [unit_texts[i] for i in keep]
    pool = [i for i in range(len(unit_texts)) if i not in keep]
    rng.shuffle(pool)
    text = " ".join(parts)
    while len(text.split()) < min_words and pool:
        parts.append(unit_texts[pool.pop()])
        text = " ".join(parts)
    return text, True


def build_table_training_data(
    mined: Sequence[MinedTriple],
    tables: Sequence[Table],
    neg_index: DocIndex,
    format: str = "verbalized",
    verbalized_docs: Optional[Sequence[VerbalizedDoc]] = None,
    n_negatives: int = 7,
    seed: int = 0,
    min_positive_words: int = DEFAULT_MIN_POSITIVE_WORDS,
    negative_pool: int = DEFAULT_NEGATIVE_POOL,
) -> list[RetrieverTrainingInstance]:
    """One instance per mined (question, table) triple.

    The positive concatenates the answer-bearing rows (raw: linearized rows
    with the header row prepended; verbalized: the rows' generated units) and
    pads with seeded-random other rows until it reaches min_positive_words or
    the table runs out. Negatives are top-ranked non-answer chunks from
    neg_index. Instances whose positive fails the answer check (a lossy
    generator dropped it) are skipped.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    if format == "verbalized" and verbalized_docs is None:
        raise ValueError("verbalized format needs verbalized_docs")
    by_id = {t.table_id: t for t in tables}
    docs = _docs_by_source(verbalized_docs)
    rng = random.Random(seed)
    instances = []
    for triple in mined:
        table = by_id.get(triple.source_id)
        if table is None:
            raise ValueError(f"mined triple references unknown table {triple.source_id!r}")
        needles = answer_token_lists(triple.answers)
        answer_rows = sorted({r for r, _ in triple.hit_locations})
        if format == "raw":
            other = [r for r in range(len(table.rows)) if r not in answer_rows]
            positive = _table_positive_raw(table, answer_rows, other, rng, min_positive_words)
        else:
            doc = docs.get(triple.source_id)
            if doc is None:
                raise ValueError(f"no verbalized doc for table {triple.source_id!r}")
            positive, ok = _table_positive_verbalized(doc, set(answer_rows), rng, min_positive_words)
            if not ok:
                continue
        if not _contains(positive, needles):
            continue
        negatives = _collect_negatives(neg_index, triple.question, needles, n_negatives, negative_pool)
        flags = () if negatives or n_negatives == 0 else (FLAG_NO_NEGATIVES,)
        instances.append(
            RetrieverTrainingInstance(
                question=triple.question,
                answers=triple.answers,
                positives=(positive,),
                negatives=tuple(negatives),
                flags=flags,
            )
        )
    check_instances(instances)
    return instances


def _kb_doc_text(g: KBSubGraph, format: str, docs: dict) -> Optional[str]:
    if format == "raw":
        return linearize_subgraph(g)
    doc = docs.get(g.graph_id)
    return doc.text if doc is not None else None


def build_kb_training_data(
    mined: Sequence[MinedTriple],
    kb: Sequence[KBSubGraph],
    neg_index: DocIndex,
    format: str = "verbalized",
    verbalized_docs: Optional[Sequence[VerbalizedDoc]] = None,
    n_negatives: int = 7,
    negative_pool: int = DEFAULT_NEGATIVE_POOL,
) -> list[RetrieverTrainingInstance]:
    """One instance per mined (question, sub-graph) triple.

    The positive is the verbalized gold sub-graph (or its flattening in raw
    format). Documents of sub-graphs whose subject is an answer entity join
    as extra positives when they overlap the question's tokens and contain
    the answer. Negatives as in the table builder.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}")
    if format == "verbalized" and verbalized_docs is None:
        raise ValueError("verbalized format needs verbalized_docs")
    by_id = {g.graph_id: g for g in kb}
    by_subject: dict[str, list[KBSubGraph]] = {}
    for g in kb:
        by_subject.setdefault(normalize_answer(g.subject), []).append(g)
    docs = _docs_by_source(verbalized_docs)
    instances = []
    for triple in mined:
        graph = by_id.get(triple.source_id)
        if graph is None:
            raise ValueError(f"mined triple references unknown sub-graph {triple.source_id!r}")
        needles = answer_token_lists(triple.answers)
        gold_text = _kb_doc_text(graph, format, docs)
        if gold_text is None:
            raise ValueError(f"no verbalized doc for sub-graph {triple.source_id!r}")
        positives = []
        if _contains(gold_text, needles):
            positives.append(gold_text)
        question_tokens = tokenize(triple.question)
        for answer in triple.answers:
            for neighbor in by_subject.get(normalize_answer(answer), ()):
                if neighbor.graph_id == triple.source_id:
                    continue
                text = _kb_doc_text(neighbor, format, docs)
                if text is None or text in positives:
                    continue
                overlap = rouge1(question_tokens, tokenize(text)).recall
                if overlap > 0 and _contains(text, needles):
                    positives.append(text)
        if not positives:
            continue
        negatives = _collect_negatives(neg_index, triple.question, needles, n_negatives, negative_pool)
        flags = () if negatives or n_negatives == 0 else (FLAG_NO_NEGATIVES,)
        instances.append(
            RetrieverTrainingInstance(
                question=triple.question,
                answers=triple.answers,
                positives=tuple(positives),
                negatives=tuple(negatives),
                flags=flags,
            )
        )
    check_instances(instances)
    return instances


def mine_hard_negatives(
    index: DocIndex,
    instances: Sequence[RetrieverTrainingInstance],
    k: int,
    mode: str = "replace",
) -> list[RetrieverTrainingInstance]:
    """Re-mine negatives from a joint index; positives stay untouched.

    Top-k retrievals for each question that fail the answer check become the
    new negative list ("replace") or are appended to it ("extend"). When
    every retrieved chunk contains the answer the instance keeps its old
    negatives and is flagged. k=0 returns the instances unchanged.
    """
    if mode not in ("replace", "extend"):
        raise ValueError(f"unknown mode {mode!r}")
    if k == 0:
        return list(instances)
    out = []
    for inst in instances:
        needles = answer_token_lists(inst.answers)
        hard = []
        for hit in search(index, inst.question, k):
            chunk = index.chunk_by_id(hit.chunk_id)
            if not _contains(chunk.text, needles):
                hard.append(chunk.text)
        if not hard:
            out.append(replace(inst, flags=inst.flags + (FLAG_NEGATIVES_UNCHANGED,)))
            continue
        if mode == "extend":
            merged = list(inst.negatives)
            merged.extend(t for t in hard if t not in inst.negatives)
            negatives = tuple(merged)
        else:
            negatives = tuple(hard)
        out.append(replace(inst, negatives=negatives, flags=inst.flags))
    check_instances(out)
    return out


# --- JSONL ----------------------------------------------------------------


def instances_to_jsonl(instances: Sequence[RetrieverTrainingInstance]):
    for inst in instances:
        yield json.dumps(
            {
                "question": inst.question,
                "answers": list(inst.answers),
                "positive_ctxs": list(inst.positives),
                "negative_ctxs": list(inst.negatives),
            },
            ensure_ascii=False,
        ) + "\n"


def save_instances(path, instances: Sequence[RetrieverTrainingInstance]) -> int:
    return write_lines_atomic(path, instances_to_jsonl(instances))


def mined_to_jsonl(mined: Sequence[MinedTriple]):
    for m in mined:
        hits = [list(h) if isinstance(h, tuple) else h for h in m.hit_locations]
        yield json.dumps(
            {
                "question": m.question,
                "answers": list(m.answers),
                "source_id": m.source_id,
                "hits": hits,
            },
            ensure_ascii=False,
        ) + "\n"


def save_mined(path, mined: Sequence[MinedTriple]) -> int:
    return write_lines_atomic(path, mined_to_jsonl(mined))


def load_mined(path) -> list[MinedTriple]:
    mined = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(path, line_no, f"malformed JSON: {exc.msg}") from exc
            for name in ("question", "answers", "source_id", "hits"):
                if name not in obj:
                    raise CorpusError(path, line_no, f"missing field {name}")
            hits = tuple(tuple(h) if isinstance(h, list) else h for h in obj["hits"])
            try:
                mined.append(
                    MinedTriple(
                        question=obj["question"],
                        answers=tuple(obj["answers"]),
                        source_id=obj["source_id"],
                        hit_locations=hits,
                    )
                )
            except ValueError as exc:
                raise CorpusError(path, line_no, str(exc)) from exc
    return mined


def load_instances(path) -> list[RetrieverTrainingInstance]:
    instances = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(path, line_no, f"malformed JSON: {exc.msg}") from exc
            for name in ("question", "answers", "positive_ctxs", "negative_ctxs"):
                if name not in obj:
                    raise CorpusError(path, line_no, f"missing field {name}")
            try:
                instances.append(
                    RetrieverTrainingInstance(
                        question=obj["question"],
                        answers=tuple(obj["answers"]),
                        positives=tuple(obj["positive_ctxs"]),
                        negatives=tuple(obj["negative_ctxs"]),
                    )
                )
            except ValueError as exc:
                raise CorpusError(path, line_no, str(exc)) from exc
    return instances
