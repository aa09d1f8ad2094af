"""Training-set curation and knowledge-answerable question mining.

Curation follows the filter → select → mix loop: drop training pairs whose
target covers too little of the input (T-F), harvest high-scoring in-domain
generator outputs (ID-T), and mix the two for the next training round.
Mining scans tables and KB sub-graphs for cells/objects that contain a
question's answer at token boundaries.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .model import KBSubGraph, QAExample, StructuredRecord, Table, TrainingExample
from .textnorm import (
    answer_token_lists,
    contains_tokens,
    normalize_answer,
    rouge1,
    rouge_value,
    tokenize,
)

DEFAULT_FILTER_THRESHOLD = 0.5
DEFAULT_SELECT_THRESHOLD = 0.9


@dataclass(frozen=True)
class TrainingSet:
    name: str
    examples: tuple[TrainingExample, ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))

    def __len__(self):
        return len(self.examples)


@dataclass(frozen=True)
class MinedTriple:
    """A question matched inside one structured source.

    hit_locations are (row, column) pairs for tables and edge indices for
    sub-graphs.
    """

    question: str
    answers: tuple[str, ...]
    source_id: str
    hit_locations: tuple

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        object.__setattr__(self, "hit_locations", tuple(self.hit_locations))
        if not self.hit_locations:
            raise ValueError(f"mined triple for {self.source_id!r} has no hit locations")


def example_score(example: TrainingExample, variant: str = "recall") -> float:
    """ROUGE-1 between the structured input and the target sentence."""
    reference = tokenize(example.source.reference_text())
    return rouge_value(rouge1(reference, tokenize(example.target)), variant)


def score_training_set(t: TrainingSet, variant: str = "recall") -> list[float]:
    """Per-example input/target scores, in set order (sidecar material)."""
    return [example_score(ex, variant) for ex in t.examples]


def filter_training_set(
    t: TrainingSet, threshold: float, variant: str = "recall"
) -> TrainingSet:
    """Keep examples scoring >= threshold; order preserved, result named T-F."""
    scores = score_training_set(t, variant)
    kept = tuple(ex for ex, s in zip(t.examples, scores) if s >= threshold)
    return TrainingSet(name="T-F", examples=kept)


def select_in_domain(
    candidates: Sequence[tuple[StructuredRecord, str]],
    threshold: float,
    cap: int,
    seed: int,
    variant: str = "recall",
) -> TrainingSet:
    """Harvest generator outputs scoring strictly above threshold as ID-T.

    When more than cap qualify, a uniform random sample of size cap is drawn
    with the given seed; survivors keep their input order. Note the strict
    ">" here versus ">=" in filtering.
    """
    if cap < 0:
        raise ValueError("cap must be >= 0")
    qualifying = []
    for record, generated in candidates:
        reference = tokenize(record.reference_text())
        score = rouge_value(rouge1(reference, tokenize(generated)), variant)
        if score > threshold:
            qualifying.append(TrainingExample(source=record, target=generated))
    if len(qualifying) > cap:
        rng = random.Random(seed)
        picked = sorted(rng.sample(range(len(qualifying)), cap))
        qualifying = [qualifying[i] for i in picked]
    return TrainingSet(name="ID-T", examples=tuple(qualifying))


def mix(a: TrainingSet, b: TrainingSet, seed: int) -> TrainingSet:
    """Concatenate two sets and shuffle with the given seed."""
    examples = list(a.examples) + list(b.examples)
    random.Random(seed).shuffle(examples)
    return TrainingSet(name="mixed", examples=tuple(examples))


def mine_table_questions(
    qas: Sequence[QAExample],
    tables: Sequence[Table],
    candidates: Optional[Sequence[Sequence[str]]] = None,
) -> list[MinedTriple]:
    """Scan candidate tables' cells for exact (normalized) answer matches.

    candidates, when given, is parallel to qas and restricts each question to
    the named table ids (its page association); otherwise every table is a
    candidate. One triple per (question, table) with at least one hit,
    listing all hit cells as (row, column).
    """
    if candidates is not None and len(candidates) != len(qas):
        raise ValueError("candidates must be parallel to qas")
    by_id = {t.table_id: t for t in tables}
    mined = []
    for i, qa in enumerate(qas):
        needles = answer_token_lists(qa.answers)
        if candidates is None:
            pool = tables
        else:
            pool = [by_id[tid] for tid in candidates[i] if tid in by_id]
        for table in pool:
            hits = []
            for r, row in enumerate(table.rows):
                for c, cell in enumerate(row.cells):
                    if cell.text and contains_tokens(tokenize(normalize_answer(cell.text)), needles):
                        hits.append((r, c))
            if hits:
                mined.append(
                    MinedTriple(
                        question=qa.question,
                        answers=qa.answers,
                        source_id=table.table_id,
                        hit_locations=tuple(hits),
                    )
                )
    return mined


def mine_kb_questions(
    qas: Sequence[QAExample], kb: Sequence[KBSubGraph]
) -> list[MinedTriple]:
    """1-hop mining: expand question entities, match answers in edge objects.

    Sub-graphs whose subject normalizes equal to a question entity are
    scanned; a hit is an edge whose object contains the answer. Questions
    without entities yield nothing (entities are the expansion seeds).
    """
    by_subject: dict[str, list[KBSubGraph]] = {}
    for g in kb:
        by_subject.setdefault(normalize_answer(g.subject), []).append(g)
    mined = []
    for qa in qas:
        needles = answer_token_lists(qa.answers)
        seen_graphs = set()
        for entity in qa.question_entities:
            for g in by_subject.get(normalize_answer(entity), []):
                if g.graph_id in seen_graphs:
                    continue
                seen_graphs.add(g.graph_id)
                hits = tuple(
                    i
                    for i, edge in enumerate(g.edges)
                    if contains_tokens(tokenize(normalize_answer(edge.object)), needles)
                )
                if hits:
                    mined.append(
                        MinedTriple(
                            question=qa.question,
                            answers=qa.answers,
                            source_id=g.graph_id,
                            hit_locations=hits,
                        )
                    )
    return mined
