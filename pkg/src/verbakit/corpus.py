"""Line-oriented JSONL ingestion and serialization for all corpus kinds.

One JSON object per line, UTF-8. Schemas are strict: unknown or missing
fields are errors that name the offending line, except the id fields
(table_id / graph_id / doc_id), which are synthesized as "<kind>-<line>"
when absent so reruns stay reproducible. Loading is single-pass, order
preserving, and returns immutable values.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable, Iterator, Sequence

from .model import (
    Cell,
    KBEdge,
    KBSubGraph,
    Pair,
    Passage,
    QAExample,
    StructuredRecord,
    Table,
    TableRow,
    TrainingExample,
)

CORPUS_KINDS = ("tables", "kb", "passages", "qa", "training")


class CorpusError(ValueError):
    """A malformed corpus file; message carries path and line number."""

    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        if line_no is None:
            super().__init__(f"{path}: {message}")
        else:
            super().__init__(f"{path}: line {line_no}: {message}")


def _check_fields(obj, required, optional, path, line_no):
    if not isinstance(obj, dict):
        raise CorpusError(path, line_no, "expected a JSON object")
    for name in required:
        if name not in obj:
            raise CorpusError(path, line_no, f"missing field {name}")
    for name in obj:
        if name not in required and name not in optional:
            raise CorpusError(path, line_no, f"unexpected field {name}")


def _str_field(obj, name, path, line_no):
    value = obj[name]
    if not isinstance(value, str):
        raise CorpusError(path, line_no, f"field {name} must be a string")
    return value


def _str_list(obj, name, path, line_no):
    value = obj[name]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise CorpusError(path, line_no, f"field {name} must be a list of strings")
    return value


def _str_pair_list(obj, name, path, line_no):
    value = obj[name]
    ok = isinstance(value, list) and all(
        isinstance(v, list) and len(v) == 2 and all(isinstance(s, str) for s in v)
        for v in value
    )
    if not ok:
        raise CorpusError(path, line_no, f"field {name} must be a list of [string, string] pairs")
    return value


def _synth_id(obj, name, kind, path, line_no):
    if name in obj:
        return _str_field(obj, name, path, line_no)
    return f"{kind}-{line_no}"


def _parse_table(obj, path, line_no):
    _check_fields(obj, ("page_title", "section_title", "headers", "rows"), ("table_id",), path, line_no)
    rows_raw = obj["rows"]
    if not isinstance(rows_raw, list) or not all(
        isinstance(r, list) and all(isinstance(c, str) for c in r) for r in rows_raw
    ):
        raise CorpusError(path, line_no, "field rows must be a list of lists of strings")
    return Table(
        table_id=_synth_id(obj, "table_id", "tables", path, line_no),
        page_title=_str_field(obj, "page_title", path, line_no),
        section_title=_str_field(obj, "section_title", path, line_no),
        headers=tuple(_str_list(obj, "headers", path, line_no)),
        rows=tuple(TableRow(tuple(Cell(c) for c in r)) for r in rows_raw),
    )


def _parse_kb(obj, path, line_no):
    _check_fields(obj, ("subject", "edges"), ("graph_id",), path, line_no)
    edges = _str_pair_list(obj, "edges", path, line_no)
    try:
        return KBSubGraph(
            graph_id=_synth_id(obj, "graph_id", "kb", path, line_no),
            subject=_str_field(obj, "subject", path, line_no),
            edges=tuple(KBEdge(rel, target) for rel, target in edges),
        )
    except ValueError as exc:
        raise CorpusError(path, line_no, str(exc)) from exc


def _parse_passage(obj, path, line_no):
    _check_fields(obj, ("title", "text"), ("doc_id",), path, line_no)
    return Passage(
        doc_id=_synth_id(obj, "doc_id", "passages", path, line_no),
        title=_str_field(obj, "title", path, line_no),
        text=_str_field(obj, "text", path, line_no),
    )


def _parse_qa(obj, path, line_no):
    _check_fields(obj, ("question", "answers", "question_entities"), (), path, line_no)
    try:
        return QAExample(
            question=_str_field(obj, "question", path, line_no),
            answers=tuple(_str_list(obj, "answers", path, line_no)),
            question_entities=tuple(_str_list(obj, "question_entities", path, line_no)),
        )
    except ValueError as exc:
        raise CorpusError(path, line_no, str(exc)) from exc


def _parse_training(obj, path, line_no):
    _check_fields(obj, ("title", "pairs"), ("target",), path, line_no)
    pairs = _str_pair_list(obj, "pairs", path, line_no)
    try:
        record = StructuredRecord(
            record_id=f"training-{line_no}",
            title=_str_field(obj, "title", path, line_no),
            pairs=tuple(Pair(attr, value) for attr, value in pairs),
        )
        if "target" in obj:
            return TrainingExample(source=record, target=_str_field(obj, "target", path, line_no))
        return record
    except ValueError as exc:
        raise CorpusError(path, line_no, str(exc)) from exc


_PARSERS = {
    "tables": _parse_table,
    "kb": _parse_kb,
    "passages": _parse_passage,
    "qa": _parse_qa,
    "training": _parse_training,
}

_ID_FIELDS = {"tables": "table_id", "kb": "graph_id", "passages": "doc_id"}


def load_corpus(path, kind: str) -> list:
    """Load one JSONL corpus file; see module docstring for schemas.

    Training lines without a "target" field load as bare StructuredRecords
    (converted-but-unverbalized data); lines with one load as
    TrainingExamples.
    """
    if kind not in _PARSERS:
        raise ValueError(f"unknown corpus kind {kind!r} (expected one of {CORPUS_KINDS})")
    parse = _PARSERS[kind]
    items = []
    seen_ids = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(path, line_no, f"malformed JSON: {exc.msg}") from exc
            item = parse(obj, path, line_no)
            id_field = _ID_FIELDS.get(kind)
            if id_field is not None:
                item_id = getattr(item, id_field)
                if item_id in seen_ids:
                    raise CorpusError(path, line_no, f"duplicate {id_field} {item_id!r}")
                seen_ids.add(item_id)
            items.append(item)
    return items


def _table_obj(t: Table) -> dict:
    return {
        "table_id": t.table_id,
        "page_title": t.page_title,
        "section_title": t.section_title,
        "headers": list(t.headers),
        "rows": [list(r.texts()) for r in t.rows],
    }


def _kb_obj(g: KBSubGraph) -> dict:
    return {
        "graph_id": g.graph_id,
        "subject": g.subject,
        "edges": [[e.relation, e.object] for e in g.edges],
    }


def _passage_obj(p: Passage) -> dict:
    return {"doc_id": p.doc_id, "title": p.title, "text": p.text}


def _qa_obj(q: QAExample) -> dict:
    return {
        "question": q.question,
        "answers": list(q.answers),
        "question_entities": list(q.question_entities),
    }


def _training_obj(item) -> dict:
    if isinstance(item, TrainingExample):
        record, target = item.source, item.target
    else:
        record, target = item, None
    obj = {"title": record.title, "pairs": [[p.attribute, p.value] for p in record.pairs]}
    if target is not None:
        obj["target"] = target
    return obj


_SERIALIZERS = {
    "tables": _table_obj,
    "kb": _kb_obj,
    "passages": _passage_obj,
    "qa": _qa_obj,
    "training": _training_obj,
}


def to_jsonl(items: Iterable, kind: str) -> Iterator[str]:
    """Yield canonical JSONL lines (schema key order, trailing newline each)."""
    if kind not in _SERIALIZERS:
        raise ValueError(f"unknown corpus kind {kind!r} (expected one of {CORPUS_KINDS})")
    serialize = _SERIALIZERS[kind]
    for item in items:
        yield json.dumps(serialize(item), ensure_ascii=False) + "\n"


def write_lines_atomic(path, lines: Iterable[str]) -> int:
    """Write lines to path via a same-directory temp file and rename.

    Returns the number of lines written. The target never exists in a
    half-written state.
    """
    path = str(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    count = 0
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".jsonl")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            for line in lines:
                handle.write(line)
                count += 1
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return count


def save_corpus(path, items: Sequence, kind: str) -> int:
    """Serialize items to path atomically; returns the record count."""
    return write_lines_atomic(path, to_jsonl(items, kind))
