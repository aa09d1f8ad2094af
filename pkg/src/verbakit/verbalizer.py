"""Generators, beam re-ranking, document assembly, and answer coverage.

A generator is any callable taking a GeneratorRequest and returning a list
of Beams. Two are provided: the deterministic template generator (one beam,
every input value preserved verbatim) and ExternalGenerator, a client for
the JSONL wire protocol spoken over a child process's stdin/stdout or a TCP
stream:

    request:  {"id": str, "title": str, "pairs": [[str, str], ...], "beam_size": int}
    response: {"id": str, "beams": [str, ...]}

One response line per request line, id echoed, 1 <= len(beams) <= beam_size.
"""

from __future__ import annotations

import json
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

from .convert import DEFAULT_MAX_PAIRS, row_to_record, split_record, subgraph_to_record
from .model import TITLE_ATTR, KBSubGraph, Pair, Provenance, StructuredRecord, Table
from .textnorm import contains_answer, rouge1, rouge_value, tokenize

DEFAULT_BEAM_SIZE = 10
DEFAULT_TIMEOUT = 60.0


@dataclass(frozen=True)
class GeneratorRequest:
    request_id: str
    title: str
    pairs: tuple[Pair, ...]
    beam_size: int = DEFAULT_BEAM_SIZE

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")


@dataclass(frozen=True)
class Beam:
    rank: int
    text: str


Generator = Callable[[GeneratorRequest], "list[Beam]"]


class GeneratorError(RuntimeError):
    """A generator failed on a specific record."""


class GeneratorProtocolError(GeneratorError):
    """The external generator violated the wire protocol (or timed out)."""


def template_generate(req: GeneratorRequest) -> list[Beam]:
    """Deterministic single-beam generator: one sentence per value pair.

    Output is lowercased, so every pair value appears verbatim (case-lowered).
    beam_size is ignored by design.
    """
    values = [p for p in req.pairs if p.attribute != TITLE_ATTR]
    if values:
        text = " ".join(f"the {p.attribute} of {req.title} is {p.value}." for p in values)
    else:
        text = f"{req.title}."
    return [Beam(rank=0, text=text.lower())]


class _ProcessChannel:
    """Line transport over a child process's stdin/stdout."""

    def __init__(self, argv: Sequence[str]):
        self.proc = subprocess.Popen(
            list(argv), stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for raw in self.proc.stdout:
            self._lines.put(raw)
        self._lines.put(None)

    def send_line(self, data: bytes):
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise GeneratorProtocolError(f"generator process closed its input: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        try:
            raw = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise GeneratorProtocolError(f"generator response timed out after {timeout} s") from None
        if raw is None:
            raise GeneratorProtocolError("generator process closed its output")
        return raw

    def close(self):
        if self.proc.stdin:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _SocketChannel:
    """Line transport over a TCP connection."""

    def __init__(self, host: str, port: int, timeout: float):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)
        self._file = self.sock.makefile("rb")

    def send_line(self, data: bytes):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise GeneratorProtocolError(f"generator connection failed: {exc}") from exc

    def recv_line(self, timeout: float) -> bytes:
        self.sock.settimeout(timeout)
        try:
            raw = self._file.readline()
        except socket.timeout:
            raise GeneratorProtocolError(f"generator response timed out after {timeout} s") from None
        except OSError as exc:
            raise GeneratorProtocolError(f"generator connection failed: {exc}") from exc
        if not raw:
            raise GeneratorProtocolError("generator closed the connection")
        return raw

    def close(self):
        try:
            self._file.close()
        finally:
            self.sock.close()


class ExternalGenerator:
    """Wire-protocol client; requests are strictly serialized per channel.

    Use ExternalGenerator.spawn(argv) for a stdio child process or
    ExternalGenerator.connect(host, port) for TCP. Instances are callables
    and context managers. One instance must not be shared across threads;
    open one channel per worker instead.
    """

    def __init__(self, channel, timeout: float = DEFAULT_TIMEOUT):
        self._channel = channel
        self.timeout = timeout
        self._lock = threading.Lock()

    @classmethod
    def spawn(cls, argv: Sequence[str], timeout: float = DEFAULT_TIMEOUT) -> "ExternalGenerator":
        return cls(_ProcessChannel(argv), timeout)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> "ExternalGenerator":
        return cls(_SocketChannel(host, port, timeout), timeout)

    def generate(self, req: GeneratorRequest) -> list[Beam]:
        payload = {
            "id": req.request_id,
            "title": req.title,
            "pairs": [[p.attribute, p.value] for p in req.pairs],
            "beam_size": req.beam_size,
        }
        line = (json.dumps(payload, ensure_ascii=False) + "\n").encode("utf-8")
        with self._lock:
            self._channel.send_line(line)
            raw = self._channel.recv_line(self.timeout)
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise GeneratorProtocolError(f"generator response is not UTF-8: {exc}") from exc
        try:
            response = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GeneratorProtocolError(f"generator response is not JSON: {exc.msg}") from exc
        if not isinstance(response, dict):
            raise GeneratorProtocolError("generator response must be a JSON object")
        if "error" in response:
            raise GeneratorProtocolError(f"generator reported an error: {response['error']}")
        if response.get("id") != req.request_id:
            raise GeneratorProtocolError(
                f"id mismatch: sent {req.request_id!r}, got {response.get('id')!r}"
            )
        beams = response.get("beams")
        if not isinstance(beams, list) or not all(isinstance(b, str) for b in beams):
            raise GeneratorProtocolError("generator response field beams must be a list of strings")
        if not beams:
            raise GeneratorProtocolError("generator returned no beams")
        beams = beams[: req.beam_size]
        return [Beam(rank=i, text=text) for i, text in enumerate(beams)]

    __call__ = generate

    def close(self):
        self._channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


def generate_external(req: GeneratorRequest, endpoint: ExternalGenerator) -> list[Beam]:
    """Run one request through an external generator channel."""
    return endpoint.generate(req)


def rerank_beams(
    record: StructuredRecord, beams: Sequence[Beam], variant: str = "recall"
) -> Beam:
    """Select the beam with the highest ROUGE-1 score against the input.

    The reference side is the record's attributes and values (title pair
    included); the default variant scores recall of the input, i.e. the
    fraction of input tokens the beam preserves. Ties go to the smallest
    rank.
    """
    if not beams:
        raise ValueError(f"record {record.record_id!r}: no beams to rerank")
    reference = tokenize(record.reference_text())
    best = None
    best_score = -1.0
    for beam in beams:
        score = rouge_value(rouge1(reference, tokenize(beam.text)), variant)
        if score > best_score or (score == best_score and beam.rank < best.rank):
            best, best_score = beam, score
    return best


@dataclass(frozen=True)
class VerbalizedDoc:
    """Assembled generator output for one source, with per-unit extents.

    unit_spans hold the character extent of each generated unit inside text;
    consecutive spans are separated by the single joining space. unit_keys
    give each unit's source row index (always 0 for sub-graphs).
    """

    doc_id: str
    title: str
    text: str
    provenance: Provenance
    unit_spans: tuple[tuple[int, int], ...]
    unit_keys: tuple[int, ...]

    def unit_texts(self) -> tuple[str, ...]:
        return tuple(self.text[s:e] for s, e in self.unit_spans)


def _assemble(units: Sequence[str]) -> tuple[str, tuple[tuple[int, int], ...]]:
    spans = []
    cursor = 0
    for unit in units:
        spans.append((cursor, cursor + len(unit)))
        cursor += len(unit) + 1
    return " ".join(units), tuple(spans)


def _generate_unit(
    part: StructuredRecord, gen: Generator, beam_size: int, variant: str
) -> str:
    req = GeneratorRequest(
        request_id=part.record_id, title=part.title, pairs=part.pairs, beam_size=beam_size
    )
    try:
        beams = gen(req)
    except GeneratorError:
        raise
    except Exception as exc:
        raise GeneratorError(f"record {part.record_id!r}: generator failed: {exc}") from exc
    if not beams:
        raise GeneratorError(f"record {part.record_id!r}: generator returned no beams")
    return rerank_beams(part, beams, variant).text


def verbalize_record(
    rec: StructuredRecord,
    gen: Generator,
    beam_size: int = DEFAULT_BEAM_SIZE,
    max_pairs: Optional[int] = DEFAULT_MAX_PAIRS,
    variant: str = "recall",
) -> list[str]:
    """Generate and rerank each pair group of a record; returns unit texts.

    max_pairs=None disables splitting (used for KB sub-graphs, which are
    verbalized whole).
    """
    parts = split_record(rec, max_pairs) if max_pairs is not None else [rec]
    return [_generate_unit(part, gen, beam_size, variant) for part in parts]


def verbalize_source(
    source: Union[Table, KBSubGraph],
    gen: Generator,
    beam_size: int = DEFAULT_BEAM_SIZE,
    max_pairs: int = DEFAULT_MAX_PAIRS,
    variant: str = "recall",
) -> VerbalizedDoc:
    """Verbalize a normalized table row by row, or a sub-graph whole.

    Each row record is split into pair groups of at most max_pairs, every
    group is generated and re-ranked independently, and the winning texts are
    joined with single spaces in source order. Sub-graphs become single-unit
    documents. Generator failures abort the document and name the failing
    record.
    """
    units: list[str] = []
    keys: list[int] = []
    if isinstance(source, Table):
        for row_index in range(len(source.rows)):
            rec = row_to_record(source, row_index)
            row_units = verbalize_record(rec, gen, beam_size, max_pairs, variant)
            units.extend(row_units)
            keys.extend([row_index] * len(row_units))
        doc_id = source.table_id
        title = source.title
        provenance = Provenance(kind="table", source_id=source.table_id)
    else:
        rec = subgraph_to_record(source)
        units = verbalize_record(rec, gen, beam_size, max_pairs=None, variant=variant)
        keys = [0] * len(units)
        doc_id = source.graph_id
        title = source.subject
        provenance = Provenance(kind="kb", source_id=source.graph_id, subject=source.subject)
    text, spans = _assemble(units)
    return VerbalizedDoc(
        doc_id=doc_id,
        title=title,
        text=text,
        provenance=provenance,
        unit_spans=spans,
        unit_keys=tuple(keys),
    )


def docs_to_jsonl(docs: Sequence[VerbalizedDoc]):
    """Serialize verbalized documents, provenance and unit extents included."""
    for doc in docs:
        prov = {"kind": doc.provenance.kind, "source_id": doc.provenance.source_id}
        if doc.provenance.row_index is not None:
            prov["row_index"] = doc.provenance.row_index
        if doc.provenance.subject is not None:
            prov["subject"] = doc.provenance.subject
        yield json.dumps(
            {
                "doc_id": doc.doc_id,
                "title": doc.title,
                "text": doc.text,
                "provenance": prov,
                "unit_spans": [list(s) for s in doc.unit_spans],
                "unit_keys": list(doc.unit_keys),
            },
            ensure_ascii=False,
        ) + "\n"


def save_docs(path, docs: Sequence[VerbalizedDoc]) -> int:
    from .corpus import write_lines_atomic

    return write_lines_atomic(path, docs_to_jsonl(docs))


def load_docs(path) -> list[VerbalizedDoc]:
    from .corpus import CorpusError

    docs = []
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(path, line_no, f"malformed JSON: {exc.msg}") from exc
            for name in ("doc_id", "title", "text", "provenance", "unit_spans", "unit_keys"):
                if name not in obj:
                    raise CorpusError(path, line_no, f"missing field {name}")
            if obj["doc_id"] in seen:
                raise CorpusError(path, line_no, f"duplicate doc_id {obj['doc_id']!r}")
            seen.add(obj["doc_id"])
            prov = obj["provenance"]
            docs.append(
                VerbalizedDoc(
                    doc_id=obj["doc_id"],
                    title=obj["title"],
                    text=obj["text"],
                    provenance=Provenance(
                        kind=prov["kind"],
                        source_id=prov["source_id"],
                        row_index=prov.get("row_index"),
                        subject=prov.get("subject"),
                    ),
                    unit_spans=tuple(tuple(s) for s in obj["unit_spans"]),
                    unit_keys=tuple(obj["unit_keys"]),
                )
            )
    return docs


@dataclass(frozen=True)
class CoverageReport:
    """Answer-coverage result over a gold set of answer-bearing records.

    skipped lists records that failed the precondition (their raw pairs do
    not contain the answer); they are reported but not counted in total.
    """

    total: int
    covered: int
    coverage_pct: float
    misses: tuple[str, ...]
    skipped: tuple[str, ...] = ()


def answer_coverage(
    gold: Sequence[tuple[StructuredRecord, Sequence[str]]],
    gen: Generator,
    beam_size: int = DEFAULT_BEAM_SIZE,
    max_pairs: Optional[int] = DEFAULT_MAX_PAIRS,
    variant: str = "recall",
) -> CoverageReport:
    """Fraction of records whose re-ranked verbalization keeps the answer."""
    covered = 0
    misses = []
    skipped = []
    for rec, answers in gold:
        if not contains_answer(rec.reference_text(), answers):
            skipped.append(rec.record_id)
            continue
        text = " ".join(verbalize_record(rec, gen, beam_size, max_pairs, variant))
        if contains_answer(text, answers):
            covered += 1
        else:
            misses.append(rec.record_id)
    total = covered + len(misses)
    pct = 100.0 * covered / total if total else 100.0
    return CoverageReport(
        total=total,
        covered=covered,
        coverage_pct=pct,
        misses=tuple(misses),
        skipped=tuple(skipped),
    )
