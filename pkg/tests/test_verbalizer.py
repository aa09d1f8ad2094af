import random
import sys

import pytest
from hypothesis import given, settings, strategies as st

from verbakit.convert import normalize_table, row_to_record
from verbakit.model import Cell, KBEdge, KBSubGraph, Pair, StructuredRecord, Table, TableRow
from verbakit.textnorm import contains_answer
from verbakit.verbalizer import (
    Beam,
    ExternalGenerator,
    GeneratorError,
    GeneratorProtocolError,
    GeneratorRequest,
    answer_coverage,
    generate_external,
    load_docs,
    rerank_beams,
    save_docs,
    template_generate,
    verbalize_source,
)

# Minimal wire-protocol adapters for fault injection, run via `python -c`.
ECHO_ADAPTER = """
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    beams = [" ".join(f"<H> {a} <T> {v}" for a, v in req["pairs"])]
    print(json.dumps({"id": req["id"], "beams": beams}), flush=True)
"""

MULTI_BEAM_ADAPTER = """
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    beams = [f"beam {i} for {req['title']}" for i in range(req["beam_size"])]
    print(json.dumps({"id": req["id"], "beams": beams}), flush=True)
"""

WRONG_ID_ADAPTER = """
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"] + "-oops", "beams": ["x"]}), flush=True)
"""

TOO_MANY_BEAMS_ADAPTER = """
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "beams": ["a", "b", "c", "d"]}), flush=True)
"""

GARBAGE_ADAPTER = """
import sys
for line in sys.stdin:
    print("this is not json", flush=True)
"""

ERROR_ADAPTER = """
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    print(json.dumps({"id": req["id"], "error": "model exploded"}), flush=True)
"""

SLOW_ADAPTER = """
import sys, time
for line in sys.stdin:
    time.sleep(5)
"""


def spawn(script, timeout=60.0):
    return ExternalGenerator.spawn([sys.executable, "-c", script], timeout=timeout)


def request(n_pairs=1, beam_size=2, request_id="r1"):
    pairs = (Pair("[title]", "T"),) + tuple(Pair(f"a{i}", f"v{i}") for i in range(n_pairs))
    return GeneratorRequest(request_id=request_id, title="T", pairs=pairs, beam_size=beam_size)


class TestTemplateGenerate:
    def test_sentence_shape(self):
        req = GeneratorRequest(
            "r", "Mount Ruapehu",
            (Pair("[title]", "Mount Ruapehu"), Pair("last eruption", "25 september 2007")),
        )
        beams = template_generate(req)
        assert len(beams) == 1
        assert beams[0].text == "the last eruption of mount ruapehu is 25 september 2007."

    def test_title_only(self):
        req = GeneratorRequest("r", "Mount Ruapehu", (Pair("[title]", "Mount Ruapehu"),))
        assert template_generate(req)[0].text == "mount ruapehu."

    def test_one_sentence_per_value_pair(self):
        req = request(n_pairs=2)
        text = template_generate(req)[0].text
        assert text.count(".") == 2
        assert text.index("v0") < text.index("v1")

    @given(st.lists(st.tuples(st.text(alphabet="abc", min_size=1, max_size=4),
                              st.text(alphabet="xyz19 ", min_size=1, max_size=8)),
                    min_size=0, max_size=5))
    def test_values_preserved_lowercased(self, pairs):
        req = GeneratorRequest(
            "r", "Title",
            (Pair("[title]", "Title"),) + tuple(Pair(a, v) for a, v in pairs),
        )
        text = template_generate(req)[0].text
        for _, value in pairs:
            assert value.lower() in text


class TestExternalGenerator:
    def test_echo_round_trip(self):
        with spawn(ECHO_ADAPTER) as gen:
            beams = generate_external(request(n_pairs=1), gen)
        assert beams == [Beam(0, "<H> [title] <T> T <H> a0 <T> v0")]

    def test_beam_size_10(self):
        with spawn(MULTI_BEAM_ADAPTER) as gen:
            beams = gen(request(beam_size=10))
        assert [b.rank for b in beams] == list(range(10))

    def test_wrong_id_rejected(self):
        with spawn(WRONG_ID_ADAPTER) as gen:
            with pytest.raises(GeneratorProtocolError, match="id mismatch"):
                gen(request())

    def test_excess_beams_truncated(self):
        with spawn(TOO_MANY_BEAMS_ADAPTER) as gen:
            beams = gen(request(beam_size=2))
        assert [b.text for b in beams] == ["a", "b"]

    def test_non_json_response(self):
        with spawn(GARBAGE_ADAPTER) as gen:
            with pytest.raises(GeneratorProtocolError, match="not JSON"):
                gen(request())

    def test_error_response(self):
        with spawn(ERROR_ADAPTER) as gen:
            with pytest.raises(GeneratorProtocolError, match="model exploded"):
                gen(request())

    def test_timeout(self):
        with spawn(SLOW_ADAPTER, timeout=0.3) as gen:
            with pytest.raises(GeneratorProtocolError, match="timed out"):
                gen(request())

    def test_closed_process(self):
        with spawn("import sys") as gen:
            with pytest.raises(GeneratorProtocolError):
                gen(request())


def make_record(values, record_id="r"):
    pairs = (Pair("[title]", "T"),) + tuple(Pair(f"a{i}", v) for i, v in enumerate(values))
    return StructuredRecord(record_id=record_id, title="T", pairs=pairs)


class TestRerankBeams:
    def test_full_coverage_wins(self):
        rec = make_record(["red", "blue"])
        full = Beam(1, "title t a0 red a1 blue")
        partial = Beam(0, "title t a0 red")
        assert rerank_beams(rec, [partial, full]) == full

    def test_single_beam(self):
        beam = Beam(0, "anything")
        assert rerank_beams(make_record(["x"]), [beam]) == beam

    def test_tie_goes_to_lowest_rank(self):
        rec = make_record(["x"])
        beams = [Beam(1, "same text"), Beam(0, "same text")]
        assert rerank_beams(rec, beams).rank == 0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rerank_beams(make_record(["x"]), [])

    @settings(max_examples=50)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_invariant(self, seed):
        rng = random.Random(seed)
        rec = make_record(["alpha", "beta", "gamma"])
        beams = [Beam(i, " ".join(rng.sample(["alpha", "beta", "gamma", "noise"],
                                             rng.randint(1, 4)))) for i in range(5)]
        shuffled = beams[:]
        rng.shuffle(shuffled)
        assert rerank_beams(rec, beams) == rerank_beams(rec, shuffled)


def make_table(rows, headers=None, table_id="t1", page="Page"):
    headers = headers or tuple(f"h{i}" for i in range(len(rows[0])))
    return normalize_table(Table(
        table_id=table_id, page_title=page, section_title="",
        headers=tuple(headers),
        rows=tuple(TableRow(tuple(Cell(c) for c in r)) for r in rows),
    ))


class TestVerbalizeSource:
    def test_table_concatenates_row_outputs(self):
        t = make_table([("a",), ("b",), ("c",)])
        doc = verbalize_source(t, template_generate)
        expected = " ".join(
            template_generate(GeneratorRequest("x", "Page", row_to_record(t, i).pairs))[0].text
            for i in range(3)
        )
        assert doc.text == expected
        assert len(doc.unit_spans) == 3
        assert doc.unit_keys == (0, 1, 2)

    def test_subgraph_single_unit(self):
        g = KBSubGraph("g1", "S", (KBEdge("r", "o"),))
        doc = verbalize_source(g, template_generate)
        assert doc.unit_spans == ((0, len(doc.text)),)
        assert doc.unit_keys == (0,)

    def test_wide_row_splits_into_two_units(self):
        t = make_table([tuple(f"v{i}" for i in range(8))])
        doc = verbalize_source(t, template_generate, max_pairs=7)
        assert len(doc.unit_spans) == 2
        assert doc.unit_keys == (0, 0)

    def test_subgraph_not_split(self):
        g = KBSubGraph("g1", "S", tuple(KBEdge(f"r{i}", f"o{i}") for i in range(9)))
        doc = verbalize_source(g, template_generate, max_pairs=7)
        assert len(doc.unit_spans) == 1

    def test_spans_cover_units_with_single_space_gaps(self):
        t = make_table([("a", "b"), ("c", "d")])
        doc = verbalize_source(t, template_generate)
        previous_end = None
        for (s, e), unit in zip(doc.unit_spans, doc.unit_texts()):
            assert doc.text[s:e] == unit
            if previous_end is not None:
                assert s == previous_end + 1
                assert doc.text[previous_end] == " "
            previous_end = e
        assert previous_end == len(doc.text)

    def test_template_preserves_all_values(self):
        t = make_table([("left", "right"), ("up", "down")])
        doc = verbalize_source(t, template_generate)
        for row in t.rows:
            for cell in row.cells:
                assert cell.text.lower() in doc.text

    def test_generator_failure_names_record(self):
        def broken(req):
            raise RuntimeError("boom")

        t = make_table([("a",)])
        with pytest.raises(GeneratorError, match="t1-r0"):
            verbalize_source(t, broken)

    def test_deterministic(self):
        t = make_table([("a", "b"), ("c", "d")])
        assert verbalize_source(t, template_generate) == verbalize_source(t, template_generate)


class TestAnswerCoverage:
    def test_template_is_complete(self):
        gold = [(make_record(["red fox", "42"], record_id=f"r{i}"), ["42"]) for i in range(5)]
        report = answer_coverage(gold, template_generate)
        assert report.coverage_pct == 100.0
        assert report.covered == report.total == 5
        assert report.misses == () and report.skipped == ()

    def test_dropping_generator_counted(self):
        gold = [(make_record(["keep 42"], record_id=f"r{i}"), ["42"]) for i in range(3)]

        def dropper(req):
            if req.request_id.startswith("r0"):
                return [Beam(0, "nothing relevant")]
            return template_generate(req)

        report = answer_coverage(gold, dropper)
        assert report.covered == 2
        assert report.misses == ("r0",)
        assert report.coverage_pct == pytest.approx(100 * 2 / 3)

    def test_precondition_violations_skipped(self):
        gold = [
            (make_record(["has 42"], record_id="ok"), ["42"]),
            (make_record(["nothing"], record_id="bad"), ["42"]),
        ]
        report = answer_coverage(gold, template_generate)
        assert report.total == 1
        assert report.skipped == ("bad",)

    def test_superstring_outputs_never_reduce_coverage(self):
        gold = [(make_record(["x 42"], record_id=f"r{i}"), ["42"]) for i in range(4)]

        def padded(req):
            return [Beam(0, template_generate(req)[0].text + " extra words appended")]

        base = answer_coverage(gold, template_generate)
        more = answer_coverage(gold, padded)
        assert more.covered >= base.covered


class TestDocsJsonl:
    def test_round_trip(self, tmp_path):
        t = make_table([("a", "b"), ("c", "d")])
        g = KBSubGraph("g1", "S", (KBEdge("r", "o"),))
        docs = [verbalize_source(t, template_generate),
                verbalize_source(g, template_generate)]
        path = tmp_path / "docs.jsonl"
        assert save_docs(path, docs) == 2
        assert load_docs(path) == docs
