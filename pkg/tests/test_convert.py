import pytest
from hypothesis import given, strategies as st

from verbakit.convert import (
    EMPTY_TOKEN,
    Triple,
    dedup_tables,
    linearize_raw,
    linearize_subgraph,
    normalize_table,
    row_to_record,
    serialize_record,
    split_record,
    subgraph_to_record,
    triples_to_pairs,
)
from verbakit.model import Cell, KBEdge, KBSubGraph, Pair, StructuredRecord, Table, TableRow


def make_table(table_id="t1", page="Page", section="", headers=("h1",), rows=(("v1",),)):
    return Table(
        table_id=table_id,
        page_title=page,
        section_title=section,
        headers=tuple(headers),
        rows=tuple(TableRow(tuple(Cell(c) for c in row)) for row in rows),
    )


class TestTriplesToPairs:
    def test_title_via_context_head(self):
        title, pairs = triples_to_pairs([
            Triple("[TABLECONTEXT]", "[title]", "LeBron James"),
            Triple("LeBron James", "League", "NBA"),
        ])
        assert title == "LeBron James"
        assert pairs == [Pair("[title]", "LeBron James"), Pair("League", "NBA")]

    def test_no_title(self):
        title, pairs = triples_to_pairs([Triple("x", "rel", "y")])
        assert title == ""
        assert pairs == [Pair("rel", "y")]

    def test_duplicate_relations_keep_order(self):
        _, pairs = triples_to_pairs([Triple("h", "r", "a"), Triple("h", "r", "b")])
        assert pairs == [Pair("r", "a"), Pair("r", "b")]

    def test_distinct_titles_rejected(self):
        with pytest.raises(ValueError, match="multiple distinct title"):
            triples_to_pairs([
                Triple("[TABLECONTEXT]", "[title]", "A"),
                Triple("[TABLECONTEXT]", "[title]", "B"),
            ])

    def test_identical_title_triples_collapse(self):
        title, pairs = triples_to_pairs([
            Triple("[TABLECONTEXT]", "[title]", "A"),
            Triple("[TABLECONTEXT]", "[title]", "A"),
        ])
        assert title == "A"
        assert pairs == [Pair("[title]", "A")]

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            triples_to_pairs([])


class TestRowToRecord:
    def test_basic(self):
        t = make_table(page="Mount Ruapehu", headers=("last eruption",),
                       rows=(("25 september 2007",),))
        rec = row_to_record(t, 0)
        assert rec.pairs == (
            Pair("[title]", "Mount Ruapehu"),
            Pair("last eruption", "25 september 2007"),
        )
        assert rec.provenance.source_id == "t1"
        assert rec.provenance.row_index == 0

    def test_empty_cells_skipped(self):
        t = make_table(headers=("a", "b", "c"), rows=(("", "", ""),))
        rec = row_to_record(t, 0)
        assert rec.pairs == (Pair("[title]", "Page"),)

    def test_middle_empty_cell(self):
        t = make_table(headers=("a", "b", "c"), rows=(("x", "", "z"),))
        rec = row_to_record(t, 0)
        assert rec.value_pairs() == (Pair("a", "x"), Pair("c", "z"))

    def test_section_title_folded(self):
        t = make_table(page="P", section="S")
        assert row_to_record(t, 0).title == "P - S"

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            row_to_record(make_table(), 1)

    def test_ragged_row_rejected(self):
        t = make_table(headers=("a", "b"), rows=(("only",),))
        with pytest.raises(ValueError, match="not normalized"):
            row_to_record(t, 0)

    def test_values_preserved_verbatim(self):
        rows = (("x y", "", "z,w"),)
        t = make_table(headers=("a", "b", "c"), rows=rows)
        rec = row_to_record(t, 0)
        values = [p.value for p in rec.value_pairs()]
        for cell in ("x y", "z,w"):
            assert cell in values


class TestSubgraphToRecord:
    def test_basic(self):
        g = KBSubGraph("g1", "Barack Obama", (KBEdge("spouse", "Michelle Obama"),))
        rec = subgraph_to_record(g)
        assert rec.pairs == (
            Pair("[title]", "Barack Obama"),
            Pair("spouse", "Michelle Obama"),
        )
        assert rec.provenance.subject == "Barack Obama"

    def test_three_edges_order(self):
        g = KBSubGraph("g1", "S", tuple(KBEdge(f"r{i}", f"o{i}") for i in range(3)))
        rec = subgraph_to_record(g)
        assert len(rec.pairs) == 4
        assert [p.attribute for p in rec.pairs[1:]] == ["r0", "r1", "r2"]

    def test_zero_edges_rejected_by_type(self):
        with pytest.raises(ValueError):
            KBSubGraph("g1", "S", ())


def make_record(n_values, record_id="r"):
    pairs = [Pair("[title]", "T")] + [Pair(f"a{i}", f"v{i}") for i in range(n_values)]
    return StructuredRecord(record_id=record_id, title="T", pairs=tuple(pairs))


class TestSplitRecord:
    def test_under_budget(self):
        parts = split_record(make_record(5), max_pairs=7)
        assert len(parts) == 1
        assert parts[0].record_id == "r-g0"

    def test_eight_values_split_seven_one(self):
        parts = split_record(make_record(8), max_pairs=7)
        assert [len(p.value_pairs()) for p in parts] == [7, 1]
        assert [p.record_id for p in parts] == ["r-g0", "r-g1"]

    def test_title_only(self):
        parts = split_record(make_record(0))
        assert len(parts) == 1
        assert parts[0].pairs == (Pair("[title]", "T"),)

    def test_title_repeated_in_every_part(self):
        for part in split_record(make_record(20), max_pairs=3):
            assert part.pairs[0] == Pair("[title]", "T")

    @given(st.integers(0, 25), st.integers(1, 8))
    def test_groups_concatenate_losslessly(self, n_values, max_pairs):
        rec = make_record(n_values)
        parts = split_record(rec, max_pairs)
        rebuilt = [p for part in parts for p in part.value_pairs()]
        assert tuple(rebuilt) == rec.value_pairs()

    def test_bad_budget(self):
        with pytest.raises(ValueError):
            split_record(make_record(1), max_pairs=0)


class TestSerializeRecord:
    def test_walking_dead_string(self):
        rec = StructuredRecord(
            record_id="wd",
            title="The Walking Dead (season 7)",
            pairs=(
                Pair("[title]", "The Walking Dead (season 7)"),
                Pair("no. of episodes", "16"),
            ),
        )
        assert serialize_record(rec) == (
            "<H> [title] <T> The Walking Dead (season 7) <H> no. of episodes <T> 16"
        )

    def test_title_only(self):
        rec = StructuredRecord("x", "X", (Pair("[title]", "X"),))
        assert serialize_record(rec) == "<H> [title] <T> X"

    def test_markers_in_values_kept_verbatim(self):
        rec = StructuredRecord("x", "X", (Pair("a", "<H> inside <T>"),))
        assert serialize_record(rec) == "<H> a <T> <H> inside <T>"


class TestNormalizeTable:
    def test_pads_ragged_rows(self):
        t = make_table(headers=("a", "b", "c"), rows=(("x",),))
        n = normalize_table(t)
        assert n.rows[0].texts() == ("x", EMPTY_TOKEN, EMPTY_TOKEN)

    def test_truncates_long_cells(self):
        long_cell = " ".join(f"w{i}" for i in range(81))
        t = make_table(rows=((long_cell,),))
        n = normalize_table(t, max_cell_words=80)
        assert n.rows[0].cells[0].word_count == 80
        assert n.rows[0].cells[0].text == " ".join(long_cell.split()[:80])

    def test_short_table_unchanged(self):
        t = make_table(headers=("a", "b"), rows=(("x", "y"), ("p", "q")))
        assert normalize_table(t) == t

    def test_headers_defaulted(self):
        t = Table("t", "P", "", (), (TableRow((Cell("x"), Cell("y"))),))
        n = normalize_table(t)
        assert n.headers == ("column 1", "column 2")

    def test_wide_rows_truncated(self):
        t = make_table(headers=("a",), rows=(("x", "y"),))
        assert normalize_table(t).rows[0].texts() == ("x",)

    def test_no_rows_rejected(self):
        t = Table("t", "P", "", ("a",), ())
        with pytest.raises(ValueError, match="no rows"):
            normalize_table(t)

    @given(st.lists(st.lists(st.text(alphabet="ab ", max_size=6), max_size=4),
                    min_size=1, max_size=4),
           st.integers(0, 3))
    def test_idempotent(self, rows, n_headers):
        headers = tuple(f"h{i}" for i in range(n_headers))
        if n_headers == 0 and all(len(r) == 0 for r in rows):
            return
        t = make_table(headers=headers, rows=[tuple(r) for r in rows])
        once = normalize_table(t, max_cell_words=5)
        assert normalize_table(once, max_cell_words=5) == once


class TestDedupTables:
    def test_identical_removed(self):
        a = make_table(table_id="t1")
        b = make_table(table_id="t1x")
        assert dedup_tables([a, a]) == [a]
        assert dedup_tables([a, b]) == [a]  # id excluded from the key

    def test_different_rows_kept(self):
        a = make_table(rows=(("x",),))
        b = make_table(table_id="t2", rows=(("y",),))
        assert dedup_tables([a, b]) == [a, b]

    def test_ragged_equal_after_normalization(self):
        a = make_table(headers=("a", "b"), rows=(("x", EMPTY_TOKEN),))
        b = make_table(table_id="t2", headers=("a", "b"), rows=(("x",),))
        assert dedup_tables([a, b]) == [a]

    def test_rowless_tables_do_not_error(self):
        a = Table("t1", "P", "", ("h",), ())
        b = Table("t2", "P", "", ("h",), ())
        assert dedup_tables([a, b]) == [a]


class TestLinearizeRaw:
    def test_nfl_style_row(self):
        t = make_table(
            page="List of National Football League career rushing yards leaders",
            headers=("rank", "player", "team(s) by season", "carries", "yards", "average"),
            rows=(("1", "emmitt smith",
                   "dallas cowboys (1990-2002) arizona cardinals (2003-2004)",
                   "4,409", "18,355", "4.2"),),
        )
        text = linearize_raw(t)
        assert text.startswith(
            "TITLE: List of National Football League career rushing yards leaders\n"
        )
        assert "| rank, player, team(s) by season, carries, yards, average |" in text
        assert ("| 1, emmitt smith, dallas cowboys (1990-2002) arizona cardinals "
                "(2003-2004), 4,409, 18,355, 4.2 |") in text

    def test_one_by_one(self):
        t = make_table(page="T", headers=("h",), rows=(("c",),))
        assert linearize_raw(t) == "TITLE: T\n| h | | c |"

    def test_filler_token_rendered(self):
        t = normalize_table(make_table(headers=("a", "b"), rows=(("x",),)))
        assert f"x, {EMPTY_TOKEN}" in linearize_raw(t)

    @given(st.lists(st.lists(st.text(alphabet="abc", min_size=1, max_size=4),
                             min_size=1, max_size=4), min_size=1, max_size=4))
    def test_contains_every_nonempty_cell(self, rows):
        t = normalize_table(make_table(headers=(), rows=[tuple(r) for r in rows]))
        text = linearize_raw(t)
        for row in t.rows:
            for cell in row.cells:
                if cell.text:
                    assert cell.text in text


def test_linearize_subgraph_style():
    g = KBSubGraph("g", "Subject", (KBEdge("spouse", "M. Obama"), KBEdge("born", "1961")))
    assert linearize_subgraph(g) == "TITLE: Subject\n| spouse, M. Obama | | born, 1961 |"
