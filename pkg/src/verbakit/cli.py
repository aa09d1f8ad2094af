"""Command-line entry point chaining all stages into reproducible runs.

Inputs and outputs are role-tagged ("--in tables=t.jsonl"); bare paths fill
a command's declared roles in order. Every output is written atomically and
gets a sibling "<output>.manifest.json" recording inputs (with hashes and
predecessor manifest hashes), the resolved configuration, and record counts,
so identical inputs and configuration produce byte-identical artifacts.

Exit codes: 0 success, 1 usage error, 2 data error, 3 generator-protocol
error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

from . import convert as cv
from . import corpus as cp
from . import curation as cu
from . import retrieval as rt
from . import traindata as td
from . import verbalizer as vb
from .corpus import CorpusError, write_lines_atomic
from .verbalizer import GeneratorError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# Declared --in roles per command; bare paths fill these in order.
_IN_ROLES = {
    "convert": ("tables", "kb"),
    "verbalize": ("tables", "kb"),
    "filter": ("training",),
    "select": ("candidates",),
    "mix": ("a", "b"),
    "mine": ("qa", "tables", "kb"),
    "chunk": ("docs", "passages", "tables", "kb"),
    "index": ("chunks",),
    "augment": ("index", "chunks"),
    "search": ("index", "qa"),
    "eval-coverage": ("mined", "tables", "kb"),
    "eval-recall": ("index", "qa", "chunks"),
    "build-train-data": ("mined", "tables", "kb", "chunks", "docs"),
    "mine-negatives": ("instances", "chunks"),
}

_OUT_ROLES = {"filter": ("out", "scores")}

_DEFAULTS = {
    "threshold": 0.5,
    "variant": "recall",
    "beam_size": vb.DEFAULT_BEAM_SIZE,
    "max_pairs": cv.DEFAULT_MAX_PAIRS,
    "max_cell_words": cv.DEFAULT_MAX_CELL_WORDS,
    "budget": rt.DEFAULT_BUDGET,
    "k1": rt.DEFAULT_K1,
    "b": rt.DEFAULT_B,
    "k": list(rt.DEFAULT_KS),
    "seed": 0,
    "cap": None,
    "jobs": 1,
    "generator": "template",
    "gen_cmd": None,
    "gen_addr": None,
    "timeout": vb.DEFAULT_TIMEOUT,
    "n_negatives": 7,
    "format": "verbalized",
    "mode": "replace",
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="verbakit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text, flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--in", dest="inputs", action="append", default=[],
                       metavar="[ROLE=]PATH", help=f"input; roles: {', '.join(_IN_ROLES[name])}")
        p.add_argument("--out", dest="outputs", action="append", default=[],
                       metavar="[ROLE=]PATH", help="output path")
        p.add_argument("--config", help="key=value config file; flags win over file values")
        for flag in flags:
            _add_flag(p, flag)
        return p

    gen_flags = ("generator", "gen-cmd", "gen-addr", "beam-size", "timeout", "variant", "jobs")
    add("convert", "structured sources to title+pair records", ("max-cell-words", "max-pairs"))
    add("verbalize", "generate documents from tables / sub-graphs",
        gen_flags + ("max-pairs", "max-cell-words"))
    add("filter", "drop training pairs with low input coverage", ("threshold", "variant"))
    add("select", "harvest high-scoring generated outputs (ID-T)",
        ("threshold", "variant", "cap", "seed"))
    add("mix", "concatenate and shuffle two training sets", ("seed",))
    add("mine", "find questions answerable from tables / KB", ("max-cell-words",))
    add("chunk", "cut corpora into ~budget-word retrieval units", ("budget", "max-cell-words"))
    add("index", "build a BM25 index over chunks", ("k1", "b"))
    add("augment", "hot-swap new chunks into an existing index", ())
    add("search", "query an index", ("k",))
    add("eval-coverage", "answer coverage of verbalized gold records",
        gen_flags + ("max-pairs", "max-cell-words"))
    add("eval-recall", "R@k over a chunk index", ("k",))
    add("build-train-data", "retriever training instances from mined triples",
        ("format", "n-negatives", "seed", "k1", "b", "max-cell-words"))
    add("mine-negatives", "re-mine harder negatives from a joint index",
        ("k", "mode", "k1", "b"))
    return parser


def _add_flag(p, flag):
    if flag == "k":
        p.add_argument("--k", action="append", type=int, default=None)
    elif flag in ("threshold", "k1", "b", "timeout"):
        p.add_argument(f"--{flag}", type=float, default=None)
    elif flag in ("beam-size", "max-pairs", "max-cell-words", "budget", "seed", "cap",
                  "jobs", "n-negatives"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=int, default=None)
    elif flag == "generator":
        p.add_argument("--generator", choices=("template", "external"), default=None)
    elif flag == "variant":
        p.add_argument("--variant", choices=("recall", "f1"), default=None)
    elif flag == "format":
        p.add_argument("--format", choices=("raw", "verbalized"), default=None)
    elif flag == "mode":
        p.add_argument("--mode", choices=("replace", "extend"), default=None)
    else:
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None)


def _load_config(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CorpusError(path, line_no, "expected key=value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce(key, value):
    if isinstance(value, str):
        if key == "k":
            return [int(v) for v in value.split(",") if v]
        if key in ("threshold", "k1", "b", "timeout"):
            return float(value)
        if key in ("beam_size", "max_pairs", "max_cell_words", "budget", "seed", "cap",
                   "jobs", "n_negatives"):
            return int(value)
    return value


class _Config:
    """Resolved settings: flag value, else config-file value, else default."""

    def __init__(self, args, file_values):
        self._args = args
        self._file = file_values
        self.used = {}

    def get(self, key):
        value = getattr(self._args, key, None)
        if value is None:
            value = self._file.get(key)
            value = _coerce(key, value) if value is not None else _DEFAULTS[key]
        self.used[key] = value
        return value


def _parse_io(values, roles, what):
    """Map "[role=]path" values to {role: [paths]}; bare paths fill roles in order."""
    result: dict[str, list[str]] = {}
    remaining = [r for r in roles]
    for value in values:
        role, sep, path = value.partition("=")
        if sep and role in roles:
            result.setdefault(role, []).append(path)
            if role in remaining:
                remaining.remove(role)
        else:
            if not remaining:
                raise UsageError(f"cannot place bare {what} {value!r}; tag it with one of {roles}")
            role = remaining.pop(0)
            result.setdefault(role, []).append(value)
    return result


def _single(io, role, what, required=True):
    paths = io.get(role, [])
    if len(paths) > 1:
        raise UsageError(f"{what} role {role!r} given more than once")
    if not paths:
        if required:
            raise UsageError(f"missing {what} role {role!r}")
        return None
    return paths[0]


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifests(command, cfg_used, inputs, outputs):
    """Emit one manifest next to every output file."""
    config_hash = hashlib.sha256(
        json.dumps(cfg_used, sort_keys=True).encode("utf-8")
    ).hexdigest()
    input_entries = []
    for role, path in inputs:
        entry = {"role": role, "path": str(path), "sha256": _sha256(path)}
        sibling = str(path) + ".manifest.json"
        try:
            entry["manifest_sha256"] = _sha256(sibling)
        except OSError:
            pass
        input_entries.append(entry)
    output_entries = [
        {"role": role, "path": str(path), "sha256": _sha256(path), "records": count}
        for role, path, count in outputs
    ]
    manifest = {
        "command": command,
        "config": cfg_used,
        "config_hash": config_hash,
        "inputs": input_entries,
        "outputs": output_entries,
    }
    text = json.dumps(manifest, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    for role, path, count in outputs:
        write_lines_atomic(str(path) + ".manifest.json", [text])


def _make_generator_factory(cfg):
    kind = cfg.get("generator")
    if kind == "template":
        return lambda: vb.template_generate
    gen_cmd = cfg.get("gen_cmd")
    gen_addr = cfg.get("gen_addr")
    timeout = cfg.get("timeout")
    if gen_cmd:
        argv = shlex.split(gen_cmd)
        return lambda: vb.ExternalGenerator.spawn(argv, timeout=timeout)
    if gen_addr:
        host, _, port = gen_addr.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"--gen-addr must be host:port, got {gen_addr!r}")
        return lambda: vb.ExternalGenerator.connect(host, int(port), timeout=timeout)
    raise UsageError("external generator needs --gen-cmd or --gen-addr")


def _run_pooled(items, worker, make_gen, jobs):
    """Apply worker(item, gen) preserving order; one channel per thread."""
    if jobs <= 1:
        gen = make_gen()
        try:
            return [worker(item, gen) for item in items]
        finally:
            _close(gen)
    local = threading.local()
    channels = []
    channels_lock = threading.Lock()

    def call(item):
        gen = getattr(local, "gen", None)
        if gen is None:
            gen = make_gen()
            local.gen = gen
            with channels_lock:
                channels.append(gen)
        return worker(item, gen)

    try:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(call, items))
    finally:
        for gen in channels:
            _close(gen)


def _close(gen):
    close = getattr(gen, "close", None)
    if callable(close):
        close()


def _load_sources(io, cfg, normalize=True):
    """Load tables (normalized by default) and sub-graphs named in io."""
    tables = []
    graphs = []
    path = _single(io, "tables", "input", required=False)
    if path:
        tables = cp.load_corpus(path, "tables")
        if normalize:
            tables = [cv.normalize_table(t, cfg.get("max_cell_words")) for t in tables]
    path = _single(io, "kb", "input", required=False)
    if path:
        graphs = cp.load_corpus(path, "kb")
    return tables, graphs


# --- commands --------------------------------------------------------------


def _cmd_convert(io, out_io, cfg, inputs):
    tables, graphs = _load_sources(io, cfg)
    if not tables and not graphs:
        raise UsageError("convert needs --in tables=... and/or --in kb=...")
    # --max-pairs 0 disables splitting; the default bounds generator input.
    max_pairs = cfg.get("max_pairs")
    records = []
    for t in tables:
        for r in range(len(t.rows)):
            records.append(cv.row_to_record(t, r))
    records.extend(cv.subgraph_to_record(g) for g in graphs)
    if max_pairs > 0:
        records = [part for rec in records for part in cv.split_record(rec, max_pairs)]
    out = _single(out_io, "out", "output")
    count = cp.save_corpus(out, records, "training")
    return [("out", out, count)]


def _cmd_verbalize(io, out_io, cfg, inputs):
    tables, graphs = _load_sources(io, cfg)
    if not tables and not graphs:
        raise UsageError("verbalize needs --in tables=... and/or --in kb=...")
    make_gen = _make_generator_factory(cfg)
    beam_size = cfg.get("beam_size")
    max_pairs = cfg.get("max_pairs")
    variant = cfg.get("variant")
    jobs = cfg.get("jobs")

    def worker(source, gen):
        return vb.verbalize_source(source, gen, beam_size, max_pairs, variant)

    docs = _run_pooled(list(tables) + list(graphs), worker, make_gen, jobs)
    out = _single(out_io, "out", "output")
    count = vb.save_docs(out, docs)
    return [("out", out, count)]


def _cmd_filter(io, out_io, cfg, inputs):
    path = _single(io, "training", "input")
    examples = cp.load_corpus(path, "training")
    if any(not isinstance(ex, cp.TrainingExample) for ex in examples):
        raise CorpusError(path, None, "filter needs training lines with targets")
    t = cu.TrainingSet(name="T", examples=tuple(examples))
    threshold = cfg.get("threshold")
    variant = cfg.get("variant")
    scores = cu.score_training_set(t, variant)
    filtered = cu.filter_training_set(t, threshold, variant)
    out = _single(out_io, "out", "output")
    count = cp.save_corpus(out, list(filtered.examples), "training")
    scores_path = _single(out_io, "scores", "output", required=False) or out + ".scores.jsonl"
    score_lines = (
        json.dumps({"record_id": ex.source.record_id, "score": s}, ensure_ascii=False) + "\n"
        for ex, s in zip(t.examples, scores)
    )
    n_scores = write_lines_atomic(scores_path, score_lines)
    return [("out", out, count), ("scores", scores_path, n_scores)]


def _cmd_select(io, out_io, cfg, inputs):
    path = _single(io, "candidates", "input")
    examples = cp.load_corpus(path, "training")
    if any(not isinstance(ex, cp.TrainingExample) for ex in examples):
        raise CorpusError(path, None, "select needs candidate lines with generated targets")
    candidates = [(ex.source, ex.target) for ex in examples]
    cap = cfg.get("cap")
    if cap is None:
        cap = len(candidates)
    selected = cu.select_in_domain(
        candidates, cfg.get("threshold"), cap, cfg.get("seed"), cfg.get("variant")
    )
    out = _single(out_io, "out", "output")
    count = cp.save_corpus(out, list(selected.examples), "training")
    return [("out", out, count)]


def _cmd_mix(io, out_io, cfg, inputs):
    set_a = cu.TrainingSet("a", tuple(cp.load_corpus(_single(io, "a", "input"), "training")))
    set_b = cu.TrainingSet("b", tuple(cp.load_corpus(_single(io, "b", "input"), "training")))
    mixed = cu.mix(set_a, set_b, cfg.get("seed"))
    out = _single(out_io, "out", "output")
    count = cp.save_corpus(out, list(mixed.examples), "training")
    return [("out", out, count)]


def _cmd_mine(io, out_io, cfg, inputs):
    qas = cp.load_corpus(_single(io, "qa", "input"), "qa")
    tables, graphs = _load_sources(io, cfg)
    if bool(tables) == bool(graphs):
        raise UsageError("mine needs exactly one of --in tables=... or --in kb=...")
    if tables:
        mined = cu.mine_table_questions(qas, tables)
    else:
        mined = cu.mine_kb_questions(qas, graphs)
    out = _single(out_io, "out", "output")
    count = td.save_mined(out, mined)
    return [("out", out, count)]


def _cmd_chunk(io, out_io, cfg, inputs):
    budget = cfg.get("budget")
    chunks = []
    path = _single(io, "docs", "input", required=False)
    if path:
        chunks.extend(rt.chunk_verbalized_docs(vb.load_docs(path), budget))
    path = _single(io, "passages", "input", required=False)
    if path:
        chunks.extend(rt.chunk_passages(cp.load_corpus(path, "passages"), budget))
    tables, graphs = _load_sources(io, cfg)
    if tables:
        chunks.extend(rt.chunk_raw_tables(tables, budget))
    if graphs:
        chunks.extend(rt.chunk_raw_subgraphs(graphs, budget))
    if not chunks:
        raise UsageError("chunk needs at least one input (docs/passages/tables/kb)")
    out = _single(out_io, "out", "output")
    count = rt.save_chunks(out, chunks)
    return [("out", out, count)]


def _cmd_index(io, out_io, cfg, inputs):
    chunks = rt.load_chunks(_single(io, "chunks", "input"))
    index = rt.build_index(chunks, cfg.get("k1"), cfg.get("b"))
    out = _single(out_io, "out", "output")
    rt.save_index(index, out)
    return [("out", out, index.n_docs)]


def _cmd_augment(io, out_io, cfg, inputs):
    index = rt.load_index(_single(io, "index", "input"))
    new_chunks = rt.load_chunks(_single(io, "chunks", "input"))
    augmented = rt.augment_index(index, new_chunks)
    out = _single(out_io, "out", "output")
    rt.save_index(augmented, out)
    return [("out", out, augmented.n_docs)]


def _cmd_search(io, out_io, cfg, inputs):
    index = rt.load_index(_single(io, "index", "input"))
    qas = cp.load_corpus(_single(io, "qa", "input"), "qa")
    k = max(cfg.get("k"))
    lines = []
    for qa in qas:
        hits = rt.search(index, qa.question, k)
        lines.append(json.dumps(
            {
                "question": qa.question,
                "hits": [
                    {"chunk_id": h.chunk_id, "score": h.score, "rank": h.rank} for h in hits
                ],
            },
            ensure_ascii=False,
        ) + "\n")
    out = _single(out_io, "out", "output")
    count = write_lines_atomic(out, lines)
    return [("out", out, count)]


def _gold_from_mined(mined, tables, graphs):
    gold = []
    if tables:
        by_id = {t.table_id: t for t in tables}
        for m in mined:
            table = by_id.get(m.source_id)
            if table is None:
                raise ValueError(f"mined triple references unknown table {m.source_id!r}")
            for row in sorted({loc[0] for loc in m.hit_locations}):
                gold.append((cv.row_to_record(table, row), m.answers))
    else:
        by_id = {g.graph_id: g for g in graphs}
        for m in mined:
            graph = by_id.get(m.source_id)
            if graph is None:
                raise ValueError(f"mined triple references unknown sub-graph {m.source_id!r}")
            gold.append((cv.subgraph_to_record(graph), m.answers))
    return gold


def _cmd_eval_coverage(io, out_io, cfg, inputs):
    mined = td.load_mined(_single(io, "mined", "input"))
    tables, graphs = _load_sources(io, cfg)
    if bool(tables) == bool(graphs):
        raise UsageError("eval-coverage needs exactly one of --in tables=... or --in kb=...")
    gold = _gold_from_mined(mined, tables, graphs)
    make_gen = _make_generator_factory(cfg)
    beam_size = cfg.get("beam_size")
    max_pairs = cfg.get("max_pairs") if tables else None
    variant = cfg.get("variant")
    jobs = cfg.get("jobs")

    def worker(item, gen):
        rec, answers = item
        return vb.answer_coverage([(rec, answers)], gen, beam_size, max_pairs, variant)

    partials = _run_pooled(gold, worker, make_gen, jobs)
    covered = sum(p.covered for p in partials)
    misses = [m for p in partials for m in p.misses]
    skipped = [s for p in partials for s in p.skipped]
    total = covered + len(misses)
    report = {
        "total": total,
        "covered": covered,
        "coverage_pct": 100.0 * covered / total if total else 100.0,
        "misses": misses,
        "skipped": skipped,
    }
    out = _single(out_io, "out", "output")
    write_lines_atomic(out, [json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"])
    return [("out", out, total)]


def _load_index_with_chunks(io):
    chunk_paths = io.get("chunks", [])
    chunks = []
    for path in chunk_paths:
        chunks.extend(rt.load_chunks(path))
    return rt.load_index(_single(io, "index", "input"), chunks if chunks else None)


def _cmd_eval_recall(io, out_io, cfg, inputs):
    index = _load_index_with_chunks(io)
    qas = cp.load_corpus(_single(io, "qa", "input"), "qa")
    ks = sorted(set(cfg.get("k")))
    report = rt.recall_at_k(index, qas, ks)
    payload = {
        "n_questions": report.n_questions,
        "per_k": {str(k): v for k, v in report.per_k.items()},
    }
    out = _single(out_io, "out", "output")
    write_lines_atomic(out, [json.dumps(payload, sort_keys=True, indent=2) + "\n"])
    return [("out", out, report.n_questions)]


def _cmd_build_train_data(io, out_io, cfg, inputs):
    mined = td.load_mined(_single(io, "mined", "input"))
    tables, graphs = _load_sources(io, cfg)
    if bool(tables) == bool(graphs):
        raise UsageError("build-train-data needs exactly one of --in tables= or --in kb=")
    chunks = rt.load_chunks(_single(io, "chunks", "input"))
    neg_index = rt.build_index(chunks, cfg.get("k1"), cfg.get("b"))
    fmt = cfg.get("format")
    docs = None
    docs_path = _single(io, "docs", "input", required=False)
    if docs_path:
        docs = vb.load_docs(docs_path)
    if fmt == "verbalized" and docs is None:
        raise UsageError("--format verbalized needs --in docs=...")
    if tables:
        instances = td.build_table_training_data(
            mined, tables, neg_index, fmt, docs, cfg.get("n_negatives"), cfg.get("seed")
        )
    else:
        instances = td.build_kb_training_data(
            mined, graphs, neg_index, fmt, docs, cfg.get("n_negatives")
        )
    out = _single(out_io, "out", "output")
    count = td.save_instances(out, instances)
    return [("out", out, count)]


def _cmd_mine_negatives(io, out_io, cfg, inputs):
    instances = td.load_instances(_single(io, "instances", "input"))
    chunks = rt.load_chunks(_single(io, "chunks", "input"))
    index = rt.build_index(chunks, cfg.get("k1"), cfg.get("b"))
    k = max(cfg.get("k"))
    mined = td.mine_hard_negatives(index, instances, k, cfg.get("mode"))
    out = _single(out_io, "out", "output")
    count = td.save_instances(out, mined)
    return [("out", out, count)]


_COMMANDS = {
    "convert": _cmd_convert,
    "verbalize": _cmd_verbalize,
    "filter": _cmd_filter,
    "select": _cmd_select,
    "mix": _cmd_mix,
    "mine": _cmd_mine,
    "chunk": _cmd_chunk,
    "index": _cmd_index,
    "augment": _cmd_augment,
    "search": _cmd_search,
    "eval-coverage": _cmd_eval_coverage,
    "eval-recall": _cmd_eval_recall,
    "build-train-data": _cmd_build_train_data,
    "mine-negatives": _cmd_mine_negatives,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        file_values = _load_config(args.config) if args.config else {}
        cfg = _Config(args, file_values)
        io = _parse_io(args.inputs, _IN_ROLES[args.command], "input")
        out_roles = _OUT_ROLES.get(args.command, ("out",))
        out_io = _parse_io(args.outputs, out_roles, "output")
        inputs = [(role, path) for role in _IN_ROLES[args.command] for path in io.get(role, [])]
        outputs = _COMMANDS[args.command](io, out_io, cfg, inputs)
        _write_manifests(args.command, cfg.used, inputs, outputs)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except GeneratorError as exc:
        print(f"generator error: {exc}", file=sys.stderr)
        return 3
    except (CorpusError, ValueError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    for role, path, count in outputs:
        print(f"{role}: {path} ({count} records)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
