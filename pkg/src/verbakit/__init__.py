"""Verbalize structured knowledge into text and build retrieval corpora over it.

The pipeline: load tables / KB sub-graphs / passages / QA pairs (``corpus``),
convert structured sources into title+pair records (``convert``), verbalize
records through a pluggable generator with beam re-ranking (``verbalizer``),
curate data-to-text training sets and mine knowledge-answerable questions
(``curation``), then chunk, index with BM25, and evaluate retrieval
(``retrieval``, ``traindata``). ``cli`` chains the stages into reproducible
runs.
"""

__version__ = "0.1.0"
