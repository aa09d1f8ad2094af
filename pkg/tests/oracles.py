"""Brute-force reference implementations used to check the library.

Everything here is deliberately written the slow, obvious way and shares no
code with verbakit itself: character walks instead of regexes, per-document
scans instead of inverted indexes, dict loops instead of Counter arithmetic.
"""

import math


def tokenize_oracle(text):
    """Character walk: maximal runs of alphanumeric characters, lowercased."""
    tokens = []
    current = []
    for ch in text.lower():
        if ch.isalnum():
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def normalize_oracle(text):
    """Regex-free walk: lowercase, drop punctuation, drop articles, squeeze spaces."""
    kept = []
    for ch in text.lower():
        if ch.isalnum() or ch.isspace():
            kept.append(ch)
    words = [w for w in "".join(kept).split() if w not in ("a", "an", "the")]
    return " ".join(words)


def rouge1_oracle(reference, candidate):
    """Clipped unigram overlap via explicit dict loops. Returns (p, r, f1)."""
    ref_counts = {}
    for tok in reference:
        ref_counts[tok] = ref_counts.get(tok, 0) + 1
    cand_counts = {}
    for tok in candidate:
        cand_counts[tok] = cand_counts.get(tok, 0) + 1
    overlap = 0
    for tok, n in cand_counts.items():
        if tok in ref_counts:
            overlap += min(n, ref_counts[tok])
    recall = overlap / len(reference) if reference else 0.0
    precision = overlap / len(candidate) if candidate else 0.0
    if precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def contains_oracle(haystack, answers):
    """Brute-force contiguous subsequence scan over normalized token lists."""
    hay = tokenize_oracle(normalize_oracle(haystack))
    for answer in answers:
        needle = tokenize_oracle(normalize_oracle(answer))
        if not needle:
            continue
        for start in range(len(hay) - len(needle) + 1):
            if hay[start:start + len(needle)] == needle:
                return True
    return False


def bm25_scores_oracle(chunks, query, k1, b):
    """Exhaustive BM25 scorer: no inverted index, df/tf by scanning every doc.

    chunks: list of (title, text) in corpus order. Returns one score per doc,
    summing per-term contributions in first-occurrence query term order (the
    order the library uses) so exact ties stay exact.
    """
    docs = [tokenize_oracle(title + " " + text) for title, text in chunks]
    n = len(docs)
    lengths = [len(d) for d in docs]
    avg_len = sum(lengths) / n if n else 0.0
    qterms = []
    for tok in tokenize_oracle(query):
        if tok not in qterms:
            qterms.append(tok)
    dfs = {term: sum(1 for d in docs if term in d) for term in qterms}
    scores = []
    for i, doc in enumerate(docs):
        score = 0.0
        for term in qterms:
            df = dfs[term]
            if df == 0:
                continue
            tf = sum(1 for tok in doc if tok == term)
            if tf == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            denom = tf + k1 * (1 - b + b * lengths[i] / avg_len)
            score += idf * tf * (k1 + 1) / denom
        scores.append(score)
    return scores


def bm25_topk_oracle(chunk_ids, chunks, query, k, k1, b):
    """Top-k by score with chunk_id tie-break; drops zero scores."""
    scores = bm25_scores_oracle(chunks, query, k1, b)
    ranked = sorted(
        (i for i in range(len(chunks)) if scores[i] > 0.0),
        key=lambda i: (-scores[i], chunk_ids[i]),
    )
    return [(chunk_ids[i], scores[i]) for i in ranked[:k]]
