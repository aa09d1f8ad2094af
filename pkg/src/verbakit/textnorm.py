"""Tokenization, answer normalization, containment tests, and ROUGE-1.

These four operations are the measurement substrate for training-set
filtering, beam re-ranking, answer-coverage evaluation, and question mining.
All of them are pure and safe to call from any thread.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

# Maximal runs of alphanumeric characters (\w minus the underscore).
_TOKEN_RE = re.compile(r"[^\W_]+")
# Anything that is neither a word character nor whitespace, plus underscore.
_PUNCT_RE = re.compile(r"[^\w\s]|_")
_ARTICLES = frozenset({"a", "an", "the"})

ROUGE_VARIANTS = ("recall", "f1")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on maximal runs of non-alphanumeric characters.

    Digits are kept; there is no stemming or stopword removal. May return an
    empty list.
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class RougeScore:
    """Unigram precision/recall/F1, each in [0, 1]."""

    precision: float
    recall: float
    f1: float


def rouge1(reference: Sequence[str], candidate: Sequence[str]) -> RougeScore:
    """ROUGE-1 with clipped (multiset) unigram counting.

    Empty sides are allowed: recall is 0 when the reference is empty and
    precision is 0 when the candidate is empty; f1 is 0 when p + r == 0.
    """
    overlap = sum((Counter(reference) & Counter(candidate)).values())
    recall = overlap / len(reference) if reference else 0.0
    precision = overlap / len(candidate) if candidate else 0.0
    if precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return RougeScore(precision=precision, recall=recall, f1=f1)


def rouge_value(score: RougeScore, variant: str) -> float:
    """Pick the configured component of a ROUGE score.

    "recall" reads the score as coverage of the reference (the default used by
    filtering and beam selection, where the reference is the structured
    input); "f1" balances both sides.
    """
    if variant == "recall":
        return score.recall
    if variant == "f1":
        return score.f1
    raise ValueError(f"unknown rouge variant {variant!r} (expected one of {ROUGE_VARIANTS})")


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop the articles a/an/the, squeeze spaces.

    Punctuation means any character that is neither alphanumeric nor
    whitespace; it is removed without inserting a space, so "4,409" stays one
    token. Articles are removed only as whole tokens.
    """
    text = _PUNCT_RE.sub("", text.lower())
    return " ".join(w for w in text.split() if w not in _ARTICLES)


def answer_token_lists(answers: Iterable[str]) -> list[list[str]]:
    """Normalize and tokenize each answer, dropping any that normalize away."""
    out = []
    for answer in answers:
        tokens = tokenize(normalize_answer(answer))
        if tokens:
            out.append(tokens)
    return out


def contains_tokens(haystack_tokens: Sequence[str], needles: Iterable[Sequence[str]]) -> bool:
    """True iff any needle occurs as a contiguous subsequence of the haystack."""
    for needle in needles:
        n = len(needle)
        if n == 0 or n > len(haystack_tokens):
            continue
        first = needle[0]
        for start in range(len(haystack_tokens) - n + 1):
            if haystack_tokens[start] == first and list(haystack_tokens[start:start + n]) == list(needle):
                return True
    return False


def contains_answer(haystack: str, answers: Sequence[str]) -> bool:
    """Token-boundary answer match after normalization.

    True iff the normalized token sequence of any answer occurs contiguously
    in the normalized token sequence of the haystack. Substring matches that
    cross token boundaries ("50" inside "150") do not count.
    """
    hay = tokenize(normalize_answer(haystack))
    return contains_tokens(hay, answer_token_lists(answers))
