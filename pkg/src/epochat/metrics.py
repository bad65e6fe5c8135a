"""Text-generation metrics: distinct-n, smoothed BLEU, greedy-matching F1."""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction
from typing import Sequence

import numpy as np


def ngrams(tokens: Sequence, n: int) -> list:
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def dist_n(texts: Sequence[Sequence], n: int = 1, exact: bool = False):
    """Unique n-grams over total n-grams, pooled across ``texts``.

    With ``exact`` the ratio comes back as a Fraction.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seen = set()
    total = 0
    for text in texts:
        grams = ngrams(list(text), n)
        seen.update(grams)
        total += len(grams)
    if total == 0:
        raise ValueError(f"dist_n: no {n}-grams in the input (all texts empty or shorter than n)")
    ratio = Fraction(len(seen), total)
    return ratio if exact else float(ratio)


def ngram_precisions(candidate: Sequence, references: Sequence[Sequence], max_n: int) -> list:
    """Modified (clipped) n-gram precisions as Fractions, n = 1..max_n.

    Orders n >= 2 with no clipped match use add-one smoothing, 1 / (count + 1).
    """
    candidate = list(candidate)
    out = []
    for n in range(1, max_n + 1):
        cand = Counter(ngrams(candidate, n))
        best = Counter()
        for ref in references:
            for gram, c in Counter(ngrams(list(ref), n)).items():
                best[gram] = max(best[gram], c)
        matched = sum(min(c, best[g]) for g, c in cand.items())
        total = sum(cand.values())
        if matched == 0 and n >= 2:
            out.append(Fraction(1, total + 1))
        elif total == 0:
            out.append(Fraction(0))
        else:
            out.append(Fraction(matched, total))
    return out


def brevity_penalty(cand_len: int, references: Sequence[Sequence]) -> float:
    if cand_len == 0:
        return 0.0
    # closest reference length, shorter one on ties
    r = min((abs(len(ref) - cand_len), len(ref)) for ref in references)[1]
    return 1.0 if cand_len > r else math.exp(1.0 - r / cand_len)


def bleu_n(candidate: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Sentence BLEU with uniform weights over orders 1..max_n."""
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be in 1..4, got {max_n}")
    if not references:
        raise ValueError("bleu_n needs at least one reference")
    if len(candidate) == 0:
        return 0.0
    precisions = ngram_precisions(candidate, references, max_n)
    if any(p == 0 for p in precisions):
        return 0.0
    log_mean = sum(math.log(p.numerator) - math.log(p.denominator) for p in precisions) / max_n
    return brevity_penalty(len(candidate), references) * math.exp(log_mean)


def greedy_match_f1(sim) -> tuple:
    """(precision, recall, F1) of greedy matching on a candidate x reference similarity matrix.

    Works on nested sequences of Fractions as well as floats, so hand examples
    can be checked exactly.
    """
    rows = [list(r) for r in sim]
    if not rows or not rows[0]:
        raise ValueError("similarity matrix is empty")
    n_cols = len(rows[0])
    precision = sum(max(r) for r in rows) / len(rows)
    recall = sum(max(r[j] for r in rows) for j in range(n_cols)) / n_cols
    # the harmonic mean only makes sense for positive P and R; negative cosines can
    # otherwise push F1 outside [-1, 1]
    if precision <= 0 or recall <= 0:
        return precision, recall, 0 * precision
    return precision, recall, 2 * precision * recall / (precision + recall)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("zero-norm token vector")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


def semantic_score(candidate: Sequence, reference: Sequence, encode) -> float:
    """Greedy-matching F1 between contextual token vectors of two token sequences.

    ``encode`` maps a token sequence to an array [len, d] of token vectors.
    """
    if len(candidate) == 0 or len(reference) == 0:
        raise ValueError("semantic_score: empty input")
    sim = cosine_matrix(encode(candidate), encode(reference))
    return float(greedy_match_f1(sim)[2])
