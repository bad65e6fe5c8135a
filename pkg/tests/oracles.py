"""Brute-force reference implementations used only by the tests.

Each one is written the slow, obvious way so that it shares no code with the
package it checks.
"""

import math
from fractions import Fraction

import numpy as np


def brute_ngrams(tokens, n):
    out = []
    i = 0
    while i + n <= len(tokens):
        out.append(tuple(tokens[j] for j in range(i, i + n)))
        i += 1
    return out


def brute_dist_n(texts, n):
    all_grams = []
    for t in texts:
        all_grams.extend(brute_ngrams(list(t), n))
    unique = []
    for g in all_grams:
        if g not in unique:
            unique.append(g)
    return Fraction(len(unique), len(all_grams))


def brute_clipped_precision(cand, refs, n):
    grams = brute_ngrams(list(cand), n)
    distinct = []
    for g in grams:
        if g not in distinct:
            distinct.append(g)
    matched = 0
    for g in distinct:
        c = sum(1 for h in grams if h == g)
        ref_max = max(sum(1 for h in brute_ngrams(list(r), n) if h == g) for r in refs)
        matched += min(c, ref_max)
    return matched, len(grams)


def brute_bleu(cand, refs, max_n):
    if len(cand) == 0:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        m, t = brute_clipped_precision(cand, refs, n)
        if n >= 2 and m == 0:
            p = Fraction(1, t + 1)
        elif t == 0:
            p = Fraction(0)
        else:
            p = Fraction(m, t)
        if p == 0:
            return 0.0
        logs.append(math.log(p.numerator) - math.log(p.denominator))
    c = len(cand)
    best = None
    for r in refs:
        key = (abs(len(r) - c), len(r))
        if best is None or key < best:
            best = key
    r = best[1]
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(logs) / max_n)


def teacher_forced_logprobs(lm, prompt, y):
    """Per-token log-probabilities of ``y`` by re-running the model on every prefix."""
    out = []
    for i in range(len(y)):
        inp = prompt.with_response(list(y[:i])) if i else prompt
        logits = lm.forward(inp).data[-1].astype(np.float64)
        z = logits - logits.max()
        p = np.exp(z) / np.exp(z).sum()
        out.append(math.log(p[int(y[i])]))
    return out


def brute_reward(lm, prompt, y, beta):
    lps = teacher_forced_logprobs(lm, prompt, y)
    return beta * sum(lps) / len(lps)


def brute_epo_loss(r_a, r_i, gamma):
    z = r_a - r_i - gamma
    return -math.log(1.0 / (1.0 + math.exp(-z)))
