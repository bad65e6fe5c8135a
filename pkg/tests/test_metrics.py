from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epochat.metrics import bleu_n, ngram_precisions, brevity_penalty, cosine_matrix, dist_n, greedy_match_f1, semantic_score
from oracles import brute_bleu, brute_dist_n

tokens = st.lists(st.integers(0, 6), min_size=0, max_size=12)
nonempty = st.lists(st.integers(0, 6), min_size=1, max_size=12)


class TestDistN:
    def test_hand_examples(self):
        assert dist_n([["the", "cat", "the"]]) == pytest.approx(2 / 3)
        assert dist_n([["a", "b", "c"]]) == 1.0
        assert dist_n([["a", "a"], ["a", "a"]], 2, exact=True) == Fraction(1, 2)
        assert dist_n([["a", "a"], ["a", "a"]], 1, exact=True) == Fraction(1, 4)

    def test_no_ngrams_is_an_error(self):
        with pytest.raises(ValueError):
            dist_n([[], ["a"]], 2)
        with pytest.raises(ValueError):
            dist_n([["a"]], 0)

    @given(st.lists(tokens, min_size=1, max_size=4), st.integers(1, 3))
    def test_matches_brute_force(self, texts, n):
        if sum(max(len(t) - n + 1, 0) for t in texts) == 0:
            return
        d = dist_n(texts, n, exact=True)
        assert d == brute_dist_n(texts, n)
        assert 0 < d <= 1
        assert (d == 1) == (len(set(g for t in texts for g in zip(*[t[i:] for i in range(n)]))) ==
                            sum(len(t) - n + 1 for t in texts if len(t) >= n))


class TestBleu:
    def test_hand_examples(self):
        assert bleu_n(["a", "b", "c", "d"], [["a", "b", "c", "d"]]) == pytest.approx(1.0)
        assert bleu_n(["x", "y"], [["a", "b"]], 2) == 0.0
        assert bleu_n(["the", "the", "the"], [["the", "cat"]], 1) == pytest.approx(1 / 3)
        assert bleu_n([], [["a"]]) == 0.0

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            bleu_n(["a"], [["a"]], 5)
        with pytest.raises(ValueError):
            bleu_n(["a"], [])

    def test_brevity_penalty_prefers_shorter_reference_on_ties(self):
        # candidate length 3, references of length 2 and 4 are equally close -> use 2 -> no penalty
        assert brevity_penalty(3, [[0] * 4, [0] * 2]) == 1.0
        assert brevity_penalty(2, [[0] * 4]) == pytest.approx(np.exp(-1.0))

    @given(tokens, st.lists(nonempty, min_size=1, max_size=3), st.integers(1, 4))
    def test_matches_brute_force(self, cand, refs, max_n):
        got = bleu_n(cand, refs, max_n)
        assert got == pytest.approx(brute_bleu(cand, refs, max_n), abs=1e-12)
        assert 0.0 <= got <= 1.0 + 1e-12

    def test_order_step_follows_geometric_mean_rule(self):
        # BLEU_{n+1} <= BLEU_n exactly when p_{n+1} is at most the geometric mean of p_1..p_n
        # (same brevity penalty on both sides)
        rng = np.random.default_rng(0)
        for _ in range(300):
            ref = list(rng.integers(0, 30, size=int(rng.integers(6, 15))))
            cand = [t if rng.random() < 0.7 else int(rng.integers(0, 30)) for t in ref]
            ps = [float(p) for p in ngram_precisions(cand, [ref], 4)]
            for n in range(1, 4):
                gm = float(np.exp(np.mean(np.log(ps[:n]))))
                if abs(ps[n] - gm) < 1e-12:
                    continue
                assert (bleu_n(cand, [ref], n + 1) <= bleu_n(cand, [ref], n)) == (ps[n] < gm)

    def test_smoothing_can_raise_score_with_order(self):
        # zero 4-gram matches smoothed to 1/(count+1) can beat a genuine 3-gram precision
        cand, ref = [14, 25, 21, 24, 22, 3, 5], [12, 25, 0, 24, 23, 11, 1]
        ps = ngram_precisions(cand, [ref], 4)
        assert ps[3] > ps[2]
        assert bleu_n(cand, [ref], 4) > bleu_n(cand, [ref], 3)


class TestGreedyMatching:
    def test_hand_example_exact(self):
        sim = [[Fraction(9, 10), Fraction(1, 10)], [Fraction(2, 10), Fraction(8, 10)]]
        p, r, f = greedy_match_f1(sim)
        assert p == r == f == Fraction(85, 100)

    def test_semantic_score_through_vectors(self):
        table = {0: np.array([1.0, 0.0]), 1: np.array([0.0, 1.0])}
        encode = lambda ids: np.stack([table[i] for i in ids])
        assert semantic_score([0, 1], [0, 1], encode) == pytest.approx(1.0)
        assert semantic_score([0], [1], encode) == pytest.approx(0.0)
        with pytest.raises(ValueError):
            semantic_score([], [0], encode)

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10 ** 6))
    def test_symmetric_and_bounded(self, n, m, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(n, 4)), rng.normal(size=(m, 4))
        s = cosine_matrix(a, b)
        f_ab = greedy_match_f1(s)[2]
        f_ba = greedy_match_f1(s.T)[2]
        assert f_ab == pytest.approx(f_ba, abs=1e-12)
        assert 0.0 <= f_ab <= 1.0 + 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cosine_matrix(np.zeros((1, 3)), np.ones((1, 3)))
