import csv

import numpy as np
import pytest

from epochat.dialogue import TurnRef, dialogue_prompt
from epochat.emotion import EmbedderConfig, EmotionEmbedder
from epochat.evaluation import EfficiencyReport, bench_compression, evaluate_dialogue, lm_token_encoder


def test_eval_report_csv(tmp_path, small_corpus, tokenizer, tiny_lm, tiny_compressor):
    emb = EmotionEmbedder(EmbedderConfig(tokenizer.vocab_size, 8, 8))
    rep = evaluate_dialogue(tiny_lm, tiny_compressor, emb, tokenizer, small_corpus, n_samples=6, max_new_tokens=4,
                            digest="abc")
    again = evaluate_dialogue(tiny_lm, tiny_compressor, emb, tokenizer, small_corpus, n_samples=6, max_new_tokens=4,
                              digest="abc")
    assert rep.n == 6 and rep.rows == again.rows
    rep.write_csv(tmp_path / "e.csv")
    rows = list(csv.reader(open(tmp_path / "e.csv")))
    assert rows[0][:5] == ["conv_id", "turn", "semantic_score", "emotion_score", "dist_1"]
    assert rows[-1][0] == "mean" and len(rows) == 8
    assert float(rows[-1][4]) == pytest.approx(rep.means["dist_1"])
    assert "abc" in rep.summary() and "dist_1 (pooled)" in rep.summary()
    assert 0 < rep.pooled_dist_1 <= 1


def test_semantic_encoder_is_self_consistent(tiny_lm):
    enc = lm_token_encoder(tiny_lm)
    a = enc([20, 21, 22])
    assert a.shape == (3, tiny_lm.config.d_model) and np.array_equal(a, enc([20, 21, 22]))


def test_bench_token_accounting(small_corpus, tokenizer, tiny_lm, tiny_compressor):
    rep = bench_compression(tiny_lm, tiny_compressor, tokenizer, small_corpus, min_turns=8, n_samples=4,
                            repetitions=1)
    idx = [i for i, c in enumerate(small_corpus) if len(c) >= 8]
    assert rep.n_samples == min(4, len(idx))
    # recount every eligible conversation by hand
    recount_raw, recount_mem = [], []
    for c in idx:
        ref = TurnRef(c, len(small_corpus[c]))
        recount_raw.append(dialogue_prompt(tokenizer, small_corpus, ref, raw=True).length)
        recount_mem.append(dialogue_prompt(tokenizer, small_corpus, ref, memories=np.zeros((len(small_corpus[c]), 16))).length)
    assert set(rep.token_counts_without) <= set(recount_raw)
    assert set(rep.token_counts_with) <= set(recount_mem)
    assert rep.token_reduction == pytest.approx(1 - np.mean(rep.token_counts_with) / np.mean(rep.token_counts_without))
    assert set(rep.to_dict()) >= {"token_reduction", "time_reduction"}


def test_bench_errors(small_corpus, tokenizer, tiny_lm, tiny_compressor):
    with pytest.raises(ValueError, match="no conversation"):
        bench_compression(tiny_lm, tiny_compressor, tokenizer, small_corpus, min_turns=99)
    with pytest.raises(ValueError):
        bench_compression(tiny_lm, tiny_compressor, tokenizer, small_corpus, repetitions=0)


def test_reduction_arithmetic():
    rep = EfficiencyReport(1, 606.23, 111.52, 1.0, 0.715, 0.0)
    assert round(rep.token_reduction, 3) == 0.816
    assert rep.time_reduction == pytest.approx(0.285)


def test_one_token_histories_do_not_shrink(tokenizer, tiny_lm, tiny_compressor):
    from epochat.data import Conversation, Utterance
    word = tokenizer.itos[-1]
    conv = Conversation("x", [Utterance(i % 2, word, "sad") for i in range(21)])
    rep = bench_compression(tiny_lm, tiny_compressor, tokenizer, [conv], min_turns=20, n_samples=1, repetitions=1)
    # one speaker marker + one word per utterance vs one memory: compression halves at best
    assert rep.token_reduction < 0.55
