import numpy as np
import pytest

from epochat.data import Utterance
from epochat.dialogue import MemoryCache, TurnRef, all_turns, dialogue_prompt, emotion_prompt, response_tokens, sample_turns
from epochat.labels import EMOTIONS, EmotionCategory
from epochat.reconstruction import (
    check_compatible,
    evaluate_reconstruction,
    reconstruction_loss,
    reconstruction_prompt,
    reconstruction_target,
    token_accuracy,
    utterance_tokens,
)
from epochat.ssm import Compressor, CompressorConfig
from epochat.tensor import Adam


def test_emotion_prompt_format(tokenizer):
    sent = tokenizer.encode("do you listen to radio")
    out = emotion_prompt(tokenizer, sent, "happy")
    assert out[0] == tokenizer.emotion_id(EmotionCategory.HAPPY) and out[1:] == sent
    variants = [emotion_prompt(tokenizer, sent, e) for e in EMOTIONS]
    assert len({v[0] for v in variants}) == 7 and all(v[1:] == sent for v in variants)
    assert emotion_prompt(tokenizer, sent, "sad") == emotion_prompt(tokenizer, sent, "sad")


def test_turn_enumeration(small_corpus):
    turns = all_turns(small_corpus)
    assert len(turns) == sum(len(c) - 1 for c in small_corpus)
    sub = sample_turns(small_corpus, 10, seed=1)
    assert len(sub) == 10 and sub == sorted(sub, key=lambda r: (r.conv_index, r.turn))
    assert sample_turns(small_corpus, 10, seed=1) == sub
    assert sample_turns(small_corpus, None) == turns


def test_prompt_uses_earlier_history_only(small_corpus, tokenizer, tiny_compressor):
    cache = MemoryCache(tiny_compressor, tokenizer, small_corpus)
    conv = small_corpus[0]
    ref = TurnRef(0, 3)
    p = dialogue_prompt(tokenizer, small_corpus, ref, memories=cache.memories(0))
    assert p.vector_count() == 2
    raw = dialogue_prompt(tokenizer, small_corpus, ref, raw=True)
    hist_len = sum(len(utterance_tokens(tokenizer, u)) for u in conv.utterances[:2])
    assert raw.length - p.length == hist_len - 2
    assert p.token_ids()[-1] == tokenizer.bos_id
    assert response_tokens(tokenizer, conv.utterances[3])[-1] == tokenizer.eor_id


def test_cache_matches_direct_compression(small_corpus, tokenizer, tiny_compressor):
    cache = MemoryCache(tiny_compressor, tokenizer, small_corpus, batch_size=3)
    cache.prefetch([0, 1, 2, 3])
    direct = tiny_compressor.compress([utterance_tokens(tokenizer, u) for u in small_corpus[2].utterances])
    assert np.allclose(cache.memories(2), np.stack([m.vector for m in direct]), atol=1e-5)


class TestReconstruction:
    def test_target_layout(self, tokenizer):
        utts = [Utterance(0, "a b", "sad"), Utterance(1, "c", "sad")]
        tgt = reconstruction_target(tokenizer, utts)
        assert tgt.count(tokenizer.sep_id) == 1 and tgt[-1] == tokenizer.eor_id
        assert reconstruction_prompt(tokenizer, 1).vector_count() == 1
        assert reconstruction_prompt(tokenizer, 3).vector_count() == 3

    def test_dimension_mismatch_rejected(self, tokenizer, tiny_lm):
        comp = Compressor(CompressorConfig(tokenizer.vocab_size, tokenizer.mem_id, d_model=8, d_state=2,
                                           n_layers=1, d_mem=12))
        with pytest.raises(ValueError):
            check_compatible(comp, tiny_lm)

    def test_frozen_lm_gets_no_gradient(self, small_corpus, tokenizer, tiny_lm, tiny_compressor):
        tiny_lm.freeze()
        groups = [list(small_corpus[0].utterances[:2]), [small_corpus[1].utterances[0]]]
        loss = reconstruction_loss(tiny_compressor, tiny_lm, tokenizer, groups)
        assert np.isfinite(loss.item()) and loss.item() > 0
        loss.backward()
        assert all(p.grad is None or not p.grad.any() for p in tiny_lm.parameters())
        assert any(p.grad is not None and p.grad.any() for p in tiny_compressor.parameters())

    def test_training_improves_token_accuracy(self, small_corpus, tokenizer, tiny_lm, tiny_compressor):
        tiny_lm.freeze()
        groups = [[u] for u in small_corpus[0].utterances[:4]]
        before = token_accuracy(tiny_compressor, tiny_lm, tokenizer, groups)
        opt = Adam(tiny_compressor, lr=3e-3)
        first = None
        for _ in range(25):
            loss = reconstruction_loss(tiny_compressor, tiny_lm, tokenizer, groups)
            first = first if first is not None else loss.item()
            loss.backward()
            opt.step()
        assert loss.item() < first
        assert token_accuracy(tiny_compressor, tiny_lm, tokenizer, groups) >= before
        rep = evaluate_reconstruction(tiny_compressor, tiny_lm, tokenizer, groups)
        assert 0.0 <= rep.bleu1 <= 1.0 and rep.n_groups == 4
