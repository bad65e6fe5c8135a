"""Turning conversations into dialogue prompts for the LM.

A *turn* ``t >= 1`` of a conversation asks for utterance ``t`` as the response;
utterance ``t - 1`` is the sentence being answered and utterances ``0 .. t-2``
form the history, which enters the prompt either as one memory vector per
utterance or, for comparison, as raw tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import EmotionCategory
from .lm import TEMPLATES, MixedInput, build_input
from .reconstruction import utterance_tokens
from .tensor import no_grad


@dataclass(frozen=True)
class TurnRef:
    conv_index: int
    turn: int


def all_turns(corpus: list) -> list:
    return [TurnRef(c, t) for c, conv in enumerate(corpus) for t in range(1, len(conv.utterances))]


def sample_turns(corpus: list, limit: int | None, seed: int = 0) -> list:
    """Every turn, or a seeded subset of ``limit`` turns kept in corpus order."""
    turns = all_turns(corpus)
    if limit is None or limit >= len(turns):
        return turns
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(turns), size=limit, replace=False))
    return [turns[i] for i in keep]


def emotion_prompt(tokenizer, sentence, emotion) -> list:
    """Sentence tokens preceded by the emotion's label token."""
    return [tokenizer.emotion_id(EmotionCategory.parse(emotion))] + [int(t) for t in sentence]


def response_tokens(tokenizer, utterance) -> list:
    return tokenizer.encode(utterance.text) + [tokenizer.eor_id]


class MemoryCache:
    """Memory vectors for every utterance of each conversation, computed once.

    The compressor is causal, so the memories of a prefix are the first rows of
    the memories of the whole conversation.
    """

    def __init__(self, compressor, tokenizer, corpus: list, with_speaker: bool = True, batch_size: int = 16):
        self.compressor = compressor
        self.tokenizer = tokenizer
        self.corpus = corpus
        self.with_speaker = with_speaker
        self.batch_size = batch_size
        self._cache = {}

    def memories(self, conv_index: int) -> np.ndarray:
        if conv_index not in self._cache:
            self.prefetch([conv_index])
        return self._cache[conv_index]

    def prefetch(self, conv_indices) -> None:
        todo = [c for c in dict.fromkeys(conv_indices) if c not in self._cache]
        with no_grad():
            for s in range(0, len(todo), self.batch_size):
                chunk = todo[s:s + self.batch_size]
                seqs = [[utterance_tokens(self.tokenizer, u, self.with_speaker)
                         for u in self.corpus[c].utterances] for c in chunk]
                mem, counts = self.compressor.compress_batch(seqs)
                row = 0
                for c, k in zip(chunk, counts):
                    self._cache[c] = mem.data[row:row + k].copy()
                    row += k


def dialogue_prompt(tokenizer, corpus, ref: TurnRef, memories=None, emotion=None,
                    raw: bool = False, max_seq_len: int | None = None) -> MixedInput:
    """Prompt for ``ref``.

    ``memories`` holds the conversation's memory rows (only the first ``turn - 1``
    are used); ``raw`` instead inlines the history tokens.  With ``emotion`` the
    labelled template is used and the label token precedes the sentence.
    """
    conv = corpus[ref.conv_index]
    t = ref.turn
    sentence = tokenizer.encode(conv.utterances[t - 1].text)
    template = TEMPLATES["dialogue"]
    if emotion is not None:
        sentence = emotion_prompt(tokenizer, sentence, emotion)
        template = TEMPLATES["counter"]
    if raw:
        hist = [utterance_tokens(tokenizer, u) for u in conv.utterances[:t - 1]]
        return build_input(template, tokenizer, raw_history=hist, sentence=sentence, max_seq_len=max_seq_len)
    hist = () if memories is None else memories[:t - 1]
    return build_input(template, tokenizer, history=hist, sentence=sentence, max_seq_len=max_seq_len)
