"""Compress one synthetic conversation and compare prompt sizes.

Usage: python demos/compress_history.py [checkpoint]

Without a checkpoint the models are freshly initialised, which is enough to
see the shapes and token counts (the memories just carry no meaning yet).
"""

import sys

import numpy as np

from epochat.bundle import Bundle
from epochat.data import CorpusConfig, generate_synthetic_corpus
from epochat.dialogue import MemoryCache, TurnRef, dialogue_prompt
from epochat.lm import DialogueLM, LmConfig, template_vocabulary
from epochat.ssm import Compressor, CompressorConfig
from epochat.tokenizer import Tokenizer


def load(path):
    if path:
        b = Bundle.load(path)
        return b.tokenizer, b.compressor, b.lm
    corpus = generate_synthetic_corpus(CorpusConfig(n_conversations=50, turns_range=(20, 24), seed=3))
    tok = Tokenizer.build([u.text for c in corpus for u in c.utterances], template_vocabulary())
    comp = Compressor(CompressorConfig(tok.vocab_size, tok.mem_id, tok.pad_id, d_model=64, d_mem=64, seed=1))
    lm = DialogueLM(LmConfig(tok.vocab_size, d_model=64, pad_id=tok.pad_id, seed=2))
    return tok, comp, lm


def main():
    tok, comp, lm = load(sys.argv[1] if len(sys.argv) > 1 else None)
    corpus = generate_synthetic_corpus(CorpusConfig(n_conversations=20, turns_range=(20, 24), seed=5))
    conv = corpus[0]
    for u in conv.utterances[:4]:
        print(f"  [{u.speaker}] ({u.emotion}) {u.text}")
    print(f"  ... {len(conv.utterances)} utterances in total")
    mem = MemoryCache(comp, tok, corpus).memories(0)
    ref = TurnRef(0, len(conv.utterances))
    raw = dialogue_prompt(tok, corpus, ref, raw=True).length
    small = dialogue_prompt(tok, corpus, ref, memories=mem).length
    print(f"memories: {mem.shape[0]} vectors of width {mem.shape[1]}, norms {np.round(np.linalg.norm(mem, axis=1)[:5], 2)} ...")
    print(f"prompt length: {raw} tokens raw, {small} positions compressed ({1 - small / raw:.1%} fewer)")


if __name__ == "__main__":
    main()
