"""Training the compressor to reconstruct utterances through a frozen dialogue LM.

Single-utterance groups teach the compressor to pack one utterance into one
memory; multi-utterance groups (k memories, target ``u1 <sep> u2 ... uk``) teach
it to keep them apart.  Evaluation reports sentence BLEU-1 of greedy decodes and
teacher-forced token accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lm import TEMPLATES, DecodeConfig, DialogueLM, MixedInput, build_input, collate, generate_batch, lm_loss
from .metrics import bleu_n
from .ssm import Compressor
from .tensor import Tensor, no_grad


def utterance_tokens(tokenizer, utterance, with_speaker: bool = True) -> list:
    """Compressor-side tokens of one utterance: optional speaker marker, then the words."""
    ids = tokenizer.encode(utterance.text)
    return [tokenizer.speaker_id(utterance.speaker)] + ids if with_speaker else ids


def reconstruction_target(tokenizer, utterances) -> list:
    """Words of each utterance, separated by <sep>, closed by <eor>."""
    out = []
    for i, utt in enumerate(utterances):
        if i:
            out.append(tokenizer.sep_id)
        out.extend(tokenizer.encode(utt.text))
    out.append(tokenizer.eor_id)
    return out


def reconstruction_prompt(tokenizer, k: int, memories=None) -> MixedInput:
    """Prompt for k memories; with ``memories`` None the rows come from an external table."""
    template = TEMPLATES["recon_single"] if k == 1 else TEMPLATES["recon_multi"]
    return build_input(template, tokenizer, history=k if memories is None else memories)


def check_compatible(compressor: Compressor, lm: DialogueLM) -> None:
    if compressor.config.d_mem != lm.config.d_model:
        raise ValueError(
            f"compressor d_mem={compressor.config.d_mem} does not match LM d_model={lm.config.d_model}")


def reconstruction_loss(compressor: Compressor, lm: DialogueLM, tokenizer, groups: list,
                        with_speaker: bool = True) -> Tensor:
    """Cross-entropy of the LM rebuilding each group of utterances from its memories.

    ``groups`` is a list of utterance lists.  The LM is expected to be frozen;
    gradients reach only the compressor through the memory vectors.
    """
    check_compatible(compressor, lm)
    seqs = [[utterance_tokens(tokenizer, u, with_speaker) for u in g] for g in groups]
    memories, counts = compressor.compress_batch(seqs)
    prompts = [reconstruction_prompt(tokenizer, k) for k in counts]
    targets = [reconstruction_target(tokenizer, g) for g in groups]
    return lm_loss(lm, prompts, targets, vectors=memories)


@dataclass
class ReconstructionReport:
    bleu1: float
    token_accuracy: float
    n_groups: int

    def to_dict(self) -> dict:
        return {"bleu1": self.bleu1, "token_accuracy": self.token_accuracy, "n_groups": self.n_groups}


def _strip(tokenizer, ids) -> list:
    return [t for t in ids if not tokenizer.is_reserved(t)]


def token_accuracy(compressor, lm, tokenizer, groups, with_speaker=True, batch_size=64) -> float:
    """Teacher-forced argmax accuracy over target positions (including <sep> and <eor>)."""
    hit = total = 0
    with no_grad():
        for s in range(0, len(groups), batch_size):
            chunk = groups[s:s + batch_size]
            seqs = [[utterance_tokens(tokenizer, u, with_speaker) for u in g] for g in chunk]
            memories, counts = compressor.compress_batch(seqs)
            inputs = [reconstruction_prompt(tokenizer, k).with_response(reconstruction_target(tokenizer, g))
                      for k, g in zip(counts, chunk)]
            batch = collate(inputs, lm.config.pad_id, memories)
            logits = lm.logits_at(batch, batch.tgt_b, batch.tgt_t - 1).data
            hit += int((logits.argmax(axis=-1) == batch.tgt_ids).sum())
            total += len(batch.tgt_ids)
    return hit / total if total else 0.0


def reconstruct(compressor, lm, tokenizer, groups, with_speaker=True, batch_size=64,
                max_new_tokens: int | None = None) -> list:
    """Greedy reconstructions (token ids, reserved markers kept) for each group."""
    out = []
    with no_grad():
        for s in range(0, len(groups), batch_size):
            chunk = groups[s:s + batch_size]
            seqs = [[utterance_tokens(tokenizer, u, with_speaker) for u in g] for g in chunk]
            memories, counts = compressor.compress_batch(seqs)
            prompts, row = [], 0
            for k in counts:
                prompts.append(reconstruction_prompt(tokenizer, k, memories.data[row:row + k]))
                row += k
            limit = max_new_tokens or max(len(reconstruction_target(tokenizer, g)) for g in chunk) + 4
            out.extend(generate_batch(lm, prompts, DecodeConfig("greedy", max_new_tokens=limit),
                                      tokenizer.eor_id))
    return out


def evaluate_reconstruction(compressor, lm, tokenizer, groups, with_speaker=True,
                            batch_size=64) -> ReconstructionReport:
    if not groups:
        raise ValueError("no groups to evaluate")
    decoded = reconstruct(compressor, lm, tokenizer, groups, with_speaker, batch_size)
    scores = []
    for g, hyp in zip(groups, decoded):
        ref = _strip(tokenizer, reconstruction_target(tokenizer, g))
        scores.append(bleu_n(_strip(tokenizer, hyp), [ref], 1))
    acc = token_accuracy(compressor, lm, tokenizer, groups, with_speaker, batch_size)
    return ReconstructionReport(float(np.mean(scores)), acc, len(groups))


def sample_groups(corpus: list, rng: np.random.Generator, n: int, k_range=(1, 1)) -> list:
    """``n`` groups of consecutive utterances, group size uniform in ``k_range``."""
    groups = []
    for _ in range(n):
        conv = corpus[int(rng.integers(len(corpus)))]
        k = int(rng.integers(k_range[0], k_range[1] + 1))
        k = min(k, len(conv.utterances))
        start = int(rng.integers(len(conv.utterances) - k + 1))
        groups.append(list(conv.utterances[start:start + k]))
    return groups
