"""Dialogue evaluation reports and the prompt-compression benchmark."""

from __future__ import annotations

import csv
import hashlib
import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dialogue import MemoryCache, TurnRef, dialogue_prompt, sample_turns
from .emotion import emotion_score
from .lm import DecodeConfig, MixedInput, collate, generate_batch
from .metrics import dist_n, semantic_score
from .tensor import no_grad


def lm_token_encoder(lm):
    """Token ids -> final-layer LM hidden states [len, d] (float64)."""

    def encode(ids):
        with no_grad():
            batch = collate([MixedInput([("tokens", [int(t) for t in ids])])], lm.config.pad_id)
            return lm.hidden(batch).data[0].astype(np.float64)

    return encode


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@dataclass
class EvalReport:
    rows: list                       # one dict per sample
    digest: str = ""
    means: dict = field(default_factory=dict)
    # unique / total unigrams over all generations together; per-sample dist_1
    # of a short reply is close to 1 and says little about repetition across replies
    pooled_dist_1: float | None = None

    METRICS = ("semantic_score", "emotion_score", "dist_1")

    def __post_init__(self):
        if not self.means:
            self.means = {m: (float(np.mean([r[m] for r in self.rows])) if self.rows else float("nan"))
                          for m in self.METRICS}

    @property
    def n(self) -> int:
        return len(self.rows)

    def write_csv(self, path) -> None:
        cols = ["conv_id", "turn"] + list(self.METRICS) + ["generated"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r["conv_id"], r["turn"]] + [repr(r[m]) for m in self.METRICS] + [r["generated"]])
            w.writerow(["mean", ""] + [repr(self.means[m]) for m in self.METRICS] + [""])

    def summary(self) -> str:
        lines = [f"samples         {self.n}", f"config digest   {self.digest}"]
        lines += [f"{m:<15} {self.means[m]:.4f}" for m in self.METRICS]
        if self.pooled_dist_1 is not None:
            lines.append(f"dist_1 (pooled) {self.pooled_dist_1:.4f}")
        return "\n".join(lines) + "\n"


def evaluate_dialogue(lm, compressor, embedder, tokenizer, corpus: list, n_samples: int = 200,
                      seed: int = 0, max_new_tokens: int = 24, batch_size: int = 32,
                      digest: str = "") -> EvalReport:
    """Greedy responses on sampled turns, scored against the ground truth.

    An empty generation scores 0 on every metric (there is nothing to match).
    """
    refs = sample_turns(corpus, n_samples, seed)
    cache = MemoryCache(compressor, tokenizer, corpus) if compressor is not None else None
    encode = lm_token_encoder(lm)
    decode = DecodeConfig("greedy", max_new_tokens=max_new_tokens)
    rows, pooled = [], []
    for s in range(0, len(refs), batch_size):
        chunk = refs[s:s + batch_size]
        prompts = [dialogue_prompt(tokenizer, corpus, r, memories=cache.memories(r.conv_index) if cache else None)
                   for r in chunk]
        outs = generate_batch(lm, prompts, decode, tokenizer.eor_id)
        for r, gen in zip(chunk, outs):
            conv = corpus[r.conv_index]
            ref = tokenizer.encode(conv.utterances[r.turn].text)
            words = [t for t in gen if not tokenizer.is_reserved(t)]
            if words:
                pooled.append(words)
                row = {"semantic_score": semantic_score(words, ref, encode),
                       "emotion_score": emotion_score(embedder, words, ref),
                       "dist_1": dist_n([words], 1)}
            else:
                row = {"semantic_score": 0.0, "emotion_score": 0.0, "dist_1": 0.0}
            row.update(conv_id=conv.id, turn=r.turn, generated=tokenizer.decode(gen))
            rows.append(row)
    return EvalReport(rows, digest, pooled_dist_1=dist_n(pooled, 1) if pooled else None)


@dataclass
class EfficiencyReport:
    n_samples: int
    mean_tokens_without: float
    mean_tokens_with: float
    mean_time_without: float
    mean_time_with: float
    mean_compressor_time: float
    token_counts_without: list = field(default_factory=list, repr=False)
    token_counts_with: list = field(default_factory=list, repr=False)

    @property
    def token_reduction(self) -> float:
        return 1.0 - self.mean_tokens_with / self.mean_tokens_without

    @property
    def time_reduction(self) -> float:
        return 1.0 - self.mean_time_with / self.mean_time_without

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(token_reduction=self.token_reduction, time_reduction=self.time_reduction)
        return d

    def summary(self) -> str:
        return (
            f"samples                  {self.n_samples}\n"
            f"prompt tokens  without   {self.mean_tokens_without:.2f}\n"
            f"prompt tokens  with      {self.mean_tokens_with:.2f} ({-100 * self.token_reduction:+.1f}%)\n"
            f"prompt time    without   {self.mean_time_without * 1e3:.2f} ms\n"
            f"prompt time    with      {self.mean_time_with * 1e3:.2f} ms ({-100 * self.time_reduction:+.1f}%)\n"
            f"compressor time (extra)  {self.mean_compressor_time * 1e3:.2f} ms per conversation\n"
        )


def long_conversations(corpus: list, min_turns: int) -> list:
    return [i for i, c in enumerate(corpus) if len(c.utterances) >= min_turns]


def _median_time(fn, reps: int) -> float:
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_compression(lm, compressor, tokenizer, corpus: list, min_turns: int = 20, n_samples: int = 30,
                      repetitions: int = 5, seed: int = 0) -> EfficiencyReport:
    """Prompt size and prompt-forward time with raw history vs one memory per utterance.

    Each sample is a conversation with at least ``min_turns`` utterances; its
    last utterance is the sentence and every earlier one is history.  Times are
    medians over ``repetitions`` runs of the LM on the prompt alone (no
    decoding).  Compressor time is measured separately and not included.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    idx = long_conversations(corpus, min_turns)
    if not idx:
        raise ValueError(f"no conversation has {min_turns} or more turns")
    rng = np.random.default_rng(seed)
    if len(idx) > n_samples:
        idx = sorted(rng.choice(idx, size=n_samples, replace=False).tolist())
    cache = MemoryCache(compressor, tokenizer, corpus)
    tok_wo, tok_w, t_wo, t_w, t_c = [], [], [], [], []
    for c in idx:
        ref = TurnRef(c, len(corpus[c].utterances))
        t_c.append(_median_time(lambda: MemoryCache(compressor, tokenizer, corpus).memories(c), 1))
        mem = cache.memories(c)
        raw = dialogue_prompt(tokenizer, corpus, ref, raw=True)
        comp = dialogue_prompt(tokenizer, corpus, ref, memories=mem)
        tok_wo.append(raw.length)
        tok_w.append(comp.length)
        t_wo.append(_median_time(lambda: lm.next_token_logits([raw]), repetitions))
        t_w.append(_median_time(lambda: lm.next_token_logits([comp]), repetitions))
    return EfficiencyReport(len(idx), float(np.mean(tok_wo)), float(np.mean(tok_w)), float(np.mean(t_wo)),
                            float(np.mean(t_w)), float(np.mean(t_c)), tok_wo, tok_w)
