"""Counter-emotional responses and the preference pairs built from them.

For a dialogue turn the LM writes one candidate per emotion (label token in
front of the sentence).  Each candidate is compared with the ground-truth
response through the emotion embedder; the least similar one, if its similarity
falls under the threshold, becomes the rejected side of a preference pair.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .dialogue import MemoryCache, dialogue_prompt, response_tokens, sample_turns
from .emotion import EmotionEmbedder
from .labels import EMOTIONS, EmotionCategory
from .lm import DecodeConfig, generate_batch
from .reconstruction import utterance_tokens


@dataclass
class CandidateResponse:
    emotion: EmotionCategory
    tokens: list
    similarity: float = float("nan")


@dataclass
class PreferencePair:
    conv_id: str
    turn: int
    context_token_ids: list     # compressor tokens per context utterance; the last is the sentence
    y_a_token_ids: list
    y_i_token_ids: list
    y_i_emotion: str
    similarity: float
    template: str = "dialogue"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PreferencePair":
        return cls(d["conv_id"], int(d["turn"]), [list(map(int, u)) for u in d["context_token_ids"]],
                   list(map(int, d["y_a_token_ids"])), list(map(int, d["y_i_token_ids"])),
                   EmotionCategory.parse(d["y_i_emotion"]).value, float(d["similarity"]),
                   d.get("template", "dialogue"))


def select_counter(candidates: list, threshold: float = 0.1):
    """Least similar candidate if its similarity is below ``threshold``, else None.

    Ties on the minimum go to the emotion that comes first in EmotionCategory.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    best = min(candidates, key=lambda c: (c.similarity, EmotionCategory.parse(c.emotion).index))
    return best if best.similarity < threshold else None


def candidate_seed(seed: int, conv_index: int, turn: int, emotion: EmotionCategory) -> int:
    return int(np.random.SeedSequence([seed, conv_index, turn, emotion.index]).generate_state(1)[0])


@dataclass
class CounterConfig:
    threshold: float = 0.1
    top_k: int = 20
    temperature: float = 0.9
    max_new_tokens: int = 24
    max_turns: int | None = 1500
    use_history: bool = True
    batch_turns: int = 16
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def generate_candidates(lm, tokenizer, embedder: EmotionEmbedder, corpus: list, refs: list,
                        cache: MemoryCache | None, config: CounterConfig) -> list:
    """Seven scored candidates for every turn in ``refs`` (a list per turn).

    An emotion whose sample comes back empty is left out of that turn's list.
    """
    decode = DecodeConfig("sample", config.top_k, config.temperature, config.max_new_tokens, config.seed)
    prompts, seeds = [], []
    for ref in refs:
        mem = cache.memories(ref.conv_index) if (cache is not None and config.use_history) else None
        for emo in EMOTIONS:
            prompts.append(dialogue_prompt(tokenizer, corpus, ref, memories=mem, emotion=emo))
            seeds.append(candidate_seed(config.seed, ref.conv_index, ref.turn, emo))
    outs = generate_batch(lm, prompts, decode, tokenizer.eor_id, seeds=seeds)
    results = []
    for j, ref in enumerate(refs):
        gt = tokenizer.encode(corpus[ref.conv_index].utterances[ref.turn].text)
        cands = [CandidateResponse(emo, outs[j * len(EMOTIONS) + e]) for e, emo in enumerate(EMOTIONS)]
        cands = [c for c in cands if c.tokens]
        if cands:
            emb = embedder.embed_batch([gt] + [c.tokens for c in cands])
            for c, v in zip(cands, emb[1:]):
                c.similarity = float(np.clip(np.dot(emb[0], v), -1.0, 1.0))
        results.append(cands)
    return results


@dataclass
class DatasetSummary:
    turns_considered: int
    pairs: int
    skipped_threshold: int
    skipped_generation: int
    histogram_edges: list
    histogram_counts: list

    @property
    def acceptance_rate(self):
        return self.pairs / self.turns_considered if self.turns_considered else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["acceptance_rate"] = self.acceptance_rate
        return d

    def render(self) -> str:
        rate = "n/a" if self.acceptance_rate is None else f"{self.acceptance_rate:.4f}"
        lines = [
            f"turns considered   {self.turns_considered}",
            f"pairs emitted      {self.pairs}",
            f"acceptance rate    {rate}",
            f"no candidate < thr {self.skipped_threshold}",
            f"empty generations  {self.skipped_generation}",
            "minimum-similarity histogram:",
        ]
        for lo, hi, c in zip(self.histogram_edges[:-1], self.histogram_edges[1:], self.histogram_counts):
            lines.append(f"  [{lo:+.1f}, {hi:+.1f})  {c}")
        return "\n".join(lines) + "\n"


def build_preference_dataset(corpus: list, lm, tokenizer, embedder, compressor, config: CounterConfig,
                             out_dir=None, log=None) -> tuple:
    """Scan turns, emit accepted pairs; optionally write pairs.jsonl, summary.txt, stats.json.

    Returns (pairs, DatasetSummary).
    """
    refs = sample_turns(corpus, config.max_turns, config.seed)
    cache = MemoryCache(compressor, tokenizer, corpus) if compressor is not None else None
    pairs, minima = [], []
    skipped_gen = skipped_thr = 0
    for s in range(0, len(refs), config.batch_turns):
        chunk = refs[s:s + config.batch_turns]
        if cache is not None:
            cache.prefetch(r.conv_index for r in chunk)
        for ref, cands in zip(chunk, generate_candidates(lm, tokenizer, embedder, corpus, chunk, cache, config)):
            if len(cands) < len(EMOTIONS):
                skipped_gen += 1
                if log:
                    log(f"turn {corpus[ref.conv_index].id}:{ref.turn}: "
                        f"{len(EMOTIONS) - len(cands)} empty candidate(s); skipped")
                continue
            minima.append(min(c.similarity for c in cands))
            chosen = select_counter(cands, config.threshold)
            y_a = response_tokens(tokenizer, corpus[ref.conv_index].utterances[ref.turn])
            if chosen is None or chosen.tokens + [tokenizer.eor_id] == y_a:
                skipped_thr += 1
                continue
            conv = corpus[ref.conv_index]
            context = [utterance_tokens(tokenizer, u) for u in conv.utterances[:ref.turn]]
            pairs.append(PreferencePair(conv.id, ref.turn, context, y_a, chosen.tokens + [tokenizer.eor_id],
                                        chosen.emotion.value, chosen.similarity))
    edges = [round(x, 1) for x in np.linspace(-1.0, 1.0, 21)]
    counts = np.histogram(np.asarray(minima, dtype=np.float64), bins=edges)[0].tolist() if minima else [0] * 20
    summary = DatasetSummary(len(refs), len(pairs), skipped_thr, skipped_gen, edges, counts)
    if out_dir is not None:
        write_preference_dataset(out_dir, pairs, summary)
    return pairs, summary


def write_preference_dataset(out_dir, pairs: list, summary: DatasetSummary) -> None:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "pairs.jsonl")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(p.to_json() + "\n")
        with open(os.path.join(out_dir, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(summary.render())
        with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
            json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise OSError(f"{exc.filename or path}: {exc.strerror}") from None


def load_preference_pairs(path) -> list:
    pairs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    pairs.append(PreferencePair.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{n}: bad preference record ({exc})") from None
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror}") from None
    return pairs


def pair_context_matches(pair: PreferencePair, corpus_by_id: dict, tokenizer) -> bool:
    """True when the pair's context and y_a are exactly the source turn's tokens."""
    conv = corpus_by_id.get(pair.conv_id)
    if conv is None or not 1 <= pair.turn < len(conv.utterances):
        return False
    context = [utterance_tokens(tokenizer, u) for u in conv.utterances[:pair.turn]]
    return context == pair.context_token_ids and response_tokens(tokenizer, conv.utterances[pair.turn]) == pair.y_a_token_ids
