"""Small causal transformer that reads instruction tokens, memory vectors and a sentence.

Inputs are *mixed*: a prompt is a list of segments, each either token ids (looked
up in the embedding table) or raw d_model vectors (memory or emotion embeddings)
placed straight into the input sequence.  Vector segments may also be given as a
bare count, meaning "take the next rows from an external vector table" -- the
training loops use this to keep compressor outputs on the tape without slicing
them per example.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import (
    Linear,
    Module,
    Parameter,
    Tensor,
    concat,
    embedding,
    gather_rows,
    log_softmax,
    mask_fill,
    matmul,
    no_grad,
    pick,
    rms_norm,
    scatter_rows,
    silu,
    softmax,
)

PLACEHOLDERS = ("{memory}", "{emotion}", "{sentence}")


@dataclass
class LmConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 512
    dropout: float = 0.0
    pad_id: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class InstructionTemplate:
    """Instruction words with placeholder slots, e.g. ``"history : {memory} sentence : {sentence}"``."""

    name: str
    text: str

    def __post_init__(self):
        parts = self.text.split()
        for ph in PLACEHOLDERS:
            if parts.count(ph) > 1:
                raise ValueError(f"template {self.name!r}: placeholder {ph} appears more than once")
        for p in parts:
            if p.startswith("{") and p not in PLACEHOLDERS:
                raise ValueError(f"template {self.name!r}: unknown placeholder {p}")

    @property
    def parts(self) -> list:
        return self.text.split()

    def words(self) -> list:
        return [p for p in self.parts if p not in PLACEHOLDERS]

    def has(self, placeholder: str) -> bool:
        return placeholder in self.parts


TEMPLATES = {
    "recon_single": InstructionTemplate("recon_single", "rebuild the sentence from memory : {memory}"),
    "recon_multi": InstructionTemplate(
        "recon_multi", "rebuild every utterance from memory , one memory per utterance : {memory}"),
    "dialogue": InstructionTemplate(
        "dialogue", "answer the sentence using the history . history : {memory} cues : {emotion} sentence : {sentence}"),
    "counter": InstructionTemplate(
        "counter", "answer in the tone marked on the sentence . history : {memory} sentence : {sentence}"),
}


def template_vocabulary() -> set:
    words = set()
    for tpl in TEMPLATES.values():
        words.update(tpl.words())
    return words


@dataclass
class MixedInput:
    """Ordered prompt segments plus a per-position loss mask.

    Each segment is ``("tokens", [ids])`` or ``("vectors", array [n, d] | int n)``.
    """

    segments: list
    loss_mask: np.ndarray = None

    def __post_init__(self):
        if self.loss_mask is None:
            self.loss_mask = np.zeros(self.length, dtype=bool)
        self.loss_mask = np.asarray(self.loss_mask, dtype=bool)
        if len(self.loss_mask) != self.length:
            raise ValueError(f"loss_mask has {len(self.loss_mask)} entries for length {self.length}")
        kinds = self.position_kinds()
        if np.any(self.loss_mask & (kinds != 0)):
            raise ValueError("loss_mask may only mark token positions")

    @staticmethod
    def _seg_len(seg) -> int:
        kind, value = seg
        if kind == "tokens":
            return len(value)
        if isinstance(value, (int, np.integer)):
            return int(value)
        return int(np.shape(value.data if isinstance(value, Tensor) else value)[0])

    @property
    def length(self) -> int:
        return sum(self._seg_len(s) for s in self.segments)

    def position_kinds(self) -> np.ndarray:
        """0 for token positions, 1 for vector positions."""
        out = []
        for seg in self.segments:
            out.extend([0 if seg[0] == "tokens" else 1] * self._seg_len(seg))
        return np.asarray(out, dtype=np.int8)

    def token_ids(self, pad_id: int = 0) -> np.ndarray:
        out = []
        for seg in self.segments:
            if seg[0] == "tokens":
                out.extend(int(t) for t in seg[1])
            else:
                out.extend([pad_id] * self._seg_len(seg))
        return np.asarray(out, dtype=np.int64)

    def vector_count(self) -> int:
        return sum(self._seg_len(s) for s in self.segments if s[0] == "vectors")

    def with_response(self, tokens) -> "MixedInput":
        """Append response tokens; the loss mask covers exactly those positions."""
        tokens = [int(t) for t in tokens]
        mask = np.concatenate([np.zeros(self.length, dtype=bool), np.ones(len(tokens), dtype=bool)])
        return MixedInput(self.segments + [("tokens", tokens)], mask)

    def same_as(self, other: "MixedInput") -> bool:
        if len(self.segments) != len(other.segments) or not np.array_equal(self.loss_mask, other.loss_mask):
            return False
        for (ka, va), (kb, vb) in zip(self.segments, other.segments):
            if ka != kb:
                return False
            va = va.data if isinstance(va, Tensor) else va
            vb = vb.data if isinstance(vb, Tensor) else vb
            if not np.array_equal(np.asarray(va), np.asarray(vb)):
                return False
        return True


def build_input(template: InstructionTemplate, tokenizer, history=(), emotion=None, sentence=(),
                raw_history=None, max_seq_len: int | None = None) -> MixedInput:
    """Lay out a prompt: instruction words with the placeholders filled, then the
    response-start marker.

    ``history`` is a sequence of memory vectors (MemoryEmbedding, arrays) or an int
    count of externally supplied rows; ``raw_history`` instead fills the memory
    slot with the uncompressed utterance tokens.  ``emotion`` is an optional
    [n, d] array of auxiliary vectors.
    """
    if raw_history is not None and (not isinstance(history, int) and len(history) > 0):
        raise ValueError("pass either history vectors or raw_history, not both")
    n_hist = history if isinstance(history, int) else len(history)
    if (n_hist or raw_history) and not template.has("{memory}"):
        raise ValueError(f"template {template.name!r} has no {{memory}} slot")
    if len(sentence) and not template.has("{sentence}"):
        raise ValueError(f"template {template.name!r} has no {{sentence}} slot")
    if emotion is not None and len(emotion) and not template.has("{emotion}"):
        raise ValueError(f"template {template.name!r} has no {{emotion}} slot")

    segments, words = [], []

    def flush():
        if words:
            segments.append(("tokens", tokenizer.encode_words(words)))
            words.clear()

    for part in template.parts:
        if part == "{memory}":
            flush()
            if raw_history is not None:
                flat = [int(t) for utt in raw_history for t in utt]
                if flat:
                    segments.append(("tokens", flat))
            elif isinstance(history, int):
                if history:
                    segments.append(("vectors", history))
            elif len(history):
                vecs = np.stack([np.asarray(getattr(h, "vector", h)) for h in history])
                segments.append(("vectors", vecs))
        elif part == "{emotion}":
            flush()
            if emotion is not None and len(emotion):
                segments.append(("vectors", np.asarray(emotion)))
        elif part == "{sentence}":
            flush()
            if len(sentence):
                segments.append(("tokens", [int(t) for t in sentence]))
        else:
            words.append(part)
    flush()
    segments.append(("tokens", [tokenizer.bos_id]))
    merged = []
    for seg in segments:
        if merged and seg[0] == "tokens" and merged[-1][0] == "tokens":
            merged[-1] = ("tokens", merged[-1][1] + list(seg[1]))
        else:
            merged.append(seg)
    inp = MixedInput(merged)
    if max_seq_len is not None and inp.length > max_seq_len:
        raise ValueError(f"prompt needs {inp.length} positions but max_seq_len is {max_seq_len}")
    return inp


@dataclass
class Collated:
    ids: np.ndarray            # [B, T] token ids, PAD at vector positions and padding
    vec_b: np.ndarray          # batch index of each vector row
    vec_t: np.ndarray          # position of each vector row
    vectors: Tensor | None     # [M, d]
    lengths: np.ndarray        # real length per example
    tgt_b: np.ndarray          # loss positions: predicting ids[b, t] from position t - 1
    tgt_t: np.ndarray
    tgt_ids: np.ndarray


def collate(inputs: list, pad_id: int, vectors: Tensor | None = None) -> Collated:
    lengths = np.array([inp.length for inp in inputs], dtype=np.int64)
    T = int(lengths.max())
    ids = np.full((len(inputs), T), pad_id, dtype=np.int64)
    vb, vt, vec_parts = [], [], []
    tb, tt = [], []
    for b, inp in enumerate(inputs):
        ids[b, :inp.length] = inp.token_ids(pad_id)
        pos = 0
        for seg in inp.segments:
            n = MixedInput._seg_len(seg)
            if seg[0] == "vectors":
                vb.extend([b] * n)
                vt.extend(range(pos, pos + n))
                if not isinstance(seg[1], (int, np.integer)):
                    vec_parts.append(seg[1] if isinstance(seg[1], Tensor) else Tensor(np.asarray(seg[1])))
            pos += n
        where = np.nonzero(inp.loss_mask)[0]
        if len(where) and where[0] == 0:
            raise ValueError("the first position cannot carry a loss target")
        tb.extend([b] * len(where))
        tt.extend(where.tolist())
    if vec_parts and vectors is not None:
        raise ValueError("inputs hold explicit vectors and an external vector table was also given")
    if vec_parts:
        vectors = vec_parts[0] if len(vec_parts) == 1 else concat(vec_parts, axis=0)
    if len(vb) and (vectors is None or vectors.shape[0] != len(vb)):
        have = 0 if vectors is None else vectors.shape[0]
        raise ValueError(f"inputs reference {len(vb)} vector rows but {have} were supplied")
    tb, tt = np.asarray(tb, dtype=np.int64), np.asarray(tt, dtype=np.int64)
    return Collated(ids, np.asarray(vb, dtype=np.int64), np.asarray(vt, dtype=np.int64),
                    vectors if len(vb) else None, lengths, tb, tt, ids[tb, tt] if len(tb) else tb)


class Block(Module):
    def __init__(self, c: LmConfig, rng: np.random.Generator):
        d = c.d_model
        resid = 1.0 / math.sqrt(d) / math.sqrt(2 * c.n_layers)
        self.n_heads = c.n_heads
        self.norm1 = Parameter(np.ones(d))
        self.qkv = Linear(d, 3 * d, rng, bias=False)
        self.proj = Linear(d, d, rng, bias=False, scale=resid)
        self.norm2 = Parameter(np.ones(d))
        self.fc1 = Linear(d, c.d_ff, rng)
        self.fc2 = Linear(c.d_ff, d, rng, scale=1.0 / math.sqrt(c.d_ff) / math.sqrt(2 * c.n_layers))

    def __call__(self, x: Tensor, causal: np.ndarray) -> Tensor:
        B, T, d = x.shape
        H = self.n_heads
        dh = d // H
        qkv = self.qkv(rms_norm(x, self.norm1)).reshape(B, T, 3, H, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        att = softmax(mask_fill(scores, causal, -1e9))
        y = matmul(att, v).transpose(0, 2, 1, 3).reshape(B, T, d)
        x = x + self.proj(y)
        return x + self.fc2(silu(self.fc1(rms_norm(x, self.norm2))))


class DialogueLM(Module):
    def __init__(self, config: LmConfig):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        self.tok_embed = Parameter(rng.normal(0.0, 0.02, size=(c.vocab_size, c.d_model)))
        self.pos_embed = Parameter(rng.normal(0.0, 0.02, size=(c.max_seq_len, c.d_model)))
        self.blocks = [Block(c, rng) for _ in range(c.n_layers)]
        self.final_norm = Parameter(np.ones(c.d_model))
        self.head = Linear(c.d_model, c.vocab_size, rng, bias=False, scale=0.02)

    # -- core passes --------------------------------------------------------------
    def hidden(self, batch: Collated) -> Tensor:
        B, T = batch.ids.shape
        if T > self.config.max_seq_len:
            raise ValueError(f"sequence length {T} exceeds max_seq_len {self.config.max_seq_len}")
        x = embedding(self.tok_embed, batch.ids)
        if batch.vectors is not None:
            if batch.vectors.shape[-1] != self.config.d_model:
                raise ValueError(
                    f"vector width {batch.vectors.shape[-1]} does not match d_model {self.config.d_model}")
            is_vec = np.zeros((B, T, self.config.d_model), dtype=bool)
            is_vec[batch.vec_b, batch.vec_t] = True
            x = mask_fill(x, is_vec, 0.0) + scatter_rows(batch.vectors, batch.vec_b, batch.vec_t, (B, T))
        x = x + self.pos_embed[:T]
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)
        for blk in self.blocks:
            x = blk(x, causal)
        return rms_norm(x, self.final_norm)

    def forward(self, inp: MixedInput) -> Tensor:
        """Logits [T, vocab] for one input."""
        h = self.hidden(collate([inp], self.config.pad_id))
        return self.head(h)[0]

    def logits_at(self, batch: Collated, b, t) -> Tensor:
        return self.head(gather_rows(self.hidden(batch), b, t))

    def target_logprobs(self, inputs: list, vectors: Tensor | None = None):
        """Teacher-forced log-probabilities of every loss-masked token.

        Returns (logp [M], example index per entry).
        """
        batch = collate(inputs, self.config.pad_id, vectors)
        if len(batch.tgt_b) == 0:
            raise ValueError("no loss-masked positions in batch")
        logits = self.logits_at(batch, batch.tgt_b, batch.tgt_t - 1)
        return pick(log_softmax(logits), batch.tgt_ids), batch.tgt_b

    # -- decoding -------------------------------------------------------------------
    def next_token_logits(self, inputs: list, vectors: Tensor | None = None) -> np.ndarray:
        with no_grad():
            batch = collate(inputs, self.config.pad_id, vectors)
            last = batch.lengths - 1
            return self.logits_at(batch, np.arange(len(inputs)), last).data


def lm_loss(model: DialogueLM, inputs, targets=None, vectors: Tensor | None = None) -> Tensor:
    """Mean cross-entropy over response positions.

    ``inputs`` is a MixedInput or a list of them; with ``targets`` given each is
    first extended by its target tokens, otherwise the inputs already carry
    their responses.
    """
    if isinstance(inputs, MixedInput):
        inputs = [inputs]
        targets = None if targets is None else [targets]
    if targets is not None:
        for tgt in targets:
            if len(tgt) == 0:
                raise ValueError("lm_loss: empty target")
        inputs = [inp.with_response(t) for inp, t in zip(inputs, targets)]
    logp, _ = model.target_logprobs(inputs, vectors)
    return -logp.mean()


def avg_logprobs(model: DialogueLM, inputs: list, ys: list, vectors: Tensor | None = None) -> Tensor:
    """Per-example mean token log-probability of ``ys[i]`` given ``inputs[i]`` -> [B]."""
    for y in ys:
        if len(y) == 0:
            raise ValueError("sequence_avg_logprob: empty target sequence")
    full = [inp.with_response(y) for inp, y in zip(inputs, ys)]
    logp, owner = model.target_logprobs(full, vectors)
    sel = np.zeros((len(ys), len(owner)), dtype=logp.dtype)
    sel[owner, np.arange(len(owner))] = 1.0
    sel /= sel.sum(axis=1, keepdims=True)
    return matmul(Tensor(sel), logp.reshape(-1, 1)).reshape(len(ys))


def sequence_avg_logprob(model: DialogueLM, inp: MixedInput, y) -> Tensor:
    """(1/|y|) * sum_i log p(y_i | x, y_<i), as a scalar tensor on the tape."""
    return avg_logprobs(model, [inp], [y])[0]


@dataclass
class DecodeConfig:
    strategy: str = "greedy"        # "greedy" or "sample"
    top_k: int = 20
    temperature: float = 0.9
    max_new_tokens: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("greedy", "sample"):
            raise ValueError(f"unknown decode strategy {self.strategy!r}")


def _choose(logits: np.ndarray, decode: DecodeConfig, rng) -> int:
    if decode.strategy == "greedy":
        return int(np.argmax(logits))
    z = logits.astype(np.float64) / max(decode.temperature, 1e-12)
    if 0 < decode.top_k < len(z):
        kth = np.partition(z, -decode.top_k)[-decode.top_k]
        z = np.where(z >= kth, z, -np.inf)
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def generate_batch(model: DialogueLM, inputs: list, decode: DecodeConfig, eor_id: int,
                   seeds=None) -> list:
    """Decode each prompt until EOR or ``max_new_tokens``; returns the new tokens (EOR excluded).

    Sampling uses one generator per prompt (``seeds[i]``, default decode.seed + i),
    so results do not depend on how prompts are batched.
    """
    if seeds is None:
        seeds = [decode.seed + i for i in range(len(inputs))]
    rngs = [np.random.default_rng(s) for s in seeds]
    outs = [[] for _ in inputs]
    live = list(range(len(inputs)))
    limit = model.config.max_seq_len
    for _ in range(decode.max_new_tokens):
        live = [i for i in live if inputs[i].length + len(outs[i]) < limit]
        if not live:
            break
        cur = [inputs[i].with_response(outs[i]) if outs[i] else inputs[i] for i in live]
        logits = model.next_token_logits(cur)
        still = []
        for row, i in zip(logits, live):
            tok = _choose(row, decode, rngs[i])
            if tok == eor_id:
                continue
            outs[i].append(tok)
            still.append(i)
        live = still
    return outs


def generate(model: DialogueLM, inp: MixedInput, decode: DecodeConfig, eor_id: int) -> list:
    return generate_batch(model, [inp], decode, eor_id, seeds=[decode.seed])[0]
