"""Emotion embedder: a bag-of-embeddings encoder trained as a 7-way classifier.

The 64-d activation feeding the classification head, L2-normalized, is the
emotion embedding.  Cosine similarity between embeddings drives both the emotion
score metric and counter-emotional candidate selection.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .labels import EMOTIONS, EmotionCategory
from .tensor import Adam, Linear, Module, Parameter, Tensor, cross_entropy, embedding, matmul, no_grad, tanh


@dataclass
class EmbedderConfig:
    vocab_size: int
    d_embed: int = 64
    d_emo: int = 64
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


class EmotionEmbedder(Module):
    def __init__(self, config: EmbedderConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.word_embed = Parameter(rng.normal(0.0, 0.1, size=(config.vocab_size, config.d_embed)))
        self.fc1 = Linear(config.d_embed, config.d_emo, rng)
        self.fc2 = Linear(config.d_emo, config.d_emo, rng)
        self.head = Linear(config.d_emo, len(EMOTIONS), rng)

    def features(self, sentences: list) -> Tensor:
        """Pre-head features [B, d_emo] for a list of token-id lists."""
        for i, s in enumerate(sentences):
            if len(s) == 0:
                raise ValueError(f"sentence {i} is empty")
        flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in sentences])
        pool = np.zeros((len(sentences), len(flat)), dtype=self.word_embed.dtype)
        start = 0
        for b, s in enumerate(sentences):
            pool[b, start:start + len(s)] = 1.0 / len(s)
            start += len(s)
        pooled = matmul(Tensor(pool), embedding(self.word_embed, flat))
        return tanh(self.fc2(tanh(self.fc1(pooled))))

    def logits(self, sentences: list) -> Tensor:
        return self.head(self.features(sentences))

    def embed_batch(self, sentences: list) -> np.ndarray:
        """Unit-norm emotion embeddings [B, d_emo] (float64)."""
        with no_grad():
            f = self.features(sentences).data.astype(np.float64)
        norms = np.linalg.norm(f, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero feature vector; cannot normalize")
        return f / norms

    def embed(self, sentence) -> np.ndarray:
        return self.embed_batch([sentence])[0]

    def predict(self, sentences: list) -> np.ndarray:
        with no_grad():
            return self.logits(sentences).data.argmax(axis=-1)


def cosine_sim(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"cosine_sim: dimension mismatch {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine_sim: zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def emotion_score(embedder: EmotionEmbedder, generated, reference) -> float:
    """Cosine similarity of the emotion embeddings of two token sequences."""
    e = embedder.embed_batch([generated, reference])
    return cosine_sim(e[0], e[1])


@dataclass
class EmbedderReport:
    train_accuracy: float
    val_accuracy: float
    losses: list


def _check_coverage(labels: np.ndarray, min_per_class: int):
    counts = np.bincount(labels, minlength=len(EMOTIONS))
    short = [EMOTIONS[i].value for i, c in enumerate(counts) if c < min_per_class]
    if short:
        raise ValueError(f"too few examples (< {min_per_class}) for: {', '.join(short)}")


def accuracy(model: EmotionEmbedder, sentences: list, labels, batch_size: int = 512) -> float:
    labels = np.asarray(labels)
    hits = 0
    for s in range(0, len(sentences), batch_size):
        hits += int((model.predict(sentences[s:s + batch_size]) == labels[s:s + batch_size]).sum())
    return hits / len(sentences)


def train_classifier(sentences: list, labels, config: EmbedderConfig, val=None, steps: int = 1500,
                     batch_size: int = 128, lr: float = 3e-3, min_per_class: int = 50,
                     permute_labels: bool = False, log=None) -> tuple:
    """Fit the embedder with cross-entropy on (token ids, emotion) pairs.

    ``labels`` may be EmotionCategory values or indices.  ``val`` is an optional
    (sentences, labels) pair.  ``permute_labels`` shuffles the labels first, the
    null control that should bring accuracy down to chance.
    Returns (model, EmbedderReport).
    """
    y = np.asarray([EmotionCategory.parse(l).index if not isinstance(l, (int, np.integer)) else int(l)
                    for l in labels], dtype=np.int64)
    if len(sentences) != len(y):
        raise ValueError("sentences and labels differ in length")
    _check_coverage(y, min_per_class)
    rng = np.random.default_rng(config.seed)
    if permute_labels:
        y = rng.permutation(y)
    model = EmotionEmbedder(config)
    opt = Adam(model, lr=lr)
    losses = []
    for step in range(steps):
        idx = rng.integers(0, len(sentences), size=batch_size)
        loss = cross_entropy(model.logits([sentences[i] for i in idx]), y[idx])
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if log is not None:
            log(step, loss.item())
    train_acc = accuracy(model, sentences, y)
    val_acc = float("nan")
    if val is not None:
        vs, vl = val
        val_acc = accuracy(model, vs, [EmotionCategory.parse(l).index if not isinstance(l, (int, np.integer))
                                       else int(l) for l in vl])
    return model, EmbedderReport(train_acc, val_acc, losses)


def separability(model: EmotionEmbedder, sentences: list, labels) -> tuple:
    """(mean same-emotion cosine, mean cross-emotion cosine) over all distinct pairs."""
    e = model.embed_batch(sentences)
    y = np.asarray([EmotionCategory.parse(l).index for l in labels])
    sim = e @ e.T
    same = y[:, None] == y[None, :]
    off = ~np.eye(len(y), dtype=bool)
    return float(sim[same & off].mean()), float(sim[~same].mean())
