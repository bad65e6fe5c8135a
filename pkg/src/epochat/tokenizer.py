"""Word-level tokenizer over a closed vocabulary plus reserved markers."""

from __future__ import annotations

import re
from typing import Iterable

from .labels import BOS, EOR, MEM, PAD, RESERVED, SEP, SPEAKERS, UNK, EmotionCategory

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


def normalize(text: str) -> list[str]:
    """Lowercase and split into words, with punctuation as separate tokens.

    Angle brackets are emitted as standalone punctuation, so raw text can never
    spell a reserved marker such as ``<mem>``.
    """
    return _TOKEN_RE.findall(text.lower())


class Tokenizer:
    def __init__(self, words: Iterable[str]):
        words = [w for w in words if w not in RESERVED]
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        self.itos = list(RESERVED) + words
        self.stoi = {w: i for i, w in enumerate(self.itos)}
        self.pad_id = self.stoi[PAD]
        self.bos_id = self.stoi[BOS]
        self.eor_id = self.stoi[EOR]
        self.mem_id = self.stoi[MEM]
        self.unk_id = self.stoi[UNK]
        self.sep_id = self.stoi[SEP]

    @classmethod
    def build(cls, texts: Iterable[str], extra_words: Iterable[str] = ()) -> "Tokenizer":
        vocab = set(extra_words)
        for text in texts:
            vocab.update(normalize(text))
        return cls(sorted(vocab))

    def __len__(self):
        return len(self.itos)

    @property
    def vocab_size(self) -> int:
        return len(self.itos)

    def encode(self, text: str) -> list[int]:
        return [self.stoi.get(w, self.unk_id) for w in normalize(text)]

    def encode_words(self, words: Iterable[str]) -> list[int]:
        return [self.stoi.get(w, self.unk_id) for w in words]

    def decode(self, ids: Iterable[int], skip_reserved: bool = True) -> str:
        out = []
        for i in ids:
            w = self.itos[int(i)]
            if skip_reserved and w in RESERVED:
                continue
            out.append(w)
        return " ".join(out)

    def emotion_id(self, emotion) -> int:
        return self.stoi[EmotionCategory.parse(emotion).token]

    def speaker_id(self, speaker: int) -> int:
        return self.stoi[SPEAKERS[int(speaker) % len(SPEAKERS)]]

    def is_reserved(self, token_id: int) -> bool:
        return int(token_id) < len(RESERVED)

    def to_config(self) -> dict:
        return {"words": self.itos[len(RESERVED):]}

    @classmethod
    def from_config(cls, config: dict) -> "Tokenizer":
        return cls(config["words"])
