"""Emotion categories and reserved vocabulary entries."""

from enum import Enum


class EmotionCategory(str, Enum):
    # declaration order doubles as the tie-break order in counter selection
    ANGRY = "angry"
    DISGUST = "disgust"
    FEARFUL = "fearful"
    HAPPY = "happy"
    NEUTRAL = "neutral"
    SAD = "sad"
    SURPRISE = "surprise"

    @property
    def index(self) -> int:
        return _ORDER[self]

    @property
    def token(self) -> str:
        return f"<{self.value}>"

    @classmethod
    def parse(cls, value) -> "EmotionCategory":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown emotion {value!r}; expected one of {[e.value for e in cls]}") from None


EMOTIONS = list(EmotionCategory)
_ORDER = {e: i for i, e in enumerate(EMOTIONS)}

PAD, BOS, EOR, MEM, UNK, SEP = "<pad>", "<bos>", "<eor>", "<mem>", "<unk>", "<sep>"
N_SPEAKER_TOKENS = 4
SPEAKERS = [f"<spk{i}>" for i in range(N_SPEAKER_TOKENS)]
RESERVED = [PAD, BOS, EOR, MEM, UNK, SEP] + [e.token for e in EMOTIONS] + SPEAKERS
