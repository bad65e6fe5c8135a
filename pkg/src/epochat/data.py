"""Conversation records, the synthetic emotional-dialogue corpus, JSONL I/O and splitting."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .labels import EMOTIONS, EmotionCategory
from .tokenizer import normalize


class CorpusError(ValueError):
    """Raised for malformed corpus input; never repaired silently."""


@dataclass(frozen=True)
class Utterance:
    speaker: int
    text: str
    emotion: EmotionCategory

    def __post_init__(self):
        if not normalize(self.text):
            raise CorpusError("utterance text is empty after normalization")
        object.__setattr__(self, "emotion", EmotionCategory.parse(self.emotion))


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple
    split: str = ""

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))
        if len(self.utterances) < 2:
            raise CorpusError(f"conversation {self.id!r} has fewer than 2 utterances")

    def __len__(self):
        return len(self.utterances)

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "utterances": [
                {"speaker": u.speaker, "text": u.text, "emotion": u.emotion.value} for u in self.utterances
            ],
        }
        if self.split:
            out["split"] = self.split
        return out


# -- synthetic corpus ---------------------------------------------------------------

LEXICON = {
    EmotionCategory.ANGRY: {
        "open": ["ugh", "seriously", "argh", "enough", "honestly"],
        "adj": ["furious", "outrageous", "infuriating", "unacceptable", "maddening", "insulting", "unfair"],
        "feel": ["hate", "resent", "despise"],
    },
    EmotionCategory.DISGUST: {
        "open": ["ew", "yuck", "gross", "eww", "blech"],
        "adj": ["disgusting", "revolting", "nasty", "filthy", "vile", "repulsive", "rotten"],
        "feel": ["loathe", "detest", "abhor"],
    },
    EmotionCategory.FEARFUL: {
        "open": ["oh no", "yikes", "help", "uh oh", "careful"],
        "adj": ["scary", "terrifying", "frightening", "creepy", "dangerous", "alarming", "nervous"],
        "feel": ["dread", "fear", "panic about"],
    },
    EmotionCategory.HAPPY: {
        "open": ["yay", "great", "awesome", "hooray", "nice"],
        "adj": ["wonderful", "lovely", "delightful", "fantastic", "cheerful", "brilliant", "joyful"],
        "feel": ["love", "adore", "enjoy"],
    },
    EmotionCategory.NEUTRAL: {
        "open": ["ok", "well", "alright", "sure", "right"],
        "adj": ["fine", "normal", "typical", "standard", "ordinary", "regular", "usual"],
        "feel": ["noticed", "checked", "considered"],
    },
    EmotionCategory.SAD: {
        "open": ["sigh", "alas", "oh well", "sadly", "unfortunately"],
        "adj": ["heartbreaking", "gloomy", "miserable", "lonely", "tragic", "depressing", "sorrowful"],
        "feel": ["miss", "regret", "mourn"],
    },
    EmotionCategory.SURPRISE: {
        "open": ["wow", "whoa", "what", "no way", "gosh"],
        "adj": ["unexpected", "astonishing", "shocking", "amazing", "startling", "incredible", "sudden"],
        "feel": ["can't believe", "never expected", "just discovered"],
    },
}

# words shared inside a valence group, so related emotions sit closer together
VALENCE = {
    "pos": ["good", "fun", "bright", "sweet"],
    "neg": ["bad", "awful", "terrible", "rough"],
}
VALENCE_OF = {
    EmotionCategory.HAPPY: "pos", EmotionCategory.SURPRISE: "pos",
    EmotionCategory.ANGRY: "neg", EmotionCategory.DISGUST: "neg",
    EmotionCategory.FEARFUL: "neg", EmotionCategory.SAD: "neg",
}

EMOTIONAL_TEMPLATES = [
    "O , the N was so A .",
    "O ! E brought the N and it felt A .",
    "i F the N , it is A .",
    "E said the N looks A , O .",
    "O . the N near E seems A to me .",
    "you know , the N is A and the M too .",
    "what about E ? the N there is A .",
    "O , i F how the N turned out .",
]
RECALL_TEMPLATES = [
    "remember R ? the N there was A .",
    "O , R still has that A N .",
    "like R said , the N is A .",
]
GENERIC_TEMPLATES = [
    "tell me more about the N .",
    "i see , what about E ?",
    "hmm , so the N then ?",
]

_CONSONANTS = list("bdfgklmnprstvz")
_VOWELS = list("aeiou")


def template_words() -> set:
    words = set()
    for tpl in EMOTIONAL_TEMPLATES + RECALL_TEMPLATES + GENERIC_TEMPLATES:
        words.update(w for w in normalize(tpl) if w not in {"o", "n", "m", "a", "e", "r", "f"})
    for lex in LEXICON.values():
        for group in lex.values():
            for phrase in group:
                words.update(normalize(phrase))
    for group in VALENCE.values():
        words.update(group)
    return words


@dataclass
class CorpusConfig:
    n_conversations: int = 2000
    turns_range: tuple = (4, 24)
    vocab_seed: int = 0
    seed: int = 0
    n_topics: int = 20
    nouns_per_topic: int = 75
    entities_per_topic: int = 5
    self_transition: float = 0.5
    recall_prob: float = 0.35
    generic_prob: float = 0.06
    valence_mix: float = 0.25

    def to_dict(self) -> dict:
        d = asdict(self)
        d["turns_range"] = list(self.turns_range)
        return d


@dataclass
class SyntheticWorld:
    """The seeded vocabulary and emotion dynamics shared by every conversation."""

    topics: list
    nouns: list = field(default_factory=list)
    entities: list = field(default_factory=list)
    emotion_prefs: np.ndarray = None

    @classmethod
    def build(cls, config: CorpusConfig) -> "SyntheticWorld":
        rng = np.random.default_rng(config.vocab_seed)
        reserved = template_words()
        n_words = config.n_topics * (1 + config.nouns_per_topic + config.entities_per_topic)
        pool, seen = [], set()
        while len(pool) < n_words:
            n_syl = rng.integers(2, 4)
            w = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(n_syl))
            if rng.random() < 0.3:
                w += rng.choice(_CONSONANTS)
            if w in seen or w in reserved:
                continue
            seen.add(w)
            pool.append(w)
        it = iter(pool)
        topics = [next(it) for _ in range(config.n_topics)]
        nouns = [[next(it) for _ in range(config.nouns_per_topic)] for _ in topics]
        entities = [[next(it) for _ in range(config.entities_per_topic)] for _ in topics]
        prefs = rng.dirichlet(np.full(len(EMOTIONS), 2.0), size=config.n_topics)
        return cls(topics, nouns, entities, prefs)


def _render_utterance(rng, world, config, topic, emotion, introduced, turn):
    """Fill one template; returns the text and the entities it mentions."""
    lex = LEXICON[emotion]
    old = [e for e, t0 in introduced.items() if turn - t0 >= 3]
    roll = rng.random()
    if roll < config.generic_prob:
        tpl = GENERIC_TEMPLATES[rng.integers(len(GENERIC_TEMPLATES))]
    elif old and roll < config.generic_prob + config.recall_prob:
        tpl = RECALL_TEMPLATES[rng.integers(len(RECALL_TEMPLATES))]
    else:
        tpl = EMOTIONAL_TEMPLATES[rng.integers(len(EMOTIONAL_TEMPLATES))]

    nouns = world.nouns[topic]
    ents = world.entities[topic]
    fresh = [e for e in ents if e not in introduced]

    def adjective():
        val = VALENCE_OF.get(emotion)
        if val and rng.random() < config.valence_mix:
            return rng.choice(VALENCE[val])
        return rng.choice(lex["adj"])

    mentioned = []
    out = []
    for slot in tpl.split():
        if slot == "O":
            out.append(rng.choice(lex["open"]))
        elif slot == "A":
            out.append(adjective())
        elif slot == "F":
            out.append(rng.choice(lex["feel"]))
        elif slot in ("N", "M"):
            out.append(rng.choice(nouns))
        elif slot == "E":
            pool = fresh if fresh and rng.random() < 0.6 else ents
            ent = str(rng.choice(pool))
            mentioned.append(ent)
            out.append(ent)
        elif slot == "R":
            ent = str(rng.choice(old))
            mentioned.append(ent)
            out.append(ent)
        else:
            out.append(slot)
    return " ".join(out), mentioned


def generate_synthetic_corpus(config: CorpusConfig | None = None) -> list:
    """Templated dialogues whose wording is decided by (topic, emotion).

    Deterministic in ``config`` (including ``config.seed``).
    """
    config = config or CorpusConfig()
    lo, hi = config.turns_range
    if not (2 <= lo <= hi <= 40):
        raise ValueError(f"turns_range must lie within [2, 40], got {config.turns_range}")
    if config.n_conversations < 0:
        raise ValueError("n_conversations must be non-negative")
    world = SyntheticWorld.build(config)
    rng = np.random.default_rng(config.seed)
    corpus = []
    for c in range(config.n_conversations):
        topic = int(rng.integers(config.n_topics))
        n_turns = int(rng.integers(lo, hi + 1))
        prefs = world.emotion_prefs[topic]
        emotion = EMOTIONS[rng.choice(len(EMOTIONS), p=prefs)]
        introduced = {}
        utts = []
        for t in range(n_turns):
            if t > 0 and rng.random() >= config.self_transition:
                emotion = EMOTIONS[rng.choice(len(EMOTIONS), p=prefs)]
            text, mentioned = _render_utterance(rng, world, config, topic, emotion, introduced, t)
            for ent in mentioned:
                introduced.setdefault(ent, t)
            utts.append(Utterance(t % 2, text, emotion))
        corpus.append(Conversation(f"syn-{config.seed}-{c:05d}", utts))
    return corpus


def history_reference_rate(corpus: list, entities, min_gap: int = 3) -> float:
    """Fraction of responses (utterances after the first) that name an entity whose
    first mention in the conversation is at least ``min_gap`` turns earlier."""
    entities = set(entities)
    hits = total = 0
    for conv in corpus:
        first_seen = {}
        for t, utt in enumerate(conv.utterances):
            words = [w for w in normalize(utt.text) if w in entities]
            if t > 0:
                total += 1
                if any(w in first_seen and t - first_seen[w] >= min_gap for w in words):
                    hits += 1
            for w in words:
                first_seen.setdefault(w, t)
    return hits / total if total else 0.0


# -- JSONL ingestion ----------------------------------------------------------------

def save_corpus(corpus: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in corpus:
            fh.write(json.dumps(conv.to_json(), ensure_ascii=False, sort_keys=True) + "\n")


def load_corpus(path) -> list:
    """Read a JSONL corpus: one {id, utterances: [{speaker, text, emotion}]} per line."""
    if not os.path.exists(path):
        raise CorpusError(f"{path}: no such file")
    corpus, ids = [], set()
    bad_emotions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj or not isinstance(obj.get("utterances"), list):
                raise CorpusError(f"{path}:{lineno}: expected an object with 'id' and 'utterances'")
            utts = []
            for u in obj["utterances"]:
                if not isinstance(u, dict) or not {"speaker", "text", "emotion"} <= set(u):
                    raise CorpusError(f"{path}:{lineno}: utterance needs speaker, text and emotion")
                try:
                    emotion = EmotionCategory.parse(u["emotion"])
                except ValueError:
                    bad_emotions.append((lineno, u["emotion"]))
                    continue
                if not isinstance(u["speaker"], int) or isinstance(u["speaker"], bool):
                    raise CorpusError(f"{path}:{lineno}: speaker must be an integer")
                try:
                    utts.append(Utterance(u["speaker"], str(u["text"]), emotion))
                except CorpusError as exc:
                    raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if bad_emotions and bad_emotions[-1][0] == lineno:
                continue
            cid = str(obj["id"])
            if cid in ids:
                raise CorpusError(f"{path}:{lineno}: duplicate conversation id {cid!r}")
            ids.add(cid)
            try:
                corpus.append(Conversation(cid, utts, str(obj.get("split", ""))))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    if bad_emotions:
        detail = ", ".join(f"line {n} ({e!r})" for n, e in bad_emotions)
        raise CorpusError(f"{path}: unknown emotion labels at {detail}")
    return corpus


def split_corpus(corpus: list, train_fraction: float = 0.9, seed: int = 0):
    """Shuffle whole conversations and cut them into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(corpus) < 2:
        raise ValueError("need at least 2 conversations to split")
    order = np.random.default_rng(seed).permutation(len(corpus))
    n_train = min(max(int(round(train_fraction * len(corpus))), 1), len(corpus) - 1)
    train = [replace(corpus[i], split="train") for i in sorted(order[:n_train])]
    test = [replace(corpus[i], split="test") for i in sorted(order[n_train:])]
    return train, test


def corpus_stats(corpus: list) -> dict:
    lengths = [len(c) for c in corpus]
    counts = {e.value: 0 for e in EMOTIONS}
    n_tokens = 0
    for conv in corpus:
        for u in conv.utterances:
            counts[u.emotion.value] += 1
            n_tokens += len(normalize(u.text))
    n_utts = sum(lengths)
    return {
        "conversations": len(corpus),
        "utterances": n_utts,
        "mean_turns": float(np.mean(lengths)) if lengths else 0.0,
        "mean_utterance_tokens": n_tokens / n_utts if n_utts else 0.0,
        "emotion_counts": counts,
    }
