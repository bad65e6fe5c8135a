"""Run configuration: one JSON document with a section per pipeline part.

Every field has a default.  Unknown sections or keys are errors, so a typo in a
config file fails loudly instead of being ignored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass


class ConfigError(ValueError):
    pass


@dataclass
class CorpusSection:
    path: str = ""                 # existing JSONL corpus; empty means generate
    n_conversations: int = 2000
    turns_min: int = 4
    turns_max: int = 24
    vocab_seed: int = 0
    n_topics: int = 20
    nouns_per_topic: int = 75
    entities_per_topic: int = 5
    self_transition: float = 0.5
    recall_prob: float = 0.35
    generic_prob: float = 0.06
    valence_mix: float = 0.25
    train_fraction: float = 0.9


@dataclass
class EmbedderSection:
    d_embed: int = 64
    d_emo: int = 64
    steps: int = 1500
    batch_size: int = 128
    lr: float = 3e-3


@dataclass
class CompressorSection:
    d_model: int = 128
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    n_layers: int = 4
    chunk: int = 32
    with_speaker: bool = True
    lm_warmup_steps: int = 600
    lm_warmup_lr: float = 1e-3
    lm_warmup_batch: int = 32
    lr: float = 1e-3
    pretrain_batch: int = 32
    pretrain_max_steps: int = 1500
    finetune_batch: int = 16
    finetune_max_steps: int = 1200
    k_min: int = 2
    k_max: int = 8
    eval_every: int = 100
    patience: int = 3
    eval_groups: int = 256


@dataclass
class LmSection:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 512
    steps: int = 1500
    batch_size: int = 16
    recon_batch: int = 8
    lr: float = 5e-4
    labelled_fraction: float = 0.5
    recon_weight: float = 1.0


@dataclass
class CounterSection:
    threshold: float = 0.1
    top_k: int = 20
    temperature: float = 0.9
    max_new_tokens: int = 24
    max_turns: int = 1500
    use_history: bool = True
    batch_turns: int = 16


@dataclass
class EpoSection:
    beta: float = 2.0
    gamma: float = 0.5
    lambda_ar: float = 1.0
    lr: float = 1e-5
    steps: int = 200
    batch_size: int = 16
    divergence_factor: float = 1.5
    eval_every: int = 25
    probe_pairs: int = 256


@dataclass
class EvalSection:
    n_samples: int = 200
    max_new_tokens: int = 24


@dataclass
class BenchSection:
    min_turns: int = 20
    n_samples: int = 30
    repetitions: int = 5


@dataclass
class RunConfig:
    seed: int | None = None
    corpus: CorpusSection = field(default_factory=CorpusSection)
    embedder: EmbedderSection = field(default_factory=EmbedderSection)
    compressor: CompressorSection = field(default_factory=CompressorSection)
    lm: LmSection = field(default_factory=LmSection)
    counter: CounterSection = field(default_factory=CounterSection)
    epo: EpoSection = field(default_factory=EpoSection)
    eval: EvalSection = field(default_factory=EvalSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls()
        for key, value in data.items():
            if key == "seed":
                if value is not None and not isinstance(value, int):
                    raise ConfigError("seed must be an integer or null")
                cfg.seed = value
                continue
            section = getattr(cfg, key, None)
            if not is_dataclass(section):
                raise ConfigError(f"unknown config section {key!r}")
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object")
            _apply(section, value, key)
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(data)

    def override(self, dotted: str, raw: str) -> None:
        """Apply ``section.key=value`` from the command line; the value is parsed as JSON when possible."""
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        sec, key = dotted.split(".", 1)
        section = getattr(self, sec, None)
        if not is_dataclass(section):
            raise ConfigError(f"unknown config section {sec!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _apply(section, {key: value}, sec)


def _apply(section, values: dict, name: str) -> None:
    known = {f.name: f for f in fields(section)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        current = getattr(section, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be true or false")
        elif isinstance(current, int) and not isinstance(current, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be an integer")
        elif isinstance(current, float):
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be a number")
            value = float(value)
        elif isinstance(current, str) and not isinstance(value, str):
            raise ConfigError(f"{name}.{key} must be a string")
        setattr(section, key, value)
