"""A checkpoint holding several models plus the tokenizer they share."""

from __future__ import annotations

from dataclasses import dataclass

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .emotion import EmbedderConfig, EmotionEmbedder
from .lm import DialogueLM, LmConfig
from .ssm import Compressor, CompressorConfig
from .tokenizer import Tokenizer

PREFIXES = {"embedder": "emo/", "compressor": "compressor/", "lm": "lm/"}


@dataclass
class Bundle:
    tokenizer: Tokenizer
    embedder: EmotionEmbedder | None = None
    compressor: Compressor | None = None
    lm: DialogueLM | None = None
    stage: str = ""

    def save(self, path) -> None:
        tensors, config = {}, {"tokenizer": self.tokenizer.to_config(), "stage": self.stage}
        for key, prefix in PREFIXES.items():
            model = getattr(self, key)
            if model is not None:
                tensors.update(model.state_dict(prefix))
                config[key] = model.config.to_dict()
        save_checkpoint(path, tensors, config)

    @classmethod
    def load(cls, path, parts=("embedder", "compressor", "lm")) -> "Bundle":
        ckpt = load_checkpoint(path)
        if "tokenizer" not in ckpt.config:
            raise CheckpointError(f"{path}: checkpoint carries no tokenizer")
        out = cls(Tokenizer.from_config(ckpt.config["tokenizer"]), stage=ckpt.config.get("stage", ""))
        builders = {"embedder": (EmotionEmbedder, EmbedderConfig), "compressor": (Compressor, CompressorConfig),
                    "lm": (DialogueLM, LmConfig)}
        for key in parts:
            if key not in ckpt.config:
                continue
            model_cls, cfg_cls = builders[key]
            model = model_cls(cfg_cls(**ckpt.config[key]))
            try:
                model.load_state_dict(ckpt.tensors, PREFIXES[key])
            except (KeyError, ValueError) as exc:
                raise CheckpointError(f"{path}: {exc}") from None
            setattr(out, key, model)
        return out

    def require(self, *parts, path="checkpoint"):
        missing = [p for p in parts if getattr(self, p) is None]
        if missing:
            raise CheckpointError(f"{path} lacks: {', '.join(missing)}")
        return self
