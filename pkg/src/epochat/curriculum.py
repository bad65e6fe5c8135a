"""The staged training pipeline.

Stages, in order:

1. train_embedder       emotion classifier / embedder
2. pretrain_compressor  LM warm-up, then single-utterance reconstruction (LM frozen)
3. finetune_compressor  multi-utterance reconstruction (LM frozen)
4. train_lm             dialogue responses jointly with reconstruction (compressor frozen)
5. gen_counter          counter-emotional preference pairs
6. train_epo            preference optimization plus autoregressive loss

Every stage reads its inputs from the run directory, writes a checkpoint (or a
dataset), a CSV log and ``<stage>.done.json``; with ``resume`` a stage whose
marker exists is skipped.

The LM warm-up inside stage 2 stands in for starting from a pretrained model:
the LM learns to rebuild a sentence from a crude stand-in memory (the
normalized mean of the sentence's own token embeddings), so that a frozen LM
already "reads" vectors placed in the memory slot when the compressor starts
training against it.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .bundle import Bundle
from .config import RunConfig
from .counter import CounterConfig, build_preference_dataset, load_preference_pairs
from .data import CorpusConfig, corpus_stats, generate_synthetic_corpus, load_corpus, save_corpus, split_corpus
from .dialogue import MemoryCache, all_turns, dialogue_prompt, response_tokens
from .emotion import EmbedderConfig, separability, train_classifier
from .epo import EpoConfig, epo_step, margin_stats
from .labels import EMOTIONS
from .lm import DialogueLM, LmConfig, build_input, lm_loss, template_vocabulary, TEMPLATES
from .reconstruction import (
    evaluate_reconstruction,
    reconstruction_loss,
    reconstruction_prompt,
    reconstruction_target,
    token_accuracy,
    utterance_tokens,
)
from .ssm import Compressor, CompressorConfig
from .tensor import Adam, Tensor, no_grad
from .tokenizer import Tokenizer

STAGES = ("train_embedder", "pretrain_compressor", "finetune_compressor", "train_lm", "gen_counter", "train_epo")

CORPUS_FILE = "corpus.jsonl"
TOKENIZER_FILE = "tokenizer.json"
OUTPUTS = {
    "train_embedder": "embedder.ckpt",
    "pretrain_compressor": "compressor_pretrain.ckpt",
    "finetune_compressor": "compressor.ckpt",
    "train_lm": "lm.ckpt",
    "gen_counter": os.path.join("counter", "pairs.jsonl"),
    "train_epo": "epo.ckpt",
}
INPUTS = {
    "train_embedder": [],
    "pretrain_compressor": [],
    "finetune_compressor": ["compressor_pretrain.ckpt"],
    "train_lm": ["compressor.ckpt", "embedder.ckpt"],
    "gen_counter": ["lm.ckpt", "embedder.ckpt"],
    "train_epo": ["lm.ckpt", os.path.join("counter", "pairs.jsonl")],
}
N_DEV_CONVERSATIONS = 100


class StageError(RuntimeError):
    pass


def _producer(path: str) -> str:
    if path == CORPUS_FILE:
        return "gen-corpus"
    return next(s for s, out in OUTPUTS.items() if out == path)


# -- run directory -----------------------------------------------------------------

def resolve_seed(config: RunConfig, log) -> int:
    if config.seed is None:
        config.seed = int(np.random.SeedSequence().entropy % (2 ** 31))
        log(f"no seed given; drew seed {config.seed} from entropy")
    return config.seed


def write_config(run_dir, config: RunConfig) -> None:
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(config.to_json() + "\n")


def corpus_config(config: RunConfig) -> CorpusConfig:
    c = config.corpus
    return CorpusConfig(c.n_conversations, (c.turns_min, c.turns_max), c.vocab_seed, config.seed, c.n_topics,
                        c.nouns_per_topic, c.entities_per_topic, c.self_transition, c.recall_prob,
                        c.generic_prob, c.valence_mix)


def prepare_corpus(run_dir, config: RunConfig, log=print) -> dict:
    """Generate (or ingest) the corpus, split it, and fix the tokenizer."""
    resolve_seed(config, log)
    os.makedirs(run_dir, exist_ok=True)
    corpus = load_corpus(config.corpus.path) if config.corpus.path else generate_synthetic_corpus(corpus_config(config))
    train, test = split_corpus(corpus, config.corpus.train_fraction, config.seed)
    save_corpus(train + test, os.path.join(run_dir, CORPUS_FILE))
    tokenizer = Tokenizer.build([u.text for c in corpus for u in c.utterances], template_vocabulary())
    with open(os.path.join(run_dir, TOKENIZER_FILE), "w", encoding="utf-8") as fh:
        json.dump(tokenizer.to_config(), fh)
    stats = corpus_stats(corpus)
    stats.update(vocab_size=tokenizer.vocab_size, train=len(train), test=len(test))
    with open(os.path.join(run_dir, "corpus_stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    write_config(run_dir, config)
    return stats


@dataclass
class Workspace:
    run_dir: str
    config: RunConfig
    tokenizer: Tokenizer
    train: list
    dev: list
    test: list
    log: object = print

    @classmethod
    def open(cls, run_dir, config: RunConfig, log=print) -> "Workspace":
        for need in (CORPUS_FILE, TOKENIZER_FILE):
            if not os.path.exists(os.path.join(run_dir, need)):
                raise StageError(f"{run_dir}: missing {need}; run gen-corpus first")
        corpus = load_corpus(os.path.join(run_dir, CORPUS_FILE))
        with open(os.path.join(run_dir, TOKENIZER_FILE), encoding="utf-8") as fh:
            tokenizer = Tokenizer.from_config(json.load(fh))
        train = [c for c in corpus if c.split == "train"]
        test = [c for c in corpus if c.split == "test"]
        n_dev = min(N_DEV_CONVERSATIONS, len(train) // 10)
        return cls(run_dir, config, tokenizer, train[:len(train) - n_dev], train[len(train) - n_dev:], test, log)

    def path(self, name: str) -> str:
        return os.path.join(self.run_dir, name)

    def seed(self, offset: int) -> int:
        return int(self.config.seed) * 1000 + offset


class CsvLog:
    def __init__(self, path, columns):
        self.columns = list(columns)
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(self.columns)

    def row(self, **values):
        self.writer.writerow([_fmt(values.get(c, "")) for c in self.columns])

    def close(self):
        self.fh.close()


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def loss_trend(losses: list, window: int = 10) -> dict:
    if not losses:
        return {"initial_loss": None, "final_loss": None}
    w = max(1, min(window, len(losses) // 2 or 1))
    return {"initial_loss": float(np.mean(losses[:w])), "final_loss": float(np.mean(losses[-w:]))}


# -- helpers shared by stages ----------------------------------------------------------

def sample_mixed_groups(corpus: list, rng, n: int, k_max: int, single_fraction: float = 0.5) -> list:
    """Groups of consecutive utterances: size 1 with ``single_fraction``, else 2..k_max."""
    groups = []
    for _ in range(n):
        k = 1 if rng.random() < single_fraction else int(rng.integers(2, k_max + 1))
        groups.extend(_groups(corpus, rng, 1, k, k))
    return groups


def _groups(corpus, rng, n, k_lo, k_hi):
    out = []
    for _ in range(n):
        conv = corpus[int(rng.integers(len(corpus)))]
        k = min(int(rng.integers(k_lo, k_hi + 1)), len(conv.utterances))
        start = int(rng.integers(len(conv.utterances) - k + 1))
        out.append(list(conv.utterances[start:start + k]))
    return out


def probe_memories(lm: DialogueLM, tokenizer, groups: list, with_speaker: bool = True) -> np.ndarray:
    """Stand-in memories: per utterance, the normalized mean of its LM token embeddings."""
    table = lm.tok_embed.data
    scale = 3.0 * 0.02 * math.sqrt(lm.config.d_model)
    rows = []
    for g in groups:
        for u in g:
            v = table[utterance_tokens(tokenizer, u, with_speaker)].mean(axis=0)
            rows.append(v / (np.linalg.norm(v) + 1e-8) * scale)
    return np.asarray(rows, dtype=table.dtype)


def early_stopping_loop(step_fn, eval_fn, max_steps: int, eval_every: int, patience: int, log, csv_log,
                        phase: str):
    """Run ``step_fn`` until the eval score stops improving for ``patience`` evaluations.

    Returns (losses, eval history).
    """
    losses, history = [], []
    best, stale = -1.0, 0
    for step in range(1, max_steps + 1):
        loss = step_fn()
        losses.append(loss)
        score = ""
        if step % eval_every == 0 or step == max_steps:
            score = eval_fn()
            history.append((step, score))
            log(f"[{phase}] step {step} loss {np.mean(losses[-eval_every:]):.4f} dev accuracy {score:.4f}")
            if score > best + 1e-4:
                best, stale = score, 0
            else:
                stale += 1
        csv_log.row(step=step, phase=phase, loss=loss, dev_accuracy=score)
        if stale >= patience:
            log(f"[{phase}] no dev improvement for {patience} evaluations; stopping at step {step}")
            break
    return losses, history


# -- stages --------------------------------------------------------------------------------

def stage_train_embedder(ws: Workspace) -> dict:
    cfg = ws.config.embedder
    tok = ws.tokenizer
    sents = [tok.encode(u.text) for c in ws.train for u in c.utterances]
    labels = [u.emotion for c in ws.train for u in c.utterances]
    val_s = [tok.encode(u.text) for c in ws.test for u in c.utterances]
    val_l = [u.emotion for c in ws.test for u in c.utterances]
    log = CsvLog(ws.path("train_embedder_log.csv"), ["step", "loss"])
    model, rep = train_classifier(sents, labels, EmbedderConfig(tok.vocab_size, cfg.d_embed, cfg.d_emo, ws.seed(1)),
                                  val=(val_s, val_l), steps=cfg.steps, batch_size=cfg.batch_size, lr=cfg.lr,
                                  log=lambda s, l: log.row(step=s + 1, loss=l))
    log.close()
    same, cross = separability(model, val_s[:1500], val_l[:1500])
    Bundle(tok, embedder=model, stage="train_embedder").save(ws.path(OUTPUTS["train_embedder"]))
    ws.log(f"[train_embedder] val accuracy {rep.val_accuracy:.4f}, same/cross cosine {same:.3f}/{cross:.3f}")
    return {"val_accuracy": rep.val_accuracy, "train_accuracy": rep.train_accuracy, "same_emotion_cosine": same,
            "cross_emotion_cosine": cross, "steps": cfg.steps, **loss_trend(rep.losses)}


def _lm_config(ws: Workspace) -> LmConfig:
    c = ws.config.lm
    return LmConfig(ws.tokenizer.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len,
                    pad_id=ws.tokenizer.pad_id, seed=ws.seed(3))


def _compressor_config(ws: Workspace) -> CompressorConfig:
    c = ws.config.compressor
    return CompressorConfig(ws.tokenizer.vocab_size, ws.tokenizer.mem_id, ws.tokenizer.pad_id, c.d_model, c.d_state,
                            c.d_conv, c.expand, c.n_layers, ws.config.lm.d_model, chunk=c.chunk, seed=ws.seed(4))


def stage_pretrain_compressor(ws: Workspace) -> dict:
    c = ws.config.compressor
    tok = ws.tokenizer
    rng = np.random.default_rng(ws.seed(2))
    log = CsvLog(ws.path("pretrain_compressor_log.csv"), ["step", "phase", "loss", "dev_accuracy"])

    lm = DialogueLM(_lm_config(ws))
    opt = Adam(lm, lr=c.lm_warmup_lr, clip_norm=1.0)
    warm = []
    for step in range(1, c.lm_warmup_steps + 1):
        groups = sample_mixed_groups(ws.train, rng, c.lm_warmup_batch, c.k_max)
        vecs = probe_memories(lm, tok, groups, c.with_speaker)
        prompts = [reconstruction_prompt(tok, len(g)) for g in groups]
        loss = lm_loss(lm, prompts, [reconstruction_target(tok, g) for g in groups], vectors=Tensor(vecs))
        loss.backward()
        opt.step()
        warm.append(loss.item())
        log.row(step=step, phase="lm_warmup", loss=warm[-1])
        if step % 100 == 0:
            ws.log(f"[pretrain_compressor] lm warm-up step {step} loss {np.mean(warm[-100:]):.4f}")
    lm.freeze()

    comp = Compressor(_compressor_config(ws))
    opt = Adam(comp, lr=c.lr, clip_norm=1.0)
    dev = _groups(ws.dev, np.random.default_rng(ws.seed(5)), c.eval_groups, 1, 1)

    def step_fn():
        loss = reconstruction_loss(comp, lm, tok, _groups(ws.train, rng, c.pretrain_batch, 1, 1), c.with_speaker)
        loss.backward()
        opt.step()
        return loss.item()

    losses, hist = early_stopping_loop(step_fn, lambda: token_accuracy(comp, lm, tok, dev, c.with_speaker),
                                       c.pretrain_max_steps, c.eval_every, c.patience, ws.log, log, "single")
    log.close()
    Bundle(tok, compressor=comp, lm=lm, stage="pretrain_compressor").save(ws.path(OUTPUTS["pretrain_compressor"]))
    wt = loss_trend(warm)
    return {"lm_warmup_initial_loss": wt["initial_loss"], "lm_warmup_final_loss": wt["final_loss"],
            "steps": len(losses), "dev_accuracy": hist[-1][1] if hist else None, **loss_trend(losses)}


def stage_finetune_compressor(ws: Workspace) -> dict:
    c = ws.config.compressor
    tok = ws.tokenizer
    b = Bundle.load(ws.path(OUTPUTS["pretrain_compressor"])).require("compressor", "lm")
    comp, lm = b.compressor, b.lm.freeze()
    rng = np.random.default_rng(ws.seed(6))
    opt = Adam(comp, lr=c.lr, clip_norm=1.0)
    dev = _groups(ws.dev, np.random.default_rng(ws.seed(7)), c.eval_groups, c.k_min, c.k_max)
    log = CsvLog(ws.path("finetune_compressor_log.csv"), ["step", "phase", "loss", "dev_accuracy"])

    def step_fn():
        groups = _groups(ws.train, rng, c.finetune_batch, c.k_min, c.k_max)
        loss = reconstruction_loss(comp, lm, tok, groups, c.with_speaker)
        loss.backward()
        opt.step()
        return loss.item()

    losses, hist = early_stopping_loop(step_fn, lambda: token_accuracy(comp, lm, tok, dev, c.with_speaker),
                                       c.finetune_max_steps, c.eval_every, c.patience, ws.log, log, "multi")
    log.close()
    Bundle(tok, compressor=comp, lm=lm, stage="finetune_compressor").save(ws.path(OUTPUTS["finetune_compressor"]))
    return {"steps": len(losses), "dev_accuracy": hist[-1][1] if hist else None, **loss_trend(losses)}


def stage_train_lm(ws: Workspace) -> dict:
    c = ws.config.lm
    cc = ws.config.compressor
    tok = ws.tokenizer
    b = Bundle.load(ws.path(OUTPUTS["finetune_compressor"])).require("compressor", "lm")
    emb = Bundle.load(ws.path(OUTPUTS["train_embedder"]), parts=("embedder",)).require("embedder").embedder
    comp, lm = b.compressor.freeze(), b.lm.unfreeze()
    rng = np.random.default_rng(ws.seed(8))
    turns = all_turns(ws.train)
    cache = MemoryCache(comp, tok, ws.train, cc.with_speaker)
    opt = Adam(lm, lr=c.lr, clip_norm=1.0)
    log = CsvLog(ws.path("train_lm_log.csv"), ["step", "loss", "dialogue_loss", "recon_loss"])
    losses = []
    for step in range(1, c.steps + 1):
        picks = [turns[i] for i in rng.integers(0, len(turns), size=c.batch_size)]
        labelled = rng.random(len(picks)) < c.labelled_fraction
        cache.prefetch(r.conv_index for r in picks)
        prompts, targets = [], []
        for r, lab in zip(picks, labelled):
            resp = ws.train[r.conv_index].utterances[r.turn]
            prompts.append(dialogue_prompt(tok, ws.train, r, memories=cache.memories(r.conv_index),
                                           emotion=resp.emotion if lab else None))
            targets.append(response_tokens(tok, resp))
        d_loss = lm_loss(lm, prompts, targets)
        loss = d_loss
        r_val = 0.0
        if c.recon_weight > 0 and c.recon_batch > 0:
            groups = sample_mixed_groups(ws.train, rng, c.recon_batch, cc.k_max)
            r_loss = reconstruction_loss(comp, lm, tok, groups, cc.with_speaker)
            loss = d_loss + r_loss * c.recon_weight
            r_val = r_loss.item()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        log.row(step=step, loss=losses[-1], dialogue_loss=d_loss.item(), recon_loss=r_val)
        if step % 100 == 0:
            ws.log(f"[train_lm] step {step} loss {np.mean(losses[-100:]):.4f}")
    log.close()
    Bundle(tok, embedder=emb, compressor=comp, lm=lm, stage="train_lm").save(ws.path(OUTPUTS["train_lm"]))
    return {"steps": len(losses), **loss_trend(losses)}


def stage_gen_counter(ws: Workspace) -> dict:
    c = ws.config.counter
    b = Bundle.load(ws.path(OUTPUTS["train_lm"])).require("compressor", "lm", "embedder")
    cfg = CounterConfig(c.threshold, c.top_k, c.temperature, c.max_new_tokens, c.max_turns, c.use_history,
                        c.batch_turns, ws.seed(9))
    _, summary = build_preference_dataset(ws.train, b.lm, ws.tokenizer, b.embedder, b.compressor, cfg,
                                          out_dir=ws.path("counter"), log=ws.log)
    rate = summary.acceptance_rate
    ws.log(f"[gen_counter] {summary.pairs} pairs from {summary.turns_considered} turns "
           f"(acceptance {'n/a' if rate is None else f'{rate:.3f}'})")
    return {"pairs": summary.pairs, "turns": summary.turns_considered, "acceptance_rate": rate}


def pair_prompts(pairs: list, compressor, tokenizer, batch_size: int = 32) -> list:
    """Dialogue prompts for preference pairs, memories computed from the stored context."""
    prompts = []
    with no_grad():
        for s in range(0, len(pairs), batch_size):
            chunk = pairs[s:s + batch_size]
            mem, counts = compressor.compress_batch([p.context_token_ids[:-1] for p in chunk])
            row = 0
            for p, k in zip(chunk, counts):
                sentence = p.context_token_ids[-1][1:]   # drop the speaker marker
                prompts.append(build_input(TEMPLATES[p.template], tokenizer, history=mem.data[row:row + k],
                                           sentence=sentence))
                row += k
    return prompts


def stage_train_epo(ws: Workspace) -> dict:
    c = ws.config.epo
    tok = ws.tokenizer
    b = Bundle.load(ws.path(OUTPUTS["train_lm"])).require("compressor", "lm")
    pairs = load_preference_pairs(ws.path(OUTPUTS["gen_counter"]))
    if not pairs:
        raise StageError("stage train_epo: the preference set is empty; nothing to train on")
    cfg = EpoConfig(c.beta, c.gamma, c.lambda_ar, c.lr, c.steps, c.batch_size, ws.seed(10), c.divergence_factor,
                    c.eval_every)
    lm = b.lm.unfreeze()
    prompts = pair_prompts(pairs, b.compressor, tok)
    y_a = [p.y_a_token_ids for p in pairs]
    y_i = [p.y_i_token_ids for p in pairs]
    probe = slice(0, min(c.probe_pairs, len(pairs)))
    before = margin_stats(lm, prompts[probe], y_a[probe], y_i[probe], cfg)
    ws.log(f"[train_epo] before: margin {before['margin']:.4f} frac>gamma {before['frac_above_gamma']:.3f} "
           f"ar {before['ar_loss']:.4f}")
    opt = Adam(lm, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    steps = cfg.steps or math.ceil(len(pairs) / cfg.batch_size)
    order = np.array([], dtype=np.int64)
    good = {k: v.copy() for k, v in lm.state_dict().items()}
    log = CsvLog(ws.path("train_epo_log.csv"),
                 ["step", "loss", "epo_loss", "ar_loss", "margin", "frac_above_gamma", "probe_ar_loss"])
    losses, diverged, done = [], False, 0
    for step in range(1, steps + 1):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(pairs))])
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        m = epo_step(lm, opt, [prompts[i] for i in idx], [y_a[i] for i in idx], [y_i[i] for i in idx], cfg)
        losses.append(m.loss)
        done = step
        probe_ar = ""
        if step % cfg.eval_every == 0 or step == steps:
            st = margin_stats(lm, prompts[probe], y_a[probe], y_i[probe], cfg)
            probe_ar = st["ar_loss"]
            if st["ar_loss"] > cfg.divergence_factor * before["ar_loss"]:
                ws.log(f"[train_epo] AR loss {st['ar_loss']:.4f} exceeds {cfg.divergence_factor} x "
                       f"{before['ar_loss']:.4f}; restoring the last good weights and stopping")
                lm.load_state_dict(good)
                diverged = True
            else:
                good = {k: v.copy() for k, v in lm.state_dict().items()}
            ws.log(f"[train_epo] step {step} loss {np.mean(losses[-cfg.eval_every:]):.4f} "
                   f"probe margin {st['margin']:.4f}")
        log.row(step=step, loss=m.loss, epo_loss=m.epo_loss, ar_loss=m.ar_loss, margin=m.margin,
                frac_above_gamma=m.frac_above_gamma, probe_ar_loss=probe_ar)
        if diverged:
            break
    log.close()
    after = margin_stats(lm, prompts[probe], y_a[probe], y_i[probe], cfg)
    Bundle(tok, embedder=b.embedder, compressor=b.compressor, lm=lm, stage="train_epo").save(
        ws.path(OUTPUTS["train_epo"]))
    return {"steps": done, "pairs": len(pairs), "diverged": diverged, "margin_before": before["margin"],
            "margin_after": after["margin"], "frac_above_gamma_before": before["frac_above_gamma"],
            "frac_above_gamma_after": after["frac_above_gamma"], "ar_loss_before": before["ar_loss"],
            "ar_loss_after": after["ar_loss"], **loss_trend(losses)}


STAGE_FUNCS = {
    "train_embedder": stage_train_embedder,
    "pretrain_compressor": stage_pretrain_compressor,
    "finetune_compressor": stage_finetune_compressor,
    "train_lm": stage_train_lm,
    "gen_counter": stage_gen_counter,
    "train_epo": stage_train_epo,
}


@dataclass
class CurriculumPlan:
    run_dir: str
    config: RunConfig = field(default_factory=RunConfig)
    stages: tuple = STAGES

    def __post_init__(self):
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stage(s): {', '.join(unknown)}")
        self.stages = tuple(s for s in STAGES if s in self.stages)

    def done_marker(self, stage: str) -> str:
        return os.path.join(self.run_dir, f"{stage}.done.json")


def run_stage(plan: CurriculumPlan, stage: str, resume: bool = False, log=print) -> dict | None:
    """Run one stage; returns its report, or None when skipped under ``resume``."""
    marker = plan.done_marker(stage)
    if resume and os.path.exists(marker) and os.path.exists(os.path.join(plan.run_dir, OUTPUTS[stage])):
        log(f"[{stage}] already complete; skipping")
        return None
    for need in INPUTS[stage]:
        if not os.path.exists(os.path.join(plan.run_dir, need)):
            raise StageError(f"stage {stage} needs {need}, produced by stage {_producer(need)}; run that first")
    ws = Workspace.open(plan.run_dir, plan.config, log)
    if ws.config.seed is None:
        raise StageError("run directory has no seed; run gen-corpus first")
    write_config(plan.run_dir, plan.config)
    t0 = time.perf_counter()
    report = STAGE_FUNCS[stage](ws)
    report["seconds"] = time.perf_counter() - t0
    report["stage"] = stage
    with open(marker, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report


def run_curriculum(plan: CurriculumPlan, resume: bool = False, log=print) -> dict:
    """Prepare the corpus if needed, then run the plan's stages in order."""
    if not (resume and os.path.exists(os.path.join(plan.run_dir, CORPUS_FILE))):
        prepare_corpus(plan.run_dir, plan.config, log)
    reports = {}
    for stage in plan.stages:
        reports[stage] = run_stage(plan, stage, resume, log)
    return reports


def stderr_log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)
