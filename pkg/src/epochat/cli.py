"""Command-line entry point: ``epochat <subcommand> ...``.

Exit status is 0 on success, 1 for a user error (bad flag, missing file, bad
config) and 2 for an internal failure.  User errors print one line and no
traceback.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

from .bundle import Bundle
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig
from .curriculum import (
    OUTPUTS,
    STAGES,
    CurriculumPlan,
    StageError,
    prepare_corpus,
    resolve_seed,
    run_curriculum,
    run_stage,
    write_config,
)
from .data import CorpusError, Utterance, load_corpus
from .evaluation import bench_compression, config_digest, evaluate_dialogue
from .labels import EmotionCategory
from .lm import TEMPLATES, DecodeConfig, build_input, generate
from .reconstruction import utterance_tokens
from .tensor import no_grad

USER_ERRORS = (ConfigError, StageError, CorpusError, CheckpointError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _add_config_flags(p):
    p.add_argument("--seed", type=int, help="seed for all randomness (drawn from entropy and logged if unset)")
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config field (repeatable)")


def _load_config(args, run_dir=None) -> RunConfig:
    """Config precedence: built-in defaults < run dir config.json < --config < --set < --seed."""
    if args.config:
        cfg = RunConfig.load(args.config)
    elif run_dir and os.path.exists(os.path.join(run_dir, "config.json")):
        cfg = RunConfig.load(os.path.join(run_dir, "config.json"))
    else:
        cfg = RunConfig()
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        cfg.override(key.strip(), raw.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epochat", description="Memory-compressed dialogue LM with emotional preference training.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-corpus", help="generate (or ingest) the corpus and fix the tokenizer")
    p.add_argument("--out", required=True, help="run directory")
    _add_config_flags(p)

    for stage in STAGES:
        p = sub.add_parser(stage.replace("_", "-"), help=f"run the {stage.replace('_', ' ')} stage")
        p.add_argument("--run", required=True, help="run directory prepared by gen-corpus")
        p.add_argument("--resume", action="store_true", help="skip if the stage already completed")
        _add_config_flags(p)

    p = sub.add_parser("run-all", help="gen-corpus, every stage, then eval on the test split")
    p.add_argument("--out", default="runs/default", help="run directory (default: runs/default)")
    p.add_argument("--resume", action="store_true", help="keep completed stages")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="score greedy responses against the ground truth")
    p.add_argument("--model", required=True, help="checkpoint with lm, compressor and embedder")
    p.add_argument("--corpus", required=True, help="JSONL corpus")
    p.add_argument("--split", default="test", help="only conversations with this split tag ('' for all)")
    p.add_argument("--out", help="output directory (default: next to the checkpoint)")
    p.add_argument("--n-samples", type=int, help="number of sampled turns")
    _add_config_flags(p)

    p = sub.add_parser("bench", help="prompt size and forward time with and without compression")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--min-turns", type=int, help="only conversations with at least this many turns")
    p.add_argument("--out", help="output directory (default: next to the checkpoint)")
    _add_config_flags(p)

    p = sub.add_parser("chat", help="interactive REPL (/history, /mem, /quit)")
    p.add_argument("--model", required=True)
    p.add_argument("--no-compress", action="store_true", help="feed the raw history instead of memories")
    p.add_argument("--max-new-tokens", type=int, default=24)
    return parser


# -- commands -------------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    cfg = _load_config(args)
    stats = prepare_corpus(args.out, cfg, log)
    log(f"wrote {stats['conversations']} conversations ({stats['train']} train / {stats['test']} test), "
        f"vocabulary {stats['vocab_size']}, to {args.out}")
    return 0


def cmd_stage(args) -> int:
    cfg = _load_config(args, args.run)
    if cfg.seed is None:
        raise StageError(f"{args.run} has no seeded config; run gen-corpus first")
    stage = args.command.replace("-", "_")
    report = run_stage(CurriculumPlan(args.run, cfg), stage, resume=args.resume, log=log)
    if report is not None:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _eval(bundle, corpus, cfg, out_dir, n_samples=None) -> None:
    digest = config_digest(cfg.to_dict())
    report = evaluate_dialogue(bundle.lm, bundle.compressor, bundle.embedder, bundle.tokenizer, corpus,
                               n_samples=n_samples or cfg.eval.n_samples, seed=cfg.seed or 0,
                               max_new_tokens=cfg.eval.max_new_tokens, digest=digest)
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "eval.csv"))
    with open(os.path.join(out_dir, "eval_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.summary())
    write_config(out_dir, cfg)
    print(report.summary(), end="")


def cmd_run_all(args) -> int:
    cfg = _load_config(args, args.out if args.resume else None)
    resolve_seed(cfg, log)
    plan = CurriculumPlan(args.out, cfg)
    run_curriculum(plan, resume=args.resume, log=log)
    bundle = Bundle.load(os.path.join(args.out, OUTPUTS["train_epo"])).require("lm", "compressor", "embedder")
    test = [c for c in load_corpus(os.path.join(args.out, "corpus.jsonl")) if c.split == "test"]
    _eval(bundle, test, cfg, args.out)
    return 0


def _corpus_split(path, split):
    corpus = load_corpus(path)
    if split:
        corpus = [c for c in corpus if c.split == split]
        if not corpus:
            raise CorpusError(f"{path}: no conversations with split {split!r}")
    return corpus


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    resolve_seed(cfg, log)
    bundle = Bundle.load(args.model).require("lm", "compressor", "embedder", path=args.model)
    corpus = _corpus_split(args.corpus, args.split)
    _eval(bundle, corpus, cfg, args.out or os.path.dirname(os.path.abspath(args.model)), args.n_samples)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    resolve_seed(cfg, log)
    if args.min_turns is not None:
        cfg.bench.min_turns = args.min_turns
    bundle = Bundle.load(args.model, parts=("compressor", "lm")).require("lm", "compressor", path=args.model)
    corpus = load_corpus(args.corpus)
    try:
        rep = bench_compression(bundle.lm, bundle.compressor, bundle.tokenizer, corpus, cfg.bench.min_turns,
                                cfg.bench.n_samples, cfg.bench.repetitions, cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or os.path.dirname(os.path.abspath(args.model))
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "bench.json"), "w", encoding="utf-8") as fh:
        json.dump(rep.to_dict(), fh, indent=2, sort_keys=True)
    write_config(out, cfg)
    print(rep.summary(), end="")
    return 0


class ChatSession:
    """Holds the running conversation; the user is speaker 0, the model speaker 1."""

    def __init__(self, bundle, compress: bool = True, max_new_tokens: int = 24):
        self.b = bundle
        self.compress = compress
        self.decode = DecodeConfig("greedy", max_new_tokens=max_new_tokens)
        self.history = []

    def _context(self):
        tok = self.b.tokenizer
        return [utterance_tokens(tok, u) for u in self.history]

    def memories(self):
        ctx = self._context()
        if not ctx:
            return []
        with no_grad():
            mem, _ = self.b.compressor.compress_batch([ctx])
        return mem.data

    def reply(self, text: str) -> str:
        tok = self.b.tokenizer
        sentence = tok.encode(text)
        if not sentence:
            raise UsageError("empty utterance")
        if self.compress:
            prompt = build_input(TEMPLATES["dialogue"], tok, history=self.memories(), sentence=sentence)
        else:
            prompt = build_input(TEMPLATES["dialogue"], tok, raw_history=self._context(), sentence=sentence)
        out = generate(self.b.lm, prompt, self.decode, tok.eor_id)
        answer = tok.decode(out)
        self.history.append(Utterance(0, text, EmotionCategory.NEUTRAL))
        if answer.strip():
            self.history.append(Utterance(1, answer, EmotionCategory.NEUTRAL))
        return answer

    def sizes(self) -> tuple:
        raw = sum(len(t) for t in self._context())
        return raw, len(self.history)


def cmd_chat(args) -> int:
    bundle = Bundle.load(args.model, parts=("compressor", "lm")).require("lm", "compressor", path=args.model)
    session = ChatSession(bundle, compress=not args.no_compress, max_new_tokens=args.max_new_tokens)
    print("type an utterance; /history, /mem, /quit", file=sys.stderr)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line in ("/quit", "/exit"):
            break
        if line == "/history":
            for u in session.history:
                print(f"  [{'you' if u.speaker == 0 else 'bot'}] {u.text}")
            raw, n = session.sizes()
            print(f"raw history: {n} utterances, {raw} tokens")
            continue
        if line == "/mem":
            raw, n = session.sizes()
            mem = session.memories()
            norms = " ".join(f"{float((v ** 2).sum()) ** 0.5:.2f}" for v in mem)
            print(f"compressed history: {len(mem)} memory vectors (vs {raw} raw tokens); norms: {norms}")
            continue
        if line.startswith("/"):
            print(f"unknown command {line}; try /history, /mem or /quit")
            continue
        try:
            print(session.reply(line) or "(empty reply)")
        except UsageError as exc:
            print(f"error: {exc}")
    return 0


COMMANDS = {"gen-corpus": cmd_gen_corpus, "run-all": cmd_run_all, "eval": cmd_eval, "bench": cmd_bench,
            "chat": cmd_chat}
COMMANDS.update({s.replace("_", "-"): cmd_stage for s in STAGES})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, *USER_ERRORS) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"epochat {args.command}: error: {msg}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"epochat {args.command}: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception:  # internal failure: keep the traceback for debugging
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
