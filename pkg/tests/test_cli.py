import io
import json

import pytest

from epochat import cli
from epochat.cli import main


def test_run_all_outputs(tiny_run):
    for name in ("eval.csv", "eval_summary.txt", "config.json", "epo.ckpt", "counter/pairs.jsonl"):
        assert (tiny_run / name).exists()
    cfg = json.loads((tiny_run / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["corpus"]["n_conversations"] == 120


def test_eval_and_bench(tiny_run, tmp_path, capsys):
    model, corpus = str(tiny_run / "epo.ckpt"), str(tiny_run / "corpus.jsonl")
    assert main(["eval", "--model", model, "--corpus", corpus, "--out", str(tmp_path / "e"), "--n-samples", "4",
                 "--seed", "1"]) == 0
    assert (tmp_path / "e" / "eval.csv").read_text().count("\n") == 6
    assert json.loads((tmp_path / "e" / "config.json").read_text())["seed"] == 1
    assert main(["bench", "--model", model, "--corpus", corpus, "--min-turns", "10", "--out", str(tmp_path / "b"),
                 "--seed", "1", "--set", "bench.repetitions=1"]) == 0
    bench = json.loads((tmp_path / "b" / "bench.json").read_text())
    assert 0 < bench["token_reduction"] < 1
    assert "prompt time" in capsys.readouterr().out


@pytest.mark.parametrize("argv, fragment", [
    (["eval", "--model", "nope.ckpt", "--corpus", "nope.jsonl"], "nope.ckpt"),
    (["train-lm", "--run", "missing-dir"], "missing-dir"),
    (["gen-corpus", "--out", "x", "--set", "corpus.no_such_field=3"], "no_such_field"),
    (["gen-corpus", "--out", "x", "--set", "oops"], "section.key=value"),
    (["gen-corpus", "--out", "x", "--config", "absent.json"], "absent.json"),
])
def test_user_errors_exit_1(argv, fragment, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    err = capsys.readouterr().err
    assert fragment in err and "Traceback" not in err


def test_bad_flags_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_bench_without_long_conversations(tiny_run, capsys):
    code = main(["bench", "--model", str(tiny_run / "epo.ckpt"), "--corpus", str(tiny_run / "corpus.jsonl"),
                 "--min-turns", "500", "--out", str(tiny_run / "nobench")])
    assert code == 1 and "500" in capsys.readouterr().err


def test_internal_error_exit_2(monkeypatch, tmp_path, capsys):
    def boom(args):
        raise RuntimeError("kaput")

    monkeypatch.setitem(cli.COMMANDS, "gen-corpus", boom)
    assert main(["gen-corpus", "--out", str(tmp_path)]) == 2
    assert "Traceback" in capsys.readouterr().err


def test_stage_subcommand_resume(tiny_run, capsys):
    assert main(["gen-counter", "--run", str(tiny_run), "--resume"]) == 0
    assert "already complete" in capsys.readouterr().err


def test_gen_corpus_writes_seed(tmp_path, tiny_config_path, capsys):
    assert main(["gen-corpus", "--out", str(tmp_path), "--config", tiny_config_path]) == 0
    seed = json.loads((tmp_path / "config.json").read_text())["seed"]
    assert isinstance(seed, int)
    assert str(seed) in capsys.readouterr().err


def test_chat_session(tiny_run, monkeypatch, capsys):
    lines = "hello there friend\n/history\n/mem\n/whatever\n\n/quit\nnot reached\n"
    monkeypatch.setattr("sys.stdin", io.StringIO(lines))
    assert main(["chat", "--model", str(tiny_run / "epo.ckpt"), "--max-new-tokens", "4"]) == 0
    out = capsys.readouterr().out
    assert "[you] hello there friend" in out
    assert "memory vectors" in out and "unknown command /whatever" in out


def test_chat_memories_track_history(tiny_run):
    from epochat.bundle import Bundle

    bundle = Bundle.load(str(tiny_run / "epo.ckpt"))
    for compress in (True, False):
        s = cli.ChatSession(bundle, compress=compress, max_new_tokens=3)
        assert len(s.memories()) == 0
        s.reply("i feel great today")
        assert len(s.memories()) == len(s.history) >= 1
        with pytest.raises(cli.UsageError):
            s.reply("   ")
