import json
import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from epochat.data import CorpusConfig, generate_synthetic_corpus
from epochat.lm import DialogueLM, LmConfig, template_vocabulary
from epochat.ssm import Compressor, CompressorConfig
from epochat.tokenizer import Tokenizer

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(CorpusConfig(n_conversations=60, turns_range=(4, 12), seed=11))


@pytest.fixture(scope="session")
def tokenizer(small_corpus):
    return Tokenizer.build([u.text for c in small_corpus for u in c.utterances], template_vocabulary())


@pytest.fixture
def tiny_lm(tokenizer):
    return DialogueLM(LmConfig(tokenizer.vocab_size, d_model=16, n_layers=1, n_heads=2, d_ff=32,
                               max_seq_len=256, pad_id=tokenizer.pad_id, seed=1))


@pytest.fixture
def tiny_compressor(tokenizer):
    return Compressor(CompressorConfig(tokenizer.vocab_size, tokenizer.mem_id, tokenizer.pad_id, d_model=16,
                                       d_state=4, n_layers=1, d_mem=16, max_seq_len=128, seed=2))


@pytest.fixture(scope="session")
def repo_root():
    return os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def rng_for(request_or_seed=0):
    return np.random.default_rng(request_or_seed)


# A configuration small enough that the whole curriculum finishes in seconds.
TINY_CONFIG = {
    "corpus": {"n_conversations": 120},
    "embedder": {"steps": 50},
    "compressor": {"lm_warmup_steps": 10, "pretrain_max_steps": 20, "finetune_max_steps": 20, "eval_every": 10,
                   "eval_groups": 16, "n_layers": 1, "d_model": 32},
    "lm": {"steps": 10, "n_layers": 1, "d_model": 32, "d_ff": 64},
    "counter": {"max_turns": 20},
    "epo": {"steps": 5, "eval_every": 2},
    "eval": {"n_samples": 20},
    "bench": {"min_turns": 10, "n_samples": 5, "repetitions": 2},
}


@pytest.fixture(scope="session")
def tiny_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return str(path)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_config_path):
    """A finished tiny run-all directory shared by the CLI and curriculum tests."""
    from epochat.cli import main

    out = tmp_path_factory.mktemp("run") / "r"
    assert main(["run-all", "--out", str(out), "--seed", "7", "--config", tiny_config_path]) == 0
    return out


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
