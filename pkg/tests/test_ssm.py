import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epochat import tensor as T
from epochat.ssm import (
    Compressor,
    CompressorConfig,
    MambaBlock,
    discretize,
    scan_chunked,
    scan_sequential,
    selective_scan,
    selective_scan_reference,
)
from epochat.tensor import Tensor, gradient_check, precision


def random_scan_inputs(rng, bt, t, di, n, dtype=np.float64):
    x = rng.normal(size=(bt, t, di))
    delta = np.log1p(np.exp(rng.normal(size=(bt, t, di)) - 1.0))
    A = -np.exp(rng.normal(size=(di, n)) * 0.5)
    B = rng.normal(size=(bt, t, n))
    C = rng.normal(size=(bt, t, n))
    D = rng.normal(size=di)
    return [a.astype(dtype) for a in (x, delta, A, B, C, D)]


def test_discretize_hand_values():
    a, b = discretize(np.array([1.0]), np.log(np.array([[1.0]])), np.array([2.0]))
    assert a[0, 0] == pytest.approx(math.exp(-1))
    assert b[0, 0] == pytest.approx(2.0)
    a0, b0 = discretize(np.array([1e-12]), np.zeros((1, 1)), np.array([3.0]))
    assert a0[0, 0] == pytest.approx(1.0) and abs(b0[0, 0]) < 1e-10
    ainf, _ = discretize(np.array([1e6]), np.zeros((1, 1)), np.array([1.0]))
    assert ainf[0, 0] == pytest.approx(0.0)


def test_scan_unrolled_by_hand():
    with precision(np.float64):
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
        delta = Tensor(np.full((1, 3, 1), 1e3))      # a_bar -> 0
        A = Tensor(-np.ones((1, 1)))
        # b_bar = delta * B = 1  =>  B = 1 / delta
        B = Tensor(np.full((1, 3, 1), 1e-3))
        C = Tensor(np.ones((1, 3, 1)))
        y = selective_scan(x, delta, A, B, C, Tensor(np.zeros(1))).data.ravel()
    assert np.allclose(y, [1.0, 2.0, 3.0])


def test_zero_step_gives_pure_skip():
    rng = np.random.default_rng(0)
    x, delta, A, B, C, D = random_scan_inputs(rng, 1, 7, 3, 2)
    with precision(np.float64):
        y = selective_scan(*(Tensor(v) for v in (x, np.full_like(delta, 1e-300), A, B, C, D))).data
    assert np.allclose(y, D * x)


@pytest.mark.parametrize("t", [1, 5, 32, 33, 100])
@pytest.mark.parametrize("chunk", [1, 4, 32])
def test_chunked_scan_matches_sequential(t, chunk):
    rng = np.random.default_rng(t * 100 + chunk)
    a = rng.uniform(0.0, 1.0, size=(2, t, 3, 2))
    u = rng.normal(size=(2, t, 3, 2))
    assert np.allclose(scan_chunked(a, u, chunk), scan_sequential(a, u), atol=1e-12)


@given(st.integers(1, 70), st.integers(1, 40), st.integers(0, 10 ** 6))
def test_chunked_scan_property(t, chunk, seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 1.0, size=(1, t, 2, 2))
    u = rng.normal(size=(1, t, 2, 2))
    assert np.allclose(scan_chunked(a, u, chunk), scan_sequential(a, u), atol=1e-10)


def test_fused_scan_matches_reference_float32():
    rng = np.random.default_rng(1)
    args = random_scan_inputs(rng, 2, 64, 4, 3, np.float32)
    y = selective_scan(*(Tensor(v) for v in args), chunk=16).data
    assert np.abs(y - selective_scan_reference(*args)).max() <= 1e-5


def test_scan_gradient():
    rng = np.random.default_rng(2)
    with precision(np.float64):
        ts = [Tensor(v, requires_grad=True) for v in random_scan_inputs(rng, 2, 9, 3, 2)]
        w = Tensor(rng.normal(size=(2, 9, 3)))
        assert gradient_check(lambda: T.sum_(selective_scan(*ts, chunk=4) * w), ts) <= 1e-5


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_scan_reports_bad_timestep():
    rng = np.random.default_rng(3)
    x, delta, A, B, C, D = random_scan_inputs(rng, 1, 6, 2, 2)
    x[0, 4, 0] = np.inf
    with pytest.raises(FloatingPointError, match="timestep 4"):
        selective_scan(*(Tensor(v) for v in (x, delta, A, B, C, D)))


def test_long_sequence_stays_finite():
    rng = np.random.default_rng(4)
    x, delta, A, B, C, D = random_scan_inputs(rng, 1, 10_000, 2, 2)
    x = np.clip(x * 5, -10, 10)
    y = selective_scan(*(Tensor(v) for v in (x, delta, A, B, C, D)), chunk=64).data
    assert np.all(np.isfinite(y))


def make_block(seed=0, d=8):
    return MambaBlock(d, 4, 3, 2, np.random.default_rng(seed), chunk=4)


def test_block_gradient_float64():
    rng = np.random.default_rng(5)
    with precision(np.float64):
        blk = make_block()
        x = Tensor(rng.normal(size=(2, 6, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 6, 8)))
        assert gradient_check(lambda: T.sum_(blk(x) * w), [x] + blk.parameters()) <= 1e-5


def test_block_is_causal():
    rng = np.random.default_rng(6)
    blk = make_block(1)
    x = rng.normal(size=(1, 10, 8)).astype(np.float32)
    y1 = blk(Tensor(x)).data
    x2 = x.copy()
    x2[0, 6:] += rng.normal(size=(4, 8)).astype(np.float32)
    y2 = blk(Tensor(x2)).data
    assert np.array_equal(y1[0, :6], y2[0, :6])


def test_block_prefix_consistency():
    rng = np.random.default_rng(7)
    blk = make_block(2)
    x = rng.normal(size=(1, 8, 8))
    with precision(np.float64):
        assert np.allclose(blk(Tensor(x[:, :1])).data[0, 0], blk(Tensor(x)).data[0, 0], atol=1e-12)


def test_block_with_zero_out_projection_is_identity():
    blk = make_block(3)
    blk.out_proj.weight.data[:] = 0.0
    x = np.random.default_rng(8).normal(size=(1, 5, 8)).astype(np.float32)
    assert np.array_equal(blk(Tensor(x)).data, x)


def test_compressor_counts_and_history(tiny_compressor):
    same = [5, 9, 11]
    mems = tiny_compressor.compress([same, same, same])
    assert len(mems) == 3
    assert not np.allclose(mems[1].vector, mems[0].vector)
    assert not np.allclose(mems[2].vector, mems[0].vector)
    assert tiny_compressor.compress([]) == []
    assert len(tiny_compressor.compress([[7]])) == 1


def test_compressor_rejects_bad_utterances(tiny_compressor):
    with pytest.raises(ValueError, match="utterance 1"):
        tiny_compressor.compress([[5], []])
    with pytest.raises(ValueError, match="utterance 0"):
        tiny_compressor.compress([[5] * 200])


def test_compressor_prefix_memories_match(tiny_compressor):
    utts = [[5, 6], [7, 8, 9], [10]]
    full = tiny_compressor.compress(utts)
    part = tiny_compressor.compress(utts[:2])
    assert np.allclose(full[1].vector, part[1].vector, atol=1e-6)


@given(st.lists(st.lists(st.integers(20, 60), min_size=1, max_size=6), min_size=1, max_size=6))
def test_memory_count_equals_utterance_count(utts):
    comp = Compressor(CompressorConfig(64, 3, 0, d_model=8, d_state=2, n_layers=1, d_mem=8, seed=0))
    assert len(comp.compress(utts)) == len(utts)


def test_batched_compression_matches_single(tiny_compressor):
    convs = [[[5, 6], [7]], [[8, 9, 10], [11], [12, 13]]]
    mem, counts = tiny_compressor.compress_batch(convs)
    assert counts == [2, 3]
    single = np.concatenate([np.stack([m.vector for m in tiny_compressor.compress(c)]) for c in convs])
    assert np.allclose(mem.data, single, atol=1e-5)
