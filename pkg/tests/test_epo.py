import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epochat import tensor as T
from epochat.epo import EpoConfig, epo_loss, epo_objective, epo_reward, epo_step, margin_stats, preference_loss
from epochat.lm import DialogueLM, LmConfig, MixedInput, avg_logprobs
from epochat.tensor import Adam, Parameter, Tensor, gradient_check, precision
from oracles import brute_epo_loss, brute_reward


def tiny(seed=0, vocab=12):
    return DialogueLM(LmConfig(vocab, d_model=8, n_layers=1, n_heads=2, d_ff=8, max_seq_len=32, seed=seed))


def test_reward_hand_values():
    with precision(np.float64):
        lm = tiny()
        lm.final_norm.data[:] = 0.0
        lm.head.bias = Parameter(np.zeros(12))
        lm.head.bias.data[3] = 60.0
        prompt = MixedInput([("tokens", [1, 2])])
        assert epo_reward(lm, [prompt], [[3, 3]], 2.0).data[0] == pytest.approx(0.0, abs=1e-12)
        r1 = epo_reward(lm, [prompt], [[4]], 2.0).data[0]
        r2 = epo_reward(lm, [prompt], [[4]], 4.0).data[0]
        assert r2 == pytest.approx(2 * r1)


def test_loss_hand_values():
    with precision(np.float64):
        ln2 = preference_loss(Tensor([0.5]), Tensor([0.0]), 0.5).data[0]
        assert ln2 == pytest.approx(math.log(2), abs=1e-12)
        v = preference_loss(Tensor([2 * -0.1]), Tensor([2 * -1.0]), 0.5).data[0]
        assert v == pytest.approx(-math.log(1 / (1 + math.exp(-1.3))), abs=1e-12)
        assert v == pytest.approx(0.24101, abs=1e-5)
        assert preference_loss(Tensor([80.0]), Tensor([0.0]), 0.5).data[0] < 1e-30


@given(st.floats(-20, 20), st.floats(0.01, 5), st.floats(0, 2))
def test_loss_decreases_in_margin(m, step, gamma):
    with precision(np.float64):
        lo = preference_loss(Tensor([m]), Tensor([0.0]), gamma).data[0]
        hi = preference_loss(Tensor([m + step]), Tensor([0.0]), gamma).data[0]
    assert hi < lo and hi > 0


@given(st.floats(0.1, 10), st.floats(0, 3))
def test_zero_margin_is_ln2_for_any_beta(beta, gamma):
    with precision(np.float64):
        lm = tiny()
        prompt = MixedInput([("tokens", [1])])
        r = epo_reward(lm, [prompt], [[4]], beta)
        assert preference_loss(r + gamma, r, gamma).data[0] == pytest.approx(math.log(2), abs=1e-12)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        for case in range(10):
            lm = tiny(seed=case)
            prompt = MixedInput([("tokens", list(rng.integers(1, 12, size=3)))])
            ya = list(rng.integers(1, 12, size=int(rng.integers(1, 5))))
            yi = list(rng.integers(1, 12, size=int(rng.integers(1, 5))))
            if ya == yi:
                continue
            beta, gamma = float(rng.uniform(0.5, 3)), float(rng.uniform(0, 1))
            r = epo_reward(lm, [prompt, prompt], [ya, yi], beta).data
            assert r[0] == pytest.approx(brute_reward(lm, prompt, ya, beta), abs=1e-9)
            loss = epo_loss(lm, [prompt], [ya], [yi], beta, gamma).data[0]
            assert loss == pytest.approx(brute_epo_loss(r[0], r[1], gamma), abs=1e-9)


def test_identical_pair_rejected():
    with pytest.raises(ValueError):
        epo_loss(tiny(), [MixedInput([("tokens", [1])])], [[3]], [[3]], 2.0, 0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        EpoConfig(beta=0)
    with pytest.raises(ValueError):
        EpoConfig(gamma=-1)
    with pytest.raises(ValueError):
        EpoConfig(batch_size=0)


def test_lambda_zero_is_pure_preference_loss():
    lm = tiny()
    p = MixedInput([("tokens", [1, 2])])
    total, m = epo_objective(lm, [p, p], [[3, 4], [5]], [[6], [7, 8]], EpoConfig(lambda_ar=0.0))
    pref = epo_loss(lm, [p, p], [[3, 4], [5]], [[6], [7, 8]], 2.0, 0.5).mean()
    assert total.item() == pytest.approx(pref.item(), abs=1e-6)
    assert m.epo_loss == pytest.approx(m.loss, abs=1e-6)


def test_objective_gradient_on_two_pairs():
    with precision(np.float64):
        lm = tiny(seed=4)
        p1, p2 = MixedInput([("tokens", [1, 2])]), MixedInput([("tokens", [5])])
        cfg = EpoConfig()
        fn = lambda: epo_objective(lm, [p1, p2], [[3, 4], [6]], [[7], [8, 9]], cfg)[0]
        assert gradient_check(fn, lm.parameters()) <= 1e-5


def test_one_step_decreases_convex_one_parameter_loss():
    # a 1-parameter "model": logits = [w, 0]; y_a = token 0, y_i = token 1
    class OneParam:
        def __init__(self):
            self.w = Parameter(np.array([0.0]))

    m = OneParam()

    def loss():
        z = T.concat([m.w, Tensor([0.0])])
        lp = T.log_softmax(z)
        r_a, r_i = lp[0:1] * 2.0, lp[1:2] * 2.0
        return T.mean(T.sub(T.mul(Tensor([0.0]), r_a), T.log_sigmoid(r_a - r_i - 0.5)))

    before = loss().item()
    opt = Adam([m.w], lr=0.05)
    loss().backward()
    opt.step()
    assert loss().item() < before


def test_step_reports_metrics_and_moves_margin():
    lm = tiny(seed=2)
    p = MixedInput([("tokens", [1, 2])])
    ya, yi = [[3, 4]] * 4, [[5, 6]] * 4
    cfg = EpoConfig(lr=1e-2)
    opt = Adam(lm, lr=cfg.lr)
    start = margin_stats(lm, [p] * 4, ya, yi, cfg)
    for _ in range(10):
        m = epo_step(lm, opt, [p] * 4, ya, yi, cfg)
    end = margin_stats(lm, [p] * 4, ya, yi, cfg)
    assert end["margin"] > start["margin"]
    assert set(m.to_dict()) == {"loss", "epo_loss", "ar_loss", "margin", "frac_above_gamma"}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_before_update():
    lm = tiny()
    lm.head.weight.data[:] = np.nan
    before = {k: v.copy() for k, v in lm.state_dict().items()}
    p = MixedInput([("tokens", [1])])
    with pytest.raises(FloatingPointError):
        epo_step(lm, Adam(lm), [p], [[3]], [[4]], EpoConfig())
    for k, v in lm.state_dict().items():
        assert np.array_equal(v, before[k], equal_nan=True)
