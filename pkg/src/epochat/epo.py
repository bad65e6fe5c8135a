"""Emotional preference optimization.

Reward is the length-normalized sequence log-likelihood scaled by beta; the
loss asks the appropriate response's reward to beat the counter-emotional one's
by at least gamma:

    r(x, y) = beta / |y| * sum_i log p(y_i | x, y_<i)
    L = -log sigmoid(r(x, y_a) - r(x, y_i) - gamma)

No reference model is involved.  Training adds lambda_ar times the ordinary
autoregressive loss on y_a.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .lm import DialogueLM, avg_logprobs
from .tensor import Adam, Tensor, log_sigmoid, no_grad


@dataclass
class EpoConfig:
    beta: float = 2.0
    gamma: float = 0.5
    lambda_ar: float = 1.0
    lr: float = 1e-5
    steps: int = 0              # 0 means one pass over the preference set
    batch_size: int = 16
    seed: int = 0
    divergence_factor: float = 1.5
    eval_every: int = 25

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.lambda_ar < 0:
            raise ValueError("lambda_ar must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def epo_reward(lm: DialogueLM, inputs: list, ys: list, beta: float, vectors: Tensor | None = None) -> Tensor:
    """Per-example reward beta * mean token log-probability -> [B]."""
    return avg_logprobs(lm, inputs, ys, vectors) * beta


def preference_loss(r_a: Tensor, r_i: Tensor, gamma: float) -> Tensor:
    """Per-pair -log sigmoid(r_a - r_i - gamma)."""
    return -log_sigmoid(r_a - r_i - gamma)


def epo_loss(lm: DialogueLM, inputs: list, y_a: list, y_i: list, beta: float, gamma: float) -> Tensor:
    """Per-pair EPO losses [B] for contexts ``inputs`` (MixedInput list)."""
    for a, i in zip(y_a, y_i):
        if list(a) == list(i):
            raise ValueError("preferred and rejected responses are identical")
    r = epo_reward(lm, list(inputs) + list(inputs), list(y_a) + list(y_i), beta)
    n = len(y_a)
    return preference_loss(r[:n], r[n:], gamma)


@dataclass
class StepMetrics:
    loss: float
    epo_loss: float
    ar_loss: float
    margin: float
    frac_above_gamma: float

    def to_dict(self) -> dict:
        return asdict(self)


def epo_objective(lm: DialogueLM, inputs: list, y_a: list, y_i: list, config: EpoConfig):
    """Total loss tensor plus detached metrics for one batch of pairs."""
    if not inputs:
        raise ValueError("empty EPO batch")
    n = len(inputs)
    lp = avg_logprobs(lm, list(inputs) + list(inputs), list(y_a) + list(y_i))
    r = lp * config.beta
    r_a, r_i = r[:n], r[n:]
    pref = preference_loss(r_a, r_i, config.gamma).mean()
    ar = -lp[:n].mean()
    total = pref + ar * config.lambda_ar if config.lambda_ar else pref
    margin = r_a.data - r_i.data
    metrics = StepMetrics(float(total.data), float(pref.data), float(ar.data), float(margin.mean()),
                          float((margin > config.gamma).mean()))
    return total, metrics


def epo_step(lm: DialogueLM, optimizer: Adam, inputs: list, y_a: list, y_i: list,
             config: EpoConfig) -> StepMetrics:
    """One optimizer step on the combined objective.

    A non-finite loss raises FloatingPointError before any parameter changes.
    """
    total, metrics = epo_objective(lm, inputs, y_a, y_i, config)
    if not math.isfinite(metrics.loss):
        raise FloatingPointError(f"non-finite EPO loss {metrics.loss}; step aborted")
    total.backward()
    optimizer.step()
    return metrics


def margin_stats(lm: DialogueLM, inputs: list, y_a: list, y_i: list, config: EpoConfig,
                 batch_size: int = 64) -> dict:
    """Mean reward margin, fraction above gamma and AR loss over a probe set (no update)."""
    margins, ar = [], []
    with no_grad():
        for s in range(0, len(inputs), batch_size):
            sl = slice(s, s + batch_size)
            n = len(inputs[sl])
            lp = avg_logprobs(lm, inputs[sl] + inputs[sl], y_a[sl] + y_i[sl]).data
            margins.append(config.beta * (lp[:n] - lp[n:]))
            ar.append(-lp[:n])
    m = np.concatenate(margins)
    return {"margin": float(m.mean()), "frac_above_gamma": float((m > config.gamma).mean()),
            "ar_loss": float(np.concatenate(ar).mean())}
