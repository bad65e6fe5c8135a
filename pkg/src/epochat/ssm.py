"""Selective state-space blocks and the conversation compressor built from them.

The recurrence per channel d and state slot n is

    h[t] = exp(delta[t] * A) * h[t-1] + delta[t] * B[t] * x[t]
    y[t] = <C[t], h[t]> + D * x[t]

with A = -exp(log_A) < 0, so every decay factor lies in (0, 1).  ``selective_scan``
is one fused tape op: its forward uses a chunked scan (all chunks advance
together, then a carry pass links them; linear total work) and its backward runs the
adjoint recurrence through the same chunked scan in reverse time.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import (
    Linear,
    Module,
    Parameter,
    Tensor,
    _wrap,
    causal_conv1d,
    embedding,
    exp,
    gather_rows,
    rms_norm,
    silu,
    softplus,
)


def discretize(delta: np.ndarray, log_a: np.ndarray, b: np.ndarray):
    """Turn (delta, log_A, B) into per-step decay and input gains.

    delta: [..., Di] (positive), log_a: [Di, N], b: [..., N]
    returns a_bar = exp(delta * A) with A = -exp(log_a), and b_bar = delta * B,
    both shaped [..., Di, N].
    """
    delta = np.asarray(delta)
    A = -np.exp(np.asarray(log_a))
    b = np.asarray(b)
    a_bar = np.exp(delta[..., :, None] * A)
    b_bar = delta[..., :, None] * b[..., None, :]
    return a_bar, b_bar


def scan_sequential(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """h[t] = a[t] * h[t-1] + u[t] along axis 1, one step at a time (reference)."""
    h = np.empty_like(u)
    state = np.zeros_like(u[:, 0])
    for t in range(u.shape[1]):
        state = a[:, t] * state + u[:, t]
        h[:, t] = state
    return h


def scan_chunked(a: np.ndarray, u: np.ndarray, chunk: int = 32) -> np.ndarray:
    """Same recurrence as scan_sequential, computed chunk-parallel.

    Time is cut into chunks of ``chunk`` steps.  One sequential sweep over the
    in-chunk offset advances every chunk at once from a zero state, tracking the
    running product of decays; a second sweep over chunks folds in the state
    carried from the previous chunk.  Python-level steps: chunk + T / chunk;
    arithmetic: linear in T.
    """
    B, T = u.shape[:2]
    rest = u.shape[2:]
    L = max(1, min(chunk, T))
    n_chunks = -(-T // L)
    pad = n_chunks * L - T
    if pad:
        a = np.concatenate([a, np.ones((B, pad) + rest, dtype=a.dtype)], axis=1)
        u = np.concatenate([u, np.zeros((B, pad) + rest, dtype=u.dtype)], axis=1)
    a4 = a.reshape((B, n_chunks, L) + rest)
    h = u.reshape((B, n_chunks, L) + rest).copy()
    prod = None
    if n_chunks > 1:
        prod = np.empty_like(a4)
        prod[:, :, 0] = a4[:, :, 0]
    tmp = np.empty_like(h[:, :, 0])
    for t in range(1, L):
        np.multiply(a4[:, :, t], h[:, :, t - 1], out=tmp)
        h[:, :, t] += tmp
        if prod is not None:
            np.multiply(a4[:, :, t], prod[:, :, t - 1], out=prod[:, :, t])
    for c in range(1, n_chunks):
        h[:, c] += prod[:, c] * h[:, c - 1, -1][:, None]
    return h.reshape((B, n_chunks * L) + rest)[:, :T]


def _first_bad_step(arr: np.ndarray) -> int | None:
    bad = ~np.isfinite(arr)
    if not bad.any():
        return None
    per_t = bad.reshape(bad.shape[0], bad.shape[1], -1).any(axis=(0, 2))
    return int(np.argmax(per_t))


def selective_scan_reference(x, delta, A, B, C, D):
    """Plain sequential selective scan on numpy arrays (oracle for the fused op).

    x, delta: [Bt, T, Di]; A: [Di, N] (negative); B, C: [Bt, T, N]; D: [Di].
    """
    a_bar = np.exp(delta[..., None] * A)
    u = delta[..., None] * B[:, :, None, :] * x[..., None]
    h = np.zeros(x.shape[:1] + A.shape, dtype=x.dtype)
    ys = np.empty_like(x)
    for t in range(x.shape[1]):
        h = a_bar[:, t] * h + u[:, t]
        ys[:, t] = np.einsum("bdn,bn->bd", h, C[:, t])
    return ys + D * x


def selective_scan(x: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor, D: Tensor,
                   chunk: int = 32) -> Tensor:
    """Differentiable selective scan; see module docstring for the recurrence."""
    Bt, T, Di = x.shape
    N = A.shape[1]
    if delta.shape != x.shape or A.shape != (Di, N) or B.shape != (Bt, T, N) or C.shape != (Bt, T, N):
        raise ValueError(
            f"selective_scan: shapes x={x.shape} delta={delta.shape} A={A.shape} B={B.shape} C={C.shape}")
    xd, dd, Ad, Bd, Cd, Dd = x.data, delta.data, A.data, B.data, C.data, D.data
    a = dd[..., None] * Ad
    np.exp(a, out=a)
    u = (dd * xd)[..., None] * Bd[:, :, None, :]
    h = scan_chunked(a, u, chunk)
    del u
    y = (h @ Cd[..., None])[..., 0] + Dd * xd
    if not np.all(np.isfinite(y)):
        bad = _first_bad_step(h)
        raise FloatingPointError(f"selective_scan: non-finite state at timestep {bad if bad is not None else 0}")

    def backward(gy):
        gC = (gy[:, :, None, :] @ h)[:, :, 0, :]
        gD = (gy * xd).sum(axis=(0, 1))
        # adjoint recurrence G[t] = gy[t] C[t] + a[t+1] * G[t+1], run in reverse time
        a_next = np.empty_like(a)
        a_next[:, :-1] = a[:, 1:]
        a_next[:, -1] = 0.0
        G = scan_chunked(a_next[:, ::-1], (gy[..., None] * Cd[:, :, None, :])[:, ::-1], chunk)[:, ::-1]
        del a_next
        g_dA = np.empty_like(G)
        g_dA[:, 0] = 0.0
        np.multiply(G[:, 1:], h[:, :-1], out=g_dA[:, 1:])
        g_dA *= a
        GB = (G @ Bd[..., None])[..., 0]
        gx = gy * Dd + GB * dd
        gdelta = GB * xd + (g_dA * Ad).sum(axis=-1)
        gA = np.einsum("btdn,btd->dn", g_dA, dd)
        gB = ((dd * xd)[:, :, None, :] @ G)[:, :, 0, :]
        return gx, gdelta, gA, gB, gC, gD

    return _wrap(y, (x, delta, A, B, C, D), backward)


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class MambaBlock(Module):
    """Pre-norm residual block: norm -> in-proj -> causal conv -> SiLU -> scan -> gate -> out-proj."""

    def __init__(self, d_model: int, d_state: int, d_conv: int, expand: int, rng: np.random.Generator,
                 chunk: int = 32):
        self.d_model = d_model
        self.d_state = d_state
        self.d_inner = expand * d_model
        self.dt_rank = math.ceil(d_model / 16)
        self.chunk = chunk
        di = self.d_inner
        self.norm = Parameter(np.ones(d_model))
        self.in_proj = Linear(d_model, 2 * di, rng, bias=False)
        self.conv_weight = Parameter(rng.uniform(-1, 1, size=(di, d_conv)) / math.sqrt(d_conv))
        self.conv_bias = Parameter(np.zeros(di))
        self.x_proj = Linear(di, self.dt_rank + 2 * d_state, rng, bias=False)
        self.dt_proj = Linear(self.dt_rank, di, rng, scale=self.dt_rank ** -0.5)
        dt = np.exp(rng.uniform(math.log(0.01), math.log(0.1), size=di))
        self.dt_proj.bias = Parameter(_inverse_softplus(dt))
        self.log_A = Parameter(np.log(np.tile(np.arange(1, d_state + 1, dtype=np.float64), (di, 1))))
        self.D = Parameter(np.ones(di))
        self.out_proj = Linear(di, d_model, rng, bias=False, scale=1.0 / math.sqrt(di * 2))

    def mixer(self, x: Tensor) -> Tensor:
        di, r, n = self.d_inner, self.dt_rank, self.d_state
        xz = self.in_proj(rms_norm(x, self.norm))
        xi = silu(causal_conv1d(xz[..., :di], self.conv_weight) + self.conv_bias)
        z = xz[..., di:]
        dbc = self.x_proj(xi)
        delta = softplus(self.dt_proj(dbc[..., :r]))
        A = -exp(self.log_A)
        y = selective_scan(xi, delta, A, dbc[..., r:r + n], dbc[..., r + n:], self.D, self.chunk)
        return self.out_proj(y * silu(z))

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.mixer(x)


@dataclass
class CompressorConfig:
    vocab_size: int
    mem_token_id: int
    pad_id: int = 0
    d_model: int = 128
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    n_layers: int = 4
    d_mem: int = 128
    max_seq_len: int = 128
    chunk: int = 32
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MemoryEmbedding:
    vector: np.ndarray
    utterance_index: int


class Compressor(Module):
    """Stacked selective-SSM blocks; the hidden state at each MEM marker is one memory."""

    def __init__(self, config: CompressorConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config
        self.embed = Parameter(rng.normal(0.0, 0.1, size=(c.vocab_size, c.d_model)))
        self.layers = [MambaBlock(c.d_model, c.d_state, c.d_conv, c.expand, rng, c.chunk)
                       for _ in range(c.n_layers)]
        self.final_norm = Parameter(np.ones(c.d_model))
        self.mem_proj = Linear(c.d_model, c.d_mem, rng)

    def hidden_states(self, ids: np.ndarray) -> Tensor:
        """Final-layer, post-norm hidden states for token ids [B, T]."""
        h = embedding(self.embed, ids)
        for layer in self.layers:
            h = layer(h)
        return rms_norm(h, self.final_norm)

    def layout(self, utterances: list) -> tuple[list, list]:
        """Token sequence ``u1 MEM u2 MEM ... uk MEM`` and the MEM positions.

        Each utterance is a token list, already including any speaker marker.
        """
        seq, positions = [], []
        for i, utt in enumerate(utterances):
            if len(utt) == 0:
                raise ValueError(f"utterance {i} is empty")
            if len(utt) + 1 > self.config.max_seq_len:
                raise ValueError(
                    f"utterance {i} has {len(utt)} tokens; the limit is {self.config.max_seq_len - 1}")
            if self.config.mem_token_id in utt:
                raise ValueError(f"utterance {i} contains the reserved MEM token")
            seq.extend(utt)
            seq.append(self.config.mem_token_id)
            positions.append(len(seq) - 1)
        return seq, positions

    def compress_batch(self, conversations: list) -> tuple[Tensor, list]:
        """Compress several conversations in one padded pass.

        ``conversations`` is a list of utterance-token-list lists.  Returns the
        memories as one [M, d_mem] tensor (conversation-major, utterance order)
        and the number of memories per conversation.
        """
        layouts = [self.layout(conv) for conv in conversations]
        counts = [len(pos) for _, pos in layouts]
        if sum(counts) == 0:
            return Tensor(np.zeros((0, self.config.d_mem), dtype=self.embed.dtype)), counts
        T = max(len(seq) for seq, _ in layouts)
        ids = np.full((len(layouts), T), self.config.pad_id, dtype=np.int64)
        bi, ti = [], []
        for b, (seq, pos) in enumerate(layouts):
            ids[b, :len(seq)] = seq
            bi.extend([b] * len(pos))
            ti.extend(pos)
        h = self.hidden_states(ids)
        return self.mem_proj(gather_rows(h, bi, ti)), counts

    def compress(self, utterances: list) -> list:
        """One MemoryEmbedding per utterance of a single conversation."""
        if not utterances:
            return []
        mem, _ = self.compress_batch([utterances])
        return [MemoryEmbedding(mem.data[i].copy(), i) for i in range(mem.shape[0])]
