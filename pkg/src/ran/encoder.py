"""Weight-tied transformer encoder branch.

One refinement step (self-attention then a position-wise transition, each
wrapped in a residual connection and layer normalization) is applied ``T``
times with the same parameters. Each application adds a fixed sinusoidal
embedding that encodes both the sequence position and the step index.

Parameters are looked up by name in a mapping, so the same functions serve
inference (plain tensors) and training (tensors watched by a tape).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from . import tensor as tn
from ._init import glorot, param
from .errors import ContractError, ShapeError
from .tensor import Parameter, Tensor

PREFIX = "encoder"


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    k: int = 8
    T: int = 1
    ffn_hidden: int | None = None  # defaults to 2 * d

    def __post_init__(self):
        if self.d < 1 or self.k < 1 or self.T < 1:
            raise ContractError(f"d, k and T must be positive: {self}")
        if self.d % self.k:
            raise ContractError(f"model width d={self.d} is not divisible by k={self.k} heads")
        if self.ffn_hidden is not None and self.ffn_hidden < 1:
            raise ContractError(f"ffn_hidden must be positive: {self.ffn_hidden}")

    @property
    def head_width(self) -> int:
        return self.d // self.k

    @property
    def ffn_width(self) -> int:
        return self.ffn_hidden if self.ffn_hidden is not None else 2 * self.d


def init_params(config: EncoderConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    d, f, dh = config.d, config.ffn_width, config.head_width
    p = {}

    def add(name, arr):
        p[f"{PREFIX}.{name}"] = param(f"{PREFIX}.{name}", arr)

    add("input.w", glorot(rng, (1, d), 1, d))
    add("input.b", np.zeros(d))
    for i in range(config.k):
        for which in ("wq", "wk", "wv"):
            add(f"head{i}.{which}", glorot(rng, (d, dh), d, dh))
    add("wo", glorot(rng, (d, d), d, d))
    add("ffn.w1", glorot(rng, (d, f), d, f))
    add("ffn.b1", np.zeros(f))
    add("ffn.w2", glorot(rng, (f, d), f, d))
    add("ffn.b2", np.zeros(d))
    for norm in ("norm1", "norm2"):
        add(f"{norm}.gamma", np.ones(d))
        add(f"{norm}.beta", np.zeros(d))
    return p


def param_count(config: EncoderConfig) -> int:
    """Closed-form parameter count; independent of ``T`` because steps share weights."""
    d, f = config.d, config.ffn_width
    input_proj = 2 * d
    qkv = 3 * config.k * d * config.head_width
    out_proj = d * d
    transition = d * f + f + f * d + d
    norms = 4 * d
    return input_proj + qkv + out_proj + transition + norms


@lru_cache(maxsize=64)
def _embedding(m: int, d: int, t: int) -> np.ndarray:
    cols = np.arange(d)
    # even column 2j and odd column 2j+1 share the frequency 10000^(2j/d)
    denom = 10000.0 ** ((cols - cols % 2) / d)
    pos = np.arange(1, m + 1)[:, None] / denom
    step = t / denom
    out = np.where(cols % 2 == 0, np.sin(pos) + np.sin(step), np.cos(pos) + np.cos(step))
    out.flags.writeable = False
    return out


def position_time_embedding(m: int, d: int, t: int) -> Tensor:
    """Fixed ``[m x d]`` embedding for positions ``1..m`` at refinement step ``t``."""
    if m < 1 or d < 1 or t < 1:
        raise ContractError(f"position_time_embedding needs m, d, t >= 1, got {m}, {d}, {t}")
    return Tensor(_embedding(m, d, t))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if not (q.shape == k.shape == v.shape) or len(q.shape) != 2:
        raise ShapeError(f"attention: Q {q.shape}, K {k.shape}, V {v.shape} must share one [m x d_h] shape")
    scores = tn.scale(tn.matmul(q, tn.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return tn.matmul(tn.softmax_rows(scores), v)


def multi_head_self_attention(h: Tensor, p: Mapping[str, Tensor], k: int) -> Tensor:
    heads = [
        scaled_dot_attention(
            tn.matmul(h, p[f"{PREFIX}.head{i}.wq"]),
            tn.matmul(h, p[f"{PREFIX}.head{i}.wk"]),
            tn.matmul(h, p[f"{PREFIX}.head{i}.wv"]),
        )
        for i in range(k)
    ]
    cat = heads[0] if k == 1 else tn.concat(heads, axis=1)
    return tn.matmul(cat, p[f"{PREFIX}.wo"])


def transition(a: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Position-wise ``relu(A W1 + b1) W2 + b2``."""
    hidden = tn.relu(tn.add_bias(tn.matmul(a, p[f"{PREFIX}.ffn.w1"]), p[f"{PREFIX}.ffn.b1"]))
    return tn.add_bias(tn.matmul(hidden, p[f"{PREFIX}.ffn.w2"]), p[f"{PREFIX}.ffn.b2"])


def encoder_step(h_prev: Tensor, t: int, p: Mapping[str, Tensor], k: int) -> Tensor:
    m, d = h_prev.shape
    x = tn.add(h_prev, position_time_embedding(m, d, t))
    a = tn.layer_norm(
        tn.add(x, multi_head_self_attention(x, p, k)),
        p[f"{PREFIX}.norm1.gamma"],
        p[f"{PREFIX}.norm1.beta"],
    )
    return tn.layer_norm(
        tn.add(a, transition(a, p)),
        p[f"{PREFIX}.norm2.gamma"],
        p[f"{PREFIX}.norm2.beta"],
    )


def embed_input(series: Tensor, p: Mapping[str, Tensor]) -> Tensor:
    """Map each scalar of a length-m series to d features: ``[m] -> [m x d]``."""
    col = tn.reshape(series, (series.shape[0], 1))
    return tn.add_bias(tn.matmul(col, p[f"{PREFIX}.input.w"]), p[f"{PREFIX}.input.b"])


def encode(series: Tensor, config: EncoderConfig, p: Mapping[str, Tensor]) -> Tensor:
    if series.data.ndim != 1 or series.shape[0] < 1:
        raise ShapeError(f"encode expects a non-empty 1-D series, got {series.shape}")
    h = embed_input(series, p)
    for t in range(1, config.T + 1):
        h = encoder_step(h, t, p, config.k)
    return h
