"""Residual 1-D convolutional branch.

Each entry of ``feature_maps`` is one residual block of two "same"-padded
convolutions, each followed by a normalization. The default ``"instance"``
normalizes every channel over time (the single-sample analogue of batch
norm); ``"channel"`` normalizes across channels at every time step. Both
carry a learned per-channel gain and shift. The shortcut is the identity when the channel count is unchanged,
otherwise a bias-free 1x1 convolution. Sequence length never changes; the
branch ends with global average pooling over time.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tn
from ._init import glorot, param
from .errors import ContractError, ShapeError
from .tensor import Parameter, Tensor

PREFIX = "branch"
DEFAULT_KERNEL_WIDTHS = (8, 5, 3, 3)
NORMS = ("instance", "channel")


def default_kernel_widths(n_blocks: int) -> tuple[int, ...]:
    return tuple(DEFAULT_KERNEL_WIDTHS[:n_blocks]) + (3,) * max(0, n_blocks - len(DEFAULT_KERNEL_WIDTHS))


@dataclass(frozen=True)
class BranchConfig:
    feature_maps: tuple[int, ...] = (128, 128, 64, 64)
    kernel_widths: tuple[int, ...] | None = None
    eps: float = 1e-5
    norm: str = "instance"

    def __post_init__(self):
        if self.norm not in NORMS:
            raise ContractError(f"norm must be one of {NORMS}, got {self.norm!r}")
        fm = tuple(int(c) for c in self.feature_maps)
        object.__setattr__(self, "feature_maps", fm)
        if not fm or any(c < 1 for c in fm):
            raise ContractError(f"feature_maps must be non-empty and positive: {self.feature_maps}")
        kw = default_kernel_widths(len(fm)) if self.kernel_widths is None else tuple(int(w) for w in self.kernel_widths)
        if len(kw) != len(fm) or any(w < 1 for w in kw):
            raise ContractError(f"kernel_widths {kw} must be positive and match feature_maps {fm}")
        object.__setattr__(self, "kernel_widths", kw)

    @property
    def out_channels(self) -> int:
        return self.feature_maps[-1]

    def blocks(self):
        """Yield ``(index, c_in, c_out, width)`` per residual block."""
        c_in = 1
        for i, (c_out, w) in enumerate(zip(self.feature_maps, self.kernel_widths)):
            yield i, c_in, c_out, w
            c_in = c_out


def init_params(config: BranchConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    p = {}

    def add(name, arr):
        p[f"{PREFIX}.{name}"] = param(f"{PREFIX}.{name}", arr)

    # Under instance norm a conv bias is subtracted right back out, so it is omitted.
    biased = config.norm == "channel"
    for i, c_in, c_out, w in config.blocks():
        b = f"block{i}"
        add(f"{b}.conv1.w", glorot(rng, (c_out, c_in, w), c_in * w, c_out * w))
        if biased:
            add(f"{b}.conv1.b", np.zeros(c_out))
        add(f"{b}.norm1.gamma", np.ones(c_out))
        add(f"{b}.norm1.beta", np.zeros(c_out))
        add(f"{b}.conv2.w", glorot(rng, (c_out, c_out, w), c_out * w, c_out * w))
        if biased:
            add(f"{b}.conv2.b", np.zeros(c_out))
        add(f"{b}.norm2.gamma", np.ones(c_out))
        add(f"{b}.norm2.beta", np.zeros(c_out))
        if c_in != c_out:
            add(f"{b}.shortcut.w", glorot(rng, (c_out, c_in, 1), c_in, c_out))
    return p


def param_count(config: BranchConfig) -> int:
    total = 0
    bias = 1 if config.norm == "channel" else 0
    for _, c_in, c_out, w in config.blocks():
        total += c_out * c_in * w + bias * c_out + 2 * c_out
        total += c_out * c_out * w + bias * c_out + 2 * c_out
        if c_in != c_out:
            total += c_out * c_in
    return total


def _bias(p, conv: str) -> Tensor:
    b = p.get(f"{conv}.b")
    return b if b is not None else Tensor(np.zeros(p[f"{conv}.w"].shape[0]))


def _norm(x: Tensor, p, name: str, eps: float, kind: str) -> Tensor:
    if kind == "channel":
        return tn.layer_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"], eps=eps, axis=0)
    return tn.instance_norm(x, p[f"{name}.gamma"], p[f"{name}.beta"], eps=eps)


def residual_block(
    x: Tensor, p: Mapping[str, Tensor], index: int, eps: float = 1e-5, norm: str = "instance"
) -> Tensor:
    """``relu(F(x) + shortcut(x))`` with ``F = conv, norm, relu, conv, norm``."""
    b = f"{PREFIX}.block{index}"
    f = tn.conv1d(x, p[f"{b}.conv1.w"], _bias(p, f"{b}.conv1"))
    f = tn.relu(_norm(f, p, f"{b}.norm1", eps, norm))
    f = tn.conv1d(f, p[f"{b}.conv2.w"], _bias(p, f"{b}.conv2"))
    f = _norm(f, p, f"{b}.norm2", eps, norm)
    shortcut_w = p.get(f"{b}.shortcut.w")
    if shortcut_w is None:
        if f.shape != x.shape:
            raise ShapeError(f"block {index}: identity shortcut needs matching shapes, got {x.shape} -> {f.shape}")
        shortcut = x
    else:
        shortcut = tn.conv1d(x, shortcut_w, Tensor(np.zeros(shortcut_w.shape[0])))
    return tn.relu(tn.add(f, shortcut))


def branch_forward(series: Tensor, config: BranchConfig, p: Mapping[str, Tensor]) -> Tensor:
    """Length-m series to a ``[feature_maps[-1]]`` feature vector."""
    if series.data.ndim != 1 or series.shape[0] < 1:
        raise ShapeError(f"branch_forward expects a non-empty 1-D series, got {series.shape}")
    h = tn.reshape(series, (1, series.shape[0]))
    for i, *_ in config.blocks():
        h = residual_block(h, p, i, config.eps, config.norm)
    return tn.global_avg_pool(h)


def feature_maps_from_string(text: str | Sequence[int]) -> tuple[int, ...]:
    if not isinstance(text, str):
        return tuple(int(c) for c in text)
    return tuple(int(c) for c in text.replace("[", "").replace("]", "").split(",") if c.strip())
