"""Finite-difference verification of every backward rule and of the composed model."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import encoder as enc
from . import model as rm
from . import resnet
from . import tensor as tn
from .tensor import Parameter, Tensor

THRESHOLD = 1e-4
STEP = 1e-5


def toy_config(T: int = 1, fusion: str = "concat") -> rm.RanConfig:
    """m=16 inputs, d=8, k=2, feature maps [4, 4], two classes."""
    return rm.RanConfig(
        encoder=enc.EncoderConfig(d=8, k=2, T=T),
        branch=resnet.BranchConfig(feature_maps=(4, 4)),
        num_classes=2,
        fusion=fusion,
    )


def _primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, dict]]:
    def r(*shape):
        return rng.standard_normal(shape)

    cases = {
        "matmul": (lambda p: tn.matmul(p["a"], p["b"]), {"a": r(3, 4), "b": r(4, 2)}),
        "matmul_vec": (lambda p: tn.matmul(p["a"], p["b"]), {"a": r(4), "b": r(4, 3)}),
        "add": (lambda p: tn.add(p["a"], p["b"]), {"a": r(3, 2), "b": r(3, 2)}),
        "sub": (lambda p: tn.sub(p["a"], p["b"]), {"a": r(3, 2), "b": r(3, 2)}),
        "mul": (lambda p: tn.mul(p["a"], p["b"]), {"a": r(3, 2), "b": r(3, 2)}),
        "scale": (lambda p: tn.scale(p["a"], -1.7), {"a": r(4)}),
        "add_bias": (lambda p: tn.add_bias(p["a"], p["b"]), {"a": r(3, 4), "b": r(4)}),
        "relu": (lambda p: tn.relu(p["a"]), {"a": r(5, 3)}),
        "sigmoid": (lambda p: tn.sigmoid(p["a"]), {"a": 3 * r(6)}),
        "transpose": (lambda p: tn.transpose(p["a"]), {"a": r(2, 5)}),
        "reshape": (lambda p: tn.reshape(p["a"], (6,)), {"a": r(2, 3)}),
        "concat": (lambda p: tn.concat([p["a"], p["b"]], axis=1), {"a": r(3, 2), "b": r(3, 1)}),
        "softmax_rows": (lambda p: tn.softmax_rows(p["a"]), {"a": r(3, 5)}),
        "layer_norm": (
            lambda p: tn.layer_norm(p["x"], p["g"], p["b"]),
            {"x": r(4, 6), "g": 1 + 0.1 * r(6), "b": r(6)},
        ),
        "layer_norm_axis0": (
            lambda p: tn.layer_norm(p["x"], p["g"], p["b"], axis=0),
            {"x": r(5, 7), "g": 1 + 0.1 * r(5), "b": r(5)},
        ),
        "instance_norm": (
            lambda p: tn.instance_norm(p["x"], p["g"], p["b"]),
            {"x": r(3, 8), "g": 1 + 0.1 * r(3), "b": r(3)},
        ),
        "conv1d": (
            lambda p: tn.conv1d(p["x"], p["k"], p["b"]),
            {"x": r(3, 9), "k": r(2, 3, 4), "b": r(2)},
        ),
        "mean": (lambda p: tn.mean(p["a"], axis=0), {"a": r(4, 3)}),
        "global_avg_pool": (lambda p: tn.global_avg_pool(p["a"]), {"a": r(3, 6)}),
        "reduce_sum": (lambda p: tn.reduce_sum(p["a"]), {"a": r(3, 3)}),
        "take": (lambda p: tn.take(p["a"], 2), {"a": r(5)}),
        "cross_entropy_logits": (lambda p: tn.cross_entropy_logits(p["a"], 1), {"a": r(4)}),
    }
    return cases


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    """Reduce an op output to a scalar with fixed random weights."""
    if out.data.ndim == 0:
        return out
    return tn.reduce_sum(tn.mul(out, Tensor(weights)))


def check_primitives(seed: int = 0, h: float = STEP) -> dict[str, float]:
    rng = np.random.Generator(np.random.PCG64(seed))
    results = {}
    for name, (op, inputs) in _primitive_cases(rng).items():
        params = {k: Parameter(k, Tensor(v)) for k, v in inputs.items()}
        shape = op({k: p.value for k, p in params.items()}).shape
        w = rng.standard_normal(shape)
        errs = tn.grad_check_params(lambda p, op=op, w=w: _project(op(p), w), params, h)
        results[name] = max(errs.values())
    return results


def _series(rng, m=16):
    return rng.standard_normal(m)


def check_modules(seed: int = 0, h: float = STEP) -> dict[str, float]:
    rng = np.random.Generator(np.random.PCG64(seed))
    results = {}
    x = _series(rng)

    cfg = toy_config(T=2)
    params = rm.init_params(cfg, rng)
    enc_params = {k: v for k, v in params.items() if k.startswith(enc.PREFIX + ".")}
    w = rng.standard_normal((16, cfg.encoder.d))
    errs = tn.grad_check_params(lambda p: _project(enc.encode(Tensor(x), cfg.encoder, p), w), enc_params, h)
    results["attention_encoder"] = max(errs.values())

    br_params = {k: v for k, v in params.items() if k.startswith(resnet.PREFIX + ".")}
    w = rng.standard_normal(cfg.branch.out_channels)
    errs = tn.grad_check_params(lambda p: _project(resnet.branch_forward(Tensor(x), cfg.branch, p), w), br_params, h)
    results["resnet_branch"] = max(errs.values())

    for T in (1, 2):
        for fusion in rm.FUSIONS:
            cfg = toy_config(T=T, fusion=fusion)
            params = rm.init_params(cfg, rng)
            label = int(rng.integers(cfg.num_classes))
            errs = tn.grad_check_params(
                lambda p: tn.cross_entropy_logits(rm.forward_logits(x, cfg, p), label), params, h
            )
            results[f"ran_model[T={T},{fusion}]"] = max(errs.values())
    return results


def run_suite(seed: int = 0, h: float = STEP) -> dict[str, float]:
    """Max relative error per primitive and per composed module."""
    out = check_primitives(seed, h)
    out.update(check_modules(seed, h))
    return out
