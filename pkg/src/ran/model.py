"""The full residual attention network: two branches, a fusion, a softmax head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import encoder as enc
from . import resnet
from . import tensor as tn
from ._init import glorot, param
from .errors import ContractError
from .tensor import Parameter, Tensor

FUSIONS = ("concat", "gated_highway")


@dataclass(frozen=True)
class RanConfig:
    encoder: enc.EncoderConfig = field(default_factory=enc.EncoderConfig)
    branch: resnet.BranchConfig = field(default_factory=resnet.BranchConfig)
    num_classes: int = 2
    fusion: str = "concat"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ContractError(f"need at least 2 classes, got {self.num_classes}")
        if self.fusion not in FUSIONS:
            raise ContractError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")

    @property
    def fusion_width(self) -> int:
        d, c = self.encoder.d, self.branch.out_channels
        return d + c if self.fusion == "concat" else max(d, c)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["branch"]["feature_maps"] = list(self.branch.feature_maps)
        out["branch"]["kernel_widths"] = list(self.branch.kernel_widths)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "RanConfig":
        b = dict(d.get("branch", {}))
        for key in ("feature_maps", "kernel_widths"):
            if b.get(key) is not None:
                b[key] = tuple(b[key])
        return cls(
            encoder=enc.EncoderConfig(**d.get("encoder", {})),
            branch=resnet.BranchConfig(**b),
            num_classes=d.get("num_classes", 2),
            fusion=d.get("fusion", "concat"),
        )


def init_params(config: RanConfig, rng: np.random.Generator | int) -> dict[str, Parameter]:
    """Glorot-uniform weights, zero biases, unit norm gains.

    Draw order is fixed (encoder, branch, fusion, classifier), so a seed fully
    determines the parameters.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    p = enc.init_params(config.encoder, rng)
    p.update(resnet.init_params(config.branch, rng))
    d, c, w = config.encoder.d, config.branch.out_channels, config.fusion_width
    extra = {}
    if config.fusion == "gated_highway":
        extra["fusion.wu"] = glorot(rng, (d, w), d, w)
        extra["fusion.bu"] = np.zeros(w)
        extra["fusion.wv"] = glorot(rng, (c, w), c, w)
        extra["fusion.bv"] = np.zeros(w)
        extra["fusion.wg"] = glorot(rng, (d + c, w), d + c, w)
        extra["fusion.bg"] = np.zeros(w)
    extra["classifier.w"] = glorot(rng, (w, config.num_classes), w, config.num_classes)
    extra["classifier.b"] = np.zeros(config.num_classes)
    p.update({name: param(name, arr) for name, arr in extra.items()})
    return p


def param_count(config: RanConfig) -> int:
    d, c, w, n = config.encoder.d, config.branch.out_channels, config.fusion_width, config.num_classes
    fusion = 0 if config.fusion == "concat" else (d * w + w) + (c * w + w) + ((d + c) * w + w)
    return enc.param_count(config.encoder) + resnet.param_count(config.branch) + fusion + w * n + n


def values(params: Mapping[str, Parameter | Tensor]) -> dict[str, Tensor]:
    """Name -> tensor view of a parameter mapping."""
    return {k: (v.value if isinstance(v, Parameter) else v) for k, v in params.items()}


def fuse(u: Tensor, v: Tensor, config: RanConfig, p: Mapping[str, Tensor]) -> Tensor:
    """Combine the pooled encoder features ``u`` with the branch features ``v``.

    ``gated_highway``: ``g * u' + (1 - g) * v'`` with both inputs projected
    to a common width and ``g = sigmoid(W_g [u; v] + b_g)``.
    """
    if config.fusion == "concat":
        return tn.concat_features(u, v)
    u2 = tn.add_bias(tn.matmul(u, p["fusion.wu"]), p["fusion.bu"])
    v2 = tn.add_bias(tn.matmul(v, p["fusion.wv"]), p["fusion.bv"])
    gate = tn.sigmoid(tn.add_bias(tn.matmul(tn.concat_features(u, v), p["fusion.wg"]), p["fusion.bg"]))
    return tn.add(v2, tn.mul(gate, tn.sub(u2, v2)))


def forward_logits(series, config: RanConfig, params: Mapping) -> Tensor:
    p = values(params)
    x = series if isinstance(series, Tensor) else Tensor(series)
    h = enc.encode(x, config.encoder, p)
    u = tn.mean(h, axis=0)
    v = resnet.branch_forward(x, config.branch, p)
    fused = fuse(u, v, config, p)
    return tn.add_bias(tn.matmul(fused, p["classifier.w"]), p["classifier.b"])


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def predict(series, config: RanConfig, params: Mapping) -> np.ndarray:
    """Class probabilities for one series; ``argmax`` is the predicted class."""
    return softmax(forward_logits(series, config, params))
