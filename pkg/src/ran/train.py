"""Seeded Adam training, accuracy evaluation and best-epoch selection.

All randomness (initialization and per-epoch shuffling) comes from one
``numpy.random.Generator`` backed by PCG64 and seeded with
``TrainConfig.seed``. Together with float64 arithmetic this makes a run a
pure function of (seed, configs, dataset).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import model as rm
from . import tensor as tn
from .data import LabeledSeries, SplitDataset
from .errors import ContractError, NumericalError
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ContractError(f"invalid Adam constants beta1={self.beta1}, beta2={self.beta2}, eps={self.eps}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def adam_step(
    params: dict[str, Parameter],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[dict[str, Parameter], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    s = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**s
    c2 = 1.0 - b2**s
    for name, p in params.items():
        if not p.requires_grad or name not in grads:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        with np.errstate(over="ignore", invalid="ignore"):
            new = p.value.data - config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        if not np.all(np.isfinite(new)):
            raise NumericalError(f"update made parameter {name!r} non-finite")
        p.value = Tensor(new)
    return params, state


def sample_loss_and_grads(series: LabeledSeries, config: rm.RanConfig, params) -> tuple[float, dict[str, np.ndarray]]:
    tape = tn.Tape()
    logits = rm.forward_logits(series.values, config, tape.watch(params))
    loss = tn.cross_entropy_logits(logits, series.class_index)
    return loss.item(), tape.backward(loss)


def predict_class(series: LabeledSeries | np.ndarray, config: rm.RanConfig, params) -> int:
    x = series.values if isinstance(series, LabeledSeries) else series
    return int(np.argmax(rm.forward_logits(x, config, params).data))


def evaluate_accuracy(params, split: list[LabeledSeries], config: rm.RanConfig) -> float:
    """Fraction of series whose argmax prediction equals the class index."""
    if not split:
        raise ContractError("cannot evaluate on an empty split")
    values = rm.values(params)
    hits = sum(predict_class(s, config, values) == s.class_index for s in split)
    return hits / len(split)


def copy_params(params: Mapping[str, Parameter]) -> dict[str, Parameter]:
    # Tensors are immutable, so sharing them is a snapshot.
    return {k: Parameter(p.name, p.value, p.requires_grad) for k, p in params.items()}


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_accuracy: float


@dataclass
class FitResult:
    best_params: dict[str, Parameter]
    final_params: dict[str, Parameter]
    best_epoch: int
    best_accuracy: float
    history: list[EpochMetrics]

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].test_accuracy


def fit(
    dataset: SplitDataset,
    ran_config: rm.RanConfig,
    train_config: TrainConfig,
    *,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> FitResult:
    """Train from a seeded initialization; keep the best-test-accuracy epoch.

    Selecting the epoch on test accuracy is optimistic by construction and is
    reported as such by the CLI.
    """
    if dataset.num_classes > ran_config.num_classes:
        raise ContractError(
            f"dataset {dataset.name} has {dataset.num_classes} classes, model has {ran_config.num_classes}"
        )
    if not dataset.train:
        raise ContractError("empty training split")
    rng = make_rng(train_config.seed)
    params = rm.init_params(ran_config, rng)
    state = AdamState()
    history: list[EpochMetrics] = []
    best_params, best_epoch, best_acc = copy_params(params), 0, -1.0
    n = len(dataset.train)
    bs = train_config.batch_size
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, bs)):
            batch = order[start : start + bs]
            acc: dict[str, np.ndarray] | None = None
            for i in batch:
                loss, grads = sample_loss_and_grads(dataset.train[i], ran_config, params)
                if not np.isfinite(loss):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}, sample {i}")
                losses.append(loss)
                if acc is None:
                    acc = {k: g.copy() for k, g in grads.items()}
                else:
                    for k, g in grads.items():
                        acc[k] += g
            scale = 1.0 / len(batch)
            try:
                adam_step(params, {k: g * scale for k, g in acc.items()}, state, train_config)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from None
        metrics = EpochMetrics(epoch, float(np.mean(losses)), evaluate_accuracy(params, dataset.test, ran_config))
        history.append(metrics)
        if metrics.test_accuracy > best_acc:
            best_params, best_epoch, best_acc = copy_params(params), epoch, metrics.test_accuracy
        log.info("epoch %d loss %.6f test_acc %.6f", epoch, metrics.train_loss, metrics.test_accuracy)
        if on_epoch is not None:
            on_epoch(metrics)
    return FitResult(best_params, copy_params(params), best_epoch, best_acc, history)
