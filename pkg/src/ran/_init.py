import numpy as np

from .tensor import Parameter, Tensor


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def param(name, arr) -> Parameter:
    return Parameter(name, Tensor(arr))
