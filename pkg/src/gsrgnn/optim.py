"""SGD (with optional momentum) and bias-corrected Adam, updating arrays in place."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError


class Optimizer:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        if lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {lr}")
        self.lr = lr
        self.weight_decay = weight_decay
        self.state: dict[str, dict] = {}

    def _grad(self, param, grad):
        if param.shape != grad.shape:
            raise ShapeError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
        if self.weight_decay:
            return grad + self.weight_decay * param
        return grad

    def update(self, key: str, param: np.ndarray, grad: np.ndarray) -> None:
        raise NotImplementedError


class Sgd(Optimizer):
    def __init__(self, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        super().__init__(lr, weight_decay)
        self.momentum = momentum

    def update(self, key, param, grad):
        grad = self._grad(param, grad)
        if self.momentum:
            buf = self.state.setdefault(key, {"v": np.zeros_like(param)})["v"]
            buf *= self.momentum
            buf += grad
            grad = buf
        param -= (self.lr * grad).astype(param.dtype, copy=False)


class Adam(Optimizer):
    def __init__(self, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(lr, weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = eps

    def update(self, key, param, grad):
        grad = self._grad(param, grad)
        st = self.state.get(key)
        if st is None:
            st = self.state[key] = {"m": np.zeros_like(param), "v": np.zeros_like(param), "t": 0}
        st["t"] += 1
        m, v, t = st["m"], st["v"], st["t"]
        m *= self.beta1
        m += (1 - self.beta1) * grad
        v *= self.beta2
        v += (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        param -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(param.dtype, copy=False)


def make_optimizer(name: str, lr: float, betas=(0.9, 0.999), weight_decay: float = 0.0,
                   momentum: float = 0.0) -> Optimizer:
    if name == "adam":
        return Adam(lr, tuple(betas), weight_decay=weight_decay)
    if name == "sgd":
        return Sgd(lr, momentum, weight_decay)
    raise ConfigError(f"unknown optimizer {name!r}")
