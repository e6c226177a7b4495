"""Optimizers (AdamW, SGD met momentum), gradiënt-clipping en leersnelheidsschema's."""

import math
from typing import Callable, Dict, Optional

import numpy as np

from .autodiff import ParameterVector
from .errors import ConfigError, NumericError
from .logging_setup import get_logger

LRSchedule = Callable[[int], float]


def constant_schedule(lr: float) -> LRSchedule:
    """Vaste leersnelheid."""
    return lambda step: lr


def cosine_schedule(lr: float, total_steps: int, warmup_steps: int = 0) -> LRSchedule:
    """Lineaire warmup gevolgd door cosinus-afname naar 0 aan het einde."""
    total_steps = max(int(total_steps), 1)
    warmup_steps = max(int(warmup_steps), 0)

    def _lr(step: int) -> float:
        if warmup_steps and step < warmup_steps:
            return lr * (step + 1) / warmup_steps
        span = max(total_steps - warmup_steps, 1)
        progress = min(max(step - warmup_steps, 0) / span, 1.0)
        return lr * 0.5 * (1.0 + math.cos(math.pi * progress))

    return _lr


def clip_grad_norm(params: ParameterVector, max_norm: Optional[float]) -> float:
    """Schaal alle gradiënten zodat de globale norm hoogstens max_norm is; geeft de norm vóór clipping."""
    norm = params.global_grad_norm()
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for tensor in params.tensors():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * scale
    return norm


def _check_finite_gradients(params: ParameterVector) -> None:
    bad = [name for name, t in params.items() if t.grad is not None and not np.all(np.isfinite(t.grad))]
    if bad:
        raise NumericError(f"Niet-eindige gradiënt in {', '.join(bad)}; stap geweigerd")


def adamw_step(
    params: ParameterVector,
    state: Dict[str, object],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """Eén AdamW update met bias-gecorrigeerde momenten en ontkoppelde weight decay.

    state bevat 't' en per parameter de arrays 'm/<naam>' en 'v/<naam>'; wordt ter plekke bijgewerkt.
    """
    _check_finite_gradients(params)
    t = int(state.get("t", 0)) + 1
    state["t"] = t
    bias1 = 1.0 - beta1 ** t
    bias2 = 1.0 - beta2 ** t
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = state.get(f"m/{name}")
        v = state.get(f"v/{name}")
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state[f"m/{name}"] = m
        state[f"v/{name}"] = v
        if weight_decay:
            tensor.data = tensor.data * (1.0 - lr * weight_decay)
        tensor.data = tensor.data - lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def sgd_step(
    params: ParameterVector,
    state: Dict[str, object],
    lr: float,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> None:
    """SGD met (niet-Nesterov) momentum."""
    _check_finite_gradients(params)
    state["t"] = int(state.get("t", 0)) + 1
    for name, tensor in params.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if weight_decay:
            grad = grad + weight_decay * tensor.data
        buf = state.get(f"m/{name}")
        buf = grad.copy() if buf is None else momentum * buf + grad
        state[f"m/{name}"] = buf
        tensor.data = tensor.data - lr * buf


class Optimizer:
    """Gemeenschappelijke stap: eindigheidscontrole, clipping, schema en teller."""

    def __init__(self, params: ParameterVector, schedule: LRSchedule, clip_norm: Optional[float] = 1.0):
        self.params = params
        self.schedule = schedule
        self.clip_norm = clip_norm
        self.state: Dict[str, object] = {"t": 0}

    @property
    def current_lr(self) -> float:
        return float(self.schedule(self.params.step))

    def _update(self, lr: float) -> None:
        raise NotImplementedError

    def step(self) -> float:
        """Voer één update uit en geef de globale gradiëntnorm vóór clipping terug."""
        _check_finite_gradients(self.params)
        norm = clip_grad_norm(self.params, self.clip_norm)
        self._update(self.current_lr)
        self.params.step += 1
        return norm

    def skip(self) -> None:
        """Tel een stap zonder update (bijv. als alle coëfficiënten nul zijn)."""
        self.params.step += 1

    def state_dict(self) -> Dict[str, object]:
        return {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.state.items()}

    def load_state_dict(self, state: Dict[str, object]) -> None:
        self.state = {k: (np.asarray(v, dtype=np.float64).copy() if k != "t" else int(v)) for k, v in state.items()}


class AdamW(Optimizer):
    def __init__(self, params, schedule, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0, clip_norm=1.0):
        super().__init__(params, schedule, clip_norm)
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay

    def _update(self, lr: float) -> None:
        adamw_step(self.params, self.state, lr, self.beta1, self.beta2, self.eps, self.weight_decay)


class SGD(Optimizer):
    def __init__(self, params, schedule, momentum=0.9, weight_decay=0.0, clip_norm=1.0):
        super().__init__(params, schedule, clip_norm)
        self.momentum, self.weight_decay = momentum, weight_decay

    def _update(self, lr: float) -> None:
        sgd_step(self.params, self.state, lr, self.momentum, self.weight_decay)


def build_schedule(name: str, lr: float, total_steps: int, warmup_steps: int = 0) -> LRSchedule:
    if name == "constant":
        return constant_schedule(lr)
    if name == "cosine":
        return cosine_schedule(lr, total_steps, warmup_steps)
    raise ConfigError(f"Onbekend lr schema '{name}'")


def build_optimizer(params: ParameterVector, cfg, total_steps: int, lr: Optional[float] = None) -> Optimizer:
    """Maak de optimizer uit een OptimizerConfig; lr overschrijft cfg.lr (gebruikt door SFT)."""
    base_lr = cfg.lr if lr is None else lr
    schedule = build_schedule(cfg.schedule, base_lr, total_steps, cfg.warmup_steps)
    get_logger().debug("Optimizer %s met lr %.2e (%s)", cfg.name, base_lr, cfg.schedule)
    if cfg.name == "adamw":
        return AdamW(params, schedule, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, cfg.clip_norm)
    if cfg.name == "sgd":
        return SGD(params, schedule, cfg.momentum, cfg.weight_decay, cfg.clip_norm)
    raise ConfigError(f"Onbekende optimizer '{cfg.name}'")
