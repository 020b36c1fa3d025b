"""Per-epoch training steps: FERI task reweighting and the averaged-loss baseline.

One FERI epoch, with task losses L_m evaluated full-batch:

    delta  = L(theta_t) + eps
    z      = softmax(w)
    r      = sum(z / delta)
    c      = z / (delta * r)                 # sums to one
    theta  -= alpha * clip(sum_m c_m grad L_m)
    delta' = L(theta_{t+1}) + eps
    w      -= beta * (J(z)^T (log delta - log delta') + gamma * w)

where J is the softmax Jacobian.  ``delta'`` is cached and reused as the next
epoch's ``delta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .autodiff import GradientSet, clip_global_norm, global_norm
from .errors import ConfigError, ContractError, DivergenceError, NonFiniteError
from .model import ModelParams, task_losses, task_losses_and_grads


@dataclass(frozen=True)
class FeriHyper:
    alpha: float = 0.05
    beta: float = 0.1
    gamma: float = 1e-6
    epsilon: float = 1e-8
    max_grad_norm: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        # beta = 0 freezes the logits (ablation)
        if not self.beta >= 0:
            raise ConfigError("beta must be non-negative")
        if not self.gamma >= 0:
            raise ConfigError("gamma must be non-negative")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if not self.max_grad_norm > 0:
            raise ConfigError("max_grad_norm must be positive")


@dataclass(frozen=True)
class FeriState:
    logits: np.ndarray
    hyper: FeriHyper = field(default_factory=FeriHyper)
    cached_delta: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, n_tasks: int, hyper: FeriHyper = FeriHyper()) -> "FeriState":
        return cls(np.zeros(n_tasks), hyper)

    @property
    def weights(self) -> np.ndarray:
        return softmax_weights(self.logits)


@dataclass(frozen=True)
class EpochResult:
    losses_before: np.ndarray
    losses_after: np.ndarray
    weights_used: np.ndarray
    combined_loss: float
    coefficients: np.ndarray
    grad_norm: float


def softmax_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ContractError("logit vector must be 1-D and non-empty")
    if not np.all(np.isfinite(w)):
        raise ContractError("logits must be finite")
    e = np.exp(w - w.max())
    return e / e.sum()


def softmax_jacobian(z) -> np.ndarray:
    """J[i, j] = dz_i / dw_j = z_i (1{i=j} - z_j)."""
    z = np.asarray(z, dtype=np.float64)
    return np.diag(z) - np.outer(z, z)


def adjusted_losses(losses, epsilon: float) -> np.ndarray:
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0):
        raise ContractError(f"task losses must be non-negative, got {losses.tolist()}")
    return losses + epsilon


def _check_delta(delta):
    delta = np.asarray(delta, dtype=np.float64)
    if np.any(~(delta > 0)):
        raise ContractError(f"adjusted losses must be positive, got {delta.tolist()}")
    return delta


def renorm_constant(z, delta) -> float:
    delta = _check_delta(delta)
    return float(np.sum(np.asarray(z, dtype=np.float64) / delta))


def feri_coefficients(z, delta) -> np.ndarray:
    """Per-task gradient coefficients z_m / (delta_m * r); they sum to one."""
    z = np.asarray(z, dtype=np.float64)
    delta = _check_delta(delta)
    if z.shape != delta.shape:
        raise ContractError(f"weights {z.shape} and losses {delta.shape} differ in length")
    return z / (delta * renorm_constant(z, delta))


def combine_gradients(grads: Sequence[GradientSet], coeffs, names) -> GradientSet:
    """sum_m coeffs[m] * grads[m], zero-filled for parameters a task does not touch."""
    if len(grads) != len(coeffs):
        raise ContractError(f"{len(grads)} gradient sets for {len(coeffs)} coefficients")
    out = {}
    for name, shape in names.items():
        acc = np.zeros(shape)
        for c, g in zip(coeffs, grads):
            if name in g:
                if g[name].shape != shape:
                    raise ContractError(f"gradient for {name!r} has shape {g[name].shape}, parameter {shape}")
                acc += c * g[name]
        out[name] = acc
    return out


def _param_shapes(params: ModelParams):
    return {k: v.shape for k, v in params.tensors.items()}


def feri_param_step(params: ModelParams, grads: Sequence[GradientSet], z, delta, hyper: FeriHyper):
    """Returns ``(new_params, coefficients, pre-clip direction norm)``."""
    coeffs = feri_coefficients(z, delta)
    direction = combine_gradients(grads, coeffs, _param_shapes(params))
    norm = global_norm(direction)
    direction = clip_global_norm(direction, hyper.max_grad_norm)
    return params.step(direction, hyper.alpha), coeffs, norm


def logit_step(w, z, delta_t, delta_next, hyper: FeriHyper) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    d = np.log(_check_delta(delta_t)) - np.log(_check_delta(delta_next))
    grad = softmax_jacobian(z).T @ d
    return w - hyper.beta * (grad + hyper.gamma * w)


def _check_finite(losses, epoch):
    if not np.all(np.isfinite(losses)):
        raise DivergenceError(epoch, losses)


def _losses_and_grads(params, data, epoch):
    try:
        losses, grads = task_losses_and_grads(params, data)
    except NonFiniteError:
        raise DivergenceError(epoch, [float("nan")] * params.n_tasks) from None
    _check_finite(losses, epoch)
    return losses, grads


def _losses(params, data, epoch):
    try:
        losses = task_losses(params, data)
    except NonFiniteError:
        raise DivergenceError(epoch, [float("nan")] * params.n_tasks) from None
    _check_finite(losses, epoch)
    return losses


def train_epoch_feri(params: ModelParams, state: FeriState, data, epoch: int = 0):
    hyper = state.hyper
    losses, grads = _losses_and_grads(params, data, epoch)
    if state.cached_delta is not None:
        delta = state.cached_delta
    else:
        delta = adjusted_losses(losses, hyper.epsilon)
    z = softmax_weights(state.logits)
    new_params, coeffs, norm = feri_param_step(params, grads, z, delta, hyper)

    after = _losses(new_params, data, epoch)
    delta_next = adjusted_losses(after, hyper.epsilon)
    w_next = logit_step(state.logits, z, delta, delta_next, hyper)
    new_state = replace(state, logits=w_next, cached_delta=delta_next)
    result = EpochResult(delta - hyper.epsilon, after, z, float(z @ losses), coeffs, norm)
    return new_params, new_state, result


def train_epoch_baseline(params: ModelParams, data, alpha: float, max_grad_norm: float = 1.0, epoch: int = 0):
    if not alpha > 0:
        raise ConfigError("alpha must be positive")
    losses, grads = _losses_and_grads(params, data, epoch)
    M = len(losses)
    coeffs = np.full(M, 1.0 / M)
    direction = combine_gradients(grads, coeffs, _param_shapes(params))
    norm = global_norm(direction)
    new_params = params.step(clip_global_norm(direction, max_grad_norm), alpha)
    after = _losses(new_params, data, epoch)
    return new_params, EpochResult(losses, after, coeffs, float(losses.mean()), coeffs, norm)
