"""
Streaming and batch optimizers over flat parameter vectors.

ObGD with eligibility traces for streaming critics/actors, SGD with global-norm
clipping (SGDC) and Adam for batch learners, plus Polyak target averaging.
All functions are pure: they return new arrays/states and never mutate inputs.
"""

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from .errors import ContractViolation, InvalidArgumentError, NonFiniteUpdateError


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteUpdateError(f"Non-finite {name}", {"where": name})


@dataclass(frozen=True)
class TraceState:
    """Eligibility trace z with its decay factors."""

    z: np.ndarray
    gamma: float = 0.99
    lam: float = 0.8

    @classmethod
    def zeros(cls, size: int, gamma: float = 0.99, lam: float = 0.8) -> "TraceState":
        return cls(np.zeros(size, dtype=np.float64), gamma, lam)

    def reset(self) -> "TraceState":
        return replace(self, z=np.zeros_like(self.z))


def trace_update(state: TraceState, grad: np.ndarray) -> TraceState:
    """z <- gamma * lambda * z + grad."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.z.shape:
        raise ContractViolation(f"Trace length {state.z.shape} does not match gradient {grad.shape}")
    return replace(state, z=state.gamma * state.lam * state.z + grad)


@dataclass(frozen=True)
class ObGDConfig:
    eta: float = 1.0
    kappa: float = 2.0

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidArgumentError("ObGD step size eta must be positive")
        if self.kappa <= 0:
            raise InvalidArgumentError("ObGD overshoot scale kappa must be positive")


def obgd_step_size(delta: float, z: np.ndarray, cfg: ObGDConfig) -> float:
    """
    Effective ObGD step size.

    delta_bar = max(|delta|, 1), M = eta * kappa * delta_bar * ||z||_1,
    eta_eff = eta / max(M, 1), hence eta_eff * kappa * delta_bar * ||z||_1 <= 1.
    """
    delta_bar = max(abs(delta), 1.0)
    bound = cfg.eta * cfg.kappa * delta_bar * float(np.sum(np.abs(z)))
    return cfg.eta / max(bound, 1.0)


def obgd_step(params: np.ndarray, trace: TraceState, delta: float, cfg: ObGDConfig,
              bonus: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Overshooting-bounded gradient step along the trace.

    params <- params + eta_eff * (delta * z + bonus). The bound is computed from
    delta and the trace only; `bonus` is an optional extra ascent direction.

    Args:
        params: Current flat parameters
        trace: Trace already updated for the current step
        delta: TD error
        cfg: Step size and overshoot scale
        bonus: Optional additional direction in the same layout

    Returns:
        Updated parameters
    """
    if not np.isfinite(delta):
        raise NonFiniteUpdateError("Non-finite TD error in ObGD step", {"delta": float(delta)})
    if params.shape != trace.z.shape:
        raise ContractViolation("ObGD trace layout does not match parameters")
    eta_eff = obgd_step_size(delta, trace.z, cfg)
    direction = delta * trace.z
    if bonus is not None:
        direction = direction + bonus
    updated = params + eta_eff * direction
    _check_finite("ObGD update", updated)
    return updated


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    eta: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, eta: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if eta <= 0:
            raise InvalidArgumentError("Adam learning rate must be positive")
        return cls(np.zeros(size), np.zeros(size), 0, eta, beta1, beta2, eps)


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState) -> Tuple[np.ndarray, AdamState]:
    """Adam descent step with bias correction."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ContractViolation("Adam state layout does not match parameters")
    _check_finite("gradient", grad)

    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    updated = params - state.eta * m_hat / (np.sqrt(v_hat) + state.eps)
    return updated, replace(state, m=m, v=v, t=t)


@dataclass(frozen=True)
class SGDCConfig:
    eta: float = 0.5
    h: float = 1.0

    def __post_init__(self):
        if self.eta <= 0:
            raise InvalidArgumentError("SGDC learning rate must be positive")
        if self.h <= 0:
            raise InvalidArgumentError("SGDC clipping parameter h must be positive")


def sgdc_step(params: np.ndarray, grad: np.ndarray, cfg: SGDCConfig) -> np.ndarray:
    """SGD with clipping by the global L2 norm: g * min(1, h / ||g||)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape:
        raise ContractViolation("SGDC gradient layout does not match parameters")
    _check_finite("gradient", grad)

    norm = float(np.sqrt(np.sum(grad * grad)))
    scale = min(1.0, cfg.h / norm) if norm > 0.0 else 1.0
    return params - cfg.eta * scale * grad


def polyak_update(target: np.ndarray, online: np.ndarray, tau: float) -> np.ndarray:
    """target <- (1 - tau) * target + tau * online."""
    if target.shape != online.shape:
        raise ContractViolation("Polyak update between different layouts")
    if not 0.0 <= tau <= 1.0:
        raise InvalidArgumentError(f"tau must be in [0, 1], got {tau}")
    if tau == 1.0:
        return online.copy()
    return (1.0 - tau) * target + tau * online
