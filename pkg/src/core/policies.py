"""
Policy heads on top of DenseNet.

SquashedGaussianHead  - tanh-squashed Gaussian (S2AC, SAC)
DeterministicHead     - tanh deterministic policy with Gaussian exploration (SDAC, TD3)
GaussianHead          - unsquashed Gaussian with softplus std (Stream AC)

Every head returns a tape-carrying sample so callers can push gradients with
respect to the action and the log-likelihood back into the network parameters.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .nn import DenseNet, Tape, backward, forward

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG2 = math.log(2.0)


def softplus(x: np.ndarray) -> np.ndarray:
    """Numerically stable log(1 + exp(x))."""
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def gaussian_log_prob(u: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (u - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - HALF_LOG_2PI, axis=-1)


def tanh_correction(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2) written as 2 * (log 2 - u - softplus(-2u)), summed over the last axis."""
    return np.sum(2.0 * (LOG2 - u - softplus(-2.0 * u)), axis=-1)


def squashed_log_prob(u: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log-density of a = tanh(u) when u ~ N(mu, exp(log_std)^2)."""
    return gaussian_log_prob(u, mu, log_std) - tanh_correction(u)


class ReparamSample(NamedTuple):
    action: np.ndarray
    u: np.ndarray
    log_pi: np.ndarray
    eps: np.ndarray
    mu: np.ndarray
    log_std: np.ndarray
    squash: np.ndarray
    tape: Tape


@dataclass
class SquashedGaussianHead:
    """
    Squashed Gaussian policy. The network emits (mu, raw_log_std) side by side;
    log_std = min + 0.5 * (max - min) * (tanh(raw) + 1).
    """

    net: DenseNet
    action_dim: int
    log_std_min: float = LOG_STD_MIN
    log_std_max: float = LOG_STD_MAX

    def __post_init__(self):
        if self.net.out_dim != 2 * self.action_dim:
            raise ValueError(
                f"Squashed Gaussian head needs {2 * self.action_dim} outputs, net has {self.net.out_dim}"
            )

    def _split(self, out: np.ndarray):
        mu = out[..., : self.action_dim]
        squash = np.tanh(out[..., self.action_dim:])
        log_std = self.log_std_min + 0.5 * (self.log_std_max - self.log_std_min) * (squash + 1.0)
        return mu, log_std, squash

    def distribution(self, s: np.ndarray):
        """(mu, log_std) for a state or a batch of states."""
        out, _ = forward(self.net, s)
        mu, log_std, _ = self._split(out)
        return mu, log_std

    def sample_reparam(self, s: np.ndarray, rng: Optional[np.random.Generator] = None,
                       eps: Optional[np.ndarray] = None) -> ReparamSample:
        """
        Reparameterized sample a = tanh(mu + std * eps).

        Args:
            s: Normalized state (vector or batch)
            rng: Noise source, used when eps is not given
            eps: Frozen standard-normal noise with the shape of mu

        Returns:
            ReparamSample carrying action, pre-squash u, log_pi and the tape
        """
        out, tape = forward(self.net, s)
        mu, log_std, squash = self._split(out)
        if eps is None:
            eps = rng.standard_normal(mu.shape)
        eps = np.asarray(eps, dtype=np.float64)
        u = mu + np.exp(log_std) * eps
        log_pi = squashed_log_prob(u, mu, log_std)
        return ReparamSample(np.tanh(u), u, log_pi, eps, mu, log_std, squash, tape)

    def backward(self, sample: ReparamSample, action_grad: np.ndarray,
                 log_pi_grad: np.ndarray):
        """
        Pathwise gradient of a scalar loss L(action, log_pi) w.r.t. the network.

        Args:
            sample: Result of sample_reparam
            action_grad: dL/da, same shape as the action
            log_pi_grad: dL/dlog_pi, scalar per sample

        Returns:
            nn.Gradients for the policy network
        """
        action_grad = np.asarray(action_grad, dtype=np.float64)
        log_pi_grad = np.asarray(log_pi_grad, dtype=np.float64)[..., None]
        std = np.exp(sample.log_std)

        # log_pi depends on u through the tanh correction; the Gaussian term
        # only through -log_std because (u - mu) / std == eps
        du = action_grad * (1.0 - sample.action * sample.action) + log_pi_grad * 2.0 * sample.action
        d_mu = du
        d_log_std = du * sample.eps * std - log_pi_grad
        d_raw = d_log_std * 0.5 * (self.log_std_max - self.log_std_min) * (1.0 - sample.squash ** 2)
        return backward(self.net, sample.tape, np.concatenate([d_mu, d_raw], axis=-1))

    def log_prob(self, s: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Exact tanh-corrected log-density of a = tanh(u)."""
        mu, log_std = self.distribution(s)
        return squashed_log_prob(np.asarray(u, dtype=np.float64), mu, log_std)

    def mean_action(self, s: np.ndarray) -> np.ndarray:
        mu, _ = self.distribution(s)
        return np.tanh(mu)


class DeterministicSample(NamedTuple):
    action: np.ndarray
    tape: Tape


@dataclass
class DeterministicHead:
    """Deterministic tanh policy: a = tanh(mu(s))."""

    net: DenseNet
    action_dim: int
    exploration_sigma: float = 0.2

    def __post_init__(self):
        if self.net.out_dim != self.action_dim:
            raise ValueError(
                f"Deterministic head needs {self.action_dim} outputs, net has {self.net.out_dim}"
            )

    def action_with_tape(self, s: np.ndarray) -> DeterministicSample:
        out, tape = forward(self.net, s)
        return DeterministicSample(np.tanh(out), tape)

    def backward(self, sample: DeterministicSample, action_grad: np.ndarray):
        """Gradient of sum(action_grad * action) w.r.t. the network."""
        action_grad = np.asarray(action_grad, dtype=np.float64)
        return backward(self.net, sample.tape, action_grad * (1.0 - sample.action ** 2))

    def act(self, s: np.ndarray) -> np.ndarray:
        out, _ = forward(self.net, s)
        return np.tanh(out)


def act_deterministic(head: DeterministicHead, s: np.ndarray, explore: bool,
                      sigma: Optional[float] = None,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Deterministic action, optionally with clipped Gaussian exploration noise.

    Args:
        head: Deterministic policy
        s: Normalized state
        explore: Add N(0, sigma^2) noise and clip to [-1, 1]
        sigma: Noise std, defaults to head.exploration_sigma
        rng: Noise source

    Returns:
        Action in [-1, 1]^D
    """
    action = head.act(s)
    if not explore:
        return action
    sigma = head.exploration_sigma if sigma is None else sigma
    if sigma == 0.0:
        return action
    return np.clip(action + sigma * rng.standard_normal(action.shape), -1.0, 1.0)


class GaussianSample(NamedTuple):
    action: np.ndarray
    mu: np.ndarray
    std: np.ndarray
    pre_std: np.ndarray
    tape: Tape


@dataclass
class GaussianHead:
    """Unsquashed Gaussian with std = softplus(pre_std). Outputs (mu, pre_std)."""

    net: DenseNet
    action_dim: int

    def __post_init__(self):
        if self.net.out_dim != 2 * self.action_dim:
            raise ValueError(
                f"Gaussian head needs {2 * self.action_dim} outputs, net has {self.net.out_dim}"
            )

    def evaluate(self, s: np.ndarray, action: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None) -> GaussianSample:
        """Distribution at s, paired with `action` or a fresh sample."""
        out, tape = forward(self.net, s)
        mu = out[..., : self.action_dim]
        pre_std = out[..., self.action_dim:]
        std = softplus(pre_std)
        if action is None:
            action = mu + std * rng.standard_normal(mu.shape)
        return GaussianSample(np.asarray(action, dtype=np.float64), mu, std, pre_std, tape)

    @staticmethod
    def log_prob(sample: GaussianSample) -> float:
        return float(gaussian_log_prob(sample.action, sample.mu, np.log(sample.std)))

    @staticmethod
    def entropy(sample: GaussianSample) -> float:
        return float(np.sum(0.5 + HALF_LOG_2PI + np.log(sample.std)))

    def log_prob_grad(self, sample: GaussianSample) -> np.ndarray:
        """Gradient of log pi(action | s) w.r.t. the network parameters."""
        var = sample.std ** 2
        diff = sample.action - sample.mu
        d_mu = diff / var
        d_std = diff * diff / (var * sample.std) - 1.0 / sample.std
        d_pre = d_std * sigmoid(sample.pre_std)
        return backward(self.net, sample.tape, np.concatenate([d_mu, d_pre], axis=-1)).params

    def entropy_grad(self, sample: GaussianSample) -> np.ndarray:
        """Gradient of the Gaussian entropy w.r.t. the network parameters."""
        d_pre = sigmoid(sample.pre_std) / sample.std
        d_mu = np.zeros_like(sample.mu)
        return backward(self.net, sample.tape, np.concatenate([d_mu, d_pre], axis=-1)).params

    def mean_action(self, s: np.ndarray) -> np.ndarray:
        out, _ = forward(self.net, s)
        return out[..., : self.action_dim]
