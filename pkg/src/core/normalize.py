"""
Online observation normalization and reward scaling.

Observation statistics are Welford running moments; rewards are divided by the
running standard deviation of the discounted return accumulator.
"""

import math
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from .errors import InvalidArgumentError, NonFiniteInputError

NORMALIZER_EPS = 1e-8
SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class NormalizerState:
    """
    Running observation statistics.

    Attributes:
        mu: Running mean
        p: Running sum of squared deviations
        t: Index of the next sample (starts at 1)
        eps: Variance offset used when normalizing
    """

    mu: np.ndarray
    p: np.ndarray
    t: int = 1
    eps: float = NORMALIZER_EPS

    @classmethod
    def initial(cls, dim: int) -> "NormalizerState":
        return cls(np.ones(dim, dtype=np.float64), np.zeros(dim, dtype=np.float64), 1)

    @property
    def count(self) -> int:
        return self.t - 1

    def variance(self) -> np.ndarray:
        """Unbiased variance of the samples seen so far (ones with fewer than two)."""
        if self.count >= 2:
            return self.p / (self.count - 1)
        return np.ones_like(self.mu)


def apply_normalizer(s: np.ndarray, state: NormalizerState) -> np.ndarray:
    """Normalize with the current statistics without updating them."""
    s = np.asarray(s, dtype=np.float64)
    return (s - state.mu) / np.sqrt(state.variance() + state.eps)


def normalize_observation(s: np.ndarray, state: NormalizerState) -> Tuple[np.ndarray, NormalizerState]:
    """
    Welford update with s, then normalize s with the updated statistics.

    Args:
        s: Raw state vector
        state: Current statistics

    Returns:
        (normalized state, updated statistics)
    """
    s = np.asarray(s, dtype=np.float64)
    if s.shape != state.mu.shape:
        raise InvalidArgumentError(f"Observation shape {s.shape} does not match {state.mu.shape}")
    if not np.all(np.isfinite(s)):
        raise NonFiniteInputError("Observation contains NaN or infinite values")

    t = state.t
    d = s - state.mu
    mu = state.mu + d / t
    p = state.p + d * (s - mu)
    var = p / (t - 1) if t >= 2 else np.ones_like(mu)
    s_norm = (s - mu) / np.sqrt(var + state.eps)
    return s_norm, replace(state, mu=mu, p=p, t=t + 1)


@dataclass(frozen=True)
class RewardScalerState:
    """
    Discounted-return statistics for reward scaling.

    Attributes:
        u: Discounted return accumulator
        mean: Running mean of u
        p: Running sum of squared deviations of u
        count: Number of u samples seen
        sigma: Current scale (1 until two samples exist, floored afterwards)
    """

    u: float = 0.0
    mean: float = 0.0
    p: float = 0.0
    count: int = 0
    sigma: float = 1.0


def scale_reward(r: float, terminal: bool, gamma: float,
                 state: RewardScalerState) -> Tuple[float, float, RewardScalerState]:
    """
    Scale a reward by the running std of the discounted return.

    u <- gamma * (1 - T) * u + r, Welford-update the moments of u, then
    sigma = max(sqrt(p / (count - 1)), floor) once count >= 2.

    Args:
        r: Raw reward
        terminal: Episode ended on this step; discards the accumulated return before adding r
        gamma: Discount in [0, 1)
        state: Current statistics

    Returns:
        (scaled reward, sigma, updated statistics)
    """
    if not 0.0 <= gamma < 1.0:
        raise InvalidArgumentError(f"gamma must be in [0, 1), got {gamma}")
    if not math.isfinite(r):
        raise NonFiniteInputError(f"Non-finite reward {r}")

    u = gamma * (1.0 - float(terminal)) * state.u + r
    count = state.count + 1
    d = u - state.mean
    mean = state.mean + d / count
    p = state.p + d * (u - mean)
    sigma = max(math.sqrt(p / (count - 1)), SIGMA_FLOOR) if count >= 2 else 1.0
    return r / sigma, sigma, RewardScalerState(u=u, mean=mean, p=p, count=count, sigma=sigma)
