"""
Transitions and the uniform replay buffer used by batch agents.
"""

from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Optional

import numpy as np

from .errors import ContractViolation, InvalidArgumentError


@dataclass(frozen=True)
class Transition:
    """
    One environment step as seen by an agent.

    `terminal` is True only on genuine termination; time-limit truncation
    keeps bootstrapping. Raw state/reward ride along for batch agents.
    """

    s: np.ndarray
    a: np.ndarray
    r_scaled: float
    s_next: np.ndarray
    terminal: bool
    raw_s: np.ndarray
    raw_r: float
    raw_s_next: np.ndarray
    sigma_r: float = 1.0
    noise: Optional[np.ndarray] = None


class Batch(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray


class ReplayBuffer:
    """Ring buffer of raw transitions with uniform sampling (with replacement)."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise InvalidArgumentError("Replay capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity)
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, raw_s: np.ndarray, a: np.ndarray, raw_r: float,
             raw_s_next: np.ndarray, terminal: bool) -> None:
        """Store a raw transition, evicting the oldest one at capacity."""
        i = self.pos
        self.s[i] = raw_s
        self.a[i] = a
        self.r[i] = raw_r
        self.s_next[i] = raw_s_next
        self.terminal[i] = float(terminal)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ContractViolation("Cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniformly sampled batch of RAW transitions."""
        idx = self.sample_indices(batch_size, rng)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx])

    def state_dict(self) -> Dict[str, Any]:
        n = self.size
        return {
            "capacity": self.capacity,
            "pos": self.pos,
            "size": n,
            "s": self.s[:n].copy(),
            "a": self.a[:n].copy(),
            "r": self.r[:n].copy(),
            "s_next": self.s_next[:n].copy(),
            "terminal": self.terminal[:n].copy(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        n = int(state["size"])
        if int(state["capacity"]) != self.capacity:
            raise ContractViolation("Replay capacity differs from the checkpoint")
        self.s[:n] = state["s"]
        self.a[:n] = state["a"]
        self.r[:n] = state["r"]
        self.s_next[:n] = state["s_next"]
        self.terminal[:n] = state["terminal"]
        self.pos = int(state["pos"])
        self.size = n


def buffer_push(buf: ReplayBuffer, transition: Transition) -> None:
    buf.push(transition.raw_s, transition.a, transition.raw_r, transition.raw_s_next, transition.terminal)


def buffer_sample(buf: ReplayBuffer, batch_size: int, rng: np.random.Generator) -> Batch:
    return buf.sample(batch_size, rng)
