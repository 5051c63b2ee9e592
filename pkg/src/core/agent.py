"""
Common agent plumbing: observation normalization, reward scaling,
transition assembly and state (de)serialization.
"""

from abc import ABC, abstractmethod
from dataclasses import asdict
from typing import Any, ClassVar, Dict, List, NamedTuple, Optional

import numpy as np

from .buffer import Transition
from .envs import StepResult
from .errors import IncompatibleCheckpointError, NonFiniteUpdateError
from .nn import DenseNet, l2_norm
from .normalize import (
    NormalizerState,
    RewardScalerState,
    apply_normalizer,
    normalize_observation,
    scale_reward,
)
from .optim import AdamState, TraceState


class Action(NamedTuple):
    """Action sent to the environment plus the exogenous noise that produced it."""

    action: np.ndarray
    noise: Optional[np.ndarray] = None


def check_finite(name: str, value, **diagnostics) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteUpdateError(f"Non-finite {name}", {"quantity": name, **diagnostics})


def adam_to_dict(state: AdamState) -> Dict[str, Any]:
    return asdict(state)


def adam_from_dict(data: Dict[str, Any]) -> AdamState:
    return AdamState(
        m=np.asarray(data["m"], dtype=np.float64),
        v=np.asarray(data["v"], dtype=np.float64),
        t=int(data["t"]),
        eta=float(data["eta"]),
        beta1=float(data["beta1"]),
        beta2=float(data["beta2"]),
        eps=float(data["eps"]),
    )


def trace_to_dict(state: TraceState) -> Dict[str, Any]:
    return {"z": state.z.copy(), "gamma": state.gamma, "lam": state.lam}


def trace_from_dict(data: Dict[str, Any]) -> TraceState:
    return TraceState(np.asarray(data["z"], dtype=np.float64), float(data["gamma"]), float(data["lam"]))


def state_action(s: np.ndarray, a: np.ndarray) -> np.ndarray:
    return np.concatenate([s, a], axis=-1)


class Agent(ABC):
    """
    Base class for streaming and batch agents.

    Subclasses own their networks and optimizer states; this class owns the
    observation normalizer and the reward scaler, which every agent carries.
    """

    algo: ClassVar[str] = ""
    streaming: ClassVar[bool] = True

    def __init__(self, state_dim: int, action_dim: int, gamma: float = 0.99):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.gamma = gamma
        self.normalizer = NormalizerState.initial(state_dim)
        self.reward_scaler = RewardScalerState()
        self.updates = 0

    # -- episode plumbing -------------------------------------------------

    def begin_episode(self, raw_s: np.ndarray) -> np.ndarray:
        """Reset per-episode state and return the normalized first observation."""
        self.reset_traces()
        s, self.normalizer = normalize_observation(raw_s, self.normalizer)
        return s

    def make_transition(self, raw_s: np.ndarray, s: np.ndarray, action: Action,
                        result: StepResult) -> Transition:
        """
        Normalize s', scale r and assemble the transition.

        Only genuine termination resets the return accumulator and cuts
        bootstrapping; time-limit truncation carries both through.
        """
        s_next, self.normalizer = normalize_observation(result.s_next, self.normalizer)
        r_scaled, sigma, self.reward_scaler = scale_reward(result.r, result.terminated, self.gamma, self.reward_scaler)
        return Transition(
            s=s,
            a=np.asarray(action.action, dtype=np.float64),
            r_scaled=r_scaled,
            s_next=s_next,
            terminal=bool(result.terminated),
            raw_s=np.asarray(raw_s, dtype=np.float64),
            raw_r=float(result.r),
            raw_s_next=np.asarray(result.s_next, dtype=np.float64),
            sigma_r=sigma,
            noise=action.noise,
        )

    def normalize_eval(self, raw_s: np.ndarray) -> np.ndarray:
        """Read-only normalization used by evaluation episodes."""
        return apply_normalizer(raw_s, self.normalizer)

    def reset_traces(self) -> None:
        pass

    # -- agent interface --------------------------------------------------

    @abstractmethod
    def act(self, s: np.ndarray, rng: np.random.Generator) -> Action:
        """Exploratory action for training."""

    @abstractmethod
    def act_eval(self, s: np.ndarray) -> np.ndarray:
        """Mean / noiseless action for evaluation."""

    @abstractmethod
    def observe(self, transition: Transition, rng: np.random.Generator) -> Dict[str, float]:
        """Learn from one transition; returns step diagnostics."""

    @abstractmethod
    def networks(self) -> Dict[str, DenseNet]:
        """Every parameter vector the agent owns, by name."""

    @abstractmethod
    def _optim_state(self) -> Dict[str, Any]:
        pass

    @abstractmethod
    def _load_optim_state(self, state: Dict[str, Any]) -> None:
        pass

    # -- diagnostics ------------------------------------------------------

    @property
    def actor_net(self) -> DenseNet:
        return self.networks()["actor"]

    @property
    def critic_net(self) -> DenseNet:
        nets = self.networks()
        return nets["critic"] if "critic" in nets else nets["q1"]

    def norms(self) -> Dict[str, float]:
        return {"critic_l2_norm": l2_norm(self.critic_net.params),
                "actor_l2_norm": l2_norm(self.actor_net.params)}

    # -- serialization ----------------------------------------------------

    def state_dict(self) -> Dict[str, Any]:
        nets = self.networks()
        return {
            "algo": self.algo,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "architecture": {name: [list(layer) for layer in net.signature()] for name, net in nets.items()},
            "nets": {name: net.values.copy() for name, net in nets.items()},
            "optim": self._optim_state(),
            "normalizer": {"mu": self.normalizer.mu.copy(), "p": self.normalizer.p.copy(),
                           "t": self.normalizer.t, "eps": self.normalizer.eps},
            "reward_scaler": asdict(self.reward_scaler),
            "updates": self.updates,
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        if state["algo"] != self.algo:
            raise IncompatibleCheckpointError(f"Checkpoint holds a {state['algo']} agent, not {self.algo}")
        nets = self.networks()
        for name, net in nets.items():
            if name not in state["nets"]:
                raise IncompatibleCheckpointError(f"Checkpoint has no network '{name}'")
            check_architecture(name, state["architecture"][name], net)
            net.set_values(np.asarray(state["nets"][name], dtype=np.float64))
        self._load_optim_state(state["optim"])
        self.normalizer = normalizer_from_dict(state["normalizer"])
        self.reward_scaler = RewardScalerState(**state["reward_scaler"])
        self.updates = int(state["updates"])


def normalizer_from_dict(data: Dict[str, Any]) -> NormalizerState:
    return NormalizerState(
        mu=np.asarray(data["mu"], dtype=np.float64),
        p=np.asarray(data["p"], dtype=np.float64),
        t=int(data["t"]),
        eps=float(data["eps"]),
    )


def check_architecture(name: str, stored: List[List[Any]], net: DenseNet) -> None:
    """Raise IncompatibleCheckpointError naming the first layer that differs."""
    current = [list(layer) for layer in net.signature()]
    if len(stored) != len(current):
        raise IncompatibleCheckpointError(
            f"Network '{name}': checkpoint has {len(stored)} layers, expected {len(current)}"
        )
    fields = ("in_dim", "out_dim", "layernorm", "activation", "ln_affine")
    for i, (a, b) in enumerate(zip(stored, current)):
        if list(a) != list(b):
            diffs = [f"{f}={x!r} vs {y!r}" for f, x, y in zip(fields, a, b) if x != y]
            raise IncompatibleCheckpointError(
                f"Network '{name}' layer {i} mismatch: {', '.join(diffs)}"
            )

