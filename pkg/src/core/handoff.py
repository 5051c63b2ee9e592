"""
Batch -> streaming handoff for finetuning on a shifted task.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict

import numpy as np

from .agent import check_architecture, normalizer_from_dict
from .checkpoint import Checkpoint
from .errors import IncompatibleCheckpointError, InvalidArgumentError
from .nn import HIDDEN_WIDTH
from .normalize import RewardScalerState
from .streaming import S2AC, SDAC, StreamingAgent

logger = logging.getLogger(__name__)

BATCH_ALGOS = ("sac_norm", "td3_norm")
STREAM_TARGETS = ("sdac", "s2ac")


@dataclass(frozen=True)
class FinetuneSettings:
    """
    Streaming hyperparameters applied after the handoff.

    Attributes:
        actor_lr: Fresh Adam learning rate for the transferred actor
        q_warmup_steps: Steps with the actor frozen while the critic adapts
        exploration_noise: SDAC behaviour noise std
        target_noise: SDAC bootstrap-action noise std
        critic_lr: ObGD step size
        critic_kappa: ObGD overshoot scale
        lam: Critic trace decay
        gamma: Discount
        alpha0: S2AC base entropy coefficient
        adaptive_alpha: S2AC divides alpha0 by sigma_r
    """

    actor_lr: float = 3e-4 / 256
    q_warmup_steps: int = 5_000
    exploration_noise: float = 0.1
    target_noise: float = 0.1
    critic_lr: float = 1.0
    critic_kappa: float = 2.0
    lam: float = 0.8
    gamma: float = 0.99
    alpha0: float = 0.01
    adaptive_alpha: bool = True


def hidden_shape(architecture: Dict[str, Any]) -> Dict[str, Any]:
    """Hidden width and LayerNorm affine flag recorded in a checkpoint architecture."""
    first = architecture["actor"][0]
    return {"hidden_width": int(first[1]), "ln_affine": bool(first[4])}


def build_finetune_agent(target: str, state_dim: int, action_dim: int, ft: FinetuneSettings,
                         rng: np.random.Generator, hidden_width: int = HIDDEN_WIDTH,
                         ln_affine: bool = False) -> StreamingAgent:
    """Streaming agent configured with finetuning hyperparameters (weights still at init)."""
    common = dict(gamma=ft.gamma, lam=ft.lam, critic_lr=ft.critic_lr, critic_kappa=ft.critic_kappa,
                  actor_lr=ft.actor_lr, q_warmup_steps=ft.q_warmup_steps,
                  hidden_width=hidden_width, ln_affine=ln_affine)
    if target == "sdac":
        return SDAC(state_dim, action_dim, rng, exploration_noise=ft.exploration_noise,
                    target_noise=ft.target_noise, **common)
    if target == "s2ac":
        return S2AC(state_dim, action_dim, rng, alpha0=ft.alpha0, adaptive_alpha=ft.adaptive_alpha, **common)
    raise InvalidArgumentError(f"Handoff target must be one of {STREAM_TARGETS}, got '{target}'")


def handoff_batch_to_stream(cp: Checkpoint, target: str, ft: FinetuneSettings,
                            rng: np.random.Generator) -> StreamingAgent:
    """
    Build a streaming agent from a batch checkpoint.

    Actor weights are copied, critic #1 becomes the single streaming critic,
    normalizer and reward scaler carry over unchanged, traces start at zero and
    the actor gets a fresh Adam state plus a Q-warm-up counter.

    Args:
        cp: Checkpoint of a sac_norm or td3_norm agent
        target: "sdac" or "s2ac"
        ft: Finetuning hyperparameters
        rng: Generator for the (immediately overwritten) streaming init

    Returns:
        The streaming agent, ready for its first episode

    Raises:
        IncompatibleCheckpointError: Source is not a batch agent, or a layer differs
    """
    if cp.algo not in BATCH_ALGOS:
        raise IncompatibleCheckpointError(
            f"Handoff needs a batch checkpoint ({', '.join(BATCH_ALGOS)}), got '{cp.algo}'"
        )
    if target not in STREAM_TARGETS:
        raise InvalidArgumentError(f"Handoff target must be one of {STREAM_TARGETS}, got '{target}'")

    state = cp.agent
    agent = build_finetune_agent(target, int(state["state_dim"]), int(state["action_dim"]), ft, rng,
                                 **hidden_shape(state["architecture"]))

    check_architecture("actor", state["architecture"]["actor"], agent.actor.net)
    check_architecture("q1", state["architecture"]["q1"], agent.critic)
    agent.actor.net.set_values(np.asarray(state["nets"]["actor"], dtype=np.float64))
    agent.critic.set_values(np.asarray(state["nets"]["q1"], dtype=np.float64))
    agent.normalizer = normalizer_from_dict(state["normalizer"])
    agent.reward_scaler = RewardScalerState(**state["reward_scaler"])
    agent.reset_traces()

    logger.info(
        "Handoff %s -> %s at source step %d: warm-up %d steps, actor lr %.3g, noise %.3g/%.3g",
        cp.algo, target, cp.step, ft.q_warmup_steps, ft.actor_lr, ft.exploration_noise, ft.target_noise,
    )
    return agent
