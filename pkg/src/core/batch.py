"""
Batch baselines with online normalization: SAC-norm and TD3-norm.

Raw transitions go into a replay buffer; every update samples a minibatch and
preprocesses it with the CURRENT observation statistics and reward scale.
Twin critics share one optimizer state over their concatenated parameters,
so SGDC clips by the global norm across both critics.
"""

import logging
import math
from typing import Any, Dict, Literal, Optional

import numpy as np

from .agent import (
    Action,
    Agent,
    adam_from_dict,
    adam_to_dict,
    check_finite,
    state_action,
)
from .buffer import Batch, ReplayBuffer, Transition, buffer_push, buffer_sample
from .errors import ContractViolation, InvalidArgumentError
from .nn import HIDDEN_WIDTH, DenseNet, backward, forward, init_uniform, mlp_layers
from .normalize import apply_normalizer
from .optim import AdamState, SGDCConfig, adam_step, polyak_update, sgdc_step
from .policies import DeterministicHead, SquashedGaussianHead, act_deterministic

logger = logging.getLogger(__name__)

CriticOptimizer = Literal["adam", "sgdc"]
Architecture = Literal["stream", "plain"]


def batch_layers(in_dim: int, out_dim: int, architecture: Architecture,
                 hidden_width: int = HIDDEN_WIDTH, ln_affine: bool = False):
    """
    Layer stack for a batch network.

    "stream" reuses the streaming architecture (LayerNorm + LeakyReLU), which
    keeps the -norm agents shape-compatible with S2AC/SDAC. "plain" is the
    classic ReLU MLP without normalization.
    """
    if architecture == "stream":
        return mlp_layers(in_dim, out_dim, hidden_width, layernorm=True,
                          activation="leaky_relu", ln_affine=ln_affine)
    if architecture == "plain":
        return mlp_layers(in_dim, out_dim, hidden_width, layernorm=False, activation="relu")
    raise InvalidArgumentError(f"Unknown architecture '{architecture}', expected 'stream' or 'plain'")


class BatchAgent(Agent):
    """Replay buffer, batch preprocessing, twin critics and their optimizer."""

    streaming = False

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 buffer_rng: np.random.Generator, gamma: float = 0.99,
                 buffer_size: int = 1_000_000, batch_size: int = 256,
                 learning_starts: int = 5_000, tau: float = 0.005, policy_frequency: int = 2,
                 critic_optimizer: CriticOptimizer = "adam", critic_lr: float = 3e-4,
                 sgdc_lr: float = 0.5, sgdc_clip: float = 1.0, actor_lr: float = 3e-4,
                 architecture: Architecture = "stream", hidden_width: int = HIDDEN_WIDTH,
                 ln_affine: bool = False):
        super().__init__(state_dim, action_dim, gamma)
        if batch_size < 1:
            raise InvalidArgumentError("batch_size must be positive")
        if policy_frequency < 1:
            raise InvalidArgumentError("policy_frequency must be positive")
        self.buffer = ReplayBuffer(buffer_size, state_dim, action_dim)
        self.buffer_rng = buffer_rng
        self.batch_size = batch_size
        self.learning_starts = learning_starts
        self.tau = tau
        self.policy_frequency = policy_frequency
        self.architecture = architecture
        self.hidden_width = hidden_width
        self.ln_affine = ln_affine
        self.env_steps = 0
        self.critic_updates = 0

        def q_net() -> DenseNet:
            return init_uniform(DenseNet(batch_layers(state_dim + action_dim, 1, architecture,
                                                      hidden_width, ln_affine)), rng)

        self.q1 = q_net()
        self.q2 = q_net()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()

        if critic_optimizer not in ("adam", "sgdc"):
            raise InvalidArgumentError(
                f"Batch critics train with 'adam' or 'sgdc', got '{critic_optimizer}'"
            )
        self.critic_optimizer = critic_optimizer
        n_critic = self.q1.num_params + self.q2.num_params
        self.critic_adam: Optional[AdamState] = (
            AdamState.zeros(n_critic, eta=critic_lr) if critic_optimizer == "adam" else None
        )
        self.sgdc_cfg = SGDCConfig(sgdc_lr, sgdc_clip)
        self.actor_lr = actor_lr

    # -- data path --------------------------------------------------------

    def exploring(self) -> bool:
        """True while actions are still drawn uniformly at random."""
        return self.env_steps < self.learning_starts

    def random_action(self, rng: np.random.Generator) -> Action:
        return Action(rng.uniform(-1.0, 1.0, size=self.action_dim))

    def preprocess(self, batch: Batch) -> Batch:
        """Normalize raw states and scale raw rewards with the current statistics."""
        return Batch(
            apply_normalizer(batch.s, self.normalizer),
            batch.a,
            batch.r / self.reward_scaler.sigma,
            apply_normalizer(batch.s_next, self.normalizer),
            batch.terminal,
        )

    def observe(self, transition: Transition, rng: np.random.Generator) -> Dict[str, float]:
        buffer_push(self.buffer, transition)
        self.env_steps += 1
        if self.exploring():
            return {}
        batch = self.preprocess(buffer_sample(self.buffer, self.batch_size, self.buffer_rng))
        return self.update(batch, rng)

    def update(self, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
        """One gradient update on a preprocessed batch."""
        if len(self.buffer) == 0:
            raise ContractViolation("Update requested before any transition was stored")
        return self._update(batch, rng)

    def _update(self, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
        raise NotImplementedError

    # -- critics ----------------------------------------------------------

    def _fit_critics(self, batch: Batch, y: np.ndarray) -> float:
        """One step on mean((Q1 - y)^2) + mean((Q2 - y)^2)."""
        n = y.shape[0]
        sa = state_action(batch.s, batch.a)
        q1, tape1 = forward(self.q1, sa)
        q2, tape2 = forward(self.q2, sa)
        err1 = q1[:, 0] - y
        err2 = q2[:, 0] - y
        loss = float(np.mean(err1 * err1) + np.mean(err2 * err2))
        check_finite("critic loss", loss, update=self.updates)

        grad = np.concatenate([
            backward(self.q1, tape1, (2.0 * err1 / n)[:, None]).params,
            backward(self.q2, tape2, (2.0 * err2 / n)[:, None]).params,
        ])
        params = np.concatenate([self.q1.values, self.q2.values])
        if self.critic_adam is not None:
            params, self.critic_adam = adam_step(params, grad, self.critic_adam)
        else:
            params = sgdc_step(params, grad, self.sgdc_cfg)
        split = self.q1.num_params
        self.q1.set_values(params[:split])
        self.q2.set_values(params[split:])
        self.critic_updates += 1
        return loss

    def _update_critic_targets(self) -> None:
        self.q1_target.set_values(polyak_update(self.q1_target.values, self.q1.values, self.tau))
        self.q2_target.set_values(polyak_update(self.q2_target.values, self.q2.values, self.tau))

    def _policy_turn(self) -> bool:
        return self.critic_updates % self.policy_frequency == 0

    # -- serialization ----------------------------------------------------

    def _batch_state(self) -> Dict[str, Any]:
        return {
            "env_steps": self.env_steps,
            "critic_updates": self.critic_updates,
            "critic_adam": adam_to_dict(self.critic_adam) if self.critic_adam is not None else None,
            "buffer": self.buffer.state_dict(),
        }

    def _load_batch_state(self, state: Dict[str, Any]) -> None:
        self.env_steps = int(state["env_steps"])
        self.critic_updates = int(state["critic_updates"])
        if (state["critic_adam"] is None) != (self.critic_adam is None):
            raise ContractViolation("Critic optimizer differs from the checkpoint")
        if state["critic_adam"] is not None:
            self.critic_adam = adam_from_dict(state["critic_adam"])
        self.buffer.load_state_dict(state["buffer"])


class SACNorm(BatchAgent):
    """
    Soft actor-critic with twin critics, Polyak targets, automatic entropy
    tuning toward -action_dim, and online normalization of sampled batches.
    """

    algo = "sac_norm"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 buffer_rng: np.random.Generator, alpha_init: float = 1.0,
                 autotune: bool = True, alpha_lr: float = 3e-4,
                 target_entropy: Optional[float] = None, **kwargs):
        kwargs.setdefault("learning_starts", 5_000)
        super().__init__(state_dim, action_dim, rng, buffer_rng, **kwargs)
        actor_net = init_uniform(DenseNet(batch_layers(
            state_dim, 2 * action_dim, self.architecture, self.hidden_width, self.ln_affine)), rng)
        self.actor = SquashedGaussianHead(actor_net, action_dim)
        self.actor_adam = AdamState.zeros(actor_net.num_params, eta=self.actor_lr)
        if alpha_init <= 0:
            raise InvalidArgumentError("alpha_init must be positive")
        self.log_alpha = math.log(alpha_init)
        self.autotune = autotune
        self.alpha_adam = AdamState.zeros(1, eta=alpha_lr)
        self.target_entropy = -float(action_dim) if target_entropy is None else float(target_entropy)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    def networks(self) -> Dict[str, DenseNet]:
        return {"actor": self.actor.net, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def act(self, s: np.ndarray, rng: np.random.Generator) -> Action:
        if self.exploring():
            return self.random_action(rng)
        sample = self.actor.sample_reparam(s, rng)
        return Action(sample.action, sample.eps)

    def act_eval(self, s: np.ndarray) -> np.ndarray:
        return self.actor.mean_action(s)

    def _update(self, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
        n = batch.r.shape[0]
        sd = self.state_dim
        alpha = self.alpha

        nxt = self.actor.sample_reparam(batch.s_next, rng)
        sa_next = state_action(batch.s_next, nxt.action)
        q1_next, _ = forward(self.q1_target, sa_next)
        q2_next, _ = forward(self.q2_target, sa_next)
        soft_next = np.minimum(q1_next[:, 0], q2_next[:, 0]) - alpha * nxt.log_pi
        y = batch.r + self.gamma * (1.0 - batch.terminal) * soft_next
        critic_loss = self._fit_critics(batch, y)
        diagnostics = {"critic_loss": critic_loss, "alpha": alpha}

        if self._policy_turn():
            cur = self.actor.sample_reparam(batch.s, rng)
            sa = state_action(batch.s, cur.action)
            qa1, tape1 = forward(self.q1, sa)
            qa2, tape2 = forward(self.q2, sa)
            first = qa1[:, 0] <= qa2[:, 0]
            # loss = mean(alpha * log_pi - min(Q1, Q2)); each sample flows through its minimum
            g1 = np.where(first, -1.0 / n, 0.0)[:, None]
            g2 = np.where(first, 0.0, -1.0 / n)[:, None]
            dq_da = (backward(self.q1, tape1, g1).inputs[:, sd:]
                     + backward(self.q2, tape2, g2).inputs[:, sd:])
            grad_theta = self.actor.backward(cur, dq_da, np.full(n, alpha / n)).params
            check_finite("actor gradient", grad_theta, update=self.updates)
            values, self.actor_adam = adam_step(self.actor.net.values, grad_theta, self.actor_adam)
            self.actor.net.set_values(values)
            diagnostics["actor_loss"] = float(np.mean(alpha * cur.log_pi - np.minimum(qa1[:, 0], qa2[:, 0])))

            if self.autotune:
                fresh = self.actor.sample_reparam(batch.s, rng)
                grad_log_alpha = -alpha * float(np.mean(fresh.log_pi + self.target_entropy))
                updated, self.alpha_adam = adam_step(np.array([self.log_alpha]),
                                                     np.array([grad_log_alpha]), self.alpha_adam)
                self.log_alpha = float(updated[0])

        self._update_critic_targets()
        self.updates += 1
        return diagnostics

    def _optim_state(self) -> Dict[str, Any]:
        return {
            **self._batch_state(),
            "actor_adam": adam_to_dict(self.actor_adam),
            "log_alpha": self.log_alpha,
            "alpha_adam": adam_to_dict(self.alpha_adam),
        }

    def _load_optim_state(self, state: Dict[str, Any]) -> None:
        self._load_batch_state(state)
        self.actor_adam = adam_from_dict(state["actor_adam"])
        self.log_alpha = float(state["log_alpha"])
        self.alpha_adam = adam_from_dict(state["alpha_adam"])


class TD3Norm(BatchAgent):
    """
    TD3 with online normalization: clipped double-Q targets, clipped target
    policy smoothing, delayed actor and target updates. The critic trains with
    Adam or SGDC; the actor always uses Adam.
    """

    algo = "td3_norm"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 buffer_rng: np.random.Generator, exploration_noise: float = 0.1,
                 target_noise: float = 0.2, noise_clip: float = 0.5, **kwargs):
        kwargs.setdefault("learning_starts", 25_000)
        super().__init__(state_dim, action_dim, rng, buffer_rng, **kwargs)
        actor_net = init_uniform(DenseNet(batch_layers(
            state_dim, action_dim, self.architecture, self.hidden_width, self.ln_affine)), rng)
        self.actor = DeterministicHead(actor_net, action_dim, exploration_noise)
        self.actor_target = DeterministicHead(actor_net.copy(), action_dim, exploration_noise)
        self.actor_adam = AdamState.zeros(actor_net.num_params, eta=self.actor_lr)
        self.target_noise = target_noise
        self.noise_clip = noise_clip

    def networks(self) -> Dict[str, DenseNet]:
        return {"actor": self.actor.net, "actor_target": self.actor_target.net,
                "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}

    def act(self, s: np.ndarray, rng: np.random.Generator) -> Action:
        if self.exploring():
            return self.random_action(rng)
        return Action(act_deterministic(self.actor, s, explore=True, rng=rng))

    def act_eval(self, s: np.ndarray) -> np.ndarray:
        return self.actor.act(s)

    def _update(self, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
        n = batch.r.shape[0]
        sd = self.state_dim

        noise = np.clip(self.target_noise * rng.standard_normal((n, self.action_dim)),
                        -self.noise_clip, self.noise_clip)
        a_next = np.clip(self.actor_target.act(batch.s_next) + noise, -1.0, 1.0)
        sa_next = state_action(batch.s_next, a_next)
        q1_next, _ = forward(self.q1_target, sa_next)
        q2_next, _ = forward(self.q2_target, sa_next)
        y = batch.r + self.gamma * (1.0 - batch.terminal) * np.minimum(q1_next[:, 0], q2_next[:, 0])
        diagnostics = {"critic_loss": self._fit_critics(batch, y)}

        if self._policy_turn():
            pi = self.actor.action_with_tape(batch.s)
            q, tape = forward(self.q1, state_action(batch.s, pi.action))
            dq_da = backward(self.q1, tape, np.full((n, 1), 1.0 / n)).inputs[:, sd:]
            grad_theta = -self.actor.backward(pi, dq_da).params
            check_finite("actor gradient", grad_theta, update=self.updates)
            values, self.actor_adam = adam_step(self.actor.net.values, grad_theta, self.actor_adam)
            self.actor.net.set_values(values)
            self.actor_target.net.set_values(
                polyak_update(self.actor_target.net.values, self.actor.net.values, self.tau))
            self._update_critic_targets()
            diagnostics["actor_loss"] = -float(np.mean(q[:, 0]))

        self.updates += 1
        return diagnostics

    def _optim_state(self) -> Dict[str, Any]:
        return {**self._batch_state(), "actor_adam": adam_to_dict(self.actor_adam)}

    def _load_optim_state(self, state: Dict[str, Any]) -> None:
        self._load_batch_state(state)
        self.actor_adam = adam_from_dict(state["actor_adam"])


def sac_update(agent: SACNorm, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
    """One SAC update on an already preprocessed batch."""
    return agent.update(batch, rng)


def td3_update(agent: TD3Norm, batch: Batch, rng: np.random.Generator) -> Dict[str, float]:
    """One TD3 update on an already preprocessed batch."""
    return agent.update(batch, rng)
