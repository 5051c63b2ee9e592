"""
Streaming actor-critic agents: Stream AC(lambda), S2AC and SDAC.

Each transition is used exactly once. There is no replay buffer, no minibatch
and no target network; the critic learns with ObGD along an eligibility trace.
Within one step every gradient and the TD error are computed from the
pre-update parameters, then the critic is updated, then the actor.
"""

import logging
from typing import Any, Dict, Literal, Optional

import numpy as np

from .agent import (
    Action,
    Agent,
    adam_from_dict,
    adam_to_dict,
    check_finite,
    state_action,
    trace_from_dict,
    trace_to_dict,
)
from .buffer import Transition
from .nn import HIDDEN_WIDTH, DEFAULT_SPARSITY, DenseNet, backward, forward, init_sparse, mlp_layers
from .optim import AdamState, ObGDConfig, TraceState, adam_step, obgd_step, obgd_step_size, trace_update
from .policies import DeterministicHead, GaussianHead, SquashedGaussianHead, act_deterministic

logger = logging.getLogger(__name__)

EntropyMode = Literal["additive", "traced"]


class StreamingAgent(Agent):
    """Shared critic machinery: one critic, one trace, ObGD, optional Q-warm-up."""

    streaming = True

    def __init__(self, state_dim: int, action_dim: int, critic: DenseNet,
                 gamma: float = 0.99, lam: float = 0.8,
                 critic_lr: float = 1.0, critic_kappa: float = 2.0,
                 q_warmup_steps: int = 0):
        super().__init__(state_dim, action_dim, gamma)
        self.critic = critic
        self.lam = lam
        self.critic_cfg = ObGDConfig(critic_lr, critic_kappa)
        self.critic_trace = TraceState.zeros(critic.num_params, gamma, lam)
        self.warmup_remaining = int(q_warmup_steps)

    def reset_traces(self) -> None:
        self.critic_trace = self.critic_trace.reset()

    def _critic_step(self, grad_phi: np.ndarray, delta: float) -> float:
        self.critic_trace = trace_update(self.critic_trace, grad_phi)
        eta_eff = obgd_step_size(delta, self.critic_trace.z, self.critic_cfg)
        self.critic.set_values(obgd_step(self.critic.values, self.critic_trace, delta, self.critic_cfg))
        return eta_eff

    def _actor_frozen(self) -> bool:
        """Consume one warm-up step; True while the policy must stay fixed."""
        if self.warmup_remaining > 0:
            self.warmup_remaining -= 1
            if self.warmup_remaining == 0:
                logger.info("Q-warm-up finished, actor updates enabled")
            return True
        return False

    def _streaming_state(self) -> Dict[str, Any]:
        return {"critic_trace": trace_to_dict(self.critic_trace), "warmup_remaining": self.warmup_remaining}

    def _load_streaming_state(self, state: Dict[str, Any]) -> None:
        self.critic_trace = trace_from_dict(state["critic_trace"])
        self.warmup_remaining = int(state["warmup_remaining"])


class StreamAC(StreamingAgent):
    """
    Stream AC(lambda): state-value critic, Gaussian actor, both trained with
    ObGD along eligibility traces, with entropy regularization.
    """

    algo = "stream_ac"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 gamma: float = 0.99, lam: float = 0.8,
                 critic_lr: float = 1.0, critic_kappa: float = 2.0,
                 actor_lr: float = 1.0, actor_kappa: float = 3.0,
                 entropy_coeff: float = 0.01, entropy_mode: EntropyMode = "additive",
                 hidden_width: int = HIDDEN_WIDTH, sparsity: float = DEFAULT_SPARSITY,
                 ln_affine: bool = False):
        if entropy_mode not in ("additive", "traced"):
            raise ValueError(f"entropy_mode must be 'additive' or 'traced', got '{entropy_mode}'")
        critic = init_sparse(DenseNet(mlp_layers(state_dim, 1, hidden_width, ln_affine=ln_affine)), sparsity, rng)
        super().__init__(state_dim, action_dim, critic, gamma, lam, critic_lr, critic_kappa)
        actor_net = DenseNet(mlp_layers(state_dim, 2 * action_dim, hidden_width, ln_affine=ln_affine))
        self.actor = GaussianHead(init_sparse(actor_net, sparsity, rng), action_dim)
        self.actor_cfg = ObGDConfig(actor_lr, actor_kappa)
        self.actor_trace = TraceState.zeros(actor_net.num_params, gamma, lam)
        self.entropy_coeff = entropy_coeff
        self.entropy_mode = entropy_mode

    def networks(self) -> Dict[str, DenseNet]:
        return {"actor": self.actor.net, "critic": self.critic}

    def reset_traces(self) -> None:
        super().reset_traces()
        self.actor_trace = self.actor_trace.reset()

    def act(self, s: np.ndarray, rng: np.random.Generator) -> Action:
        return Action(self.actor.evaluate(s, rng=rng).action)

    def act_eval(self, s: np.ndarray) -> np.ndarray:
        return self.actor.mean_action(s)

    def observe(self, tr: Transition, rng: np.random.Generator) -> Dict[str, float]:
        v, v_tape = forward(self.critic, tr.s)
        v_next, _ = forward(self.critic, tr.s_next)
        delta = float(tr.r_scaled + self.gamma * (1.0 - float(tr.terminal)) * v_next[0] - v[0])
        check_finite("TD error", delta, update=self.updates)

        grad_v = backward(self.critic, v_tape, np.ones(1)).params
        sample = self.actor.evaluate(tr.s, action=tr.a)
        grad_log_pi = self.actor.log_prob_grad(sample)
        grad_entropy = self.actor.entropy_grad(sample)
        check_finite("actor gradient", grad_log_pi, update=self.updates)

        eta_critic = self._critic_step(grad_v, delta)

        if self.entropy_mode == "additive":
            self.actor_trace = trace_update(self.actor_trace, grad_log_pi)
            bonus = self.entropy_coeff * grad_entropy
        else:
            self.actor_trace = trace_update(
                self.actor_trace, grad_log_pi + self.entropy_coeff * np.sign(delta) * grad_entropy)
            bonus = None
        eta_actor = obgd_step_size(delta, self.actor_trace.z, self.actor_cfg)
        self.actor.net.set_values(obgd_step(self.actor.net.values, self.actor_trace, delta,
                                            self.actor_cfg, bonus))
        self.updates += 1
        return {"delta": delta, "eta_eff": eta_critic, "eta_eff_actor": eta_actor}

    def _optim_state(self) -> Dict[str, Any]:
        return {**self._streaming_state(), "actor_trace": trace_to_dict(self.actor_trace)}

    def _load_optim_state(self, state: Dict[str, Any]) -> None:
        self._load_streaming_state(state)
        self.actor_trace = trace_from_dict(state["actor_trace"])


class S2AC(StreamingAgent):
    """
    Streaming soft actor-critic: soft Q critic without target network, squashed
    Gaussian actor trained with the reparameterized objective and Adam, entropy
    coefficient alpha0 / sigma_r.
    """

    algo = "s2ac"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 gamma: float = 0.99, lam: float = 0.8,
                 critic_lr: float = 1.0, critic_kappa: float = 2.0,
                 actor_lr: float = 3e-4, alpha0: float = 0.01, adaptive_alpha: bool = True,
                 hidden_width: int = HIDDEN_WIDTH, sparsity: float = DEFAULT_SPARSITY,
                 ln_affine: bool = False, q_warmup_steps: int = 0):
        critic = init_sparse(DenseNet(mlp_layers(state_dim + action_dim, 1, hidden_width, ln_affine=ln_affine)),
                             sparsity, rng)
        super().__init__(state_dim, action_dim, critic, gamma, lam, critic_lr, critic_kappa, q_warmup_steps)
        actor_net = DenseNet(mlp_layers(state_dim, 2 * action_dim, hidden_width, ln_affine=ln_affine))
        self.actor = SquashedGaussianHead(init_sparse(actor_net, sparsity, rng), action_dim)
        self.actor_adam = AdamState.zeros(actor_net.num_params, eta=actor_lr)
        self.alpha0 = alpha0
        self.adaptive_alpha = adaptive_alpha

    def networks(self) -> Dict[str, DenseNet]:
        return {"actor": self.actor.net, "critic": self.critic}

    def alpha(self, sigma_r: float) -> float:
        return self.alpha0 / sigma_r if self.adaptive_alpha else self.alpha0

    def act(self, s: np.ndarray, rng: np.random.Generator) -> Action:
        sample = self.actor.sample_reparam(s, rng)
        return Action(sample.action, sample.eps)

    def act_eval(self, s: np.ndarray) -> np.ndarray:
        return self.actor.mean_action(s)

    def observe(self, tr: Transition, rng: np.random.Generator) -> Dict[str, float]:
        """
        One inner-loop iteration of streaming soft actor-critic.

        The actor objective alpha * log pi(a|s) - Q(s, a) is evaluated at
        a = f(eps; s) with the noise that produced the executed action (a fresh
        draw when the transition carries none).
        """
        sd = self.state_dim
        alpha = self.alpha(tr.sigma_r)

        q, q_tape = forward(self.critic, state_action(tr.s, tr.a))
        nxt = self.actor.sample_reparam(tr.s_next, rng)
        q_next, _ = forward(self.critic, state_action(tr.s_next, nxt.action))
        soft_next = q_next[0] - alpha * float(nxt.log_pi)
        delta = float(tr.r_scaled + self.gamma * (1.0 - float(tr.terminal)) * soft_next - q[0])
        check_finite("TD error", delta, update=self.updates)
        grad_phi = backward(self.critic, q_tape, np.ones(1)).params

        cur = self.actor.sample_reparam(tr.s, rng, eps=tr.noise)
        _, pi_tape = forward(self.critic, state_action(tr.s, cur.action))
        dq_da = backward(self.critic, pi_tape, np.ones(1)).inputs[sd:]
        grad_theta = self.actor.backward(cur, -dq_da, alpha).params
        check_finite("actor gradient", grad_theta, update=self.updates)

        eta_eff = self._critic_step(grad_phi, delta)
        if not self._actor_frozen():
            values, self.actor_adam = adam_step(self.actor.net.values, grad_theta, self.actor_adam)
            self.actor.net.set_values(values)
        self.updates += 1
        return {"delta": delta, "eta_eff": eta_eff, "alpha": alpha}

    def _optim_state(self) -> Dict[str, Any]:
        return {**self._streaming_state(), "actor_adam": adam_to_dict(self.actor_adam)}

    def _load_optim_state(self, state: Dict[str, Any]) -> None:
        self._load_streaming_state(state)
        self.actor_adam = adam_from_dict(state["actor_adam"])


class SDAC(StreamingAgent):
    """
    Streaming deterministic actor-critic: Q critic without target network whose
    bootstrap action carries Gaussian target noise, deterministic actor trained
    with the deterministic policy gradient and Adam.
    """

    algo = "sdac"

    def __init__(self, state_dim: int, action_dim: int, rng: np.random.Generator,
                 gamma: float = 0.99, lam: float = 0.8,
                 critic_lr: float = 1.0, critic_kappa: float = 2.0,
                 actor_lr: float = 3e-4, exploration_noise: float = 0.2, target_noise: float = 0.2,
                 hidden_width: int = HIDDEN_WIDTH, sparsity: float = DEFAULT_SPARSITY,
                 ln_affine: bool = False, q_warmup_steps: int = 0):
        critic = init_sparse(DenseNet(mlp_layers(state_dim + action_dim, 1, hidden_width, ln_affine=ln_affine)),
                             sparsity, rng)
        super().__init__(state_dim, action_dim, critic, gamma, lam, critic_lr, critic_kappa, q_warmup_steps)
        actor_net = DenseNet(mlp_layers(state_dim, action_dim, hidden_width, ln_affine=ln_affine))
        self.actor = DeterministicHead(init_sparse(actor_net, sparsity, rng), action_dim, exploration_noise)
        self.actor_adam = AdamState.zeros(actor_net.num_params, eta=actor_lr)
        self.target_noise = target_noise

    @property
    def exploration_noise(self) -> float:
        return self.actor.exploration_sigma

    def networks(self) -> Dict[str, DenseNet]:
        return {"actor": self.actor.net, "critic": self.critic}

    def act(self, s: np.ndarray, rng: np.random.Generator) -> Action:
        return Action(act_deterministic(self.actor, s, explore=True, rng=rng))

    def act_eval(self, s: np.ndarray) -> np.ndarray:
        return self.actor.act(s)

    def observe(self, tr: Transition, rng: np.random.Generator) -> Dict[str, float]:
        sd = self.state_dim

        q, q_tape = forward(self.critic, state_action(tr.s, tr.a))
        a_next = self.actor.act(tr.s_next)
        if self.target_noise > 0.0:
            a_next = a_next + self.target_noise * rng.standard_normal(self.action_dim)
        q_next, _ = forward(self.critic, state_action(tr.s_next, a_next))
        delta = float(tr.r_scaled + self.gamma * (1.0 - float(tr.terminal)) * q_next[0] - q[0])
        check_finite("TD error", delta, update=self.updates)
        grad_phi = backward(self.critic, q_tape, np.ones(1)).params

        pi = self.actor.action_with_tape(tr.s)
        _, pi_tape = forward(self.critic, state_action(tr.s, pi.action))
        dq_da = backward(self.critic, pi_tape, np.ones(1)).inputs[sd:]
        # J = -Q(s, pi(s)): descending J ascends Q
        grad_theta = -self.actor.backward(pi, dq_da).params
        check_finite("actor gradient", grad_theta, update=self.updates)

        eta_eff = self._critic_step(grad_phi, delta)
        if not self._actor_frozen():
            values, self.actor_adam = adam_step(self.actor.net.values, grad_theta, self.actor_adam)
            self.actor.net.set_values(values)
        self.updates += 1
        return {"delta": delta, "eta_eff": eta_eff}

    def _optim_state(self) -> Dict[str, Any]:
        return {**self._streaming_state(), "actor_adam": adam_to_dict(self.actor_adam)}

    def _load_optim_state(self, state: Dict[str, Any]) -> None:
        self._load_streaming_state(state)
        self.actor_adam = adam_from_dict(state["actor_adam"])


def s2ac_step(agent: S2AC, transition: Transition, rng: np.random.Generator) -> Dict[str, float]:
    return agent.observe(transition, rng)


def sdac_step(agent: SDAC, transition: Transition, rng: np.random.Generator) -> Dict[str, float]:
    return agent.observe(transition, rng)


def streamac_step(agent: StreamAC, transition: Transition, rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    return agent.observe(transition, rng)
