"""
Tests for the batch baselines SAC-norm and TD3-norm.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent / "src"))

from core.batch import SACNorm, TD3Norm, batch_layers, sac_update, td3_update
from core.buffer import Batch
from core.envs import get_spec, make_env
from core.errors import ContractViolation, InvalidArgumentError
from core.agent import state_action
from core.normalize import apply_normalizer
from core.nn import backward, forward
from core.optim import adam_step, polyak_update, sgdc_step

SMALL = dict(hidden_width=8, buffer_size=100, batch_size=4, learning_starts=2)


def make_sac(**kwargs):
    return SACNorm(3, 1, np.random.default_rng(0), np.random.default_rng(1), **{**SMALL, **kwargs})


def make_td3(**kwargs):
    return TD3Norm(3, 1, np.random.default_rng(0), np.random.default_rng(1), **{**SMALL, **kwargs})


def feed(agent, n, seed=0):
    """Run n environment steps on pendulum, letting the agent learn online."""
    env = make_env(get_spec("pendulum", horizon=50))
    env.rng = np.random.default_rng(seed)
    rng = np.random.default_rng(seed + 100)
    raw = env.reset()
    s = agent.begin_episode(raw)
    infos = []
    for _ in range(n):
        action = agent.act(s, rng)
        result = env.step(np.clip(action.action, -1.0, 1.0))
        tr = agent.make_transition(raw, s, action, result)
        infos.append(agent.observe(tr, rng))
        if result.truncated:
            raw = env.reset()
            s = agent.begin_episode(raw)
        else:
            raw, s = result.s_next, tr.s_next
    return infos


def critic_params(agent):
    return np.concatenate([agent.q1.values, agent.q2.values])


class TestArchitecture:

    def test_stream_architecture_matches_streaming_agents(self):
        layers = batch_layers(4, 1, "stream", hidden_width=8)
        assert all(spec.layernorm for spec in layers[:2])
        assert layers[0].activation == "leaky_relu"

    def test_plain_architecture(self):
        layers = batch_layers(4, 1, "plain", hidden_width=8)
        assert not any(spec.layernorm for spec in layers)
        assert layers[0].activation == "relu"

    def test_unknown_architecture(self):
        with pytest.raises(InvalidArgumentError, match="Unknown architecture"):
            batch_layers(4, 1, "resnet")

    def test_unknown_critic_optimizer(self):
        with pytest.raises(InvalidArgumentError, match="Batch critics train with"):
            make_td3(critic_optimizer="obgd")


class TestDataPath:
    """Test replay, exploration and batch preprocessing."""

    def test_learning_starts(self):
        """No update until env_steps reaches learning_starts; then one per step."""
        agent = make_td3(learning_starts=3)
        infos = feed(agent, 5)
        assert infos[0] == {} and infos[1] == {}
        assert all("critic_loss" in info for info in infos[2:])
        assert agent.critic_updates == 3
        assert len(agent.buffer) == 5

    def test_random_actions_while_exploring(self):
        agent = make_sac(learning_starts=10)
        rng = np.random.default_rng(0)
        actions = [agent.act(np.zeros(3), rng) for _ in range(20)]
        assert all(a.noise is None and -1.0 <= a.action[0] <= 1.0 for a in actions)
        assert len({float(a.action[0]) for a in actions}) == 20

    def test_buffer_holds_raw_transitions(self):
        agent = make_td3(learning_starts=100)
        feed(agent, 3)
        assert np.all(np.abs(agent.buffer.s[:3, :2]) <= 1.0)
        assert np.all(agent.buffer.r[:3] <= 0.0)

    def test_preprocess_uses_current_statistics(self):
        agent = make_td3(learning_starts=100)
        feed(agent, 10)
        raw = agent.buffer.sample(4, np.random.default_rng(0))
        batch = agent.preprocess(raw)
        assert np.allclose(batch.s, apply_normalizer(raw.s, agent.normalizer))
        assert np.allclose(batch.s_next, apply_normalizer(raw.s_next, agent.normalizer))
        assert np.allclose(batch.r, raw.r / agent.reward_scaler.sigma)

    def test_update_on_empty_buffer(self):
        agent = make_td3()
        batch = Batch(np.zeros((1, 3)), np.zeros((1, 1)), np.zeros(1), np.zeros((1, 3)), np.zeros(1))
        with pytest.raises(ContractViolation, match="before any transition"):
            td3_update(agent, batch, np.random.default_rng(0))


class TestTD3Norm:
    """Test delayed policy and target updates."""

    def test_delayed_actor_and_targets(self):
        agent = make_td3()
        feed(agent, 1)
        actor = agent.actor.net.values.copy()
        target = agent.q1_target.values.copy()

        feed(agent, 1)  # critic update 1
        assert agent.critic_updates == 1
        assert np.array_equal(agent.actor.net.values, actor)
        assert np.array_equal(agent.q1_target.values, target)

        feed(agent, 1)  # critic update 2 is a policy turn
        assert not np.array_equal(agent.actor.net.values, actor)
        assert not np.array_equal(agent.q1_target.values, target)
        assert not np.array_equal(agent.actor_target.net.values, agent.actor.net.values)

    def test_sgdc_step_is_bounded(self):
        """One SGDC update moves the twin critics by at most eta * h."""
        agent = make_td3(critic_optimizer="sgdc", sgdc_lr=0.5, sgdc_clip=1.0)
        feed(agent, 1)
        before = critic_params(agent)
        feed(agent, 1)
        assert np.linalg.norm(critic_params(agent) - before) <= 0.5 + 1e-12

    def test_adam_critic_state(self):
        agent = make_td3(critic_optimizer="adam")
        feed(agent, 3)
        assert agent.critic_adam.t == 2
        assert make_td3(critic_optimizer="sgdc").critic_adam is None

    def test_eval_action_is_greedy(self):
        agent = make_td3()
        s = np.array([0.1, -0.3, 0.2])
        assert np.array_equal(agent.act_eval(s), agent.actor.act(s))


class TestSACNorm:
    """Test soft actor-critic with entropy autotuning."""

    def test_targets_track_every_update(self):
        agent = make_sac()
        feed(agent, 1)
        target = agent.q1_target.values.copy()
        feed(agent, 1)
        assert not np.array_equal(agent.q1_target.values, target)

    def test_autotune(self):
        """alpha moves on policy turns only."""
        agent = make_sac(alpha_init=1.0)
        assert agent.target_entropy == -1.0
        feed(agent, 2)
        assert agent.log_alpha == 0.0
        feed(agent, 1)
        assert agent.log_alpha != 0.0

    def test_fixed_alpha(self):
        agent = make_sac(alpha_init=0.2, autotune=False)
        feed(agent, 6)
        assert abs(agent.alpha - 0.2) < 1e-12

    def test_update_diagnostics(self):
        agent = make_sac()
        feed(agent, 2)
        batch = agent.preprocess(agent.buffer.sample(4, np.random.default_rng(0)))
        info = sac_update(agent, batch, np.random.default_rng(1))
        assert {"critic_loss", "alpha", "actor_loss"} <= set(info)
        assert info["critic_loss"] >= 0.0


class TestBatchState:
    """Test save / load of batch agents."""

    @pytest.mark.parametrize("factory", [make_sac, make_td3])
    def test_round_trip(self, factory):
        a = factory()
        feed(a, 7)
        b = factory()
        b.load_state_dict(a.state_dict())
        assert (b.env_steps, b.critic_updates, len(b.buffer)) == (a.env_steps, a.critic_updates, len(a.buffer))
        for name, net in a.networks().items():
            assert np.array_equal(net.values, b.networks()[name].values)
        assert np.array_equal(a.buffer.s, b.buffer.s)

    def test_optimizer_mismatch(self):
        a = make_td3(critic_optimizer="adam")
        b = make_td3(critic_optimizer="sgdc")
        with pytest.raises(ContractViolation, match="Critic optimizer differs"):
            b.load_state_dict(a.state_dict())


def sampled_batch(agent, seed=0):
    return agent.preprocess(agent.buffer.sample(4, np.random.default_rng(seed)))


def expected_critics(agent, batch, y):
    """One optimizer step on mean((Q1 - y)^2) + mean((Q2 - y)^2), written out."""
    n = len(y)
    sa = state_action(batch.s, batch.a)
    grads = []
    for net in (agent.q1, agent.q2):
        q, tape = forward(net, sa)
        grads.append(backward(net, tape, (2.0 * (q[:, 0] - y) / n)[:, None]).params)
    params = np.concatenate([agent.q1.values, agent.q2.values])
    grad = np.concatenate(grads)
    if agent.critic_adam is not None:
        params, _ = adam_step(params, grad, agent.critic_adam)
    else:
        params = sgdc_step(params, grad, agent.sgdc_cfg)
    split = agent.q1.num_params
    q1, q2 = agent.q1.copy(), agent.q2.copy()
    q1.set_values(params[:split])
    q2.set_values(params[split:])
    return q1, q2


class TestUpdateOracles:
    """One full update on a fixed batch, recomputed step by step from the pre-update agent."""

    @pytest.mark.parametrize("critic_optimizer", ["adam", "sgdc"])
    def test_td3_policy_turn(self, critic_optimizer):
        agent = make_td3(critic_optimizer=critic_optimizer)
        feed(agent, 2)
        assert agent.critic_updates == 1
        batch = sampled_batch(agent)
        n, gamma, tau = 4, agent.gamma, agent.tau

        rng = np.random.default_rng(5)
        noise = np.clip(0.2 * rng.standard_normal((n, 1)), -0.5, 0.5)
        a_next = np.clip(np.tanh(forward(agent.actor_target.net, batch.s_next)[0]) + noise, -1.0, 1.0)
        sa_next = state_action(batch.s_next, a_next)
        q_next = np.minimum(forward(agent.q1_target, sa_next)[0][:, 0], forward(agent.q2_target, sa_next)[0][:, 0])
        y = batch.r + gamma * (1.0 - batch.terminal) * q_next
        q1, q2 = expected_critics(agent, batch, y)

        # deterministic policy gradient through the freshly updated first critic
        pre, actor_tape = forward(agent.actor.net, batch.s)
        a = np.tanh(pre)
        q, q_tape = forward(q1, state_action(batch.s, a))
        dq_da = backward(q1, q_tape, np.full((n, 1), 1.0 / n)).inputs[:, 3:]
        grad_theta = -backward(agent.actor.net, actor_tape, dq_da * (1.0 - a * a)).params
        actor, _ = adam_step(agent.actor.net.values, grad_theta, agent.actor_adam)
        actor_target = polyak_update(agent.actor_target.net.values, actor, tau)
        q1_target = polyak_update(agent.q1_target.values, q1.values, tau)
        q2_target = polyak_update(agent.q2_target.values, q2.values, tau)

        info = td3_update(agent, batch, np.random.default_rng(5))
        assert abs(info["actor_loss"] + np.mean(q[:, 0])) < 1e-10
        assert np.allclose(agent.q1.values, q1.values, rtol=0.0, atol=1e-10)
        assert np.allclose(agent.q2.values, q2.values, rtol=0.0, atol=1e-10)
        assert np.allclose(agent.actor.net.values, actor, rtol=0.0, atol=1e-10)
        assert np.allclose(agent.actor_target.net.values, actor_target, rtol=0.0, atol=1e-10)
        assert np.allclose(agent.q1_target.values, q1_target, rtol=0.0, atol=1e-10)
        assert np.allclose(agent.q2_target.values, q2_target, rtol=0.0, atol=1e-10)

    def test_td3_critic_only_turn(self):
        agent = make_td3()
        feed(agent, 3)
        assert agent.critic_updates == 2
        batch = sampled_batch(agent)
        actor_before = agent.actor.net.values.copy()
        target_before = agent.q1_target.values.copy()

        rng = np.random.default_rng(6)
        noise = np.clip(0.2 * rng.standard_normal((4, 1)), -0.5, 0.5)
        a_next = np.clip(agent.actor_target.act(batch.s_next) + noise, -1.0, 1.0)
        sa_next = state_action(batch.s_next, a_next)
        q_next = np.minimum(forward(agent.q1_target, sa_next)[0][:, 0], forward(agent.q2_target, sa_next)[0][:, 0])
        q1, _ = expected_critics(agent, batch, batch.r + agent.gamma * (1.0 - batch.terminal) * q_next)

        td3_update(agent, batch, np.random.default_rng(6))
        assert np.allclose(agent.q1.values, q1.values, rtol=0.0, atol=1e-10)
        assert np.array_equal(agent.actor.net.values, actor_before)
        assert np.array_equal(agent.q1_target.values, target_before)

    def test_sac_policy_turn(self):
        agent = make_sac(alpha_init=0.5)
        feed(agent, 2)
        assert agent.critic_updates == 1
        batch = sampled_batch(agent)
        n, gamma, tau = 4, agent.gamma, agent.tau
        alpha = agent.alpha
        half_range = 0.5 * (agent.actor.log_std_max - agent.actor.log_std_min)

        rng = np.random.default_rng(8)
        nxt = agent.actor.sample_reparam(batch.s_next, rng)
        sa_next = state_action(batch.s_next, nxt.action)
        q_next = np.minimum(forward(agent.q1_target, sa_next)[0][:, 0], forward(agent.q2_target, sa_next)[0][:, 0])
        y = batch.r + gamma * (1.0 - batch.terminal) * (q_next - alpha * nxt.log_pi)
        q1, q2 = expected_critics(agent, batch, y)

        # loss = mean(alpha * log_pi - min(Q1, Q2)) with the noise held fixed
        cur = agent.actor.sample_reparam(batch.s, rng)
        a = cur.action
        sa = state_action(batch.s, a)
        (qa1, tape1), (qa2, tape2) = forward(q1, sa), forward(q2, sa)
        dq1 = backward(q1, tape1, np.ones((n, 1))).inputs[:, 3:]
        dq2 = backward(q2, tape2, np.ones((n, 1))).inputs[:, 3:]
        dmin_da = np.where((qa1[:, 0] <= qa2[:, 0])[:, None], dq1, dq2)
        dl_du = -dmin_da / n * (1.0 - a * a) + alpha / n * 2.0 * a
        dl_dlog_std = dl_du * cur.eps * np.exp(cur.log_std) - alpha / n
        dl_draw = dl_dlog_std * half_range * (1.0 - cur.squash ** 2)
        grad_theta = backward(agent.actor.net, cur.tape, np.concatenate([dl_du, dl_draw], axis=1)).params
        actor, _ = adam_step(agent.actor.net.values, grad_theta, agent.actor_adam)

        fresh = agent.actor.sample_reparam(batch.s, rng)
        grad_log_alpha = -alpha * np.mean(fresh.log_pi - 1.0)
        log_alpha, _ = adam_step(np.array([agent.log_alpha]), np.array([grad_log_alpha]), agent.alpha_adam)
        q1_target = polyak_update(agent.q1_target.values, q1.values, tau)

        info = sac_update(agent, batch, np.random.default_rng(8))
        assert abs(info["alpha"] - alpha) < 1e-12
        assert abs(info["actor_loss"] - np.mean(alpha * cur.log_pi - np.minimum(qa1[:, 0], qa2[:, 0]))) < 1e-10
        assert np.allclose(agent.q1.values, q1.values, rtol=0.0, atol=1e-10)
        assert np.allclose(agent.q2.values, q2.values, rtol=0.0, atol=1e-10)
        assert np.allclose(agent.actor.net.values, actor, rtol=0.0, atol=1e-10)
        assert abs(agent.log_alpha - log_alpha[0]) < 1e-10
        assert np.allclose(agent.q1_target.values, q1_target, rtol=0.0, atol=1e-10)

    @pytest.mark.parametrize("offset, direction", [(1.0, 1.0), (-1.0, -1.0)])
    def test_autotune_direction(self, offset, direction):
        """alpha grows when the policy entropy is below target and shrinks when above."""
        agent = make_sac()
        feed(agent, 2)
        batch = sampled_batch(agent)
        rng = np.random.default_rng(8)
        agent.actor.sample_reparam(batch.s_next, rng)
        agent.actor.sample_reparam(batch.s, rng)
        entropy = -float(np.mean(agent.actor.sample_reparam(batch.s, rng).log_pi))
        agent.target_entropy = entropy + offset
        before = agent.log_alpha
        sac_update(agent, batch, np.random.default_rng(8))
        assert np.sign(agent.log_alpha - before) == direction
