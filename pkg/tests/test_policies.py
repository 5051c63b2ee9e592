"""
Tests for the policy heads and their pathwise gradients.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent / "src"))

from core.nn import DenseNet, init_uniform, mlp_layers
from core.policies import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    DeterministicHead,
    GaussianHead,
    SquashedGaussianHead,
    act_deterministic,
    softplus,
    squashed_log_prob,
    tanh_correction,
)


def make_net(in_dim, out_dim, seed=0):
    return init_uniform(DenseNet(mlp_layers(in_dim, out_dim, hidden_width=6)), np.random.default_rng(seed))


def numeric_grad(net, loss, h=1e-6):
    base = net.values.copy()
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        plus = base.copy()
        plus[i] += h
        net.set_values(plus)
        f_plus = loss()
        minus = base.copy()
        minus[i] -= h
        net.set_values(minus)
        f_minus = loss()
        grad[i] = (f_plus - f_minus) / (2 * h)
    net.set_values(base)
    return grad


class TestHelpers:

    def test_softplus(self):
        x = np.array([-50.0, -1.0, 0.0, 2.0, 50.0])
        expected = np.array([math.log1p(math.exp(v)) if v < 30 else v for v in x])
        assert np.allclose(softplus(x), expected, atol=1e-12)

    def test_tanh_correction(self):
        """Stable form equals log(1 - tanh(u)^2) summed over action dims."""
        u = np.array([-2.0, 0.3, 1.7])
        expected = np.sum(np.log(1.0 - np.tanh(u) ** 2))
        assert abs(tanh_correction(u) - expected) < 1e-10


class TestSquashedGaussian:
    """Test the tanh-squashed Gaussian head."""

    def test_output_size_checked(self):
        with pytest.raises(ValueError, match="needs 4 outputs"):
            SquashedGaussianHead(make_net(3, 3), action_dim=2)

    def test_action_bounds_and_log_std_range(self):
        head = SquashedGaussianHead(make_net(3, 4), action_dim=2)
        rng = np.random.default_rng(0)
        for _ in range(20):
            sample = head.sample_reparam(rng.normal(size=3), rng)
            assert np.all(np.abs(sample.action) <= 1.0)
            assert np.all(sample.log_std >= LOG_STD_MIN) and np.all(sample.log_std <= LOG_STD_MAX)

    def test_frozen_noise_reproduces_sample(self):
        """Passing eps back in gives the same action and log-probability."""
        head = SquashedGaussianHead(make_net(3, 2), action_dim=1)
        s = np.array([0.5, -0.5, 1.0])
        first = head.sample_reparam(s, np.random.default_rng(1))
        again = head.sample_reparam(s, eps=first.eps)
        assert np.array_equal(first.action, again.action)
        assert float(first.log_pi) == float(again.log_pi)

    def test_log_prob_matches_sample(self):
        head = SquashedGaussianHead(make_net(3, 2), action_dim=1)
        s = np.array([0.1, 0.2, 0.3])
        sample = head.sample_reparam(s, np.random.default_rng(2))
        assert abs(float(head.log_prob(s, sample.u)) - float(sample.log_pi)) < 1e-12

    def test_pathwise_gradient(self):
        """d/dtheta [c . a + k * log_pi] with eps held fixed."""
        head = SquashedGaussianHead(make_net(3, 4, seed=3), action_dim=2)
        s = np.array([0.2, -0.4, 0.9])
        eps = np.array([0.7, -1.1])
        c = np.array([1.5, -0.5])
        k = 0.3

        sample = head.sample_reparam(s, eps=eps)
        analytic = head.backward(sample, c, k).params

        def loss():
            x = head.sample_reparam(s, eps=eps)
            return float(np.dot(c, x.action) + k * x.log_pi)

        assert np.allclose(analytic, numeric_grad(head.net, loss), atol=1e-6, rtol=1e-4)

    def test_batched_pathwise_gradient(self):
        """Batched backward sums per-sample losses."""
        head = SquashedGaussianHead(make_net(3, 2, seed=4), action_dim=1)
        s = np.random.default_rng(5).normal(size=(4, 3))
        eps = np.random.default_rng(6).normal(size=(4, 1))
        sample = head.sample_reparam(s, eps=eps)
        analytic = head.backward(sample, np.full((4, 1), 0.25), np.full(4, 0.1)).params

        def loss():
            x = head.sample_reparam(s, eps=eps)
            return float(np.sum(0.25 * x.action[:, 0] + 0.1 * x.log_pi))

        assert np.allclose(analytic, numeric_grad(head.net, loss), atol=1e-6, rtol=1e-4)

    def test_mean_action(self):
        head = SquashedGaussianHead(make_net(3, 2), action_dim=1)
        s = np.zeros(3)
        mu, _ = head.distribution(s)
        assert np.allclose(head.mean_action(s), np.tanh(mu))


class TestSquashedDensity:
    """Test the tanh-corrected log-density against direct density calculations."""

    mu, std = 0.3, 0.8

    def fixed_head(self):
        """A head whose output ignores the state: mean mu, standard deviation std."""
        net = DenseNet(mlp_layers(3, 2, hidden_width=6))
        raw = math.atanh((math.log(self.std) - LOG_STD_MIN) / (0.5 * (LOG_STD_MAX - LOG_STD_MIN)) - 1.0)
        values = np.zeros(net.num_params)
        values[-2:] = [self.mu, raw]
        net.set_values(values)
        return SquashedGaussianHead(net, action_dim=1)

    def density(self, a):
        """Change of variables: N(atanh(a); mu, std) * d atanh(a) / da."""
        u = np.arctanh(a)
        normal = np.exp(-0.5 * ((u - self.mu) / self.std) ** 2) / (self.std * math.sqrt(2.0 * math.pi))
        return normal / (1.0 - a * a)

    def test_standard_normal_at_origin(self):
        """mu = 0, std = 1, u = 0: the correction vanishes, leaving -log(2 pi) / 2."""
        value = squashed_log_prob(np.zeros(1), np.zeros(1), np.zeros(1))
        assert abs(float(value) + 0.9189385332046727) < 1e-12

    def test_fixed_head_distribution(self):
        mu, log_std = self.fixed_head().distribution(np.array([3.0, -1.0, 0.5]))
        assert abs(mu[0] - self.mu) < 1e-12
        assert abs(log_std[0] - math.log(self.std)) < 1e-12

    def test_matches_change_of_variables(self):
        head = self.fixed_head()
        s = np.zeros(3)
        a = np.linspace(-0.99, 0.99, 41)
        log_p = head.log_prob(s, np.arctanh(a)[:, None])
        assert np.allclose(np.exp(log_p), self.density(a), rtol=1e-8, atol=0.0)

    def test_dimensions_factorize(self):
        u = np.array([0.4, -1.2])
        mu = np.array([0.1, -0.3])
        log_std = np.array([-0.5, 0.2])
        joint = squashed_log_prob(u, mu, log_std)
        split = sum(float(squashed_log_prob(u[i:i + 1], mu[i:i + 1], log_std[i:i + 1])) for i in range(2))
        assert abs(float(joint) - split) < 1e-12

    def test_sample_histogram(self):
        """10^6 reparameterized samples fall into 50 bins as the density predicts."""
        head = self.fixed_head()
        eps = np.random.default_rng(9).standard_normal((1_000_000, 1))
        sample = head.sample_reparam(np.zeros(3), eps=eps)
        counts, edges = np.histogram(sample.action[:, 0], bins=50, range=(-1.0, 1.0))
        observed = counts / len(eps)

        fine = 400
        width = (edges[1] - edges[0]) / fine
        expected = np.array([
            np.sum(self.density(lo + width * (np.arange(fine) + 0.5))) * width for lo in edges[:-1]
        ])
        assert abs(expected.sum() - 1.0) < 1e-3
        # relative check on bins with at least 1% of the mass
        heavy = expected >= 0.01
        assert heavy.sum() > 20
        assert np.all(np.abs(observed[heavy] - expected[heavy]) <= 0.05 * expected[heavy])
        assert np.sum(np.abs(observed - expected)) < 0.02


class TestDeterministicHead:
    """Test the deterministic tanh policy."""

    def test_gradient(self):
        head = DeterministicHead(make_net(3, 2, seed=7), action_dim=2)
        s = np.array([1.0, 0.0, -1.0])
        c = np.array([0.4, -1.2])
        analytic = head.backward(head.action_with_tape(s), c).params
        numeric = numeric_grad(head.net, lambda: float(np.dot(c, head.act(s))))
        assert np.allclose(analytic, numeric, atol=1e-6, rtol=1e-4)

    def test_exploration_is_clipped(self):
        head = DeterministicHead(make_net(3, 1), action_dim=1)
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = act_deterministic(head, np.zeros(3), explore=True, sigma=5.0, rng=rng)
            assert -1.0 <= a[0] <= 1.0

    def test_zero_noise_is_greedy(self):
        head = DeterministicHead(make_net(3, 1), action_dim=1, exploration_sigma=0.0)
        s = np.array([0.3, 0.3, 0.3])
        assert np.array_equal(act_deterministic(head, s, explore=True), head.act(s))


class TestGaussianHead:
    """Test the unsquashed Gaussian used by Stream AC."""

    def test_log_prob(self):
        head = GaussianHead(make_net(3, 2), action_dim=1)
        sample = head.evaluate(np.zeros(3), action=np.array([0.5]))
        var = sample.std[0] ** 2
        expected = -0.5 * (0.5 - sample.mu[0]) ** 2 / var - 0.5 * math.log(2 * math.pi * var)
        assert abs(head.log_prob(sample) - expected) < 1e-12

    def test_log_prob_gradient(self):
        head = GaussianHead(make_net(3, 4, seed=8), action_dim=2)
        s = np.array([0.3, -0.2, 0.8])
        a = np.array([0.1, -0.6])
        analytic = head.log_prob_grad(head.evaluate(s, action=a))
        numeric = numeric_grad(head.net, lambda: head.log_prob(head.evaluate(s, action=a)))
        assert np.allclose(analytic, numeric, atol=1e-6, rtol=1e-4)

    def test_entropy_gradient(self):
        head = GaussianHead(make_net(3, 2, seed=9), action_dim=1)
        s = np.array([-0.5, 0.5, 0.0])
        analytic = head.entropy_grad(head.evaluate(s, action=np.zeros(1)))
        numeric = numeric_grad(head.net, lambda: head.entropy(head.evaluate(s, action=np.zeros(1))))
        assert np.allclose(analytic, numeric, atol=1e-6, rtol=1e-4)
