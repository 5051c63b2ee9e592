"""
Desk-scale continuous-control tasks.

Pendulum swing-up and cartpole swing-up, both integrated with semi-implicit
Euler. Agents always act in [-1, 1]^D; the environment maps actions to
physical units through `actuator_gain`, `actuator_limit` and the task's
maximum torque/force. Physics parameters can be scaled multiplicatively to
build a shifted ("real") version of a task.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, NamedTuple, Optional

import numpy as np

from .errors import ContractViolation, InvalidArgumentError

logger = logging.getLogger(__name__)

PENDULUM_PHYSICS = {
    "mass": 1.0,
    "length": 1.0,
    "gravity": 10.0,
    "dt": 0.05,
    "max_torque": 2.0,
    "max_speed": 8.0,
    "damping": 0.0,
    "actuator_gain": 1.0,
    "actuator_limit": 1.0,
}

CARTPOLE_PHYSICS = {
    "cart_mass": 1.0,
    "pole_mass": 0.1,
    "pole_length": 0.5,
    "gravity": 9.8,
    "dt": 0.02,
    "max_force": 10.0,
    "actuator_gain": 1.0,
    "actuator_limit": 1.0,
}


@dataclass(frozen=True)
class EnvSpec:
    """
    Task description.

    Attributes:
        name: Task name ("pendulum" or "cartpole")
        state_dim: Observation size
        action_dim: Action size
        horizon: Steps before truncation
        physics: Base physical parameters
        perturbation: Multipliers applied on top of `physics`
    """

    name: str
    state_dim: int
    action_dim: int
    horizon: int
    physics: Mapping[str, float]
    perturbation: Mapping[str, float] = field(default_factory=dict)

    def effective_physics(self) -> Dict[str, float]:
        params = dict(self.physics)
        for key, mult in self.perturbation.items():
            params[key] = params[key] * mult
        return params

    def fingerprint(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "horizon": self.horizon,
            "physics": dict(sorted(self.physics.items())),
            "perturbation": dict(sorted(self.perturbation.items())),
        }


def pendulum_spec(horizon: int = 200) -> EnvSpec:
    return EnvSpec("pendulum", 3, 1, horizon, dict(PENDULUM_PHYSICS))


def cartpole_spec(horizon: int = 500) -> EnvSpec:
    return EnvSpec("cartpole", 5, 1, horizon, dict(CARTPOLE_PHYSICS))


ENV_SPECS = {
    "pendulum": pendulum_spec,
    "cartpole": cartpole_spec,
}


def get_spec(name: str, horizon: Optional[int] = None) -> EnvSpec:
    if name not in ENV_SPECS:
        raise InvalidArgumentError(f"Unknown environment '{name}', expected one of {sorted(ENV_SPECS)}")
    return ENV_SPECS[name]() if horizon is None else ENV_SPECS[name](horizon)


def perturb(spec: EnvSpec, overrides: Mapping[str, float]) -> EnvSpec:
    """
    Scale physics parameters of a task.

    Args:
        spec: Base task
        overrides: Parameter name -> positive multiplier

    Returns:
        New spec whose perturbation composes with any existing one
    """
    valid = sorted(spec.physics)
    combined = dict(spec.perturbation)
    for key, mult in overrides.items():
        if key not in spec.physics:
            raise InvalidArgumentError(
                f"Unknown physics parameter '{key}' for {spec.name}; valid names: {', '.join(valid)}"
            )
        if not mult > 0:
            raise InvalidArgumentError(f"Multiplier for '{key}' must be positive, got {mult}")
        combined[key] = combined.get(key, 1.0) * float(mult)
    return replace(spec, perturbation=combined)


class StepResult(NamedTuple):
    s_next: np.ndarray
    r: float
    terminated: bool
    truncated: bool


def angle_normalize(x: float) -> float:
    return ((x + math.pi) % (2.0 * math.pi)) - math.pi


class Environment:
    """Base class: seeding, step counting, action clipping and truncation."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.physics = spec.effective_physics()
        self.rng = np.random.default_rng()
        self.steps = 0
        self._warned = False
        self._active = False

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        """
        Start an episode, drawing the initial state from the task's distribution.

        Args:
            seed: Reseeds the environment generator when given

        Returns:
            Raw initial observation
        """
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.steps = 0
        self._active = True
        self._reset_dynamics()
        return self.observation()

    def step(self, action: np.ndarray) -> StepResult:
        if not self._active:
            raise ContractViolation("step() called on an environment that needs reset()")
        a = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        clipped = np.clip(a, -1.0, 1.0)
        if not np.array_equal(clipped, a):
            level = logging.DEBUG if self._warned else logging.WARNING
            logger.log(level, "%s: action %s outside [-1, 1], clipped", self.spec.name, a.tolist())
            self._warned = True
        limit = self.physics["actuator_limit"]
        command = self.physics["actuator_gain"] * np.clip(clipped, -limit, limit)
        reward = self._integrate(command)
        self.steps += 1
        truncated = self.steps >= self.spec.horizon
        if truncated:
            self._active = False
        return StepResult(self.observation(), reward, False, truncated)

    def get_state(self) -> Dict[str, Any]:
        return {
            "dynamics": self._dynamics_state().copy(),
            "steps": self.steps,
            "active": self._active,
            "rng": self.rng.bit_generator.state,
        }

    def set_state(self, state: Dict[str, Any]) -> None:
        self._set_dynamics_state(np.asarray(state["dynamics"], dtype=np.float64))
        self.steps = int(state["steps"])
        self._active = bool(state["active"])
        self.rng.bit_generator.state = state["rng"]

    def observation(self) -> np.ndarray:
        raise NotImplementedError

    def _reset_dynamics(self) -> None:
        raise NotImplementedError

    def _integrate(self, command: np.ndarray) -> float:
        raise NotImplementedError

    def _dynamics_state(self) -> np.ndarray:
        raise NotImplementedError

    def _set_dynamics_state(self, state: np.ndarray) -> None:
        raise NotImplementedError


class PendulumSwingUp(Environment):
    """
    Rod pendulum, theta = 0 upright. Observation (cos theta, sin theta, theta_dot).
    Reward -(theta^2 + 0.1 theta_dot^2 + 0.001 u^2) with u the physical torque.
    Semi-implicit Euler at dt = 0.05 holds energy to 1% over 200 steps only for
    small swings about the hanging rest state; large swings drift by tens of
    percent.
    """

    def _reset_dynamics(self) -> None:
        self.theta = float(self.rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self.rng.uniform(-1.0, 1.0))

    def observation(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def _integrate(self, command: np.ndarray) -> float:
        p = self.physics
        u = float(command[0]) * p["max_torque"]
        m, l, g, dt = p["mass"], p["length"], p["gravity"], p["dt"]

        reward = -(angle_normalize(self.theta) ** 2 + 0.1 * self.theta_dot ** 2 + 0.001 * u ** 2)

        accel = 3.0 * g / (2.0 * l) * math.sin(self.theta) + 3.0 / (m * l * l) * u - p["damping"] * self.theta_dot
        theta_dot = self.theta_dot + accel * dt
        theta_dot = min(max(theta_dot, -p["max_speed"]), p["max_speed"])
        self.theta = self.theta + theta_dot * dt
        self.theta_dot = theta_dot
        return reward

    def energy(self) -> float:
        p = self.physics
        m, l = p["mass"], p["length"]
        return m * l * l * self.theta_dot ** 2 / 6.0 + m * p["gravity"] * l / 2.0 * math.cos(self.theta)

    def _dynamics_state(self) -> np.ndarray:
        return np.array([self.theta, self.theta_dot])

    def _set_dynamics_state(self, state: np.ndarray) -> None:
        self.theta, self.theta_dot = float(state[0]), float(state[1])


class CartpoleSwingUp(Environment):
    """
    Cart-pole started hanging down, theta = 0 upright.
    Observation (x, cos theta, sin theta, x_dot, theta_dot); reward cos theta - 0.01 x^2.
    """

    INIT_NOISE = 0.05

    def _reset_dynamics(self) -> None:
        noise = self.rng.uniform(-self.INIT_NOISE, self.INIT_NOISE, size=4)
        self.x = float(noise[0])
        self.theta = math.pi + float(noise[1])
        self.x_dot = float(noise[2])
        self.theta_dot = float(noise[3])

    def observation(self) -> np.ndarray:
        return np.array([self.x, math.cos(self.theta), math.sin(self.theta), self.x_dot, self.theta_dot])

    def _integrate(self, command: np.ndarray) -> float:
        p = self.physics
        force = float(command[0]) * p["max_force"]
        mc, mp, l, g, dt = p["cart_mass"], p["pole_mass"], p["pole_length"], p["gravity"], p["dt"]
        total = mc + mp

        sin_t, cos_t = math.sin(self.theta), math.cos(self.theta)
        temp = (force + mp * l * self.theta_dot ** 2 * sin_t) / total
        theta_acc = (g * sin_t - cos_t * temp) / (l * (4.0 / 3.0 - mp * cos_t ** 2 / total))
        x_acc = temp - mp * l * theta_acc * cos_t / total

        self.x_dot += dt * x_acc
        self.x += dt * self.x_dot
        self.theta_dot += dt * theta_acc
        self.theta += dt * self.theta_dot
        return math.cos(self.theta) - 0.01 * self.x ** 2

    def _dynamics_state(self) -> np.ndarray:
        return np.array([self.x, self.theta, self.x_dot, self.theta_dot])

    def _set_dynamics_state(self, state: np.ndarray) -> None:
        self.x, self.theta, self.x_dot, self.theta_dot = (float(v) for v in state)


ENVIRONMENTS = {
    "pendulum": PendulumSwingUp,
    "cartpole": CartpoleSwingUp,
}


def make_env(spec: EnvSpec) -> Environment:
    return ENVIRONMENTS[spec.name](spec)
