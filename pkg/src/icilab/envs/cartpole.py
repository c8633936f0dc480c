"""Pole-on-cart balancing physics and policies for it."""

from __future__ import annotations

import numpy as np

from .core import EnvironmentSpec, InterventionSpec, augment, cyclic_sources, uniform_factors

STATE_DIM = 4
N_ACTIONS = 2

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
POLE_HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * POLE_HALF_LENGTH
FORCE_MAG = 10.0
DT = 0.02
ANGLE_LIMIT = 12.0 * 2.0 * np.pi / 360.0
POSITION_LIMIT = 2.4
MAX_STEPS = 500

# Linear feedback gains on (position, velocity, angle, angular velocity);
# ties at zero break toward action 1.
EXPERT_GAINS = np.array([0.1, 0.5, 3.0, 1.0])


def cartpole_step(state: np.ndarray, action: int) -> tuple[np.ndarray, bool]:
    """One Euler step; done when the next state leaves the angle/track bounds."""
    x, x_dot, theta, theta_dot = np.asarray(state, dtype=np.float64)
    force = FORCE_MAG if action == 1 else -FORCE_MAG
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t * cos_t / TOTAL_MASS)
    )
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    nxt = np.array([
        x + DT * x_dot,
        x_dot + DT * x_acc,
        theta + DT * theta_dot,
        theta_dot + DT * theta_acc,
    ])
    done = bool(abs(nxt[2]) > ANGLE_LIMIT or abs(nxt[0]) > POSITION_LIMIT)
    return nxt, done


def scripted_expert(state: np.ndarray) -> int:
    """Deterministic stabilizing controller on the base state."""
    return 1 if float(EXPERT_GAINS @ np.asarray(state, dtype=np.float64)) >= 0.0 else 0


def random_policy(rng: np.random.Generator):
    def act(state, observation=None):
        return int(rng.integers(N_ACTIONS))

    return act


def initial_state(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.05, 0.05, size=STATE_DIM)


def run_episode(spec: EnvironmentSpec, choose_action, rng: np.random.Generator,
                collect: bool = False):
    """Roll one episode; `choose_action(base_state, observation) -> action`.

    Returns (return, transitions, terminated) where transitions is a list of
    (observation, action, next_observation) when `collect` is set and
    terminated marks physics termination (not horizon truncation).
    """
    base = initial_state(rng)
    transitions = []
    total = 0
    terminated = False
    for _ in range(spec.horizon):
        obs = augment(base, spec.intervention, spec.env_feature)
        action = int(choose_action(base, obs))
        nxt, done = cartpole_step(base, action)
        total += 1
        if collect:
            transitions.append((obs, action, augment(nxt, spec.intervention, spec.env_feature)))
        base = nxt
        if done:
            terminated = True
            break
    return total, transitions, terminated


def cartpole_family(train_factors=(1.0, 2.0), noise_dim: int = 3,
                    env_feature: bool = False, discount: float = 0.99,
                    horizon: int = MAX_STEPS) -> list[EnvironmentSpec]:
    """Training environments: one per factor, all noise coordinates scaled by it."""
    sources = cyclic_sources(STATE_DIM, noise_dim)
    specs = []
    for env_id, factor in enumerate(train_factors):
        specs.append(EnvironmentSpec(
            env_id=env_id,
            base_task="cartpole",
            intervention=InterventionSpec((float(factor),) * noise_dim, sources),
            discount=discount,
            horizon=horizon,
            action_count=N_ACTIONS,
            env_feature=float(env_id) if env_feature else None,
        ))
    return specs


def cartpole_test_spec(rng: np.random.Generator, noise_dim: int = 3,
                       env_feature: bool = False, discount: float = 0.99,
                       horizon: int = MAX_STEPS, env_id: int = -1) -> EnvironmentSpec:
    """Held-out environment with freshly drawn per-coordinate factors."""
    return EnvironmentSpec(
        env_id=env_id,
        base_task="cartpole",
        intervention=InterventionSpec(uniform_factors(rng, noise_dim),
                                      cyclic_sources(STATE_DIM, noise_dim)),
        discount=discount,
        horizon=horizon,
        action_count=N_ACTIONS,
        env_feature=float(env_id) if env_feature else None,
    )
