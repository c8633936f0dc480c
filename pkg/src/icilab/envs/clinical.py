"""Synthetic offline clinical task with action-correlated spurious features.

Base patient state is an 8-dimensional stable AR(1) Gaussian process. A fixed
logistic rule on the first three coordinates plays the expert; appended binary
features copy the expert action with a per-environment probability, so their
correlation with the action flips between training and test environments.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..seeding import rng_for
from .core import ClinicalIntervention, EnvironmentSpec
from .dataset import Dataset, Trajectory

BASE_DIM = 8
N_ACTIONS = 2
DEFAULT_HORIZON = 12
DEFAULT_N_SPURIOUS = 4
NOISE_STD = 0.3
EXPERT_WEIGHTS = np.array([1.0, -0.8, 0.6])
EXPERT_STEEPNESS = 2.5


def transition_matrix() -> np.ndarray:
    """Fixed stable AR(1) coefficient matrix (spectral radius < 1)."""
    a = 0.62 * np.eye(BASE_DIM)
    a += 0.18 * np.roll(np.eye(BASE_DIM), 1, axis=1)
    return a


def expert_action_prob(base_state: np.ndarray) -> float:
    """Probability the expert chooses action 1 for this base state."""
    z = EXPERT_STEEPNESS * float(EXPERT_WEIGHTS @ np.asarray(base_state)[:3])
    return 1.0 / (1.0 + np.exp(-z))


def clinical_specs(match_probs: Sequence[float], n_spurious: int = DEFAULT_N_SPURIOUS,
                   horizon: int = DEFAULT_HORIZON, discount: float = 0.99,
                   env_ids: Sequence[int] | None = None) -> list[EnvironmentSpec]:
    if env_ids is None:
        env_ids = range(len(match_probs))
    return [
        EnvironmentSpec(
            env_id=int(eid),
            base_task="offline-clinical",
            intervention=ClinicalIntervention(float(p), n_spurious),
            discount=discount,
            horizon=horizon,
            action_count=N_ACTIONS,
        )
        for eid, p in zip(env_ids, match_probs)
    ]


def offline_clinical_dataset(n_traj: int, match_probs: Sequence[float], seed: int,
                             n_spurious: int = DEFAULT_N_SPURIOUS,
                             horizon: int = DEFAULT_HORIZON,
                             env_ids: Sequence[int] | None = None) -> Dataset:
    """One environment per match probability, `n_traj` patient trajectories each.

    Each spurious feature independently equals the expert action with the
    environment's probability p (and its complement otherwise), so the
    feature-action correlation is 2p - 1 for balanced actions.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    specs = clinical_specs(match_probs, n_spurious, horizon, env_ids=env_ids)
    coeff = transition_matrix()
    trajectories = []
    for spec in specs:
        p = spec.intervention.match_prob
        for i in range(n_traj):
            rng = rng_for(seed, "clinical-traj", spec.env_id, i)
            # horizon + 1 sampled steps so next-observations chain exactly
            states = np.empty((horizon + 1, BASE_DIM))
            states[0] = rng.standard_normal(BASE_DIM)
            for t in range(horizon):
                states[t + 1] = coeff @ states[t] + NOISE_STD * rng.standard_normal(BASE_DIM)
            actions = np.array([
                int(rng.random() < expert_action_prob(states[t])) for t in range(horizon + 1)
            ])
            spurious = np.where(
                rng.random((horizon + 1, n_spurious)) < p,
                actions[:, None], 1 - actions[:, None]
            ).astype(np.float64)
            obs = np.concatenate([states, spurious], axis=1)
            trajectories.append(Trajectory(spec.env_id, obs[:-1], actions[:-1], obs[1:]))
    return Dataset(specs, trajectories, seed,
                   meta={"n_traj": n_traj, "match_probs": [float(p) for p in match_probs],
                         "n_spurious": n_spurious})
