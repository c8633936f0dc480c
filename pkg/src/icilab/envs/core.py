"""Environment specifications and observation augmentation.

An environment family shares base dynamics and an action space; individual
environments differ only by an intervention that appends noise coordinates
to the observation (multiplicative copies of base coordinates for control
tasks, action-correlated binary flags for the offline clinical task).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class InterventionSpec:
    """Noise coordinates appended as factor * base_state[source_index]."""

    factors: tuple[float, ...]
    source_indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.factors) != len(self.source_indices):
            raise ValueError("factors and source_indices must have equal length")
        if any(f == 0.0 for f in self.factors):
            raise ValueError("multiplicative factors must be nonzero")

    @property
    def noise_dim(self) -> int:
        return len(self.factors)


@dataclass(frozen=True)
class ClinicalIntervention:
    """Binary noise features that equal the action with probability match_prob."""

    match_prob: float
    n_spurious: int

    def __post_init__(self):
        if not 0.0 <= self.match_prob <= 1.0:
            raise ValueError("match_prob must be in [0, 1]")
        if self.n_spurious < 0:
            raise ValueError("n_spurious must be non-negative")

    @property
    def noise_dim(self) -> int:
        return self.n_spurious


@dataclass(frozen=True)
class EnvironmentSpec:
    env_id: int
    base_task: str
    intervention: InterventionSpec | ClinicalIntervention
    discount: float
    horizon: int
    action_count: int
    env_feature: float | None = None

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.horizon < 1 or self.action_count < 1:
            raise ValueError("horizon and action_count must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intervention_kind"] = type(self.intervention).__name__
        return d

    @staticmethod
    def from_dict(d: dict) -> "EnvironmentSpec":
        kind = d.pop("intervention_kind")
        iv = d.pop("intervention")
        if kind == "InterventionSpec":
            intervention = InterventionSpec(tuple(iv["factors"]), tuple(iv["source_indices"]))
        elif kind == "ClinicalIntervention":
            intervention = ClinicalIntervention(iv["match_prob"], iv["n_spurious"])
        else:
            raise ValueError(f"unknown intervention kind: {kind}")
        return EnvironmentSpec(intervention=intervention, **d)


def augment(base_state: np.ndarray, intervention: InterventionSpec,
            env_feature: float | None = None) -> np.ndarray:
    """Observation = base state, scaled copies of source coordinates, and an
    optional constant environment-identifier coordinate."""
    base = np.asarray(base_state, dtype=np.float64)
    if intervention.source_indices and max(intervention.source_indices) >= base.shape[-1]:
        raise ValueError("source index out of range for base state")
    noise = np.array(intervention.factors) * base[list(intervention.source_indices)]
    parts = [base, noise]
    if env_feature is not None:
        parts.append(np.array([env_feature]))
    return np.concatenate(parts)


def strip_augmentation(observation: np.ndarray, intervention: InterventionSpec,
                       base_dim: int, has_env_feature: bool = False) -> np.ndarray:
    """Exact inverse of `augment`: recover the base state."""
    obs = np.asarray(observation, dtype=np.float64)
    expected = base_dim + intervention.noise_dim + (1 if has_env_feature else 0)
    if obs.shape[-1] != expected:
        raise ValueError(f"observation has {obs.shape[-1]} dims, expected {expected}")
    return obs[:base_dim].copy()


def observation_dim(spec: EnvironmentSpec, base_dim: int) -> int:
    return base_dim + spec.intervention.noise_dim + (1 if spec.env_feature is not None else 0)


def cyclic_sources(base_dim: int, noise_dim: int, n_tail: int = 3) -> tuple[int, ...]:
    """Source indices cycling over the last `n_tail` base coordinates."""
    tail = list(range(base_dim - n_tail, base_dim))
    return tuple(tail[i % n_tail] for i in range(noise_dim))


def uniform_factors(rng: np.random.Generator, noise_dim: int,
                    low: float = -1.0, high: float = 1.0,
                    min_abs: float = 0.05) -> tuple[float, ...]:
    """Independent U(low, high) factors, redrawing any with |f| < min_abs."""
    out = []
    while len(out) < noise_dim:
        f = float(rng.uniform(low, high))
        if abs(f) >= min_abs:
            out.append(f)
    return tuple(out)
