"""Energy-based model of the expert observation distribution.

Trained with persistent contrastive divergence: negatives come from short
Langevin chains seeded from a replay buffer (or fresh uniform noise), the
loss pushes data energies below negative-sample energies, and a quadratic
regularizer keeps both in range. Inputs are standardized per coordinate;
the normalization constants travel with the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .checkpoint import load_params, save_params
from .errors import LangevinDivergence, TrainingDivergence
from .nets import Mlp, mlp_2x64
from .seeding import rng_for

DIVERGENCE_LIMIT = 1e6


@dataclass
class EbmConfig:
    steps: int = 100              # Langevin steps per negative sample
    step_size: float = 0.01
    noise: float = 0.01           # std dev of the Langevin perturbation
    batch_size: int = 64
    buffer_capacity: int = 10_000
    restart_prob: float = 0.05    # chance a chain restarts from uniform noise
    iterations: int = 1000
    learning_rate: float = 0.001


class ReplayBuffer:
    """FIFO ring of past negative samples."""

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self._data = np.empty((capacity, dim))
        self._size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self._size

    def append(self, samples: np.ndarray) -> None:
        for row in samples:
            self._data[self._pos] = row
            self._pos = (self._pos + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(self._size, size=n)
        return self._data[idx].copy()


class EnergyModel:
    """Scalar energy network over observations, with frozen normalization."""

    def __init__(self, input_dim: int, rng: np.random.Generator,
                 mean: np.ndarray | None = None, std: np.ndarray | None = None):
        self.input_dim = input_dim
        self.store = ParameterStore()
        self.net: Mlp = mlp_2x64(self.store, "energy", input_dim, 1, activation="relu", rng=rng)
        self.mean = np.zeros(input_dim) if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = np.ones(input_dim) if std is None else np.asarray(std, dtype=np.float64)
        self.frozen = False

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * self.std + self.mean

    def energy_normalized(self, z: Tensor, detach_params: bool = False) -> Tensor:
        """Per-row energies, shape (batch, 1), of already-standardized inputs."""
        if z.data.ndim != 2 or z.data.shape[1] != self.input_dim:
            raise ValueError(f"expected (batch, {self.input_dim}) input, got {z.data.shape}")
        return self.net(z, detach_params=detach_params)


def energy(model: EnergyModel, x: Tensor, detach_params: bool = False) -> Tensor:
    """Per-row energies of raw observations; standardization is applied inside
    the graph so gradients flow to `x`."""
    if x.data.ndim != 2 or x.data.shape[1] != model.input_dim:
        raise ValueError(f"expected (batch, {model.input_dim}) input, got {x.data.shape}")
    z = ad.mul(ad.sub(x, ad.tensor(model.mean)), ad.tensor(1.0 / model.std))
    return model.energy_normalized(z, detach_params=detach_params)


def energy_values(model: EnergyModel, x: np.ndarray) -> np.ndarray:
    """Plain-array energies of raw observations."""
    return ad.forward(energy(model, ad.tensor(np.atleast_2d(x)))).ravel()


def _input_gradient(energy_fn, x: np.ndarray) -> np.ndarray:
    node = ad.Tensor(x)
    out = energy_fn(node)
    ad.backward(ad.reduce_sum(out))
    return node.grad


def langevin_chain(energy_fn, x0: np.ndarray, steps: int, step_size: float,
                   noise: float, rng: np.random.Generator,
                   return_path: bool = False) -> np.ndarray:
    """Noisy gradient descent on the energy: x <- x - a * dE/dx + N(0, noise).

    `energy_fn` is either an EnergyModel (its normalized-space energy is used)
    or any callable Tensor -> Tensor producing per-row energies. Raises
    LangevinDivergence if an iterate stops being finite.
    """
    if steps < 1 or step_size <= 0 or noise < 0:
        raise ValueError("need steps >= 1, step_size > 0, noise >= 0")
    if isinstance(energy_fn, EnergyModel):
        model = energy_fn
        # parameters stay untouched: detach them so only the input gets grads
        energy_fn = lambda z: model.energy_normalized(z, detach_params=True)
    x = np.atleast_2d(np.asarray(x0, dtype=np.float64)).copy()
    path = [x.copy()] if return_path else None
    for _ in range(steps):
        grad = _input_gradient(energy_fn, x)
        x = x - step_size * grad + rng.normal(0.0, noise, size=x.shape)
        if not np.all(np.isfinite(x)):
            raise LangevinDivergence("Langevin iterate is not finite (step size too large?)")
        if return_path:
            path.append(x.copy())
    if return_path:
        return np.stack(path)
    return x if np.asarray(x0).ndim == 2 else x[0]


@dataclass
class EbmDiagnostics:
    loss_cd: list[float] = field(default_factory=list)
    loss_rg: list[float] = field(default_factory=list)
    divergent_restarts: int = 0


def train_ebm(observations: np.ndarray, config: EbmConfig | None = None,
              seed: int = 0) -> tuple[EnergyModel, EbmDiagnostics]:
    """Fit a frozen EnergyModel to raw observations.

    Per iteration: draw positives from the data, seed negatives from the
    replay buffer (with a small uniform-restart chance), run the Langevin
    chain, stop-gradient the negatives, and take one Adam step on the
    contrastive plus regularization loss. Chains whose iterates explode are
    restarted from uniform noise and counted in the diagnostics.
    """
    config = config or EbmConfig()
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] == 0:
        raise ValueError("observations must be a non-empty (n, dim) array")
    if obs.shape[0] < config.batch_size:
        raise ValueError(f"need at least {config.batch_size} observations, got {obs.shape[0]}")
    dim = obs.shape[1]
    mean = obs.mean(axis=0)
    std = obs.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)

    model = EnergyModel(dim, rng_for(seed, "ebm-init"), mean=mean, std=std)
    data = (obs - mean) / std
    buffer = ReplayBuffer(config.buffer_capacity, dim)
    batch_rng = rng_for(seed, "ebm-batches")
    chain_rng = rng_for(seed, "ebm-chains")
    diag = EbmDiagnostics()

    n = config.batch_size
    for it in range(config.iterations):
        positives = data[batch_rng.integers(data.shape[0], size=n)]
        negatives = chain_rng.uniform(-1.0, 1.0, size=(n, dim))
        if len(buffer) > 0:
            from_buffer = chain_rng.random(n) >= config.restart_prob
            if from_buffer.any():
                negatives[from_buffer] = buffer.sample(int(from_buffer.sum()), chain_rng)
        detached_energy = lambda z: model.energy_normalized(z, detach_params=True)
        for _ in range(config.steps):
            grad = _input_gradient(detached_energy, negatives)
            negatives = negatives - config.step_size * grad \
                + chain_rng.normal(0.0, config.noise, size=negatives.shape)
            bad = ~np.all(np.isfinite(negatives), axis=1) \
                | (np.abs(negatives).max(axis=1) > DIVERGENCE_LIMIT)
            if bad.any():
                negatives[bad] = chain_rng.uniform(-1.0, 1.0, size=(int(bad.sum()), dim))
                diag.divergent_restarts += int(bad.sum())

        pos_node = ad.tensor(positives)
        neg_node = ad.stop_gradient(ad.Tensor(negatives))
        e_pos = model.energy_normalized(pos_node)
        e_neg = model.energy_normalized(neg_node)
        loss_cd = ad.sub(ad.reduce_mean(e_pos), ad.reduce_mean(e_neg))
        loss_rg = ad.add(ad.reduce_mean(ad.mul(e_pos, e_pos)), ad.reduce_mean(ad.mul(e_neg, e_neg)))
        total = ad.add(loss_cd, loss_rg)
        for name, value in (("loss_cd", loss_cd), ("loss_rg", loss_rg)):
            if not np.isfinite(value.data):
                raise TrainingDivergence(it, name)
        ad.backward(total)
        model.store.adam_step(config.learning_rate)
        buffer.append(negatives)
        diag.loss_cd.append(float(loss_cd.data))
        diag.loss_rg.append(float(loss_rg.data))

    model.frozen = True
    return model, diag


def save_ebm(path, model: EnergyModel, config: EbmConfig | None = None) -> None:
    extra = {
        "kind": "energy-model",
        "input_dim": model.input_dim,
        "mean": model.mean.tolist(),
        "std": model.std.tolist(),
        "frozen": model.frozen,
        "config": asdict(config) if config else None,
    }
    save_params(path, model.store, extra=extra)


def load_ebm(path) -> EnergyModel:
    values, extra = load_params(path)
    if extra.get("kind") != "energy-model":
        raise ValueError(f"{path}: not an energy-model checkpoint")
    model = EnergyModel(int(extra["input_dim"]), np.random.default_rng(0),
                        mean=np.array(extra["mean"]), std=np.array(extra["std"]))
    model.store.load_values(values)
    model.frozen = bool(extra.get("frozen", True))
    return model
