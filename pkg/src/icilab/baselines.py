"""Strictly batch baselines: behaviour cloning, reward-regularized
classification, and their invariance-penalized variants.

All baselines share one policy architecture and optimizer configuration.
The invariance penalty follows the practical one-risk-gradient form: the
squared derivative of each environment's risk with respect to a dummy
multiplicative scale on the logits, evaluated at scale one. That derivative
is built analytically as a graph node (for cross-entropy it is
mean(<softmax(z), z> - z_a)), so its parameter gradient is exact under
first-order reverse mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .checkpoint import load_params, save_params
from .envs.dataset import Dataset, Transitions
from .errors import NonFiniteError, TrainingDivergence
from .nets import mlp_2x64
from .seeding import rng_for

KINDS = ("bc", "rcal", "bc-irm", "rcal-irm")


@dataclass
class BaselineConfig:
    learning_rate: float = 0.001
    iterations: int = 10_000
    batch_size: int = 64
    rcal_coeff: float = 0.01
    irm_penalty_weight: float = 1.0


class BaselinePolicy:
    """Trained policy: a forward function plus its parameter store."""

    def __init__(self, kind: str, store: ParameterStore, forward, obs_dim: int,
                 n_actions: int):
        self.kind = kind
        self.store = store
        self.forward = forward
        self.obs_dim = obs_dim
        self.n_actions = n_actions

    def logits(self, observations: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(observations, dtype=np.float64))
        return ad.forward(self.forward(ad.tensor(x)))

    def probs(self, observations: np.ndarray) -> np.ndarray:
        z = self.logits(observations)
        z = z - z.max(axis=-1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=-1, keepdims=True)

    def act(self, observation: np.ndarray, mode: str = "greedy",
            rng: np.random.Generator | None = None) -> int:
        logits = self.logits(observation)[0]
        if mode == "greedy":
            return int(np.argmax(logits))
        if mode == "sample":
            if rng is None:
                raise ValueError("sample mode needs an rng")
            z = logits - logits.max()
            p = np.exp(z)
            return int(rng.choice(self.n_actions, p=p / p.sum()))
        raise ValueError(f"unknown action mode: {mode}")


def _take(tr: Transitions, idx: np.ndarray) -> Transitions:
    return Transitions(tr.x[idx], tr.a[idx], tr.x_next[idx], tr.env_index[idx],
                       tr.terminal[idx])


def _one_hot(actions: np.ndarray, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(actions, dtype=np.int64)]


def bc_loss(forward, batch: Transitions) -> Tensor:
    """Mean action cross-entropy on the pooled batch."""
    return ad.cross_entropy(forward(ad.tensor(batch.x)), batch.a)


def _implied_rewards(forward, batch: Transitions, gamma: float) -> Tensor:
    """One-step Bellman residuals with logits read as Q-values.

    Terminal transitions use the undiscounted Q(x, a) with no bootstrap.
    """
    if batch.x_next is None or batch.x_next.shape != batch.x.shape:
        raise ValueError("rcal needs next observations for every transition")
    q = forward(ad.tensor(batch.x))
    q_next = forward(ad.tensor(batch.x_next))
    n_actions = q.data.shape[1]
    q_sel = ad.reduce_sum(ad.mul(q, ad.tensor(_one_hot(batch.a, n_actions))), axis=1)
    bootstrap = ad.max_last(q_next)
    keep = ad.tensor(gamma * (1.0 - batch.terminal.astype(np.float64)))
    return ad.sub(q_sel, ad.mul(bootstrap, keep))


def rcal_loss(forward, batch: Transitions, gamma: float, coeff: float) -> Tensor:
    """Behaviour cloning plus an L1 sparsity penalty on implied rewards."""
    base = bc_loss(forward, batch)
    if coeff == 0.0:
        return base
    penalty = ad.reduce_mean(ad.absolute(_implied_rewards(forward, batch, gamma)))
    return ad.add(base, ad.mul(penalty, ad.tensor(coeff)))


def bc_risk_dummy_grad(logits: Tensor, actions: np.ndarray) -> Tensor:
    """d/dw of mean cross-entropy with logits scaled by w, at w = 1."""
    n_actions = logits.data.shape[1]
    p = ad.softmax(logits)
    inner = ad.reduce_sum(ad.mul(p, logits), axis=1)
    z_a = ad.reduce_sum(ad.mul(logits, ad.tensor(_one_hot(actions, n_actions))), axis=1)
    return ad.reduce_mean(ad.sub(inner, z_a))


def rcal_risk_dummy_grad(forward, batch: Transitions, gamma: float, coeff: float) -> Tensor:
    """d/dw of the RCAL risk at w = 1. The reward channel is linear in a
    positive scale (the bootstrap argmax is scale-invariant), so its
    derivative is the mean absolute implied reward itself."""
    logits = forward(ad.tensor(batch.x))
    grad = bc_risk_dummy_grad(logits, batch.a)
    if coeff == 0.0:
        return grad
    reward_term = ad.reduce_mean(ad.absolute(_implied_rewards(forward, batch, gamma)))
    return ad.add(grad, ad.mul(reward_term, ad.tensor(coeff)))


def irm_penalty(per_env_dummy_grads: list[Tensor]) -> Tensor:
    """Sum of squared per-environment risk gradients at the dummy scale."""
    if len(per_env_dummy_grads) < 2:
        raise ValueError("the invariance penalty needs >= 2 environments")
    total = None
    for g in per_env_dummy_grads:
        sq = ad.mul(g, g)
        total = sq if total is None else ad.add(total, sq)
    return total


def _default_factory(obs_dim: int, n_actions: int, seed: int):
    store = ParameterStore()
    net = mlp_2x64(store, "policy", obs_dim, n_actions,
                   rng=rng_for(seed, "init", "policy"))
    return store, net


def train_baseline(kind: str, dataset: Dataset, config: BaselineConfig, seed: int,
                   network_factory=None) -> tuple[BaselinePolicy, list[float]]:
    """Train one baseline; returns the policy and its per-iteration loss trace.

    Minibatches are drawn from the same derived stream for every kind, so
    variants that only add penalty terms see identical batches. With a zero
    penalty weight the invariance variants build the exact behaviour-cloning
    graph and reproduce its runs bit for bit.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown baseline kind: {kind} (expected one of {KINDS})")
    uses_irm = kind.endswith("-irm")
    if uses_irm and len(dataset.specs) < 2:
        raise ValueError("invariance-penalized training needs >= 2 environments")
    transitions = dataset.transitions()
    n = transitions.x.shape[0]
    gamma = dataset.specs[0].discount
    n_envs = len(dataset.specs)

    if network_factory is None:
        store, net = _default_factory(dataset.obs_dim, dataset.action_count, seed)
        forward = net
    else:
        store, forward = network_factory()

    batch_rng = rng_for(seed, "batches")
    history: list[float] = []
    for it in range(config.iterations):
        batch = _take(transitions, batch_rng.integers(n, size=config.batch_size))
        try:
            if kind in ("bc", "bc-irm"):
                loss = bc_loss(forward, batch)
            else:
                loss = rcal_loss(forward, batch, gamma, config.rcal_coeff)
            if uses_irm and config.irm_penalty_weight != 0.0:
                grads = []
                for e in range(n_envs):
                    rows = np.flatnonzero(batch.env_index == e)
                    if rows.size == 0:
                        continue
                    env_batch = _take(batch, rows)
                    if kind == "bc-irm":
                        grads.append(bc_risk_dummy_grad(forward(ad.tensor(env_batch.x)),
                                                        env_batch.a))
                    else:
                        grads.append(rcal_risk_dummy_grad(forward, env_batch, gamma,
                                                          config.rcal_coeff))
                if len(grads) >= 2:
                    penalty = irm_penalty(grads)
                    loss = ad.add(loss, ad.mul(penalty, ad.tensor(config.irm_penalty_weight)))
        except NonFiniteError:
            raise TrainingDivergence(it, kind) from None
        if not np.isfinite(loss.data):
            raise TrainingDivergence(it, kind)
        ad.backward(loss)
        store.adam_step(config.learning_rate)
        history.append(float(loss.data))
    policy = BaselinePolicy(kind, store, forward, dataset.obs_dim, dataset.action_count)
    return policy, history


def history_to_csv(path, history: list[float]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "loss"])
        for i, v in enumerate(history):
            writer.writerow([i, repr(v)])


def save_baseline(path, policy: BaselinePolicy, config: BaselineConfig | None = None) -> None:
    extra = {
        "kind": "baseline-policy",
        "baseline": policy.kind,
        "obs_dim": policy.obs_dim,
        "n_actions": policy.n_actions,
        "config": asdict(config) if config else None,
    }
    save_params(path, policy.store, extra=extra)


def load_baseline(path) -> BaselinePolicy:
    """Load a checkpoint saved with the standard policy architecture."""
    values, extra = load_params(path)
    if extra.get("kind") != "baseline-policy":
        raise ValueError(f"{path}: not a baseline-policy checkpoint")
    store = ParameterStore()
    net = mlp_2x64(store, "policy", int(extra["obs_dim"]), int(extra["n_actions"]),
                   rng=np.random.default_rng(0))
    store.load_values(values)
    return BaselinePolicy(extra["baseline"], store, net, int(extra["obs_dim"]),
                          int(extra["n_actions"]))
