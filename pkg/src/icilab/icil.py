"""Invariant causal imitation learner.

Observations are split into a shared state representation (trained to be
invariant across environments, predictive of dynamics, and informative for
the expert action) and per-environment noise representations (trained to be
dynamics-preserving but statistically independent of the state
representation). The policy conditions on the state representation only.

Five losses drive training, each updating a fixed set of parameter groups:

  l_inv     negative classifier entropy    -> state encoder only
  l_dyn     next-observation reconstruction -> encoders, dynamics heads, decoder
  l_mi      mutual-information bound        -> descent on encoders, ascent on scorer
  l_pi      action negative log-likelihood  -> policy and state encoder
  l_energy  energy of the imagined next obs -> policy only
  l_c       environment cross-entropy       -> classifier only (features frozen)

Routing is enforced structurally with stop-gradients, so every excluded
(parameter, loss) pair has an exactly zero gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .checkpoint import load_params, save_params
from .ebm import EnergyModel, energy as ebm_energy
from .envs.dataset import Dataset, Transitions
from .errors import NonFiniteError, TrainingDivergence
from .mine import mine_bound, statistics_network
from .nets import Mlp, mlp_2x64
from .seeding import rng_for


@dataclass
class IcilConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    iterations: int = 10_000
    d_s: int | None = None      # default: base-state dimension of the task
    d_eta: int | None = None    # default: noise dimension of the intervention
    temperature: float = 1.0    # relaxed action sampling temperature
    use_inv: bool = True
    use_dyn: bool = True
    use_mi: bool = True
    use_energy: bool = True


@dataclass
class LossBreakdown:
    iteration: int
    l_inv: float
    l_dyn: float
    l_mi: float
    l_pi: float
    l_energy: float
    l_c: float


class MiniBatch(NamedTuple):
    x: np.ndarray          # (B, obs_dim)
    a: np.ndarray          # (B,)
    x_next: np.ndarray     # (B, obs_dim)
    env_index: np.ndarray  # (B,) positions into the model's environment list


def minibatch_from(transitions: Transitions, idx: np.ndarray) -> MiniBatch:
    return MiniBatch(transitions.x[idx], transitions.a[idx],
                     transitions.x_next[idx], transitions.env_index[idx])


class IcilModel:
    """Parameter bundle: encoders, dynamics heads, decoder, classifier,
    policy, and the mutual-information scorer."""

    def __init__(self, obs_dim: int, n_actions: int, env_ids: Sequence[int],
                 d_s: int, d_eta: int, seed: int, temperature: float = 1.0):
        if len(env_ids) < 2:
            raise ValueError("need at least two training environments")
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.env_ids = list(env_ids)
        self.d_s = d_s
        self.d_eta = d_eta
        self.seed = seed
        self.temperature = temperature
        store = ParameterStore()
        self.store = store
        self.state_encoder = mlp_2x64(store, "state_enc", obs_dim, d_s,
                                      rng=rng_for(seed, "init", "state_enc"))
        self.state_dynamics = mlp_2x64(store, "state_dyn", d_s + n_actions, d_s,
                                       rng=rng_for(seed, "init", "state_dyn"))
        self.noise_encoders: list[Mlp] = []
        self.noise_dynamics: list[Mlp] = []
        for pos, env_id in enumerate(self.env_ids):
            self.noise_encoders.append(mlp_2x64(
                store, f"noise_enc{pos}", obs_dim, d_eta,
                rng=rng_for(seed, "init", "noise_enc", env_id)))
            self.noise_dynamics.append(mlp_2x64(
                store, f"noise_dyn{pos}", d_eta + n_actions, d_eta,
                rng=rng_for(seed, "init", "noise_dyn", env_id)))
        self.decoder = mlp_2x64(store, "decoder", d_s + d_eta, obs_dim,
                                rng=rng_for(seed, "init", "decoder"))
        self.env_classifier = mlp_2x64(store, "classifier", d_s, len(self.env_ids),
                                       rng=rng_for(seed, "init", "classifier"))
        self.policy = mlp_2x64(store, "policy", d_s, n_actions,
                               rng=rng_for(seed, "init", "policy"))
        self.stat_net = statistics_network(store, "mi_scorer", d_s, d_eta,
                                           rng_for(seed, "init", "mi_scorer"))

    @property
    def n_envs(self) -> int:
        return len(self.env_ids)

    def group_names(self) -> dict[str, list[str]]:
        """Parameter names of every named group, for audits and tests."""
        groups = {
            "state_encoder": self.state_encoder.param_names(),
            "state_dynamics": self.state_dynamics.param_names(),
            "decoder": self.decoder.param_names(),
            "classifier": self.env_classifier.param_names(),
            "policy": self.policy.param_names(),
            "mi_scorer": self.stat_net.param_names(),
        }
        for pos in range(self.n_envs):
            groups[f"noise_encoder{pos}"] = self.noise_encoders[pos].param_names()
            groups[f"noise_dynamics{pos}"] = self.noise_dynamics[pos].param_names()
        return groups


def _check_env_index(model: IcilModel, env_index: np.ndarray) -> None:
    if env_index.min() < 0 or env_index.max() >= model.n_envs:
        raise ValueError("batch references an environment without trained heads")


def _one_hot(actions: np.ndarray, n: int) -> np.ndarray:
    a = np.asarray(actions, dtype=np.int64)
    if a.min() < 0 or a.max() >= n:
        raise ValueError("action index out of range")
    return np.eye(n)[a]


def _env_partition(env_index: np.ndarray, n_envs: int):
    """Row indices per environment, plus the inverse scatter order."""
    idx_lists = [np.flatnonzero(env_index == e) for e in range(n_envs)]
    present = [e for e in range(n_envs) if idx_lists[e].size]
    order = np.concatenate([idx_lists[e] for e in present])
    inverse = np.empty(len(env_index), dtype=np.int64)
    inverse[order] = np.arange(len(order))
    return present, idx_lists, inverse


def _apply_per_env(nets: list[Mlp], inputs: Tensor, env_index: np.ndarray,
                   n_envs: int, detach_params: bool = False,
                   extra: Tensor | None = None) -> Tensor:
    """Route batch rows through their environment's head; restore batch order.

    When `extra` is given, each head receives concat(inputs_rows, extra_rows).
    """
    present, idx_lists, inverse = _env_partition(env_index, n_envs)
    parts = []
    for e in present:
        rows = ad.gather_rows(inputs, idx_lists[e])
        if extra is not None:
            rows = ad.concat([rows, ad.gather_rows(extra, idx_lists[e])], axis=1)
        parts.append(nets[e](rows, detach_params=detach_params))
    stacked = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    return ad.gather_rows(stacked, inverse)


def encode_state(model: IcilModel, x: np.ndarray) -> Tensor:
    return model.state_encoder(ad.tensor(x))


def encode_noise(model: IcilModel, x_node: Tensor, env_index: np.ndarray) -> Tensor:
    _check_env_index(model, env_index)
    return _apply_per_env(model.noise_encoders, x_node, env_index, model.n_envs)


# --- loss terms -----------------------------------------------------------

def _entropy_from_logits(logits: Tensor) -> Tensor:
    """Per-row Shannon entropy computed stably from logits."""
    ls = ad.log_softmax(logits)
    return ad.neg(ad.reduce_sum(ad.mul(ad.exp(ls), ls), axis=1))


def _inv_term(model: IcilModel, s: Tensor) -> Tensor:
    logits = model.env_classifier(s, detach_params=True)
    return ad.neg(ad.reduce_mean(_entropy_from_logits(logits)))


def _classifier_term(model: IcilModel, s: Tensor, env_index: np.ndarray) -> Tensor:
    return ad.cross_entropy(model.env_classifier(ad.stop_gradient(s)), env_index)


def _dyn_term(model: IcilModel, s: Tensor, eta: Tensor, batch: MiniBatch) -> Tensor:
    onehot = ad.tensor(_one_hot(batch.a, model.n_actions))
    pred_s = model.state_dynamics(ad.concat([s, onehot], axis=1))
    pred_eta = _apply_per_env(model.noise_dynamics, eta, batch.env_index,
                              model.n_envs, extra=onehot)
    recon = model.decoder(ad.concat([pred_s, pred_eta], axis=1))
    err = ad.sub(recon, ad.tensor(batch.x_next))
    # mean over the batch of squared next-observation errors
    return ad.mul(ad.reduce_sum(ad.mul(err, err)), ad.tensor(1.0 / batch.x.shape[0]))


def _mi_term(model: IcilModel, s: Tensor, eta: Tensor, kappa: np.ndarray,
             detach_scorer: bool) -> Tensor:
    return mine_bound(model.stat_net, s, eta, ad.gather_rows(eta, kappa),
                      detach_params=detach_scorer)


def _pi_term(model: IcilModel, s: Tensor, actions: np.ndarray) -> Tensor:
    return ad.cross_entropy(model.policy(s), actions)


def _energy_term(model: IcilModel, energy_model: EnergyModel, s: Tensor, eta: Tensor,
                 batch: MiniBatch, gumbel_noise: np.ndarray) -> Tensor:
    s_frozen = ad.stop_gradient(s)
    eta_frozen = ad.stop_gradient(eta)
    logits = model.policy(s_frozen)
    relaxed = gumbel_action(logits, model.temperature, noise=gumbel_noise)
    pred_s = model.state_dynamics(ad.concat([s_frozen, relaxed], axis=1), detach_params=True)
    pred_eta = _apply_per_env(model.noise_dynamics, eta_frozen, batch.env_index,
                              model.n_envs, detach_params=True, extra=relaxed)
    imagined = model.decoder(ad.concat([pred_s, pred_eta], axis=1), detach_params=True)
    return ad.reduce_mean(ebm_energy(energy_model, imagined, detach_params=True))


# --- public loss operations ------------------------------------------------

def loss_inv(model: IcilModel, batch: MiniBatch) -> Tensor:
    """Negative entropy of the environment classifier on the state
    representation; gradients reach the state encoder only."""
    if np.unique(batch.env_index).size < 2:
        raise ValueError("invariance loss needs a batch spanning >= 2 environments")
    return _inv_term(model, encode_state(model, batch.x))


def loss_classifier(model: IcilModel, batch: MiniBatch) -> Tensor:
    """Environment cross-entropy on frozen features; trains the classifier only."""
    _check_env_index(model, batch.env_index)
    return _classifier_term(model, encode_state(model, batch.x), batch.env_index)


def loss_dyn(model: IcilModel, batch: MiniBatch) -> Tensor:
    """Mean squared next-observation reconstruction through the predicted
    state and noise representations."""
    s = encode_state(model, batch.x)
    eta = encode_noise(model, ad.tensor(batch.x), batch.env_index)
    return _dyn_term(model, s, eta, batch)


def loss_mi(model: IcilModel, batch: MiniBatch, kappa: np.ndarray | None = None,
            rng: np.random.Generator | None = None,
            detach_scorer: bool = False) -> Tensor:
    """Mutual-information bound between state and noise representations."""
    if kappa is None:
        if rng is None:
            raise ValueError("loss_mi needs either an explicit permutation or an rng")
        kappa = rng.permutation(batch.x.shape[0])
    s = encode_state(model, batch.x)
    eta = encode_noise(model, ad.tensor(batch.x), batch.env_index)
    return _mi_term(model, s, eta, np.asarray(kappa), detach_scorer)


def loss_pi(model: IcilModel, batch: MiniBatch) -> Tensor:
    """Expert-action negative log-likelihood under the policy on features."""
    return _pi_term(model, encode_state(model, batch.x), batch.a)


def loss_energy(model: IcilModel, energy_model: EnergyModel, batch: MiniBatch,
                rng: np.random.Generator | None = None,
                gumbel_noise: np.ndarray | None = None) -> Tensor:
    """Mean energy of the next observation imagined under a relaxed policy
    action; gradients reach the policy only."""
    if not energy_model.frozen:
        raise ValueError("the energy model must be trained and frozen first")
    if gumbel_noise is None:
        if rng is None:
            raise ValueError("loss_energy needs either explicit noise or an rng")
        gumbel_noise = sample_gumbel(rng, (batch.x.shape[0], model.n_actions))
    s = encode_state(model, batch.x)
    eta = encode_noise(model, ad.tensor(batch.x), batch.env_index)
    return _energy_term(model, energy_model, s, eta, batch, gumbel_noise)


# --- relaxed action sampling ------------------------------------------------

def sample_gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def gumbel_action(logits: Tensor, temperature: float,
                  rng: np.random.Generator | None = None,
                  noise: np.ndarray | None = None) -> Tensor:
    """Differentiable relaxed one-hot action sample.

    Entries are positive and each row sums to one; as temperature tends to
    zero the sample concentrates on argmax(logits + gumbel noise).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("logits must be finite")
    if noise is None:
        if rng is None:
            raise ValueError("gumbel_action needs either explicit noise or an rng")
        noise = sample_gumbel(rng, logits.data.shape)
    perturbed = ad.add(logits, ad.tensor(noise))
    return ad.softmax(ad.mul(perturbed, ad.tensor(1.0 / temperature)))


# --- training ----------------------------------------------------------------

def _infer_dims(dataset: Dataset) -> tuple[int, int]:
    spec = dataset.specs[0]
    noise_dim = spec.intervention.noise_dim
    base_dim = dataset.obs_dim - noise_dim - (1 if spec.env_feature is not None else 0)
    return base_dim, noise_dim


def train_icil(dataset: Dataset, energy_model: EnergyModel | None,
               config: IcilConfig, seed: int) -> tuple[IcilModel, list[LossBreakdown]]:
    """Run the full training schedule on a multi-environment dataset.

    Each iteration draws one minibatch and applies, from the same start-of-
    iteration parameters: descent on the enabled representation/policy losses
    (with the routing documented on each loss), descent on the classifier
    loss, and ascent on the mutual-information bound for the scorer. Loss
    coefficients are all 1. Deterministic given (dataset, config, seed).
    """
    if len(dataset.specs) < 2:
        raise ValueError("training needs >= 2 environments with distinct interventions")
    if config.use_energy:
        if energy_model is None:
            raise ValueError("config.use_energy requires a pretrained energy model")
        if not energy_model.frozen:
            raise ValueError("the energy model must be frozen before training")

    base_dim, noise_dim = _infer_dims(dataset)
    d_s = config.d_s if config.d_s is not None else base_dim
    d_eta = config.d_eta if config.d_eta is not None else max(noise_dim, 1)
    transitions = dataset.transitions()
    n = transitions.x.shape[0]

    model = IcilModel(dataset.obs_dim, dataset.action_count, dataset.env_ids,
                      d_s, d_eta, seed, temperature=config.temperature)
    batch_rng = rng_for(seed, "batches")
    perm_rng = rng_for(seed, "mine-perm")
    gumbel_rng = rng_for(seed, "gumbel")

    history: list[LossBreakdown] = []
    for it in range(config.iterations):
        batch = minibatch_from(transitions, batch_rng.integers(n, size=config.batch_size))
        x_node = ad.tensor(batch.x)
        s = model.state_encoder(x_node)
        needs_eta = config.use_dyn or config.use_mi or config.use_energy
        eta = encode_noise(model, x_node, batch.env_index) if needs_eta else None

        terms: list[Tensor] = []
        record = {"l_inv": 0.0, "l_dyn": 0.0, "l_mi": 0.0, "l_pi": 0.0,
                  "l_energy": 0.0, "l_c": 0.0}

        def checked(name, build):
            try:
                node = build()
            except NonFiniteError:
                raise TrainingDivergence(it, name) from None
            if not np.isfinite(node.data):
                raise TrainingDivergence(it, name)
            terms.append(node)
            record[name] = float(node.data)
            return node

        checked("l_pi", lambda: _pi_term(model, s, batch.a))
        if config.use_inv:
            checked("l_inv", lambda: _inv_term(model, s))
            checked("l_c", lambda: _classifier_term(model, s, batch.env_index))
        if config.use_dyn:
            checked("l_dyn", lambda: _dyn_term(model, s, eta, batch))
        if config.use_mi:
            kappa = perm_rng.permutation(config.batch_size)
            checked("l_mi", lambda: _mi_term(model, s, eta, kappa, detach_scorer=True))
            # scorer ascends the same bound: subtract a copy where only the
            # scorer parameters are live
            scorer_side = _mi_term(model, ad.stop_gradient(s), ad.stop_gradient(eta),
                                   kappa, detach_scorer=False)
            terms.append(ad.neg(scorer_side))
        if config.use_energy:
            noise = sample_gumbel(gumbel_rng, (config.batch_size, model.n_actions))
            checked("l_energy",
                    lambda: _energy_term(model, energy_model, s, eta, batch, noise))

        total = terms[0]
        for t in terms[1:]:
            total = ad.add(total, t)
        ad.backward(total)
        model.store.adam_step(config.learning_rate)
        history.append(LossBreakdown(iteration=it, **record))
    return model, history


# --- inference ---------------------------------------------------------------

def policy_logits(model: IcilModel, observations: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    return ad.forward(model.policy(model.state_encoder(ad.tensor(x))))


def policy_probs(model: IcilModel, observations: np.ndarray) -> np.ndarray:
    logits = policy_logits(model, observations)
    z = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def act(model: IcilModel, observation: np.ndarray, mode: str = "greedy",
        rng: np.random.Generator | None = None) -> int:
    """Action for one observation: argmax of the policy (lowest index wins
    ties) or a categorical draw."""
    obs = np.asarray(observation, dtype=np.float64)
    if obs.ndim != 1 or obs.shape[0] != model.obs_dim:
        raise ValueError(f"expected a {model.obs_dim}-dim observation, got {obs.shape}")
    logits = policy_logits(model, obs)[0]
    if mode == "greedy":
        return int(np.argmax(logits))
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        z = logits - logits.max()
        p = np.exp(z)
        return int(rng.choice(model.n_actions, p=p / p.sum()))
    raise ValueError(f"unknown action mode: {mode}")


def classifier_entropy(model: IcilModel, observations: np.ndarray) -> float:
    """Mean entropy of the environment classifier on held-out observations."""
    s = model.state_encoder(ad.tensor(np.atleast_2d(observations)))
    ent = _entropy_from_logits(model.env_classifier(s))
    return float(ad.forward(ad.reduce_mean(ent)))


# --- persistence ---------------------------------------------------------------

def history_to_csv(path, history: list[LossBreakdown]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "l_inv", "l_dyn", "l_mi", "l_pi", "l_energy", "l_c"])
        for row in history:
            writer.writerow([row.iteration] + [repr(v) for v in
                            (row.l_inv, row.l_dyn, row.l_mi, row.l_pi, row.l_energy, row.l_c)])


def save_icil(path, model: IcilModel, config: IcilConfig | None = None) -> None:
    extra = {
        "kind": "icil-model",
        "obs_dim": model.obs_dim,
        "n_actions": model.n_actions,
        "env_ids": model.env_ids,
        "d_s": model.d_s,
        "d_eta": model.d_eta,
        "seed": model.seed,
        "temperature": model.temperature,
        "config": asdict(config) if config else None,
    }
    save_params(path, model.store, extra=extra)


def load_icil(path) -> IcilModel:
    values, extra = load_params(path)
    if extra.get("kind") != "icil-model":
        raise ValueError(f"{path}: not an invariant-imitation checkpoint")
    model = IcilModel(int(extra["obs_dim"]), int(extra["n_actions"]),
                      [int(e) for e in extra["env_ids"]], int(extra["d_s"]),
                      int(extra["d_eta"]), int(extra["seed"]),
                      temperature=float(extra["temperature"]))
    model.store.load_values(values)
    return model
