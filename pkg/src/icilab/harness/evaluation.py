"""Policy evaluation: online rollouts and offline action matching."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..envs import cartpole
from ..envs.core import EnvironmentSpec
from ..envs.dataset import Dataset
from ..errors import DataError
from ..seeding import rng_for


@dataclass
class EvalResult:
    mean: float
    se: float
    returns: tuple[float, ...]

    @staticmethod
    def from_returns(returns) -> "EvalResult":
        arr = np.asarray(returns, dtype=np.float64)
        se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        return EvalResult(float(arr.mean()), se, tuple(float(r) for r in arr))


def run_rollout_eval(act_fn, env_spec: EnvironmentSpec, episodes: int, seed: int) -> EvalResult:
    """Average return of `act_fn(observation) -> action` over seeded episodes.

    Each episode gets its own derived random stream, so results are
    deterministic in (policy, env_spec, episodes, seed) and independent of
    evaluation order.
    """
    if env_spec.base_task != "cartpole":
        raise ValueError(f"rollout evaluation needs an online task, got '{env_spec.base_task}'")
    if episodes < 1:
        raise ValueError("episodes must be positive")
    returns = []
    for i in range(episodes):
        rng = rng_for(seed, "episode", i)
        ret, _, _ = cartpole.run_episode(env_spec, lambda base, obs: act_fn(obs), rng)
        returns.append(ret)
    return EvalResult.from_returns(returns)


def scale_return(raw: float, r_random: float, r_expert: float) -> float:
    """Linear rescale: 0 at the random-policy return, 1 at the expert return.

    Not clamped; a policy can score below 0 or above 1.
    """
    denom = r_expert - r_random
    if abs(denom) < 1e-9:
        raise ValueError("expert and random reference returns coincide")
    return (raw - r_random) / denom


def reference_returns(env_spec: EnvironmentSpec, episodes: int, seed: int) -> tuple[float, float]:
    """Measured (random, expert) mean returns for the task, used for scaling."""
    rand_returns = []
    for i in range(episodes):
        rng = rng_for(seed, "reference-random", i)
        ret, _, _ = cartpole.run_episode(env_spec, lambda b, o: int(rng.integers(2)), rng)
        rand_returns.append(ret)
    expert_returns = []
    for i in range(episodes):
        rng = rng_for(seed, "reference-expert", i)
        ret, _, _ = cartpole.run_episode(
            env_spec, lambda b, o: cartpole.scripted_expert(b), rng)
        expert_returns.append(ret)
    return float(np.mean(rand_returns)), float(np.mean(expert_returns))


def _roc_points(scores: np.ndarray, labels: np.ndarray):
    """(FPR, TPR) at every distinct threshold, ties grouped, ends anchored."""
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    distinct = np.flatnonzero(np.diff(scores)) if len(scores) > 1 else np.array([], dtype=int)
    cut = np.concatenate([distinct, [len(scores) - 1]])
    tp = np.cumsum(labels)[cut]
    fp = np.cumsum(1 - labels)[cut]
    pos, neg = labels.sum(), (1 - labels).sum()
    tpr = np.concatenate([[0.0], tp / pos])
    fpr = np.concatenate([[0.0], fp / neg])
    precision = tp / (tp + fp)
    recall = tp / pos
    return fpr, tpr, recall, precision


def action_matching(probs_fn, dataset: Dataset) -> tuple[float, float, float]:
    """Offline action agreement on a binary-action dataset.

    `probs_fn(observations) -> (n, 2)` action probabilities. Accuracy uses
    the greedy action; the ranking metrics (area under the ROC curve and
    under the precision-recall curve) use the probability of action 1,
    integrated trapezoidally over an exact threshold sweep with tied scores
    grouped.
    """
    tr = dataset.transitions()
    if dataset.action_count != 2:
        raise DataError("action matching is defined for binary actions")
    labels = tr.a.astype(np.int64)
    if labels.min() == labels.max():
        raise DataError("test set contains a single action class; AUC is undefined")
    probs = np.asarray(probs_fn(tr.x), dtype=np.float64)
    if probs.shape != (len(labels), 2):
        raise DataError(f"probability array has shape {probs.shape}")
    greedy = probs.argmax(axis=1)
    acc = float((greedy == labels).mean())
    scores = probs[:, 1]
    fpr, tpr, recall, precision = _roc_points(scores, labels)
    auc = float(np.trapezoid(tpr, fpr))
    recall = np.concatenate([[0.0], recall])
    precision = np.concatenate([[precision[0]], precision])
    apr = float(np.trapezoid(precision, recall))
    return acc, auc, apr
