"""Neural estimation of mutual information (Donsker-Varadhan lower bound).

A statistics network T scores (u, v) pairs; the bound is the mean score of
joint pairs minus the log mean exponential score of pairs whose v side was
permuted within the batch. Training T by gradient ascent tightens the bound
toward the true mutual information.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .nets import Mlp, mlp_2x64


def statistics_network(store: ParameterStore, prefix: str, dim_u: int, dim_v: int,
                       rng: np.random.Generator) -> Mlp:
    """Standard scorer over concatenated (u, v) pairs."""
    return mlp_2x64(store, prefix, dim_u + dim_v, 1, activation="elu", rng=rng)


def mine_bound(t_net: Mlp, u: Tensor, v_joint: Tensor, v_marginal: Tensor,
               detach_params: bool = False) -> Tensor:
    """Lower bound on I(U; V) from one minibatch.

    `u` pairs with `v_joint` row-for-row; `v_marginal` is the same batch of v
    rows under a permutation, emulating the product of marginals. The result
    is differentiable with respect to the inputs and (unless detached) the
    scorer parameters.
    """
    n = u.data.shape[0]
    if n < 2:
        raise ValueError("mine_bound needs batch size >= 2 (permutation degenerate)")
    if v_joint.data.shape[0] != n or v_marginal.data.shape[0] != n:
        raise ValueError("joint and marginal batches must match the u batch size")
    t_joint = t_net(ad.concat([u, v_joint], axis=1), detach_params=detach_params)
    t_marginal = t_net(ad.concat([u, v_marginal], axis=1), detach_params=detach_params)
    return ad.sub(ad.reduce_mean(t_joint),
                  ad.log(ad.reduce_mean(ad.exp(t_marginal))))


def mine_bound_value(t_net: Mlp, u: np.ndarray, v: np.ndarray,
                     rng: np.random.Generator) -> float:
    """Evaluate the bound on plain arrays with a fresh permutation."""
    kappa = rng.permutation(u.shape[0])
    bound = mine_bound(t_net, ad.tensor(u), ad.tensor(v), ad.tensor(v[kappa]))
    return float(ad.forward(bound))


def mine_ascent_step(t_net: Mlp, store: ParameterStore, u: np.ndarray, v_joint: np.ndarray,
                     v_marginal: np.ndarray, learning_rate: float) -> float:
    """One Adam ascent step on the bound for the scorer parameters only.

    Inputs are plain arrays (constants in the graph), so nothing upstream is
    touched. Returns the bound value before the update.
    """
    bound = mine_bound(t_net, ad.tensor(u), ad.tensor(v_joint), ad.tensor(v_marginal))
    ad.backward(ad.neg(bound))  # descend the negated bound = ascend the bound
    store.adam_step(learning_rate)
    return float(bound.data)


def train_mine(u: np.ndarray, v: np.ndarray, iterations: int, batch_size: int,
               seed: int, learning_rate: float = 0.001) -> tuple[Mlp, ParameterStore, list[float]]:
    """Fit a statistics network to samples of (U, V); returns the bound trace."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape[0] != v.shape[0]:
        raise ValueError("u and v need the same number of samples")
    store = ParameterStore()
    net = statistics_network(store, "mine", u.shape[1], v.shape[1],
                             np.random.default_rng(np.random.SeedSequence([seed, 0])))
    batch_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    perm_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    trace = []
    for _ in range(iterations):
        idx = batch_rng.integers(u.shape[0], size=batch_size)
        kappa = perm_rng.permutation(batch_size)
        trace.append(mine_ascent_step(net, store, u[idx], v[idx], v[idx][kappa], learning_rate))
    return net, store, trace
