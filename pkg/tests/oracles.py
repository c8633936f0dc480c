"""Independent numerical oracles used by the test suite.

These deliberately avoid the code paths they check: gradients come from
central finite differences, occupancy measures from Monte-Carlo rollouts,
mutual information from closed forms.
"""

from __future__ import annotations

import numpy as np

from icilab import autodiff as ad


def finite_difference_grads(build, leaves, h: float = 1e-5):
    """Central-difference gradients of a scalar graph wrt each leaf array.

    `build(leaf_tensors) -> Tensor` must construct a fresh scalar graph from
    the given leaf tensors. `leaves` is a list of numpy arrays; returns one
    gradient array per leaf.
    """
    grads = []
    for i, base in enumerate(leaves):
        g = np.zeros_like(base, dtype=np.float64)
        flat = g.reshape(-1)
        base_flat = base.reshape(-1)
        for j in range(base_flat.size):
            orig = base_flat[j]
            base_flat[j] = orig + h
            hi = float(ad.forward(build([ad.tensor(a) for a in leaves])))
            base_flat[j] = orig - h
            lo = float(ad.forward(build([ad.tensor(a) for a in leaves])))
            base_flat[j] = orig
            flat[j] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def analytic_grads(build, leaves):
    """Reverse-mode gradients for the same interface as the FD oracle."""
    nodes = [ad.tensor(a) for a in leaves]
    root = build(nodes)
    ad.backward(root)
    return [n.grad for n in nodes]


def max_rel_error(a: np.ndarray, f: np.ndarray) -> float:
    """Elementwise |a-f| / max(1, |f|), reduced to the maximum."""
    return float(np.max(np.abs(a - f) / np.maximum(1.0, np.abs(f))))


def check_gradients(build, leaves, h: float = 1e-5) -> float:
    """Worst relative error between analytic and FD gradients over all leaves."""
    fd = finite_difference_grads(build, leaves, h=h)
    an = analytic_grads(build, leaves)
    return max(max_rel_error(a, f) for a, f in zip(an, fd))


def mc_occupancy(transitions: np.ndarray, initial: np.ndarray, policy: np.ndarray,
                 gamma: float, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo occupancy estimate.

    Draws a horizon T ~ Geometric(1-gamma) per sample, rolls the chain T steps
    and records the (state, action) occupied at step T. The empirical
    distribution estimates the discounted occupancy measure.
    """
    n_actions, n_states, _ = transitions.shape
    counts = np.zeros((n_states, n_actions))
    horizons = rng.geometric(1.0 - gamma, size=n_samples) - 1
    states = rng.choice(n_states, size=n_samples, p=initial)
    actions = np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        s = states[i]
        a = rng.choice(n_actions, p=policy[s])
        for _ in range(horizons[i]):
            s = rng.choice(n_states, p=transitions[a, s])
            a = rng.choice(n_actions, p=policy[s])
        counts[s, a] += 1
    return counts / n_samples


def gaussian_mi(rho: float) -> float:
    """Closed-form mutual information of a bivariate Gaussian, in nats."""
    return -0.5 * np.log(1.0 - rho * rho)
