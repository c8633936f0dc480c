"""Small tabular MDPs with exact occupancy and independence oracles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

MAX_STATES = 64
MAX_ACTIONS = 4


@dataclass
class TabularMdp:
    transitions: np.ndarray  # (A, S, S), rows stochastic
    initial: np.ndarray      # (S,)

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.float64)
        self.initial = np.asarray(self.initial, dtype=np.float64)
        if self.transitions.ndim != 3 or self.transitions.shape[1] != self.transitions.shape[2]:
            raise DataError("transitions must have shape (A, S, S)")
        a, s, _ = self.transitions.shape
        if s > MAX_STATES or a > MAX_ACTIONS:
            raise DataError(f"tabular MDP limited to {MAX_STATES} states / {MAX_ACTIONS} actions")
        if self.initial.shape != (s,):
            raise DataError("initial distribution shape mismatch")
        if np.any(self.transitions < 0) or np.any(np.abs(self.transitions.sum(axis=2) - 1.0) > 1e-9):
            raise DataError("transition rows must be stochastic")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1.0) > 1e-9:
            raise DataError("initial distribution must be stochastic")

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]


def occupancy_measure(mdp: TabularMdp, policy: np.ndarray, gamma: float) -> np.ndarray:
    """Exact discounted state-action occupancy, solved from the flow system.

    Solves (I - gamma * P_pi^T) d = (1 - gamma) * initial for the state
    occupancy d, then spreads it over actions with the policy. The result
    sums to one.
    """
    policy = np.asarray(policy, dtype=np.float64)
    s, a = mdp.n_states, mdp.n_actions
    if policy.shape != (s, a):
        raise DataError("policy shape must be (S, A)")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-9):
        raise DataError("policy rows must be stochastic")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    # P_pi[s, s'] = sum_a policy[s, a] * T[a, s, s']
    p_pi = np.einsum("sa,ast->st", policy, mdp.transitions)
    d = np.linalg.solve(np.eye(s) - gamma * p_pi.T, (1.0 - gamma) * mdp.initial)
    return d[:, None] * policy


def random_tabular_mdp(n_states: int, n_actions: int, rng: np.random.Generator,
                       concentration: float = 1.0) -> TabularMdp:
    t = rng.dirichlet(np.full(n_states, concentration), size=(n_actions, n_states))
    initial = rng.dirichlet(np.full(n_states, concentration))
    return TabularMdp(t, initial)


def product_mdp(t_first: np.ndarray, t_second: np.ndarray,
                initial_first: np.ndarray, initial_second: np.ndarray) -> TabularMdp:
    """Product of two component chains; state = c1 * S2 + c2.

    Both components evolve independently given (state, action), so next-state
    components are conditionally independent by construction.
    """
    t1 = np.asarray(t_first, dtype=np.float64)
    t2 = np.asarray(t_second, dtype=np.float64)
    if t1.shape[0] != t2.shape[0]:
        raise DataError("component chains must share the action space")
    a, s1, s2 = t1.shape[0], t1.shape[1], t2.shape[1]
    trans = np.einsum("aij,akl->aikjl", t1, t2).reshape(a, s1 * s2, s1 * s2)
    initial = np.outer(np.asarray(initial_first), np.asarray(initial_second)).reshape(-1)
    return TabularMdp(trans, initial)


def next_state_component_mi(mdp: TabularMdp, component_sizes: tuple[int, int]) -> float:
    """Largest conditional mutual information I(c1'; c2' | s, a) over all (s, a).

    Computed exactly from the transition tables with the state space read as
    the product of the two component sizes.
    """
    s1, s2 = component_sizes
    if s1 * s2 != mdp.n_states:
        raise DataError("component sizes do not factor the state space")
    worst = 0.0
    for a in range(mdp.n_actions):
        for s in range(mdp.n_states):
            joint = mdp.transitions[a, s].reshape(s1, s2)
            p1 = joint.sum(axis=1)
            p2 = joint.sum(axis=0)
            mask = joint > 0
            ratio = joint[mask] / (np.outer(p1, p2)[mask])
            worst = max(worst, float(np.sum(joint[mask] * np.log(ratio))))
    return worst
