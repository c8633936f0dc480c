"""icilab: a desk-scale laboratory for invariant causal imitation learning.

Strictly batch imitation from multi-environment expert demonstrations with
controlled spurious correlations: environment suite, energy-based model of
expert observations, neural mutual-information estimation, the invariant
causal imitation learner, IRM-augmented baselines, and an experiment harness.
"""

__version__ = "0.1.0"
