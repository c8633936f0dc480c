"""Environments, interventions, expert policies, and trajectory datasets."""

from .cartpole import (
    cartpole_family,
    cartpole_step,
    cartpole_test_spec,
    run_episode,
    scripted_expert,
)
from .clinical import clinical_specs, expert_action_prob, offline_clinical_dataset
from .core import (
    ClinicalIntervention,
    EnvironmentSpec,
    InterventionSpec,
    augment,
    observation_dim,
    strip_augmentation,
    uniform_factors,
)
from .dataset import (
    Dataset,
    Trajectory,
    Transitions,
    dataset_to_csv,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .tabular import (
    TabularMdp,
    next_state_component_mi,
    occupancy_measure,
    product_mdp,
    random_tabular_mdp,
)

__all__ = [
    "ClinicalIntervention", "Dataset", "EnvironmentSpec", "InterventionSpec",
    "TabularMdp", "Trajectory", "Transitions", "augment", "cartpole_family",
    "cartpole_step", "cartpole_test_spec", "clinical_specs", "dataset_to_csv",
    "expert_action_prob", "generate_dataset", "load_dataset",
    "next_state_component_mi", "observation_dim", "occupancy_measure",
    "offline_clinical_dataset", "product_mdp", "random_tabular_mdp",
    "run_episode", "save_dataset", "scripted_expert", "strip_augmentation",
    "uniform_factors",
]
