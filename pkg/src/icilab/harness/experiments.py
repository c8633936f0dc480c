"""Experiment grids: generalization matrices, ablations, noise sweeps, reports.

A grid cell is one (method, trajectory count, seed, noise dimension) job. All
methods in a run share the same training dataset and the same freshly drawn
test environment, so per-seed comparisons are paired. Completed cells are
recorded as JSON files and skipped on re-runs; failures are recorded per cell
without aborting the grid. Every row carries the configuration hash and seed
that produced it.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, fields, replace
from pathlib import Path

import numpy as np

from .. import baselines, icil
from ..ebm import EbmConfig, load_ebm, save_ebm, train_ebm
from ..envs import (
    cartpole_family,
    cartpole_test_spec,
    generate_dataset,
    offline_clinical_dataset,
)
from ..errors import DataError
from ..seeding import derive_int, rng_for
from .evaluation import action_matching, reference_returns, run_rollout_eval, scale_return

ICIL_VARIANTS = {
    "icil": {},
    "icil-no-inv": {"use_inv": False},
    "icil-no-dyn": {"use_dyn": False},
    "icil-no-mi": {"use_mi": False},
    "icil-no-energy": {"use_energy": False},
}

ALL_METHODS = tuple(baselines.KINDS) + tuple(ICIL_VARIANTS)

TIDY_COLUMNS = ["method", "n_traj", "seed", "raw_return", "scaled_return",
                "acc", "auc", "apr", "noise_dim", "config_hash"]


@dataclass
class ExperimentConfig:
    task: str = "cartpole"
    seed: int = 0
    # environment family
    train_factors: tuple[float, ...] = (1.0, 2.0)
    noise_dim: int = 3
    env_feature: bool = False
    horizon: int = 500
    discount: float = 0.99
    # grid
    n_traj_grid: tuple[int, ...] = (1, 5, 10, 15, 20)
    methods: tuple[str, ...] = ("bc", "rcal", "bc-irm", "rcal-irm", "icil")
    seeds: int = 10
    rollout_episodes: int = 300
    reference_episodes: int = 1000
    # optimizer settings shared by every method
    iterations: int = 10_000
    batch_size: int = 64
    learning_rate: float = 0.001
    temperature: float = 1.0
    rcal_coeff: float = 0.01
    irm_penalty_weight: float = 1.0
    # energy-model pretraining
    ebm_iterations: int = 1000
    ebm_steps: int = 100
    ebm_step_size: float = 0.01
    ebm_noise: float = 0.01
    ebm_batch_size: int = 64
    ebm_buffer_capacity: int = 10_000
    ebm_restart_prob: float = 0.05
    # offline clinical task
    clinical_train_probs: tuple[float, ...] = (0.1, 0.2)
    clinical_test_prob: float = 0.8
    clinical_n_spurious: int = 4
    clinical_horizon: int = 12
    clinical_test_traj: int = 400

    def __post_init__(self):
        if self.task not in ("cartpole", "clinical"):
            raise ValueError(f"unknown task: {self.task}")
        if self.seeds < 1 or self.rollout_episodes < 1 or not self.n_traj_grid:
            raise ValueError("need seeds >= 1, rollout_episodes >= 1, non-empty grid")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ValueError(f"unknown method: {m}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        coerced = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return ExperimentConfig(**coerced)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        with open(path) as f:
            return ExperimentConfig.from_dict(json.load(f))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def ebm_config(self) -> EbmConfig:
        return EbmConfig(steps=self.ebm_steps, step_size=self.ebm_step_size,
                         noise=self.ebm_noise, batch_size=self.ebm_batch_size,
                         buffer_capacity=self.ebm_buffer_capacity,
                         restart_prob=self.ebm_restart_prob,
                         iterations=self.ebm_iterations,
                         learning_rate=self.learning_rate)

    def baseline_config(self) -> baselines.BaselineConfig:
        return baselines.BaselineConfig(learning_rate=self.learning_rate,
                                        iterations=self.iterations,
                                        batch_size=self.batch_size,
                                        rcal_coeff=self.rcal_coeff,
                                        irm_penalty_weight=self.irm_penalty_weight)

    def icil_config(self, method: str = "icil") -> icil.IcilConfig:
        return icil.IcilConfig(learning_rate=self.learning_rate,
                               iterations=self.iterations,
                               batch_size=self.batch_size,
                               temperature=self.temperature,
                               **ICIL_VARIANTS[method])


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f, sort_keys=True, indent=1)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pretrained_ebm(config: ExperimentConfig, dataset, dataset_key: str, out_dir: Path):
    """Train (or load from the run cache) the frozen energy model for a dataset."""
    path = out_dir / "ebm" / f"{dataset_key}.params"
    if path.exists():
        return load_ebm(path)
    model, _ = train_ebm(dataset.observations_pooled(), config.ebm_config(),
                         seed=derive_int(config.seed, "ebm", dataset_key))
    save_ebm(path, model, config.ebm_config())
    return model


def _train_method(method: str, dataset, config: ExperimentConfig, train_seed: int,
                  ebm_model):
    """Returns (greedy act function, probability function)."""
    if method in ICIL_VARIANTS:
        icfg = config.icil_config(method)
        model, _ = icil.train_icil(dataset, ebm_model if icfg.use_energy else None,
                                   icfg, seed=train_seed)
        return (lambda obs: icil.act(model, obs),
                lambda x: icil.policy_probs(model, x))
    policy, _ = baselines.train_baseline(method, dataset, config.baseline_config(),
                                         seed=train_seed)
    return policy.act, policy.probs


def _run_cell_job(payload: dict) -> dict:
    """One grid cell, self-contained for process pools. Never raises."""
    config = ExperimentConfig.from_dict(payload["config"])
    method = payload["method"]
    n_traj = payload["n_traj"]
    seed_index = payload["seed"]
    noise_dim = payload["noise_dim"]
    row = {
        "method": method, "n_traj": n_traj, "seed": seed_index,
        "noise_dim": noise_dim, "config_hash": config.config_hash(),
        "status": "ok", "error": None, "raw_return": None, "scaled_return": None,
        "acc": None, "auc": None, "apr": None,
    }
    try:
        dataset_seed = derive_int(config.seed, "dataset", noise_dim, n_traj, seed_index)
        train_seed = derive_int(config.seed, "train", method, noise_dim, n_traj, seed_index)
        eval_seed = derive_int(config.seed, "eval", noise_dim, n_traj, seed_index)
        needs_ebm = method in ICIL_VARIANTS and ICIL_VARIANTS[method].get("use_energy", True)

        if config.task == "cartpole":
            specs = cartpole_family(config.train_factors, noise_dim, config.env_feature,
                                    config.discount, config.horizon)
            dataset = generate_dataset(specs, n_traj, dataset_seed)
            ebm_model = None
            if needs_ebm:
                key = f"cartpole_d{noise_dim}_n{n_traj}_s{seed_index}"
                ebm_model = _pretrained_ebm(config, dataset, key, Path(payload["out_dir"]))
            act_fn, _ = _train_method(method, dataset, config, train_seed, ebm_model)
            test_spec = cartpole_test_spec(
                rng_for(config.seed, "test-env", noise_dim, n_traj, seed_index),
                noise_dim, config.env_feature, config.discount, config.horizon)
            result = run_rollout_eval(act_fn, test_spec, config.rollout_episodes, eval_seed)
            row["raw_return"] = result.mean
            row["scaled_return"] = scale_return(result.mean, payload["r_random"],
                                                payload["r_expert"])
        else:
            dataset = offline_clinical_dataset(
                n_traj, config.clinical_train_probs, dataset_seed,
                n_spurious=config.clinical_n_spurious, horizon=config.clinical_horizon)
            ebm_model = None
            if needs_ebm:
                key = f"clinical_d{config.clinical_n_spurious}_n{n_traj}_s{seed_index}"
                ebm_model = _pretrained_ebm(config, dataset, key, Path(payload["out_dir"]))
            _, probs_fn = _train_method(method, dataset, config, train_seed, ebm_model)
            test_seed = derive_int(config.seed, "test-data", n_traj, seed_index)
            test_set = offline_clinical_dataset(
                config.clinical_test_traj, [config.clinical_test_prob], test_seed,
                n_spurious=config.clinical_n_spurious, horizon=config.clinical_horizon,
                env_ids=[len(config.clinical_train_probs)])
            acc, auc, apr = action_matching(probs_fn, test_set)
            row.update(acc=acc, auc=auc, apr=apr)
    except Exception as exc:  # recorded per cell; the grid carries on
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _cell_name(method: str, n_traj: int, seed: int, noise_dim: int) -> str:
    return f"{method}_d{noise_dim}_n{n_traj}_s{seed}.json"


def _cached_reference(config: ExperimentConfig, out_dir: Path) -> tuple[float, float]:
    """Measured (random, expert) returns, cached with the run outputs."""
    path = out_dir / "reference_returns.json"
    if path.exists():
        with open(path) as f:
            cached = json.load(f)
        if cached.get("config_hash") == config.config_hash():
            return cached["r_random"], cached["r_expert"]
    spec = cartpole_family(config.train_factors, config.noise_dim, config.env_feature,
                           config.discount, config.horizon)[0]
    r_random, r_expert = reference_returns(spec, config.reference_episodes,
                                           derive_int(config.seed, "reference"))
    _write_json(path, {"config_hash": config.config_hash(), "r_random": r_random,
                       "r_expert": r_expert, "episodes": config.reference_episodes})
    return r_random, r_expert


def _execute_cells(config: ExperimentConfig, cells: list[tuple], out_dir,
                   workers: int = 1) -> list[dict]:
    out_dir = Path(out_dir)
    cells_dir = out_dir / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    r_random = r_expert = None
    if config.task == "cartpole":
        r_random, r_expert = _cached_reference(config, out_dir)

    pending = []
    for method, n_traj, seed, noise_dim in cells:
        if (cells_dir / _cell_name(method, n_traj, seed, noise_dim)).exists():
            continue
        pending.append({
            "config": config.to_dict(), "method": method, "n_traj": n_traj,
            "seed": seed, "noise_dim": noise_dim, "out_dir": str(out_dir),
            "r_random": r_random, "r_expert": r_expert,
        })

    if pending:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_run_cell_job, pending))
        else:
            results = [_run_cell_job(p) for p in pending]
        for row in results:
            _write_json(cells_dir / _cell_name(row["method"], row["n_traj"], row["seed"],
                                               row["noise_dim"]), row)

    rows = []
    for method, n_traj, seed, noise_dim in cells:
        with open(cells_dir / _cell_name(method, n_traj, seed, noise_dim)) as f:
            rows.append(json.load(f))
    return rows


def run_matrix(config: ExperimentConfig, out_dir, workers: int = 1) -> list[dict]:
    """The full (method x trajectory-count x seed) generalization grid."""
    cells = [(m, n, s, config.noise_dim)
             for m in config.methods
             for n in config.n_traj_grid
             for s in range(config.seeds)]
    return _execute_cells(config, cells, out_dir, workers)


def run_ablation(config: ExperimentConfig, out_dir, workers: int = 1,
                 n_traj: int = 5) -> list[dict]:
    """Loss-term removal arms of the invariant learner at one grid point."""
    cells = [(arm, n_traj, s, config.noise_dim)
             for arm in ICIL_VARIANTS
             for s in range(config.seeds)]
    return _execute_cells(config, cells, out_dir, workers)


def run_noise_sweep(config: ExperimentConfig, out_dir, workers: int = 1,
                    dims: tuple[int, ...] = (3, 6, 9, 12), n_traj: int = 5,
                    methods: tuple[str, ...] = ("bc", "icil")) -> list[dict]:
    """Robustness to growing the number of noise coordinates."""
    cells = [(m, n_traj, s, d)
             for m in methods
             for d in dims
             for s in range(config.seeds)]
    return _execute_cells(config, cells, out_dir, workers)


def _fmt(value) -> str:
    if value is None:
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def report(results_dir, out_dir=None) -> dict:
    """Aggregate completed cells into tidy, aggregate, and plot-data CSV files.

    Deterministic and idempotent: rows are ordered by cell file name, floats
    are written with full round-trip precision.
    """
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir is not None else results_dir
    cell_files = sorted((results_dir / "cells").glob("*.json"))
    if not cell_files:
        raise DataError(f"no completed cells under {results_dir}")
    rows, failures = [], []
    for path in cell_files:
        with open(path) as f:
            row = json.load(f)
        (rows if row.get("status") == "ok" else failures).append(row)

    out_dir.mkdir(parents=True, exist_ok=True)
    tidy_path = out_dir / "tidy.csv"
    with open(tidy_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TIDY_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in TIDY_COLUMNS])

    if failures:
        with open(out_dir / "failures.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "n_traj", "seed", "noise_dim", "error"])
            for row in failures:
                writer.writerow([row["method"], row["n_traj"], row["seed"],
                                 row["noise_dim"], row["error"]])

    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["method"], row["noise_dim"], row["n_traj"]), []).append(row)

    def mean_se(values):
        vals = [v for v in values if v is not None]
        if not vals:
            return None, None
        arr = np.asarray(vals, dtype=np.float64)
        se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        return float(arr.mean()), se

    metrics = ("scaled_return", "acc", "auc", "apr")
    agg_header = ["method", "noise_dim", "n_traj", "n_seeds"]
    for m in metrics:
        agg_header += [f"mean_{m}", f"se_{m}"]
    agg_rows = []
    for key in sorted(groups):
        bucket = groups[key]
        record = [key[0], key[1], key[2], len(bucket)]
        for m in metrics:
            mean, se = mean_se([r[m] for r in bucket])
            record += [mean, se]
        agg_rows.append(record)

    with open(out_dir / "aggregate.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(agg_header)
        for record in agg_rows:
            writer.writerow([_fmt(v) for v in record])

    plot_dir = out_dir / "plot_data"
    plot_dir.mkdir(exist_ok=True)
    by_method: dict[str, list] = {}
    for record in agg_rows:
        by_method.setdefault(record[0], []).append(record)
    for method, records in sorted(by_method.items()):
        with open(plot_dir / f"{method}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(agg_header)
            for record in records:
                writer.writerow([_fmt(v) for v in record])

    return {"rows": len(rows), "failures": len(failures),
            "tidy": str(tidy_path), "aggregate": str(out_dir / "aggregate.csv")}
