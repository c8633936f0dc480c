"""Trajectory datasets: generation, flattening, and (de)serialization."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ..errors import DataError
from ..seeding import rng_for
from . import cartpole
from .core import EnvironmentSpec

MAGIC = b"ICILAB-TRAJ\n"
FORMAT_VERSION = 1


@dataclass
class Trajectory:
    env_id: int
    observations: np.ndarray        # (T, d)
    actions: np.ndarray             # (T,)
    next_observations: np.ndarray   # (T, d)
    terminated: bool = False

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        self.next_observations = np.asarray(self.next_observations, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        t, d = self.observations.shape
        if self.next_observations.shape != (t, d) or self.actions.shape != (t,):
            raise DataError("trajectory arrays have inconsistent shapes")
        if t > 1 and not np.array_equal(self.next_observations[:-1], self.observations[1:]):
            raise DataError("trajectory steps do not chain")

    def __len__(self) -> int:
        return len(self.actions)


class Transitions(NamedTuple):
    """Flattened dataset: one row per (x, a, x') step."""

    x: np.ndarray          # (n, d)
    a: np.ndarray          # (n,)
    x_next: np.ndarray     # (n, d)
    env_index: np.ndarray  # (n,) position of the env in the dataset's spec list
    terminal: np.ndarray   # (n,) bool, True on the last step of a terminated episode


@dataclass
class Dataset:
    specs: list[EnvironmentSpec]
    trajectories: list[Trajectory]
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.env_id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate env ids in dataset specs")
        known = set(ids)
        for tr in self.trajectories:
            if tr.env_id not in known:
                raise DataError(f"trajectory references unknown env id {tr.env_id}")

    @property
    def env_ids(self) -> list[int]:
        return [s.env_id for s in self.specs]

    @property
    def obs_dim(self) -> int:
        return self.trajectories[0].observations.shape[1]

    @property
    def action_count(self) -> int:
        return self.specs[0].action_count

    def by_env(self, env_id: int) -> list[Trajectory]:
        return [t for t in self.trajectories if t.env_id == env_id]

    def transitions(self) -> Transitions:
        index_of = {eid: i for i, eid in enumerate(self.env_ids)}
        xs, acts, xns, envs, terms = [], [], [], [], []
        for tr in self.trajectories:
            n = len(tr)
            xs.append(tr.observations)
            acts.append(tr.actions)
            xns.append(tr.next_observations)
            envs.append(np.full(n, index_of[tr.env_id], dtype=np.int64))
            term = np.zeros(n, dtype=bool)
            if tr.terminated:
                term[-1] = True
            terms.append(term)
        return Transitions(np.concatenate(xs), np.concatenate(acts), np.concatenate(xns),
                           np.concatenate(envs), np.concatenate(terms))

    def observations_pooled(self) -> np.ndarray:
        return np.concatenate([t.observations for t in self.trajectories])


def spec_hash(specs: Sequence[EnvironmentSpec]) -> str:
    blob = json.dumps([s.to_dict() for s in specs], sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def generate_dataset(specs: Sequence[EnvironmentSpec], n_traj: int, seed: int,
                     expert: Callable[[np.ndarray], int] = cartpole.scripted_expert) -> Dataset:
    """Expert demonstrations from every environment, `n_traj` episodes each.

    The expert acts on the base state only; observations store the augmented
    view. Each (env, trajectory) pair uses its own derived random stream, so
    the result is bit-reproducible from the seed.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    trajectories = []
    for spec in specs:
        if spec.base_task != "cartpole":
            raise ValueError(f"generate_dataset does not handle base task '{spec.base_task}'")
        for i in range(n_traj):
            rng = rng_for(seed, "traj", spec.env_id, i)
            _, steps, terminated = cartpole.run_episode(
                spec, lambda base, obs: expert(base), rng, collect=True)
            obs, acts, nobs = zip(*steps)
            trajectories.append(Trajectory(spec.env_id, np.array(obs), np.array(acts),
                                           np.array(nobs), terminated))
    return Dataset(list(specs), trajectories, seed,
                   meta={"n_traj": n_traj, "spec_hash": spec_hash(specs)})


def save_dataset(path, dataset: Dataset) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "seed": dataset.seed,
        "meta": dataset.meta,
        "specs": [s.to_dict() for s in dataset.specs],
        "n_trajectories": len(dataset.trajectories),
        "obs_dim": dataset.obs_dim,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack(">Q", len(blob)))
            f.write(blob)
            for tr in dataset.trajectories:
                f.write(struct.pack(">qQB", tr.env_id, len(tr), int(tr.terminated)))
                f.write(np.ascontiguousarray(tr.observations).tobytes())
                f.write(np.ascontiguousarray(tr.actions, dtype=np.float64).tobytes())
                f.write(np.ascontiguousarray(tr.next_observations).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a trajectory dataset file")
        (blob_len,) = struct.unpack(">Q", f.read(8))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version")
        specs = [EnvironmentSpec.from_dict(d) for d in header["specs"]]
        d = header["obs_dim"]
        trajectories = []
        for _ in range(header["n_trajectories"]):
            env_id, t, terminated = struct.unpack(">qQB", f.read(17))
            obs = np.frombuffer(f.read(8 * t * d), dtype=np.float64).reshape(t, d)
            acts = np.frombuffer(f.read(8 * t), dtype=np.float64).astype(np.int64)
            nobs = np.frombuffer(f.read(8 * t * d), dtype=np.float64).reshape(t, d)
            trajectories.append(Trajectory(env_id, obs.copy(), acts, nobs.copy(), bool(terminated)))
    return Dataset(specs, trajectories, header["seed"], header.get("meta", {}))


def dataset_to_csv(path, dataset: Dataset) -> None:
    """Human-inspectable flat export of every transition."""
    d = dataset.obs_dim
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["env_id", "traj_id", "t"]
                        + [f"x_{i}" for i in range(d)] + ["a"]
                        + [f"x'_{i}" for i in range(d)])
        for traj_id, tr in enumerate(dataset.trajectories):
            for t in range(len(tr)):
                writer.writerow([tr.env_id, traj_id, t]
                                + [repr(v) for v in tr.observations[t]]
                                + [int(tr.actions[t])]
                                + [repr(v) for v in tr.next_observations[t]])
