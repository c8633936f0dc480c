"""Self-describing parameter checkpoint files.

Layout: magic line, 8-byte big-endian header length, UTF-8 JSON header
{"format_version", "names", "shapes", "extra"}, then the row-major float64
payload of each parameter in header order. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .autodiff import ParameterStore
from .errors import DataError

MAGIC = b"ICILAB-PARAMS\n"
FORMAT_VERSION = 1


def save_params(path, store: ParameterStore, extra: dict | None = None) -> None:
    """Write all parameters of `store` (values only, no optimizer state)."""
    names = store.names()
    header = {
        "format_version": FORMAT_VERSION,
        "names": names,
        "shapes": {n: list(store[n].data.shape) for n in names},
        "extra": extra or {},
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
            for name in names:
                f.write(np.ascontiguousarray(store[name].data, dtype=np.float64).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as `{name: array}` plus the extra record."""
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise DataError(f"{path}: not a parameter checkpoint")
        (blob_len,) = struct.unpack(">Q", f.read(8))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported format version {header.get('format_version')}")
        values: dict[str, np.ndarray] = {}
        for name in header["names"]:
            shape = tuple(header["shapes"][name])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise DataError(f"{path}: truncated payload for '{name}'")
            values[name] = np.frombuffer(raw, dtype=np.float64).reshape(shape).copy()
    return values, header.get("extra", {})


def load_into(path, store: ParameterStore) -> dict:
    """Load a checkpoint into an existing store; returns the extra record."""
    values, extra = load_params(path)
    if set(values) != set(store.names()):
        raise DataError(f"{path}: parameter names do not match the target store")
    store.load_values(values)
    return extra
