"""Versioned checkpoint files for actor and evaluator parameters.

Values are serialized as hexadecimal float literals, so a load reproduces
the saved ParamSet bit for bit and reproducibility claims stay exact rather
than approximate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ModelDims, ParamSet

SCHEMA_VERSION = 1

KINDS = ("actor", "evaluator")


class CheckpointError(ValueError):
    """A checkpoint file is unreadable, truncated, or has a bad version."""


@dataclass
class Checkpoint:
    kind: str
    dims: ModelDims
    params: ParamSet
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CheckpointError(f"unknown checkpoint kind {self.kind!r}")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    payload = {
        "schema_version": ckpt.schema_version,
        "kind": ckpt.kind,
        "dims": ckpt.dims.as_dict(),
        "params": {
            name: {
                "shape": list(arr.shape),
                "values": [v.hex() for v in arr.ravel().tolist()],
            }
            for name, arr in ckpt.params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unparseable checkpoint {path}: {exc}") from exc

    try:
        version = payload["schema_version"]
        if version != SCHEMA_VERSION:
            raise CheckpointError(
                f"checkpoint schema_version {version} unsupported (expected {SCHEMA_VERSION})"
            )
        entries = {}
        for name, entry in payload["params"].items():
            values = np.array([float.fromhex(v) for v in entry["values"]])
            entries[name] = values.reshape(entry["shape"])
        return Checkpoint(
            kind=payload["kind"],
            dims=ModelDims.from_dict(payload["dims"]),
            params=ParamSet(entries),
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
