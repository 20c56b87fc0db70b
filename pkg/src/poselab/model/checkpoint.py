"""Parameter checkpoints.

A checkpoint is an uncompressed ``.npz`` archive:

* ``__format__``: the string ``"poselab-checkpoint"``
* ``__version__``: integer format version
* ``__config__``: JSON echo of the backbone/head configs plus ``seed`` and any
  caller metadata
* one float64 array per parameter, keyed by its layout name

Arrays are stored raw, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from .config import config_from_dict, config_to_dict, param_layout
from .network import PoseModel

CHECKPOINT_VERSION = 1
_FORMAT = "poselab-checkpoint"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: PoseModel, path, extra: dict = None) -> None:
    meta = config_to_dict(model.backbone, model.head)
    meta["seed"] = model.seed
    meta["extra"] = extra or {}
    arrays = {name: t.data for name, t in model.params.items()}
    arrays["__format__"] = np.array(_FORMAT)
    arrays["__version__"] = np.array(CHECKPOINT_VERSION)
    arrays["__config__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple:
    """Returns (model, extra metadata)."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        if "__format__" not in z.files or str(z["__format__"]) != _FORMAT:
            raise CheckpointError(f"{path}: not a poselab checkpoint")
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        meta = json.loads(str(z["__config__"]))
        backbone, head = config_from_dict(meta)
        params = {}
        for name, shape, _ in param_layout(backbone, head):
            if name not in z.files:
                raise CheckpointError(f"{path}: missing parameter {name}")
            arr = z[name]
            if arr.shape != shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {shape}")
            params[name] = Tensor(arr.astype(np.float64), requires_grad=True, name=name)
    return PoseModel(backbone, head, seed=meta.get("seed", 0), params=params), meta.get("extra", {})
