"""Turning manifests into cached network inputs."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..augmentation import Sample, augment_epoch
from ..dataset_io import DatasetManifest, ManifestEntry, sequence_windows
from ..imaging import Image, preprocess, read_image, to_network_input
from ..synthetic import SceneConfig, render

log = logging.getLogger(__name__)

INPUT_DTYPE = np.float32   # cache precision; batches are promoted to float64


@dataclass
class SplitData:
    manifest: DatasetManifest
    images: list                # original full-size Images, kept for augmentation
    inputs: np.ndarray          # N x 3 x 224 x 224
    x: np.ndarray               # N x 3
    q: np.ndarray               # N x 4

    def __len__(self) -> int:
        return len(self.images)


def load_images(manifest: DatasetManifest, scene: Optional[SceneConfig] = None) -> list:
    """Render synthetic entries when a scene is given, else read the files."""
    if scene is not None:
        return [render(e.pose, scene) for e in manifest.entries]
    return [read_image(manifest.resolve(e)) for e in manifest.entries]


def network_inputs(images, mode: str, seeds=None) -> np.ndarray:
    if not images:
        return np.zeros((0, 3, 224, 224), dtype=INPUT_DTYPE)
    seeds = seeds if seeds is not None else [None] * len(images)
    return np.stack([to_network_input(preprocess(img, mode, s)) for img, s in zip(images, seeds)]).astype(INPUT_DTYPE)


def eval_mode(mode: str) -> str:
    # random crops are a training-time jitter; evaluation uses the centered crop
    return "centered_crop" if mode == "random_crop" else mode


def pipeline_record(mode: str, augment: bool) -> dict:
    """The preprocessing choices a run depends on, for its report."""
    return {"preprocessing": mode, "eval_preprocessing": eval_mode(mode),
            "resize_rounding": "nearest, halves away from zero",
            "augmentation": "rotate the original frame, then preprocess" if augment else "off"}


def labels(entries) -> tuple:
    x = np.array([e.pose.position for e in entries], dtype=np.float64).reshape(-1, 3)
    q = np.array([e.pose.orientation.as_array() for e in entries], dtype=np.float64).reshape(-1, 4)
    return x, q


def prepare_split(manifest: DatasetManifest, mode: str, scene: Optional[SceneConfig] = None) -> SplitData:
    images = load_images(manifest, scene)
    x, q = labels(manifest.entries)
    return SplitData(manifest, images, network_inputs(images, eval_mode(mode)), x, q)


def epoch_training_set(split: SplitData, mode: str, augment: bool, aug_range: tuple,
                       seed: int, epoch: int) -> tuple:
    """(inputs, x, q, entries) for one epoch: originals, then rotated copies if augmenting."""
    inputs = split.inputs
    if mode == "random_crop":
        seeds = [[seed, epoch, i, 17] for i in range(len(split))]
        inputs = network_inputs(split.images, mode, seeds)
    entries = list(split.manifest.entries)
    if not augment:
        return inputs, split.x, split.q, entries
    samples = [Sample(img, e.pose, e.sequence_id, e.frame_index) for img, e in zip(split.images, entries)]
    out = augment_epoch(samples, aug_range, rng_seed=seed, epoch=epoch)[len(samples):]
    seeds = [[seed, epoch, i, 29] for i in range(len(out))] if mode == "random_crop" else None
    aug_inputs = network_inputs([s.image for s in out], mode, seeds)
    aug_entries = [ManifestEntry(e.sequence_id, e.frame_index, e.path, s.label, synthetic=True)
                   for e, s in zip(entries, out)]
    ax, aq = labels(aug_entries)
    return (np.concatenate([inputs, aug_inputs]), np.concatenate([split.x, ax]),
            np.concatenate([split.q, aq]), entries + aug_entries)


def window_indices(entries, source_format: str, length: int, include_augmented: bool = False,
                   allow_unordered: bool = False) -> np.ndarray:
    """N x L indices into ``entries`` for every sequence window."""
    m = DatasetManifest("w", "train", source_format, list(entries))
    pos = {id(e): i for i, e in enumerate(entries)}
    wins = sequence_windows(m, length, allow_unordered=allow_unordered, include_synthetic=include_augmented)
    if not wins:
        return np.zeros((0, length), dtype=np.intp)
    return np.array([[pos[id(e)] for e in w.entries] for w in wins], dtype=np.intp)
