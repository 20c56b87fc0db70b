"""Per-epoch rotation augmentation: rotate the image, rewrite the label."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, apply_roll_augmentation
from .imaging import Image, rotate_image

MAX_THETA = 20.0
DEFAULT_RANGE = (-20.0, 20.0)


@dataclass(frozen=True, eq=False)
class Sample:
    image: Image
    label: Pose
    sequence_id: str = "seq"
    frame_index: int = 0
    synthetic: bool = False     # augmented copy; kept out of LSTM windows
    theta: float = 0.0          # rotation applied, degrees

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")


def augment_sample(s: Sample, theta: float) -> Sample:
    if abs(theta) > MAX_THETA:
        raise ValueError(f"augmentation angle {theta} outside [-{MAX_THETA}, {MAX_THETA}]")
    return replace(s, image=rotate_image(s.image, theta),
                   label=apply_roll_augmentation(s.label, theta),
                   synthetic=True, theta=s.theta + theta)


def epoch_rng(base_seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([int(base_seed), int(epoch), 0xA0C])


def draw_thetas(n: int, range_deg=DEFAULT_RANGE, rng_seed: int = 0, epoch: int = 0) -> np.ndarray:
    lo, hi = range_deg
    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if lo == hi:
        return np.full(n, float(lo))
    return epoch_rng(rng_seed, epoch).uniform(lo, hi, size=n)


def augment_epoch(dataset: Sequence[Sample], range_deg=DEFAULT_RANGE, rng_seed: int = 0,
                  epoch: int = 0, thetas: Optional[np.ndarray] = None) -> list:
    """Originals followed by one rotated copy of each, thetas ~ U[lo, hi].

    Thetas are drawn from a generator seeded by ``(rng_seed, epoch)``, so each
    epoch gets fresh angles and any epoch can be regenerated exactly.
    """
    if thetas is None:
        thetas = draw_thetas(len(dataset), range_deg, rng_seed, epoch)
    return list(dataset) + [augment_sample(s, float(t)) for s, t in zip(dataset, thetas)]
