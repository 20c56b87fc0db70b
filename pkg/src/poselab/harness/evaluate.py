"""Median pose errors and the Improvement-column arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..geometry import DegenerateRotationError, UnitQuaternion, angular_distance_deg, normalize


def median(values) -> float:
    """Median; an even count averages the two middle values."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = v.size
    if n == 0:
        raise ValueError("median of an empty set")
    mid = n // 2
    if n % 2:
        return float(v[mid])
    return float((v[mid - 1] + v[mid]) / 2.0)


def truncate(value: float, decimals: int) -> float:
    """Cut toward zero at ``decimals`` places (12.499999 stays 12.5 when it means 12.5)."""
    f = 10 ** decimals
    return math.trunc(round(value * f, 6)) / f


def improvement_percent(baseline: float, new: float, rounding: str = "truncate") -> float:
    """(baseline - new) / baseline * 100 at one decimal; negative when worse."""
    if not baseline > 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    raw = (baseline - new) / baseline * 100.0
    if rounding == "truncate":
        return truncate(raw, 1) + 0.0
    if rounding == "round":
        return round(raw, 1) + 0.0
    raise ValueError(f"rounding must be 'truncate' or 'round', got {rounding!r}")


def position_errors(x_true: np.ndarray, x_pred: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(x_pred) - np.asarray(x_true), axis=1)


def orientation_errors(q_true: np.ndarray, q_pred: np.ndarray) -> np.ndarray:
    """Degrees between each label and its normalized prediction.

    A prediction too close to zero to normalize counts as 180 degrees.
    """
    out = np.empty(len(q_true))
    for i, (a, b) in enumerate(zip(q_true, q_pred)):
        try:
            out[i] = angular_distance_deg(UnitQuaternion(*a), normalize(b))
        except DegenerateRotationError:
            out[i] = 180.0
    return out


@dataclass
class EvalReport:
    position_errors: np.ndarray
    orientation_errors: np.ndarray
    curves: dict = field(default_factory=dict)   # epoch -> {train_pos, train_ori, test_pos, test_ori}

    def __post_init__(self):
        self.position_errors = np.asarray(self.position_errors, dtype=np.float64)
        self.orientation_errors = np.asarray(self.orientation_errors, dtype=np.float64)
        if self.position_errors.size == 0:
            raise ValueError("report over an empty set")
        if self.position_errors.shape != self.orientation_errors.shape:
            raise ValueError("position and orientation error arrays differ in length")

    @property
    def median_position(self) -> float:
        return median(self.position_errors)

    @property
    def median_orientation(self) -> float:
        return median(self.orientation_errors)

    def to_dict(self) -> dict:
        return {
            "median_position_m": self.median_position,
            "median_orientation_deg": self.median_orientation,
            "position_errors": self.position_errors.tolist(),
            "orientation_errors": self.orientation_errors.tolist(),
            "curves": {str(k): v for k, v in self.curves.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        curves = {int(k): v for k, v in d.get("curves", {}).items()}
        rep = cls(np.array(d["position_errors"]), np.array(d["orientation_errors"]), curves)
        return rep


def report_from_predictions(x_true, q_true, x_pred, q_pred, curves: Optional[dict] = None) -> EvalReport:
    return EvalReport(position_errors(x_true, x_pred), orientation_errors(q_true, q_pred), curves or {})


def summarize(reports: Sequence[EvalReport]) -> tuple:
    """Arithmetic means of the per-report medians (the tables' Average row)."""
    if not reports:
        raise ValueError("nothing to average")
    return (float(np.mean([r.median_position for r in reports])),
            float(np.mean([r.median_orientation for r in reports])))
