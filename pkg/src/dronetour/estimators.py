"""Drone-operation-time estimators used by the tour planner.

Three interchangeable variants: K divides straight-line distances by a
nominal drone speed, MK applies a dataset-calibrated correction on top of
K, and P asks the trained net. K and MK use the true Euclidean distance on
purpose; they are the benchmarks the net is judged against, so they must
not inherit the flight model's blended-norm geometry.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDatasetError
from .predictor import Dataset, Mlp, predict_batch


def _dists(S, D, E):
    S, D, E = (np.asarray(a, dtype=float) for a in (S, D, E))
    return (np.linalg.norm(D - S, axis=-1) + np.linalg.norm(E - D, axis=-1))


@dataclass(frozen=True)
class KEstimator:
    """Euclidean out-and-back distance over a constant speed."""

    drone_speed: float            # m/s

    name = "K"

    def __post_init__(self):
        if self.drone_speed <= 0:
            raise ValueError("drone_speed must be positive")

    def estimate(self, start, delivery, end) -> float:
        return float(_dists(start, delivery, end) / self.drone_speed)

    def estimate_batch(self, S, D, E) -> np.ndarray:
        return _dists(S, D, E) / self.drone_speed


@dataclass(frozen=True)
class MkEstimator:
    """K scaled by a correction factor calibrated on labelled operations."""

    drone_speed: float
    correction: float

    name = "MK"

    def __post_init__(self):
        if self.drone_speed <= 0 or self.correction <= 0:
            raise ValueError("drone_speed and correction must be positive")

    def estimate(self, start, delivery, end) -> float:
        return float(_dists(start, delivery, end)
                     * (self.correction / self.drone_speed))

    def estimate_batch(self, S, D, E) -> np.ndarray:
        return _dists(S, D, E) * (self.correction / self.drone_speed)


@dataclass(frozen=True)
class PEstimator:
    """The trained net; clamped at zero like every prediction."""

    model: Mlp

    name = "P"

    def estimate(self, start, delivery, end) -> float:
        return float(self.estimate_batch(
            np.asarray(start, dtype=float)[None, :],
            np.asarray(delivery, dtype=float)[None, :],
            np.asarray(end, dtype=float)[None, :])[0])

    def estimate_batch(self, S, D, E) -> np.ndarray:
        X = np.concatenate([np.asarray(S, dtype=float),
                            np.asarray(D, dtype=float),
                            np.asarray(E, dtype=float)], axis=-1)
        return predict_batch(self.model, X)


def calibrate_mk(ds: Dataset, drone_speed: float) -> float:
    """Mean of (oracle label / K estimate) over the dataset.

    Rows whose three points coincide have no K value and are skipped; an
    all-degenerate dataset raises EmptyDatasetError.
    """
    if drone_speed <= 0:
        raise ValueError("drone_speed must be positive")
    F = ds.features
    base = _dists(F[:, 0:2], F[:, 2:4], F[:, 4:6]) / drone_speed
    usable = base > 0
    if not np.any(usable):
        raise EmptyDatasetError("no rows with a nonzero travel distance")
    return float(np.mean(ds.labels[usable] / base[usable]))
