"""Point cloud containers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLOR_SPACES = ("rgb_unit", "rgb_255", "lab", "lab_unit")


@dataclass
class PointCloud:
    positions: np.ndarray

    def __post_init__(self):
        self.positions = _check_matrix(self.positions, "positions")

    def __len__(self):
        return len(self.positions)


@dataclass
class ColoredPointCloud:
    positions: np.ndarray
    colors: np.ndarray
    space: str = "rgb_unit"

    def __post_init__(self):
        self.positions = _check_matrix(self.positions, "positions")
        self.colors = _check_matrix(self.colors, "colors")
        if len(self.colors) != len(self.positions):
            raise ValueError(
                f"{len(self.positions)} positions but {len(self.colors)} colors"
            )
        if self.space not in COLOR_SPACES:
            raise ValueError(f"unknown color space {self.space!r}")

    def __len__(self):
        return len(self.positions)

    @property
    def features(self) -> np.ndarray:
        """The ``(N, 6)`` position-plus-color matrix."""
        return np.concatenate([self.positions, self.colors], axis=1)

    def shape_only(self) -> PointCloud:
        return PointCloud(self.positions)


def _check_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contain non-finite values")
    return a


def positions_of(cloud) -> np.ndarray:
    """Accept a cloud object or a bare array and return an ``(N, d)`` float array."""
    if isinstance(cloud, (PointCloud, ColoredPointCloud)):
        return cloud.positions
    a = np.asarray(cloud, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    return a
