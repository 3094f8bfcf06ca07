"""Point-set distances and color alignment.

Chamfer distance sums squared nearest-neighbour distances in both directions
(no averaging, no 1/2). Earth mover's distance is the minimum over
bijections of the summed cost ``0.5 * |x - y|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .clouds import ColoredPointCloud, positions_of
from .kdtree import KDTree

# above this size (on both sides) nearest-neighbour search goes through a k-d tree
SPATIAL_INDEX_THRESHOLD = 256
EMD_EXACT_CAP = 2048


def _points(cloud, name, dim=3):
    a = positions_of(cloud)
    if a.ndim != 2 or len(a) == 0:
        raise ValueError(f"{name} must be a nonempty point set, got shape {a.shape}")
    if dim is not None and a.shape[1] != dim:
        raise ValueError(f"{name} must be {dim}-dimensional, got {a.shape[1]} columns")
    return np.ascontiguousarray(a, dtype=np.float64)


def nearest(query, ref, use_index=None):
    """Index and squared distance of each query's nearest ``ref`` point.

    Ties resolve to the lowest ``ref`` index whichever search path runs.
    """
    if use_index is None:
        use_index = min(len(query), len(ref)) > SPATIAL_INDEX_THRESHOLD
    if use_index:
        idx, d2 = KDTree(ref).query(query, 1)
        return idx[:, 0], d2[:, 0]
    return kernels.nearest_brute(query, ref)


def _chamfer(a, b, use_index=None):
    _, d_ab = nearest(a, b, use_index)
    _, d_ba = nearest(b, a, use_index)
    return float(np.sum(d_ab)) + float(np.sum(d_ba))


def chamfer(a, b, use_index=None) -> float:
    """Chamfer distance between two nonempty 3-D point sets."""
    return _chamfer(_points(a, "a"), _points(b, "b"), use_index)


def chamfer_with_grad(recon, target, use_index=None):
    """Chamfer value and its gradient with respect to ``recon``.

    Works in any dimension (the single-stage baseline compares 6-D points).
    """
    recon = _points(recon, "recon", dim=None)
    target = _points(target, "target", dim=recon.shape[1])
    i_rt, d_rt = nearest(recon, target, use_index)
    i_tr, d_tr = nearest(target, recon, use_index)
    value = float(np.sum(d_rt)) + float(np.sum(d_tr))
    grad = 2.0 * (recon - target[i_rt])
    np.add.at(grad, i_tr, 2.0 * (recon[i_tr] - target))
    return value, grad


@dataclass
class Assignment:
    mapping: np.ndarray
    cost: float


def emd_cost_matrix(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return 0.5 * np.einsum("ijk,ijk->ij", diff, diff)


def emd_exact(a, b, cap=EMD_EXACT_CAP) -> Assignment:
    """Optimal bijection between equal-size point sets under ``0.5 * |x - y|^2``."""
    a = _points(a, "a")
    b = _points(b, "b")
    if len(a) != len(b):
        raise ValueError(f"EMD needs equally sized sets, got {len(a)} and {len(b)}")
    if len(a) > cap:
        raise ValueError(
            f"{len(a)} points exceeds the exact EMD cap of {cap}; subsample both sets first"
        )
    cost = emd_cost_matrix(a, b)
    mapping = kernels.linear_assignment(cost)
    return Assignment(mapping, float(np.sum(cost[np.arange(len(a)), mapping])))


def emd(a, b, cap=EMD_EXACT_CAP) -> float:
    return emd_exact(a, b, cap).cost


def color_mse(a, b) -> float:
    """Mean squared difference over all color channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"color arrays differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("color arrays are empty")
    return float(np.mean((a - b) ** 2))


def knn_indices(query, ref, k):
    """``(m, k)`` neighbour indices ordered by (distance, index)."""
    if k == 1:
        return nearest(query, ref)[0][:, None]
    if min(len(query), len(ref)) > SPATIAL_INDEX_THRESHOLD:
        return KDTree(ref).query(query, k)[0]
    diff = query[:, None, :] - ref[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def knn_align(recon, original: ColoredPointCloud, k=1, original_colors=None) -> np.ndarray:
    """Mean color of the ``k`` original points nearest to each reconstructed point.

    ``original`` may be a :class:`ColoredPointCloud`, or a position array with
    ``original_colors`` passed separately.
    """
    q = _points(recon, "recon")
    if isinstance(original, ColoredPointCloud):
        ref, colors = original.positions, original.colors
    else:
        ref = positions_of(original)
        colors = original_colors
    ref = _points(ref, "original")
    if colors is None:
        raise ValueError("original cloud has no colors")
    colors = np.asarray(colors, dtype=np.float64)
    if not 1 <= k <= len(ref):
        raise ValueError(f"k must be in [1, {len(ref)}], got {k}")
    idx = knn_indices(q, ref, k)
    if k == 1:
        return colors[idx[:, 0]].copy()
    return colors[idx].mean(axis=1)
