"""Axis-aligned k-d tree with exact k-nearest-neighbour search."""
import numpy as np

from . import kernels


class KDTree:
    """Static k-d tree over an ``(n, d)`` point array.

    Nodes are stored in flat arrays so the query loop can run in compiled
    code. Splits are at the median along the widest axis of each node; leaves
    hold at most ``leaf_size`` points.

    Neighbours come back ordered by ``(squared distance, index)``, so equal
    distances resolve to the lowest original index, matching exhaustive search.
    """

    def __init__(self, points, leaf_size=8):
        points = np.ascontiguousarray(points, dtype=np.float64)
        if points.ndim != 2 or len(points) == 0:
            raise ValueError(f"expected a nonempty (n, d) array, got shape {points.shape}")
        self.n, self.dim = points.shape
        self.leaf_size = max(1, int(leaf_size))
        order = np.arange(self.n, dtype=np.int64)

        split_dim, split_val, left, right, start, stop = [], [], [], [], [], []

        def new_node(lo, hi):
            split_dim.append(-1)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            start.append(lo)
            stop.append(hi)
            return len(start) - 1

        root = new_node(0, self.n)
        pending = [root]
        while pending:
            node = pending.pop()
            lo, hi = start[node], stop[node]
            if hi - lo <= self.leaf_size:
                continue
            block = points[order[lo:hi]]
            spread = block.max(axis=0) - block.min(axis=0)
            axis = int(np.argmax(spread))
            if spread[axis] == 0.0:
                continue  # all points coincide; keep as an oversized leaf
            mid = (hi - lo) // 2
            # stable ordering keeps builds deterministic on repeated coordinates
            local = np.argsort(block[:, axis], kind="stable")
            order[lo:hi] = order[lo:hi][local]
            split_dim[node] = axis
            split_val[node] = float(points[order[lo + mid], axis])
            left[node] = new_node(lo, lo + mid)
            right[node] = new_node(lo + mid, hi)
            pending.extend((left[node], right[node]))

        self.order = order
        self.data = np.ascontiguousarray(points[order])
        self.split_dim = np.asarray(split_dim, dtype=np.int64)
        self.split_val = np.asarray(split_val, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.stop = np.asarray(stop, dtype=np.int64)

    def query(self, queries, k=1, impl=None):
        """Return ``(indices, squared_distances)``, each of shape ``(m, k)``."""
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.dim:
            raise ValueError(f"queries must have shape (m, {self.dim}), got {queries.shape}")
        if not 1 <= k <= self.n:
            raise ValueError(f"k must be in [1, {self.n}], got {k}")
        return kernels.kdtree_query(self, queries, k, impl=impl)
