"""Pure-Python implementations of the compiled kernels.

Used when the extension is not built, or when ``HYPERCOLOR_PURE_PYTHON`` is
set. Signatures and tie rules mirror ``_kernels.pyx``.
"""
import heapq

import numpy as np


def dense_forward(x, w, b):
    # einsum without optimize stays off BLAS: every output row is produced by
    # the same reduction loop, so results do not depend on batch position
    return np.einsum("ik,km->im", x, w) + b


def dense_backward(x, w, up):
    gx = np.einsum("im,km->ik", up, w)
    gw = np.einsum("ik,im->km", x, up)
    gb = up.sum(axis=0)
    return gx, gw, gb


def nearest_brute(query, ref):
    nq = query.shape[0]
    idx = np.empty(nq, dtype=np.int64)
    d2 = np.empty(nq, dtype=np.float64)
    chunk = max(1, 2_000_000 // max(1, ref.shape[0] * ref.shape[1]))
    for lo in range(0, nq, chunk):
        diff = query[lo:lo + chunk, None, :] - ref[None, :, :]
        dist = (diff * diff).sum(axis=-1)
        j = dist.argmin(axis=1)  # first minimum = lowest index
        idx[lo:lo + chunk] = j
        d2[lo:lo + chunk] = dist[np.arange(len(j)), j]
    return idx, d2


def kdtree_query(data, order, split_dim, split_val, left, right, start, stop, queries, k):
    nq = queries.shape[0]
    out_idx = np.empty((nq, k), dtype=np.int64)
    out_d2 = np.empty((nq, k), dtype=np.float64)
    for q in range(nq):
        point = queries[q]
        # max-heap of (-d2, -index) so the worst candidate sits at heap[0]
        heap = []
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if len(heap) == k and bound > -heap[0][0]:
                continue
            if left[node] < 0:
                lo, hi = start[node], stop[node]
                diff = point[None, :] - data[lo:hi]
                dist = (diff * diff).sum(axis=1)
                for p in range(hi - lo):
                    item = (-float(dist[p]), -int(order[lo + p]))
                    if len(heap) < k:
                        heapq.heappush(heap, item)
                    elif item > heap[0]:
                        heapq.heapreplace(heap, item)
                continue
            diff = point[split_dim[node]] - split_val[node]
            if diff <= 0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            stack.append((far, max(diff * diff, bound)))
            stack.append((near, bound))
        best = sorted((-d, -i) for d, i in heap)
        out_d2[q] = [d for d, _ in best]
        out_idx[q] = [i for _, i in best]
    return out_idx, out_d2


def linear_assignment(cost):
    n = cost.shape[0]
    u = np.zeros(n)
    v = np.zeros(n)
    path = np.full(n, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    col4row = np.full(n, -1, dtype=np.int64)
    for cur in range(n):
        spc = np.full(n, np.inf)
        sr = np.zeros(n, dtype=bool)
        sc = np.zeros(n, dtype=bool)
        min_val = 0.0
        i = cur
        sink = -1
        while sink == -1:
            sr[i] = True
            r = min_val + cost[i] - u[i] - v
            better = (r < spc) & ~sc
            path[better] = i
            spc[better] = r[better]
            masked = np.where(sc, np.inf, spc)
            lowest = masked.min()
            if not np.isfinite(lowest):
                raise ValueError("cost matrix admits no finite assignment")
            ties = np.flatnonzero(masked == lowest)
            free = ties[row4col[ties] == -1]
            j = int(free[0]) if len(free) else int(ties[0])
            min_val = lowest
            sc[j] = True
            if row4col[j] == -1:
                sink = j
            else:
                i = int(row4col[j])
        u[cur] += min_val
        rows = np.flatnonzero(sr)
        rows = rows[rows != cur]
        u[rows] += min_val - spc[col4row[rows]]
        v[sc] -= min_val - spc[sc]
        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row
