# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops.

Every routine here has a pure-Python twin in :mod:`hypercolor._fallback` with
the same signature and the same results; :mod:`hypercolor.kernels` picks one
at import time.

All reductions run in a fixed order so that outputs are reproducible run to
run and independent of where a row sits inside a batch.
"""
import numpy as np
from cython cimport floating
from libc.math cimport INFINITY

ctypedef Py_ssize_t idx_t


def dense_forward(floating[:, ::1] x, floating[:, ::1] w, floating[::1] b):
    cdef idx_t n = x.shape[0], k_in = x.shape[1], m_out = w.shape[1]
    cdef idx_t i, k, m
    cdef floating xv
    dtype = np.float64 if floating is double else np.float32
    out_arr = np.zeros((n, m_out), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for k in range(k_in):
                xv = x[i, k]
                for m in range(m_out):
                    out[i, m] += xv * w[k, m]
            for m in range(m_out):
                out[i, m] += b[m]
    return out_arr


def dense_backward(floating[:, ::1] x, floating[:, ::1] w, floating[:, ::1] up):
    """Return (grad_x, grad_w, grad_b) for ``out = x @ w + b``."""
    cdef idx_t n = x.shape[0], k_in = x.shape[1], m_out = w.shape[1]
    cdef idx_t i, k, m
    cdef floating acc, xv
    dtype = np.float64 if floating is double else np.float32
    gx_arr = np.zeros((n, k_in), dtype=dtype)
    gw_arr = np.zeros((k_in, m_out), dtype=dtype)
    gb_arr = np.zeros(m_out, dtype=dtype)
    cdef floating[:, ::1] gx = gx_arr
    cdef floating[:, ::1] gw = gw_arr
    cdef floating[::1] gb = gb_arr
    with nogil:
        for i in range(n):
            for k in range(k_in):
                acc = 0
                for m in range(m_out):
                    acc = acc + up[i, m] * w[k, m]
                gx[i, k] = acc
                xv = x[i, k]
                for m in range(m_out):
                    gw[k, m] += xv * up[i, m]
            for m in range(m_out):
                gb[m] += up[i, m]
    return gx_arr, gw_arr, gb_arr


def nearest_brute(double[:, ::1] query, double[:, ::1] ref):
    """Exhaustive 1-NN. Ties go to the lowest reference index."""
    cdef idx_t nq = query.shape[0], nr = ref.shape[0], d = query.shape[1]
    cdef idx_t i, j, c, best_j
    cdef double best, acc, diff
    idx_arr = np.empty(nq, dtype=np.int64)
    d2_arr = np.empty(nq, dtype=np.float64)
    cdef long long[::1] idx = idx_arr
    cdef double[::1] d2 = d2_arr
    with nogil:
        for i in range(nq):
            best = INFINITY
            best_j = -1
            for j in range(nr):
                acc = 0.0
                for c in range(d):
                    diff = query[i, c] - ref[j, c]
                    acc = acc + diff * diff
                if acc < best:
                    best = acc
                    best_j = j
            idx[i] = best_j
            d2[i] = best
    return idx_arr, d2_arr


cdef inline bint _before(double da, long long ia, double db, long long ib) nogil:
    return da < db or (da == db and ia < ib)


cdef void _heap_sift_down(double* hd, long long* hi, idx_t size) noexcept nogil:
    # max-heap on (d2, index)
    cdef idx_t pos = 0, child, right
    cdef double td
    cdef long long ti
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        right = child + 1
        if right < size and _before(hd[child], hi[child], hd[right], hi[right]):
            child = right
        if _before(hd[pos], hi[pos], hd[child], hi[child]):
            td = hd[pos]; hd[pos] = hd[child]; hd[child] = td
            ti = hi[pos]; hi[pos] = hi[child]; hi[child] = ti
            pos = child
        else:
            break


cdef void _heap_push(double* hd, long long* hi, idx_t size, double d, long long i) noexcept nogil:
    cdef idx_t pos = size, parent
    hd[pos] = d
    hi[pos] = i
    while pos > 0:
        parent = (pos - 1) // 2
        if _before(hd[parent], hi[parent], hd[pos], hi[pos]):
            hd[parent], hd[pos] = hd[pos], hd[parent]
            hi[parent], hi[pos] = hi[pos], hi[parent]
            pos = parent
        else:
            break


def kdtree_query(double[:, ::1] data, long long[::1] order,
                 long long[::1] split_dim, double[::1] split_val,
                 long long[::1] left, long long[::1] right,
                 long long[::1] start, long long[::1] stop,
                 double[:, ::1] queries, int k):
    """k nearest neighbours through a flat k-d tree.

    ``data`` holds the points permuted into tree order and ``order`` maps
    that position back to the caller's index. Results are sorted by
    (distance, original index).
    """
    cdef idx_t nq = queries.shape[0], d = queries.shape[1]
    cdef idx_t q, c, p, size, top, node, t
    cdef double acc, diff, bound
    cdef long long oi
    out_idx_arr = np.empty((nq, k), dtype=np.int64)
    out_d2_arr = np.empty((nq, k), dtype=np.float64)
    cdef long long[:, ::1] out_idx = out_idx_arr
    cdef double[:, ::1] out_d2 = out_d2_arr
    heap_d_arr = np.empty(k, dtype=np.float64)
    heap_i_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] hd = heap_d_arr
    cdef long long[::1] hi = heap_i_arr
    # depth is bounded by log2(n) for a median split, 128 is generous
    stack_node_arr = np.empty(256, dtype=np.int64)
    stack_bound_arr = np.empty(256, dtype=np.float64)
    cdef long long[::1] stack_node = stack_node_arr
    cdef double[::1] stack_bound = stack_bound_arr
    cdef long long near, far
    with nogil:
        for q in range(nq):
            size = 0
            top = 0
            stack_node[0] = 0
            stack_bound[0] = 0.0
            top = 1
            while top > 0:
                top -= 1
                node = stack_node[top]
                bound = stack_bound[top]
                if size == k and bound > hd[0]:
                    continue
                if left[node] < 0:
                    for p in range(start[node], stop[node]):
                        acc = 0.0
                        for c in range(d):
                            diff = queries[q, c] - data[p, c]
                            acc = acc + diff * diff
                        oi = order[p]
                        if size < k:
                            _heap_push(&hd[0], &hi[0], size, acc, oi)
                            size += 1
                        elif _before(acc, oi, hd[0], hi[0]):
                            hd[0] = acc
                            hi[0] = oi
                            _heap_sift_down(&hd[0], &hi[0], size)
                    continue
                diff = queries[q, split_dim[node]] - split_val[node]
                if diff <= 0:
                    near = left[node]
                    far = right[node]
                else:
                    near = right[node]
                    far = left[node]
                stack_node[top] = far
                stack_bound[top] = diff * diff if diff * diff > bound else bound
                top += 1
                stack_node[top] = near
                stack_bound[top] = bound
                top += 1
            # heap -> ascending order
            t = size
            while t > 0:
                out_d2[q, t - 1] = hd[0]
                out_idx[q, t - 1] = hi[0]
                t -= 1
                hd[0] = hd[t]
                hi[0] = hi[t]
                _heap_sift_down(&hd[0], &hi[0], t)
    return out_idx_arr, out_d2_arr


def linear_assignment(double[:, ::1] cost):
    """Minimum-cost perfect matching on a square matrix.

    Shortest augmenting paths with row/column potentials, one row at a
    time. Among equally short paths a free column is preferred, then the
    lowest column index, which keeps the identity pairing on constant or
    duplicate-heavy cost matrices.
    """
    cdef idx_t n = cost.shape[0]
    cdef idx_t cur, i, j, jbest, sink, tmp
    cdef double min_val, lowest, r
    u_arr = np.zeros(n)
    v_arr = np.zeros(n)
    spc_arr = np.empty(n)
    path_arr = np.full(n, -1, dtype=np.int64)
    row4col_arr = np.full(n, -1, dtype=np.int64)
    col4row_arr = np.full(n, -1, dtype=np.int64)
    sr_arr = np.zeros(n, dtype=np.uint8)
    sc_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef double[::1] spc = spc_arr
    cdef long long[::1] path = path_arr
    cdef long long[::1] row4col = row4col_arr
    cdef long long[::1] col4row = col4row_arr
    cdef unsigned char[::1] sr = sr_arr
    cdef unsigned char[::1] sc = sc_arr
    with nogil:
        for cur in range(n):
            for j in range(n):
                spc[j] = INFINITY
                sr[j] = 0
                sc[j] = 0
            min_val = 0.0
            i = cur
            sink = -1
            while sink == -1:
                sr[i] = 1
                lowest = INFINITY
                jbest = -1
                for j in range(n):
                    if sc[j]:
                        continue
                    r = min_val + cost[i, j] - u[i] - v[j]
                    if r < spc[j]:
                        path[j] = i
                        spc[j] = r
                    if spc[j] < lowest or (spc[j] == lowest and row4col[j] == -1
                                           and jbest >= 0 and row4col[jbest] != -1):
                        lowest = spc[j]
                        jbest = j
                if jbest < 0 or lowest == INFINITY:
                    with gil:
                        raise ValueError("cost matrix admits no finite assignment")
                min_val = lowest
                sc[jbest] = 1
                if row4col[jbest] == -1:
                    sink = jbest
                else:
                    i = row4col[jbest]
            u[cur] += min_val
            for i in range(n):
                if sr[i] and i != cur:
                    u[i] += min_val - spc[col4row[i]]
            for j in range(n):
                if sc[j]:
                    v[j] -= min_val - spc[j]
            j = sink
            while True:
                i = path[j]
                row4col[j] = i
                tmp = col4row[i]
                col4row[i] = j
                j = tmp
                if i == cur:
                    break
    return col4row_arr
