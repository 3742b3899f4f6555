"""Vietoris-Rips persistence over Z/2 by coboundary reduction (numba).

Simplices are encoded with the combinatorial number system and ordered by
(rank of their longest edge, index). Columns of the coboundary matrix are
reduced in reverse filtration order with clearing; a column whose
smallest coface is not yet claimed is paired without building a heap.
Only the reduction matrix V is stored, coboundaries are regenerated on
demand.
"""

import heapq

import numba as nb
import numpy as np
from numba import types
from numba.typed import Dict


@nb.njit(cache=True)
def _binomials(n, k):
    B = np.zeros((n + 1, k + 1), dtype=np.int64)
    for i in range(n + 1):
        B[i, 0] = 1
        for j in range(1, min(i, k) + 1):
            B[i, j] = B[i - 1, j - 1] + (B[i - 1, j] if j <= i - 1 else 0)
    return B


@nb.njit(cache=True)
def _decode(idx, k, n, B, out):
    """Vertices (ascending) of the k-simplex with combinatorial index ``idx``."""
    v = n - 1
    for l in range(k, -1, -1):
        # largest v with B[v, l+1] <= idx
        lo, hi = l, v
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if B[mid, l + 1] <= idx:
                lo = mid
            else:
                hi = mid - 1
        out[l] = lo
        idx -= B[lo, l + 1]
        v = lo - 1


@nb.njit(cache=True)
def _find(parent, x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


@nb.njit(cache=True)
def _min_coface(verts, k, r_s, n, R, B, c_next):
    """Smallest coface key of a k-simplex (or -1 when it has none within threshold)."""
    best = -1
    for w in range(n):
        r = r_s
        ok = True
        inside = False
        for a in range(k + 1):
            if verts[a] == w:
                inside = True
                break
            e = R[verts[a], w]
            if e < 0:
                ok = False
                break
            if e > r:
                r = e
        if inside or not ok:
            continue
        idx = 0
        shift = 0
        for a in range(k + 1):
            if shift == 0 and w < verts[a]:
                idx += B[w, a + 1]
                shift = 1
            idx += B[verts[a], a + 1 + shift]
        if shift == 0:
            idx += B[w, k + 2]
        key = r * c_next + idx
        if best < 0 or key < best:
            best = key
    return best


@nb.njit(cache=True)
def _push_coboundary(heap, verts, k, r_s, n, R, B, c_next):
    for w in range(n):
        r = r_s
        ok = True
        inside = False
        for a in range(k + 1):
            if verts[a] == w:
                inside = True
                break
            e = R[verts[a], w]
            if e < 0:
                ok = False
                break
            if e > r:
                r = e
        if inside or not ok:
            continue
        idx = 0
        shift = 0
        for a in range(k + 1):
            if shift == 0 and w < verts[a]:
                idx += B[w, a + 1]
                shift = 1
            idx += B[verts[a], a + 1 + shift]
        if shift == 0:
            idx += B[w, k + 2]
        heapq.heappush(heap, r * c_next + idx)


@nb.njit(cache=True)
def _get_pivot(heap):
    """Smallest key with odd multiplicity, left on the heap; -1 if none."""
    while len(heap) > 0:
        p = heapq.heappop(heap)
        if len(heap) > 0 and heap[0] == p:
            heapq.heappop(heap)
        else:
            heapq.heappush(heap, p)
            return p
    return -1


@nb.njit(cache=True)
def _simplex_rank(verts, k, R):
    r = -1
    for a in range(k + 1):
        for b in range(a + 1, k + 1):
            e = R[verts[a], verts[b]]
            if e < 0:
                return -1
            if e > r:
                r = e
    return r


@nb.njit(cache=True)
def _reduce_dim(col_keys, k, n, R, B, c_cur, c_next, cleared):
    """Reduce the dim-k coboundary columns given by ``col_keys`` (descending order).

    Returns (births, deaths) as edge ranks (death -1 for essential classes)
    and the pivot keys, which are cleared in the next dimension.
    """
    owner = Dict.empty(key_type=types.int64, value_type=types.int64)
    v_start = np.zeros(len(col_keys) + 1, dtype=np.int64)
    v_buf = np.empty(max(16, len(col_keys)), dtype=np.int64)
    v_len = 0
    births = []
    deaths = []
    pivots = []
    verts = np.empty(k + 1, dtype=np.int64)
    overts = np.empty(k + 1, dtype=np.int64)
    slot = 0
    for ci in range(len(col_keys)):
        key = col_keys[ci]
        if key in cleared:
            continue
        r_s = key // c_cur
        _decode(key % c_cur, k, n, B, verts)
        first = _min_coface(verts, k, r_s, n, R, B, c_next)
        cur = [key]
        pivot = first
        if first >= 0 and first in owner:
            heap = [np.int64(0)]
            heap.pop()
            _push_coboundary(heap, verts, k, r_s, n, R, B, c_next)
            pivot = _get_pivot(heap)
            while pivot >= 0 and pivot in owner:
                o = owner[pivot]
                for t in range(v_start[o], v_start[o + 1]):
                    okey = v_buf[t]
                    cur.append(okey)
                    _decode(okey % c_cur, k, n, B, overts)
                    _push_coboundary(heap, overts, k, okey // c_cur, n, R, B, c_next)
                pivot = _get_pivot(heap)
        if pivot >= 0:
            owner[pivot] = slot
            pivots.append(pivot)
            # keep V with Z/2 cancellation
            cur_arr = np.sort(np.array(cur, dtype=np.int64))
            while v_len + len(cur_arr) > len(v_buf):
                nb_ = np.empty(2 * len(v_buf), dtype=np.int64)
                nb_[:v_len] = v_buf[:v_len]
                v_buf = nb_
            i = 0
            start = v_len
            while i < len(cur_arr):
                j = i
                while j < len(cur_arr) and cur_arr[j] == cur_arr[i]:
                    j += 1
                if (j - i) % 2 == 1:
                    v_buf[v_len] = cur_arr[i]
                    v_len += 1
                i = j
            v_start[slot] = start
            v_start[slot + 1] = v_len
            slot += 1
            d = pivot // c_next
            if d > r_s:
                births.append(r_s)
                deaths.append(d)
        else:
            births.append(r_s)
            deaths.append(-1)
    return np.array(births, dtype=np.int64), np.array(deaths, dtype=np.int64), np.array(pivots, dtype=np.int64)


@nb.njit(cache=True)
def _edges(R, n):
    m = 0
    for i in range(n):
        for j in range(i + 1, n):
            if R[i, j] >= 0:
                m += 1
    ranks = np.empty(m, dtype=np.int64)
    ii = np.empty(m, dtype=np.int64)
    jj = np.empty(m, dtype=np.int64)
    t = 0
    for i in range(n):
        for j in range(i + 1, n):
            if R[i, j] >= 0:
                ranks[t] = R[i, j]
                ii[t] = i
                jj[t] = j
                t += 1
    return ranks, ii, jj


@nb.njit(cache=True)
def _persistence(R, n, maxdim):
    B = _binomials(n, maxdim + 2)
    ranks, ii, jj = _edges(R, n)
    order = np.argsort(ranks)
    parent = np.arange(n)
    h0_deaths = []
    mst = Dict.empty(key_type=types.int64, value_type=types.int64)
    c2 = B[n, 2]
    for t in order:
        a = _find(parent, ii[t])
        b = _find(parent, jj[t])
        if a != b:
            parent[max(a, b)] = min(a, b)
            h0_deaths.append(ranks[t])
            mst[ranks[t] * c2 + B[jj[t], 2] + ii[t]] = 1
    n_comp = 0
    for v in range(n):
        if _find(parent, v) == v:
            n_comp += 1

    out_b = []
    out_d = []
    out_dim = []
    if maxdim < 1:
        return np.array(h0_deaths, dtype=np.int64), n_comp, out_dim, out_b, out_d
    # dimension 1: edges in reverse filtration order
    keys = np.empty(len(ranks), dtype=np.int64)
    for t in range(len(ranks)):
        keys[t] = ranks[t] * c2 + B[jj[t], 2] + ii[t]
    keys = np.sort(keys)[::-1]
    c3 = B[n, 3]
    b1, d1, piv1 = _reduce_dim(keys, 1, n, R, B, c2, c3, mst)
    for t in range(len(b1)):
        out_dim.append(1)
        out_b.append(b1[t])
        out_d.append(d1[t])
    if maxdim >= 2 and n >= 3:
        cleared = Dict.empty(key_type=types.int64, value_type=types.int64)
        for p in piv1:
            cleared[p] = 1
        tri = []
        verts = np.empty(3, dtype=np.int64)
        for k in range(2, n):
            for j in range(1, k):
                if R[j, k] < 0:
                    continue
                for i in range(j):
                    if R[i, k] < 0 or R[i, j] < 0:
                        continue
                    verts[0] = i
                    verts[1] = j
                    verts[2] = k
                    r = _simplex_rank(verts, 2, R)
                    tri.append(r * c3 + B[k, 3] + B[j, 2] + i)
        tkeys = np.sort(np.array(tri, dtype=np.int64))[::-1]
        b2, d2, _ = _reduce_dim(tkeys, 2, n, R, B, c3, B[n, 4], cleared)
        for t in range(len(b2)):
            out_dim.append(2)
            out_b.append(b2[t])
            out_d.append(d2[t])
    return np.array(h0_deaths, dtype=np.int64), n_comp, out_dim, out_b, out_d


def rank_matrix(D, threshold):
    """Edge ranks by (length, index) with -1 above ``threshold``; plus sorted lengths."""
    n = len(D)
    iu, ju = np.triu_indices(n, 1)
    lengths = D[iu, ju]
    # combinatorial index of edge (i<j) is C(j,2)+i; ties in length break by it
    cidx = ju * (ju - 1) // 2 + iu
    order = np.lexsort((cidx, lengths))
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(len(order))
    R = -np.ones((n, n), dtype=np.int64)
    keep = lengths <= threshold
    R[iu[keep], ju[keep]] = ranks[keep]
    R[ju[keep], iu[keep]] = ranks[keep]
    return R, lengths[order]


def vr_pairs(D, maxdim, threshold):
    """Persistence pairs of the Rips filtration of distance matrix ``D``.

    Returns a dict ``{dim: array of (birth, death)}`` with zero-length
    pairs removed and ``inf`` deaths for essential classes.
    """
    n = len(D)
    R, sorted_len = rank_matrix(D, threshold)
    h0, n_comp, dims, births, deaths = _persistence(R, n, maxdim)
    out = {}
    h0_pairs = [(0.0, float(sorted_len[r])) for r in h0 if sorted_len[r] > 0]
    h0_pairs += [(0.0, np.inf)] * n_comp
    out[0] = np.array(h0_pairs, dtype=float).reshape(-1, 2)
    for k in range(1, maxdim + 1):
        rows = []
        for d, b, e in zip(dims, births, deaths):
            if d != k:
                continue
            lo = float(sorted_len[b])
            hi = np.inf if e < 0 else float(sorted_len[e])
            if hi > lo:
                rows.append((lo, hi))
        out[k] = np.array(sorted(rows), dtype=float).reshape(-1, 2)
    return out
