"""Numba kernels for the hot loops: auction bidding and fast marching.

Everything here operates on flat numpy arrays so the kernels stay cacheable
and nogil (callers may run independent solves from a thread pool).
"""

import numpy as np
from numba import njit, prange

_NEG = -1.0e300


# ---------------------------------------------------------------------------
# int min-heap on a preallocated array (used for the bid queue)

@njit(cache=True, nogil=True)
def _iheap_push(heap, size, v):
    heap[size] = v
    i = size
    while i > 0:
        p = (i - 1) >> 1
        if heap[p] <= heap[i]:
            break
        heap[p], heap[i] = heap[i], heap[p]
        i = p
    return size + 1


@njit(cache=True, nogil=True)
def _iheap_pop(heap, size):
    top = heap[0]
    size -= 1
    heap[0] = heap[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        s = i
        if l < size and heap[l] < heap[s]:
            s = l
        if r < size and heap[r] < heap[s]:
            s = r
        if s == i:
            break
        heap[i], heap[s] = heap[s], heap[i]
        i = s
    return top, size


@njit(cache=True, nogil=True)
def auction_phase_dense(benefit, eps, big, prices, owner, row_to_col):
    """One forward-auction phase over a dense benefit matrix.

    Bids are processed one at a time, always for the lowest-index unassigned
    row.  Forbidden pairs carry -inf benefit.  Returns 0 on success, -1 if a
    row has no finite candidate (infeasible input).
    """
    n = benefit.shape[0]
    heap = np.empty(n, np.int64)
    for i in range(n):
        heap[i] = i
    size = n
    while size > 0:
        i, size = _iheap_pop(heap, size)
        if row_to_col[i] >= 0:
            continue
        best = _NEG
        second = _NEG
        jb = -1
        for j in range(n):
            b = benefit[i, j]
            if b == -np.inf:
                continue
            v = b - prices[j]
            if v > best:
                second = best
                best = v
                jb = j
            elif v > second:
                second = v
        if jb < 0:
            return -1
        if second <= _NEG:
            incr = big + eps
        else:
            incr = best - second + eps
        prices[jb] += incr
        prev = owner[jb]
        owner[jb] = i
        row_to_col[i] = jb
        if prev >= 0:
            row_to_col[prev] = -1
            size = _iheap_push(heap, size, prev)
    return 0


@njit(cache=True, nogil=True)
def auction_phase_sparse(indptr, cols, vals, eps, big, prices, owner, row_to_col):
    """One forward-auction phase over CSR candidate lists (benefits)."""
    n = indptr.shape[0] - 1
    heap = np.empty(n, np.int64)
    for i in range(n):
        heap[i] = i
    size = n
    while size > 0:
        i, size = _iheap_pop(heap, size)
        if row_to_col[i] >= 0:
            continue
        best = _NEG
        second = _NEG
        jb = -1
        for p in range(indptr[i], indptr[i + 1]):
            v = vals[p] - prices[cols[p]]
            if v > best:
                second = best
                best = v
                jb = cols[p]
            elif v > second:
                second = v
        if jb < 0:
            return -1
        if second <= _NEG:
            incr = big + eps
        else:
            incr = best - second + eps
        prices[jb] += incr
        prev = owner[jb]
        owner[jb] = i
        row_to_col[i] = jb
        if prev >= 0:
            row_to_col[prev] = -1
            size = _iheap_push(heap, size, prev)
    return 0


# ---------------------------------------------------------------------------
# fast marching on a triangle mesh

@njit(cache=True, nogil=True)
def _fmm_update(dw, dv, dz, lv, lz, cosw):
    """Two-support planar-wavefront update of the corner opposite edge (v,z).

    dv, dz are the known values at the supports, lv, lz the edge lengths from
    the corner to them, cosw the cosine of the corner angle.  Returns the
    candidate value (or dw unchanged when the stencil is inadmissible).
    """
    if cosw < 0.0:
        return dw  # obtuse corner: caller falls back to edge updates
    if dv <= dz:
        da = dv
        b = lv
        db = dz
        a = lz
    else:
        da = dz
        b = lz
        db = dv
        a = lv
    u = db - da
    sin2 = 1.0 - cosw * cosw
    qa = a * a + b * b - 2.0 * a * b * cosw
    qb = 2.0 * b * u * (a * cosw - b)
    qc = b * b * (u * u - a * a * sin2)
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0 or qa <= 0.0:
        return dw
    t = (-qb + np.sqrt(disc)) / (2.0 * qa)
    if t <= u:
        return dw
    w = b * (t - u) / t
    if w <= a * cosw:
        return dw
    if cosw > 0.0 and w >= a / cosw:
        return dw
    cand = t + da
    if cand < dw:
        return cand
    return dw


@njit(cache=True, nogil=True)
def fmm_source(src, n, tris, v2t_indptr, v2t_data, clen1, clen2, ccos, dist, state):
    """Single-source fast marching; writes distances into ``dist``.

    clen1[t, c] is the edge length from corner c of triangle t to corner c+1,
    clen2[t, c] to corner c+2, ccos[t, c] the cosine of the angle at corner c.
    """
    dist[:] = np.inf
    state[:] = 0
    m = tris.shape[0]
    cap = 6 * m + n + 16
    hd = np.empty(cap, np.float64)
    hv = np.empty(cap, np.int64)
    hsize = 0
    # push source
    dist[src] = 0.0
    hd[0] = 0.0
    hv[0] = src
    hsize = 1
    while hsize > 0:
        d = hd[0]
        v = hv[0]
        hsize -= 1
        hd[0] = hd[hsize]
        hv[0] = hv[hsize]
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            s = i
            if l < hsize and hd[l] < hd[s]:
                s = l
            if r < hsize and hd[r] < hd[s]:
                s = r
            if s == i:
                break
            hd[i], hd[s] = hd[s], hd[i]
            hv[i], hv[s] = hv[s], hv[i]
            i = s
        if state[v] == 2 or d > dist[v]:
            continue
        state[v] = 2
        for q in range(v2t_indptr[v], v2t_indptr[v + 1]):
            t = v2t_data[q]
            for c in range(3):
                w = tris[t, c]
                if w == v or state[w] == 2:
                    continue
                c1 = tris[t, (c + 1) % 3]
                c2 = tris[t, (c + 2) % 3]
                if c1 == v:
                    lv = clen1[t, c]
                    z = c2
                    lz = clen2[t, c]
                else:
                    lv = clen2[t, c]
                    z = c1
                    lz = clen1[t, c]
                cand = dist[v] + lv
                if state[z] == 2:
                    cand2 = _fmm_update(cand, dist[v], dist[z], lv, lz, ccos[t, c])
                    if cand2 < cand:
                        cand = cand2
                if cand < dist[w]:
                    dist[w] = cand
                    # heap push
                    hd[hsize] = cand
                    hv[hsize] = w
                    i = hsize
                    hsize += 1
                    while i > 0:
                        p = (i - 1) >> 1
                        if hd[p] <= hd[i]:
                            break
                        hd[p], hd[i] = hd[i], hd[p]
                        hv[p], hv[i] = hv[i], hv[p]
                        i = p
    return 0


@njit(cache=True, nogil=True, parallel=True)
def fmm_many(sources, n, tris, v2t_indptr, v2t_data, clen1, clen2, ccos, out):
    for s in prange(sources.shape[0]):
        dist = out[s]
        state = np.zeros(n, np.uint8)
        fmm_source(sources[s], n, tris, v2t_indptr, v2t_data, clen1, clen2, ccos,
                   dist, state)


# ---------------------------------------------------------------------------
# maximum bipartite matching (Kuhn's algorithm, iterative) for the
# feasibility pre-pass; deterministic scan order

@njit(cache=True, nogil=True)
def bipartite_matching(indptr, cols, n):
    """Row -> column matching over a CSR candidate structure (-1 unmatched)."""
    match_col = np.full(n, -1, np.int64)
    match_row = np.full(n, -1, np.int64)
    stack_row = np.empty(n + 1, np.int64)
    entry_col = np.empty(n + 1, np.int64)
    stack_ptr = np.empty(n + 1, np.int64)
    visited = np.full(n, -1, np.int64)
    for start in range(n):
        if match_row[start] >= 0:
            continue
        top = 0
        stack_row[0] = start
        stack_ptr[0] = indptr[start]
        success = False
        while top >= 0 and not success:
            r = stack_row[top]
            p = stack_ptr[top]
            descended = False
            while p < indptr[r + 1]:
                j = cols[p]
                p += 1
                if visited[j] == start:
                    continue
                visited[j] = start
                owner = match_col[j]
                if owner < 0:
                    match_col[j] = r
                    match_row[r] = j
                    for t in range(top, 0, -1):
                        jj = entry_col[t]
                        rr = stack_row[t - 1]
                        match_col[jj] = rr
                        match_row[rr] = jj
                    success = True
                    break
                stack_ptr[top] = p
                top += 1
                stack_row[top] = owner
                entry_col[top] = j
                stack_ptr[top] = indptr[owner]
                descended = True
                break
            if success:
                break
            if not descended:
                top -= 1
    return match_row


# ---------------------------------------------------------------------------
# masked score assembly (sparse candidate structure of the multiscale solver)

@njit(cache=True, nogil=True, parallel=True)
def masked_scores(gamma_rows, wt, indptr, cols, out):
    """out[k] = dot(gamma_rows[i], wt[cols[k]]) for k in row i's CSR slice.

    Computes only the candidate entries of the score product; wt is the
    transposed weight matrix so the inner loop runs over contiguous memory.
    """
    nrows = gamma_rows.shape[0]
    inner = gamma_rows.shape[1]
    for i in prange(nrows):
        for k in range(indptr[i], indptr[i + 1]):
            j = cols[k]
            s = 0.0
            for l in range(inner):
                s += gamma_rows[i, l] * wt[j, l]
            out[k] = s
