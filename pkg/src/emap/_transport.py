"""Numba kernels: exact transportation solver and pairwise distance matrices.

The solver is a transportation-specialized network simplex: northwest-corner
start, spanning-tree basis, most-negative entering rule with a switch to
Bland's rule after a pivot budget so degenerate instances cannot cycle.
Solutions are basic, hence have at most p + q - 1 strictly positive entries.
"""

import numpy as np
from numba import njit, prange

# metric codes persisted in the distance-matrix file format
METRIC_ENERGY = 0
METRIC_HAUSDORFF = 1
METRIC_WMD = 2

STATUS_OK = 0
STATUS_STALLED = 1


@njit(cache=True)
def _network_simplex(cost, supply, demand, flow):
    """Solve min <cost, flow> s.t. row sums = supply, col sums = demand, flow >= 0.

    Marginals must be strictly positive and balanced. ``flow`` is written in
    place; the return value is a STATUS_* code.
    """
    p, q = cost.shape
    n_nodes = p + q
    n_b = n_nodes - 1

    basis_row = np.empty(n_b, np.int64)
    basis_col = np.empty(n_b, np.int64)
    in_basis = np.zeros((p, q), np.bool_)
    flow[:, :] = 0.0

    # northwest-corner start: a monotone staircase is always a spanning tree
    a = supply.copy()
    b = demand.copy()
    i = 0
    j = 0
    for k in range(n_b):
        basis_row[k] = i
        basis_col[k] = j
        in_basis[i, j] = True
        t = a[i] if a[i] < b[j] else b[j]
        flow[i, j] = t
        a[i] -= t
        b[j] -= t
        if k == n_b - 1:
            break
        if j == q - 1:
            i += 1
        elif i == p - 1:
            j += 1
        elif a[i] <= b[j]:
            i += 1
        else:
            j += 1

    pot = np.empty(n_nodes)
    offsets = np.empty(n_nodes + 1, np.int64)
    fillpos = np.empty(n_nodes, np.int64)
    adj_node = np.empty(2 * n_b, np.int64)
    adj_arc = np.empty(2 * n_b, np.int64)
    visited = np.empty(n_nodes, np.bool_)
    stack = np.empty(n_nodes, np.int64)
    prev_node = np.empty(n_nodes, np.int64)
    prev_arc = np.empty(n_nodes, np.int64)
    path_arc = np.empty(n_nodes, np.int64)

    cmax = 1.0
    for r in range(p):
        for c in range(q):
            if cost[r, c] > cmax:
                cmax = cost[r, c]
    tol = 1e-12 * cmax

    bland_after = 100 * (n_nodes + 16)
    max_pivots = 2_000_000

    it = 0
    while True:
        it += 1
        if it > max_pivots:
            return STATUS_STALLED

        # rebuild tree adjacency (CSR over the n_b basic arcs)
        for v in range(n_nodes + 1):
            offsets[v] = 0
        for k in range(n_b):
            offsets[basis_row[k] + 1] += 1
            offsets[p + basis_col[k] + 1] += 1
        for v in range(n_nodes):
            offsets[v + 1] += offsets[v]
            fillpos[v] = offsets[v]
        for k in range(n_b):
            u = basis_row[k]
            w = p + basis_col[k]
            adj_node[fillpos[u]] = w
            adj_arc[fillpos[u]] = k
            fillpos[u] += 1
            adj_node[fillpos[w]] = u
            adj_arc[fillpos[w]] = k
            fillpos[w] += 1

        # node potentials: pot[src] + pot[p + sink] = cost on every basic arc
        for v in range(n_nodes):
            visited[v] = False
        pot[0] = 0.0
        visited[0] = True
        top = 0
        stack[0] = 0
        while top >= 0:
            cur = stack[top]
            top -= 1
            for e in range(offsets[cur], offsets[cur + 1]):
                nxt = adj_node[e]
                if not visited[nxt]:
                    k = adj_arc[e]
                    pot[nxt] = cost[basis_row[k], basis_col[k]] - pot[cur]
                    visited[nxt] = True
                    top += 1
                    stack[top] = nxt

        # entering arc: most negative reduced cost, or Bland (first in
        # row-major order) once the pivot budget is spent
        bland = it > bland_after
        best_r = -tol
        ei = -1
        ej = -1
        done = False
        for r in range(p):
            pu = pot[r]
            for c in range(q):
                if in_basis[r, c]:
                    continue
                red = cost[r, c] - pu - pot[p + c]
                if bland:
                    if red < -tol:
                        ei = r
                        ej = c
                        done = True
                        break
                elif red < best_r:
                    best_r = red
                    ei = r
                    ej = c
            if done:
                break
        if ei < 0:
            return STATUS_OK

        # unique tree path from source node ei to sink node p + ej
        for v in range(n_nodes):
            visited[v] = False
        qh = 0
        qt = 0
        queue = stack  # reuse; BFS visits each node once
        queue[qt] = ei
        qt += 1
        visited[ei] = True
        target = p + ej
        while qh < qt:
            cur = queue[qh]
            qh += 1
            if cur == target:
                break
            for e in range(offsets[cur], offsets[cur + 1]):
                nxt = adj_node[e]
                if not visited[nxt]:
                    visited[nxt] = True
                    prev_node[nxt] = cur
                    prev_arc[nxt] = adj_arc[e]
                    queue[qt] = nxt
                    qt += 1

        cnt = 0
        cur = target
        while cur != ei:
            path_arc[cnt] = prev_arc[cur]
            cnt += 1
            cur = prev_node[cur]
        # walking back from the sink: arcs at even positions lose flow
        # (path length is odd, so both ends are "minus" arcs)

        theta = np.inf
        for t in range(0, cnt, 2):
            k = path_arc[t]
            f = flow[basis_row[k], basis_col[k]]
            if f < theta:
                theta = f
        if theta < 0.0:
            theta = 0.0
        leave_t = -1
        leave_id = -1
        for t in range(0, cnt, 2):
            k = path_arc[t]
            if flow[basis_row[k], basis_col[k]] <= theta:
                aid = basis_row[k] * q + basis_col[k]
                if leave_t < 0 or aid < leave_id:
                    leave_t = t
                    leave_id = aid

        for t in range(cnt):
            k = path_arc[t]
            if t % 2 == 0:
                nf = flow[basis_row[k], basis_col[k]] - theta
                flow[basis_row[k], basis_col[k]] = nf if nf > 0.0 else 0.0
            else:
                flow[basis_row[k], basis_col[k]] += theta
        flow[ei, ej] = theta

        lk = path_arc[leave_t]
        in_basis[basis_row[lk], basis_col[lk]] = False
        flow[basis_row[lk], basis_col[lk]] = 0.0
        in_basis[ei, ej] = True
        basis_row[lk] = ei
        basis_col[lk] = ej


@njit(cache=True)
def _transport_cost(cost, supply, demand):
    """Optimal transport objective; allocates its own flow workspace."""
    p, q = cost.shape
    if p == 1:
        total = 0.0
        for j in range(q):
            total += demand[j] * cost[0, j]
        return total
    if q == 1:
        total = 0.0
        for i in range(p):
            total += supply[i] * cost[i, 0]
        return total
    flow = np.empty((p, q))
    status = _network_simplex(cost, supply, demand, flow)
    if status != STATUS_OK:
        return np.nan
    total = 0.0
    for i in range(p):
        for j in range(q):
            if flow[i, j] > 0.0:
                total += flow[i, j] * cost[i, j]
    return total


@njit(cache=True)
def _cross_distances(va, vb, sq_a, sq_b):
    """Euclidean distances between the rows of two vector blocks."""
    g = np.dot(va, vb.T)
    p = va.shape[0]
    q = vb.shape[0]
    out = np.empty((p, q))
    for i in range(p):
        for j in range(q):
            s = sq_a[i] + sq_b[j] - 2.0 * g[i, j]
            out[i, j] = np.sqrt(s) if s > 0.0 else 0.0
    return out


@njit(cache=True)
def _energy_from_dists(dists, wa, wb, intra_a, intra_b):
    cross = 0.0
    p, q = dists.shape
    for i in range(p):
        for j in range(q):
            cross += wa[i] * wb[j] * dists[i, j]
    val = 2.0 * cross - intra_a - intra_b
    # nonnegative in exact arithmetic; clamp float noise on near-identical clouds
    return val if val > 0.0 else 0.0


@njit(cache=True)
def _intra_energy(dists, w):
    total = 0.0
    m = w.size
    for i in range(m):
        for j in range(m):
            total += w[i] * w[j] * dists[i, j]
    return total


@njit(cache=True)
def _hausdorff_from_dists(dists):
    p, q = dists.shape
    h_ab = 0.0
    for i in range(p):
        row_min = np.inf
        for j in range(q):
            if dists[i, j] < row_min:
                row_min = dists[i, j]
        if row_min > h_ab:
            h_ab = row_min
    h_ba = 0.0
    for j in range(q):
        col_min = np.inf
        for i in range(p):
            if dists[i, j] < col_min:
                col_min = dists[i, j]
        if col_min > h_ba:
            h_ba = col_min
    return h_ab if h_ab > h_ba else h_ba


@njit(cache=True)
def _pair_from_rank(t, n):
    """Row-major unranking of the t-th unordered pair (i < j) of n items."""
    i = int((2.0 * n - 1.0 - np.sqrt((2.0 * n - 1.0) ** 2 - 8.0 * t)) // 2.0)
    if i < 0:
        i = 0
    while i * (2 * n - i - 1) // 2 > t:
        i -= 1
    while (i + 1) * (2 * n - i - 2) // 2 <= t and i < n - 2:
        i += 1
    j = i + 1 + (t - i * (2 * n - i - 1) // 2)
    return i, j


@njit(cache=True, parallel=True)
def _pairwise_kernel(offsets, word_rows, weights, vectors, sqnorms, metric, out):
    """Fill the strict upper triangle of ``out`` with the chosen metric.

    Clouds are given in CSR layout: cloud i owns slots offsets[i]:offsets[i+1]
    of ``word_rows`` (row indices into ``vectors``) and ``weights``. Each pair
    writes only its own two cells, so results are bitwise independent of the
    thread count.
    """
    n = offsets.size - 1

    intra = np.zeros(n)
    if metric == METRIC_ENERGY:
        for i in prange(n):
            lo = offsets[i]
            hi = offsets[i + 1]
            v = vectors[word_rows[lo:hi]]
            sq = sqnorms[word_rows[lo:hi]]
            d = _cross_distances(v, v, sq, sq)
            intra[i] = _intra_energy(d, weights[lo:hi])

    total = n * (n - 1) // 2
    for t in prange(total):
        i, j = _pair_from_rank(t, n)
        lo_a = offsets[i]
        hi_a = offsets[i + 1]
        lo_b = offsets[j]
        hi_b = offsets[j + 1]
        va = vectors[word_rows[lo_a:hi_a]]
        vb = vectors[word_rows[lo_b:hi_b]]
        dists = _cross_distances(
            va, vb, sqnorms[word_rows[lo_a:hi_a]], sqnorms[word_rows[lo_b:hi_b]]
        )
        if metric == METRIC_ENERGY:
            val = _energy_from_dists(
                dists, weights[lo_a:hi_a], weights[lo_b:hi_b], intra[i], intra[j]
            )
        elif metric == METRIC_HAUSDORFF:
            val = _hausdorff_from_dists(dists)
        else:
            val = _transport_cost(dists, weights[lo_a:hi_a], weights[lo_b:hi_b])
        out[i, j] = val
        out[j, i] = val
