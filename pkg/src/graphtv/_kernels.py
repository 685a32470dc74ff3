"""Compiled inner loops (union-find peeling, forest rooting, tree TV prox)."""
import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@njit(**_JIT)
def kruskal_select(n_vertices, tails, heads, order):
    """Scan ``order`` once; mark edges that join two components."""
    parent = np.arange(n_vertices)
    rank = np.zeros(n_vertices, np.int64)
    keep = np.zeros(order.size, np.bool_)
    for k in range(order.size):
        e = order[k]
        a = _find(parent, tails[e])
        b = _find(parent, heads[e])
        if a == b:
            continue
        if rank[a] < rank[b]:
            a, b = b, a
        parent[b] = a
        if rank[a] == rank[b]:
            rank[a] += 1
        keep[k] = True
    return keep


@njit(**_JIT)
def peel_forests(n_vertices, tails, heads, order):
    """Repeated Kruskal: label each edge with the index of its forest."""
    label = np.full(tails.size, -1, np.int64)
    remaining = order.copy()
    n_rem = remaining.size
    parent = np.empty(n_vertices, np.int64)
    rank = np.empty(n_vertices, np.int64)
    level = 0
    while n_rem > 0:
        for v in range(n_vertices):
            parent[v] = v
            rank[v] = 0
        n_next = 0
        for k in range(n_rem):
            e = remaining[k]
            a = _find(parent, tails[e])
            b = _find(parent, heads[e])
            if a == b:
                remaining[n_next] = e
                n_next += 1
                continue
            if rank[a] < rank[b]:
                a, b = b, a
            parent[b] = a
            if rank[a] == rank[b]:
                rank[a] += 1
            label[e] = level
        n_rem = n_next
        level += 1
    return label


@njit(**_JIT)
def root_forest(n_vertices, tails, heads, edges):
    """Root every tree of the forest ``edges`` at its lowest-index vertex.

    Returns ``post`` (DFS postorder of all vertices, trees concatenated),
    ``parent``, ``pedge`` (edge to parent or -1), ``nchild``, ``tree_id``
    and a flag that is False if ``edges`` contains a cycle.
    """
    nv = n_vertices
    deg = np.zeros(nv + 1, np.int64)
    for k in range(edges.size):
        e = edges[k]
        deg[tails[e] + 1] += 1
        deg[heads[e] + 1] += 1
    for v in range(nv):
        deg[v + 1] += deg[v]
    adj_v = np.empty(2 * edges.size, np.int64)
    adj_e = np.empty(2 * edges.size, np.int64)
    fill = deg[:-1].copy()
    for k in range(edges.size):
        e = edges[k]
        a = tails[e]
        b = heads[e]
        adj_v[fill[a]] = b
        adj_e[fill[a]] = e
        fill[a] += 1
        adj_v[fill[b]] = a
        adj_e[fill[b]] = e
        fill[b] += 1

    parent = np.full(nv, -1, np.int64)
    pedge = np.full(nv, -1, np.int64)
    nchild = np.zeros(nv, np.int64)
    tree_id = np.full(nv, -1, np.int64)
    post = np.empty(nv, np.int64)
    stack = np.empty(nv, np.int64)
    cursor = np.empty(nv, np.int64)
    n_post = 0
    acyclic = True
    n_trees = 0
    for r in range(nv):
        if tree_id[r] >= 0:
            continue
        tree_id[r] = n_trees
        top = 0
        stack[0] = r
        cursor[r] = deg[r]
        while top >= 0:
            v = stack[top]
            if cursor[v] < deg[v + 1]:
                k = cursor[v]
                cursor[v] += 1
                w = adj_v[k]
                e = adj_e[k]
                if e == pedge[v]:
                    continue
                if tree_id[w] >= 0:
                    acyclic = False
                    continue
                tree_id[w] = n_trees
                parent[w] = v
                pedge[w] = e
                nchild[v] += 1
                cursor[w] = deg[w]
                top += 1
                stack[top] = w
            else:
                post[n_post] = v
                n_post += 1
                top -= 1
        n_trees += 1
    return post, parent, pedge, nchild, tree_id, acyclic


@njit(**_JIT)
def _solve_level(pos, dlt, lo, hi, c0, target):
    """Left-to-right scan for ``h'(y) = target``; returns (y, slope, first kept)."""
    s = 1.0
    c = c0
    i = lo
    while i < hi:
        b = pos[i]
        if s * b + c >= target:
            break
        s += dlt[i]
        c -= dlt[i] * b
        i += 1
    return (target - c) / s, s, i


@njit(**_JIT)
def tv_forest(post, parent, pedge, nchild, tails, weights, f, x, ylo, scratch, pos, dlt, seg):
    """Exact ``argmin_u 0.5||u - f||^2 + sum_e w_e |u_tail - u_head|`` on a forest.

    Each vertex sends its parent the derivative of its subtree value
    function clipped to ``[-w_e, w_e]``. Derivatives are sorted breakpoint
    lists (position, slope jump) kept on a stack: in DFS postorder the
    messages of a vertex's children are exactly the top ``nchild`` segments.
    ``pos``, ``dlt`` need ``2 * n + 2`` slots, ``seg`` needs ``n``;
    ``ylo`` and ``scratch`` are length-``n`` work arrays.
    """
    nv = post.size
    wsum = scratch
    for v in range(nv):
        wsum[v] = 0.0
    for v in range(nv):
        if parent[v] >= 0:
            wsum[parent[v]] += weights[pedge[v]]
    top = 0
    nseg = 0
    for idx in range(nv):
        v = post[idx]
        k = nchild[v]
        if k > 0:
            start = seg[nseg - k]
            nseg -= k
            if k > 1:
                order = np.argsort(pos[start:top], kind="mergesort")
                tp = pos[start:top][order]
                td = dlt[start:top][order]
                pos[start:top] = tp
                dlt[start:top] = td
        else:
            start = top
        ws = wsum[v]
        if parent[v] < 0:
            y, _, _ = _solve_level(pos, dlt, start, top, -f[v] - ws, 0.0)
            x[v] = y
            top = start
            continue
        w = weights[pedge[v]]
        y_lo, s_lo, i_lo = _solve_level(pos, dlt, start, top, -f[v] - ws, -w)
        # right-to-left scan for the upper level
        s = 1.0
        c = -f[v] + ws
        j = top - 1
        while j >= i_lo:
            b = pos[j]
            if s * b + c <= w:
                break
            s -= dlt[j]
            c += dlt[j] * b
            j -= 1
        y_hi = (w - c) / s
        ylo[v] = y_lo
        x[v] = y_hi
        n_keep = j - i_lo + 1
        if n_keep > 0 and i_lo == start:
            for q in range(j, i_lo - 1, -1):
                pos[q + 1] = pos[q]
                dlt[q + 1] = dlt[q]
        elif n_keep > 0:
            for q in range(n_keep):
                pos[start + 1 + q] = pos[i_lo + q]
                dlt[start + 1 + q] = dlt[i_lo + q]
        else:
            n_keep = 0
        pos[start] = y_lo
        dlt[start] = s_lo
        out = start + 1 + n_keep
        pos[out] = y_hi
        dlt[out] = -s
        top = out + 1
        seg[nseg] = start
        nseg += 1
    # x holds the upper clip level of non-root vertices until overwritten
    for idx in range(nv - 1, -1, -1):
        v = post[idx]
        pv = parent[v]
        if pv >= 0:
            xv = x[pv]
            if xv < ylo[v]:
                xv = ylo[v]
            elif xv > x[v]:
                xv = x[v]
            x[v] = xv


@njit(**_JIT)
def retrieve_forest_dual(post, parent, pedge, tails, weights, d, p):
    """Solve ``K_l^T p = d`` on a forest by leaf elimination.

    Writes ``p`` on the forest's edges and returns the largest root
    residual (nonzero only if ``d`` does not sum to zero on some tree).
    """
    nv = post.size
    acc = np.zeros(nv)
    worst = 0.0
    for idx in range(nv):
        v = post[idx]
        r = d[v] - acc[v]
        pv = parent[v]
        if pv < 0:
            if abs(r) > worst:
                worst = abs(r)
            continue
        e = pedge[v]
        sgn = 1.0 if tails[e] == v else -1.0
        p[e] = sgn * r / weights[e]
        acc[pv] -= r
    return worst


@njit(**_JIT)
def forest_KT(post, parent, pedge, tails, heads, weights, p, out):
    """``out += K_l^T p_l`` for the forest's edges."""
    for idx in range(post.size):
        v = post[idx]
        e = pedge[v]
        if e >= 0:
            wp = weights[e] * p[e]
            out[tails[e]] += wp
            out[heads[e]] -= wp


@njit(**_JIT)
def block_forest_update(posts, parents, pedges, nchilds, tails, heads, weights,
                        p_in, ubar, t, p_out):
    """Scaled dual update for every forest of a decomposition.

    Per forest: ``f_l = -(K_l^T p_l + ubar / t)``, exact tree TV prox of
    ``f_l``, then dual retrieval from ``K_l^T p = v_l - f_l``.
    Returns the worst retrieval residual.
    """
    n_forests, nv = posts.shape
    fl = np.empty(nv)
    x = np.empty(nv)
    d = np.empty(nv)
    ylo = np.empty(nv)
    yhi = np.empty(nv)
    pos = np.empty(2 * nv + 2)
    dlt = np.empty(2 * nv + 2)
    seg = np.empty(nv, np.int64)
    worst = 0.0
    for l in range(n_forests):
        post = posts[l]
        parent = parents[l]
        pedge = pedges[l]
        for v in range(nv):
            fl[v] = -ubar[v] / t
        for idx in range(nv):
            v = post[idx]
            e = pedge[v]
            if e >= 0:
                wp = weights[e] * p_in[e]
                fl[tails[e]] -= wp
                fl[heads[e]] += wp
        tv_forest(post, parent, pedge, nchilds[l], tails, weights, fl, x, ylo, yhi, pos, dlt, seg)
        for v in range(nv):
            d[v] = x[v] - fl[v]
        r = retrieve_forest_dual(post, parent, pedge, tails, weights, d, p_out)
        if r > worst:
            worst = r
        for idx in range(nv):
            e = pedge[post[idx]]
            if e >= 0:
                if p_out[e] > 1.0:
                    p_out[e] = 1.0
                elif p_out[e] < -1.0:
                    p_out[e] = -1.0
    return worst
