"""Exact Earth Mover's Distance between probability mass functions on a grid.

The transportation problem over the nonzero bins is solved with the network
simplex method.  The basis is a spanning tree of the bipartite
supply/demand graph, started from the north-west corner rule.  Each pivot
prices every arc against the node potentials, enters the most negative
reduced cost, and pushes flow around the tree cycle it closes.  The leaving
arc's subtree is then re-hung under the entering arc, and only that
subtree's potentials move.  After a long run of degenerate pivots, pricing
switches to Bland's rule, which cannot cycle.

Mass that two PMFs share in the same bin is left in place at zero cost
first.  For a metric ground cost this never changes the optimum and it
shrinks the problem considerably when the PMFs are similar.
"""

from __future__ import annotations

import numpy as np

NORMALIZATION_TOL = 1e-9
_ZERO = 1e-15  # bins with less mass than this are treated as empty
_PRICE_TOL = 1e-12  # relative to the largest cost; smaller negative reduced costs are rounding noise
DEGENERATE_PIVOTS_PER_NODE = 50  # consecutive zero-flow pivots (per node) before switching to Bland's rule


class EmdInputError(ValueError):
    """Inputs are not comparable probability mass functions."""


def grid_cost(src_idx: np.ndarray, dst_idx: np.ndarray) -> np.ndarray:
    """Euclidean distance between integer bin coordinates, [len(src), len(dst)]."""
    diff = src_idx[:, None, :].astype(np.float64) - dst_idx[None, :, :].astype(np.float64)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def transport(supply: np.ndarray, demand: np.ndarray, cost: np.ndarray) -> tuple[float, np.ndarray]:
    """Min-cost transport of ``supply`` onto ``demand`` (equal totals) under ``cost``.

    Returns (total cost, flow matrix).
    """
    supply = np.array(supply, dtype=np.float64)
    demand = np.array(demand, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    ns, nt = cost.shape
    n = ns + nt  # nodes: sources 0..ns-1, sinks ns..n-1
    parent, flow_at, children, pot = _north_west_tree(supply, demand, cost)
    is_sink = np.arange(n) >= ns
    tol = _PRICE_TOL * (1.0 + float(np.max(np.abs(cost))))
    reduced = np.empty_like(cost)
    stamp = [-1] * n
    degenerate_limit = DEGENERATE_PIVOTS_PER_NODE * n
    degenerate = pivots = 0
    bland = degenerate_limit <= 0
    while True:
        np.subtract(cost, pot[:ns, None], out=reduced)
        reduced -= pot[None, ns:]
        if bland:
            negative = np.flatnonzero(reduced.ravel() < -tol)
            if negative.size == 0:
                break
            k = int(negative[0])
        else:
            k = int(np.argmin(reduced))
            if reduced.flat[k] >= -tol:
                break
        r = float(reduced.flat[k])
        na, nb = k // nt, ns + k % nt

        # the cycle closed by the entering arc: both tree paths up to their meeting node
        x = na
        while x >= 0:
            stamp[x] = pivots
            x = parent[x]
        path_b = []
        y = nb
        while stamp[y] != pivots:
            path_b.append(y)
            y = parent[y]
        path_a = []
        x = na
        while x != y:
            path_a.append(x)
            x = parent[x]
        # Arcs are named by their child node.  Flow runs na -> nb -> up path_b
        # -> down path_a; an arc loses flow when it is traversed sink -> source.
        cycle = [(c, c < ns) for c in reversed(path_a)] + [(c, c >= ns) for c in path_b]
        theta, leave = np.inf, -1
        for c, loses in cycle:
            if not loses:
                continue
            f = flow_at[c]
            if f < theta:
                theta, leave = f, c
            elif f == theta:
                if not bland:
                    leave = c  # last blocking arc in cycle order
                elif _arc_index(c, parent[c], ns, nt) < _arc_index(leave, parent[leave], ns, nt):
                    leave = c
        theta = max(theta, 0.0)
        for c, loses in cycle:
            flow_at[c] += -theta if loses else theta
        pivots += 1
        degenerate = degenerate + 1 if theta == 0.0 else 0
        bland = bland or degenerate > degenerate_limit

        # detach the subtree below the leaving arc and re-hang it from the entering arc
        on_b = leave in path_b
        new_child, new_parent = (nb, na) if on_b else (na, nb)
        path = [new_child]
        while path[-1] != leave:
            path.append(parent[path[-1]])
        old_flows = [flow_at[x] for x in path]
        prev, prev_flow = new_parent, theta
        for x, f in zip(path, old_flows):
            children[parent[x]].discard(x)
            parent[x] = prev
            children[prev].add(x)
            flow_at[x] = prev_flow
            prev, prev_flow = x, f
        # restore pot[s] + pot[t] = cost on the entering arc by shifting the moved subtree
        moved = [new_child]
        for x in moved:
            moved.extend(children[x])
        moved = np.array(moved)
        delta = r if on_b else -r
        pot[moved] += np.where(is_sink[moved], delta, -delta)

    flow = np.zeros((ns, nt))
    for x in range(n):
        p = parent[x]
        if p >= 0:
            s, t = (x, p - ns) if x < ns else (p, x - ns)
            flow[s, t] = max(flow_at[x], 0.0)
    return float(np.sum(flow * cost)), flow


def _north_west_tree(supply, demand, cost):
    """Initial basis: the north-west corner staircase, as a tree rooted at source 0.

    Returns parent and arc-flow lists (the arc of a node is the one to its
    parent), children sets and node potentials with pot[s] + pot[t] = cost on
    every tree arc.
    """
    ns, nt = cost.shape
    n = ns + nt
    adj = [[] for _ in range(n)]
    a, b = supply.copy(), demand.copy()
    i = j = 0
    while True:
        amount = min(a[i], b[j])
        a[i] -= amount
        b[j] -= amount
        adj[i].append((ns + j, amount))
        adj[ns + j].append((i, amount))
        if i == ns - 1 and j == nt - 1:
            break
        # when both run out together, stepping one index adds a zero-flow arc and keeps the tree spanning
        if j == nt - 1 or (i < ns - 1 and a[i] <= b[j]):
            i += 1
        else:
            j += 1
    parent = [-1] * n
    flow_at = [0.0] * n
    children = [set() for _ in range(n)]
    pot = np.zeros(n)
    seen = [False] * n
    seen[0] = True
    order = [0]
    for x in order:
        for y, f in adj[x]:
            if not seen[y]:
                seen[y] = True
                parent[y] = x
                flow_at[y] = f
                children[x].add(y)
                pot[y] = (cost[x, y - ns] if x < ns else cost[y, x - ns]) - pot[x]
                order.append(y)
    return parent, flow_at, children, pot


def _arc_index(child, par, ns, nt) -> int:
    s, t = (child, par - ns) if child < ns else (par, child - ns)
    return s * nt + t


def emd(p: np.ndarray, q: np.ndarray) -> float:
    """Exact EMD between two same-shape PMFs with ground distance |index difference|_2."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise EmdInputError(f"PMF shapes differ: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise EmdInputError("PMFs must be non-negative")
    sp, sq = float(np.sum(p)), float(np.sum(q))
    if abs(sp - sq) > NORMALIZATION_TOL or abs(sp - 1.0) > NORMALIZATION_TOL:
        raise EmdInputError(f"PMFs must both sum to 1 (got {sp!r} and {sq!r})")
    common = np.minimum(p, q)
    ps = p - common
    qs = q - common
    src = np.argwhere(ps > _ZERO)
    dst = np.argwhere(qs > _ZERO)
    if src.size == 0 or dst.size == 0:
        return 0.0
    supply = ps[tuple(src.T)]
    demand = qs[tuple(dst.T)]
    # rounding can leave the totals a few ulp apart; shrink the larger side to match
    supply *= np.sum(demand) / np.sum(supply) if np.sum(supply) > np.sum(demand) else 1.0
    demand *= np.sum(supply) / np.sum(demand) if np.sum(demand) > np.sum(supply) else 1.0
    value, _ = transport(supply, demand, grid_cost(src, dst))
    return value
