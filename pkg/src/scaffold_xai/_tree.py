"""Numba kernels for growing and evaluating CART classification trees.

A tree is stored as flat parallel arrays indexed by node id (root = 0):
``feature`` (-1 for leaves), ``threshold`` (go left when ``x <= threshold``),
``left``/``right`` child ids, and ``counts`` (n_nodes x 2 class counts of the
training samples that reached the node).
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True)
def _gini(c0, c1):
    n = c0 + c1
    if n == 0:
        return 0.0
    p0 = c0 / n
    p1 = c1 / n
    return 1.0 - p0 * p0 - p1 * p1


@njit(cache=True)
def _best_split(X, y, idx, start, end, feat_order, max_features, buf_vals, buf_y):
    """Best Gini split of idx[start:end] over a random feature subset.

    Constant features do not count toward ``max_features`` so a node only
    becomes a leaf when every feature is constant on it.
    """
    n = end - start
    best_feat = -1
    best_thr = 0.0
    best_score = np.inf
    visited = 0
    total1 = 0
    for i in range(start, end):
        total1 += y[idx[i]]
    total0 = n - total1
    for f in feat_order:
        if visited >= max_features:
            break
        for i in range(n):
            buf_vals[i] = X[idx[start + i], f]
        order = np.argsort(buf_vals[:n], kind="mergesort")
        lo = buf_vals[order[0]]
        hi = buf_vals[order[n - 1]]
        if hi <= lo:
            continue
        visited += 1
        for i in range(n):
            buf_y[i] = y[idx[start + order[i]]]
        l0 = 0
        l1 = 0
        for i in range(n - 1):
            if buf_y[i] == 1:
                l1 += 1
            else:
                l0 += 1
            v = buf_vals[order[i]]
            v_next = buf_vals[order[i + 1]]
            if v_next <= v:
                continue
            nl = i + 1
            nr = n - nl
            score = nl * _gini(l0, l1) + nr * _gini(total0 - l0, total1 - l1)
            if score < best_score:
                best_score = score
                best_feat = f
                thr = 0.5 * (v + v_next)
                # midpoint can round up to v_next for adjacent floats
                if thr >= v_next:
                    thr = v
                best_thr = thr
    return best_feat, best_thr


@njit(cache=True)
def grow_tree(X, y, sample_idx, max_features, max_depth, min_samples_split, seed):
    """Grow one tree on the (possibly repeated) rows ``sample_idx``.

    ``max_depth < 0`` means unlimited. Returns the flat node arrays and the
    node count.
    """
    np.random.seed(seed)
    n = sample_idx.shape[0]
    m = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, 2), dtype=np.int64)

    idx = sample_idx.copy()
    buf_vals = np.empty(n)
    buf_y = np.empty(n, dtype=np.int64)
    tmp = np.empty(n, dtype=np.int64)

    # stack entries: node id, start, end, depth
    stack = np.empty((cap, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(m)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        c1 = 0
        for i in range(start, end):
            c1 += y[idx[i]]
        c0 = (end - start) - c1
        counts[node, 0] = c0
        counts[node, 1] = c1
        if c0 == 0 or c1 == 0:
            continue
        if end - start < min_samples_split:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue
        # random feature visiting order (Fisher-Yates)
        for i in range(m - 1, 0, -1):
            j = np.random.randint(0, i + 1)
            t = feats[i]
            feats[i] = feats[j]
            feats[j] = t
        f, thr = _best_split(X, y, idx, start, end, feats, max_features, buf_vals, buf_y)
        if f < 0:
            continue
        # stable partition of idx[start:end] by X[:, f] <= thr
        nl = 0
        for i in range(start, end):
            if X[idx[i], f] <= thr:
                tmp[nl] = idx[i]
                nl += 1
        k = nl
        for i in range(start, end):
            if X[idx[i], f] > thr:
                tmp[k] = idx[i]
                k += 1
        for i in range(end - start):
            idx[start + i] = tmp[i]
        feature[node] = f
        threshold[node] = thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[top, 0] = rnode
        stack[top, 1] = start + nl
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = lnode
        stack[top, 1] = start
        stack[top, 2] = start + nl
        stack[top, 3] = depth + 1
        top += 1
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        counts[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def forest_votes(X, offsets, feature, threshold, left, right, leaf_class):
    """Count class-1 votes per row over all trees stored back to back.

    ``offsets[t]`` is the first node of tree t; child ids are tree-local.
    """
    n = X.shape[0]
    n_trees = offsets.shape[0]
    votes = np.zeros(n, dtype=np.int64)
    for i in range(n):
        v = 0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            v += leaf_class[base + node]
        votes[i] = v
    return votes
