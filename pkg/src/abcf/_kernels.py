"""Compiled inner loops for CART regression trees and forest weights.

Trees are grown on a bootstrap sample given as per-record multiplicities.
Every covariate keeps its own array of in-bag record ids sorted by value;
splitting a node stably partitions each of those arrays, so sorted order is
never recomputed below the root.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0
_TIE_RTOL = 1e-12


@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def node_stream(seed, tree, node):
    s = _mix(np.uint64(seed) + _GOLDEN)
    s = _mix(s ^ (np.uint64(tree) + _GOLDEN))
    return _mix(s ^ (np.uint64(node) + _GOLDEN))


@njit(cache=True, nogil=True)
def _next_below(state, m):
    """Advance a splitmix64 state; return (new_state, uniform int in [0, m))."""
    state = state + _GOLDEN
    u = (_mix(state) >> np.uint64(11)) * _INV53
    r = np.int64(u * m)
    if r >= m:
        r = m - 1
    return state, r


@njit(cache=True, nogil=True)
def _best_split_on(j, lo, hi, idx, Xt, y, counts, W, S, best):
    """Scan covariate j; update best = [score, j, pos, threshold] if improved.

    Returns False when the covariate is constant inside the node.
    """
    wl = 0.0
    sl = 0.0
    found = False
    for p in range(lo, hi - 1):
        t = idx[j, p]
        c = counts[t]
        wl += c
        sl += c * y[t]
        xv = Xt[j, t]
        xn = Xt[j, idx[j, p + 1]]
        if xn > xv:
            found = True
            wr = W - wl
            sr = S - sl
            score = sl * sl / wl + sr * sr / wr
            # near-equal scores count as ties so the earliest candidate wins
            if best[1] < 0 or score > best[0] * (1.0 + _TIE_RTOL):
                thr = 0.5 * (xv + xn)
                if thr >= xn:
                    thr = xv
                best[0] = score
                best[1] = j
                best[2] = p
                best[3] = thr
    return found


@njit(cache=True, nogil=True)
def grow_tree(Xt, y, counts, order, mtry, min_node, seed, tree_index):
    """Grow one tree.

    Returns node arrays (feature, threshold, left, right, value, weight, rss);
    leaves have feature == -1. ``weight`` is the bootstrap multiplicity mass.
    """
    k, N = Xt.shape
    n_in = 0
    for t in range(N):
        if counts[t] > 0:
            n_in += 1
    idx = np.empty((k, n_in), dtype=np.int32)
    for j in range(k):
        p = 0
        for r in range(N):
            t = order[j, r]
            if counts[t] > 0:
                idx[j, p] = t
                p += 1

    cap = 2 * n_in + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    weight = np.zeros(cap, dtype=np.float64)
    rss = np.zeros(cap, dtype=np.float64)
    start = np.zeros(cap, dtype=np.int64)
    stop = np.zeros(cap, dtype=np.int64)
    ref = np.zeros(cap, dtype=np.int64)  # covariate whose ordering holds the node's members

    stack = np.empty(cap, dtype=np.int64)
    go_left = np.zeros(N, dtype=np.uint8)
    buf = np.empty(max(n_in, 1), dtype=np.int32)
    cand = np.empty(k, dtype=np.int64)
    chosen = np.empty(k, dtype=np.int64)
    tried = np.zeros(k, dtype=np.uint8)
    best = np.empty(4, dtype=np.float64)
    min_split = max(2.0, float(min_node))

    n_nodes = 1
    start[0] = 0
    stop[0] = n_in
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        lo = start[node]
        hi = stop[node]
        r0 = ref[node]
        W = 0.0
        S = 0.0
        ymin = np.inf
        ymax = -np.inf
        for p in range(lo, hi):
            t = idx[r0, p]
            c = counts[t]
            W += c
            S += c * y[t]
            if y[t] < ymin:
                ymin = y[t]
            if y[t] > ymax:
                ymax = y[t]
        mean = S / W
        ss = 0.0
        for p in range(lo, hi):
            t = idx[r0, p]
            d = y[t] - mean
            ss += counts[t] * d * d
        value[node] = mean
        weight[node] = W
        rss[node] = ss
        if W < min_split or ymin == ymax:
            continue

        # n_try distinct covariates, partial Fisher-Yates on a per-node stream
        state = node_stream(seed, tree_index, node)
        for j in range(k):
            cand[j] = j
        for i in range(mtry):
            state, r = _next_below(state, k - i)
            tmp = cand[i]
            cand[i] = cand[i + r]
            cand[i + r] = tmp
        for i in range(mtry):
            chosen[i] = cand[i]
        chosen[:mtry].sort()

        best[0] = -np.inf
        best[1] = -1.0
        any_valid = False
        for i in range(mtry):
            if _best_split_on(chosen[i], lo, hi, idx, Xt, y, counts, W, S, best):
                any_valid = True
        if not any_valid:
            # every sampled covariate is constant here: fall back to the rest
            for j in range(k):
                tried[j] = 0
            for i in range(mtry):
                tried[chosen[i]] = 1
            for j in range(k):
                if tried[j] == 0:
                    _best_split_on(j, lo, hi, idx, Xt, y, counts, W, S, best)
        if best[1] < 0:
            continue

        bj = np.int64(best[1])
        bp = np.int64(best[2])
        feature[node] = bj
        threshold[node] = best[3]
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        left[node] = ln
        right[node] = rn
        mid = bp + 1
        start[ln] = lo
        stop[ln] = mid
        start[rn] = mid
        stop[rn] = hi

        wl = 0.0
        for p in range(lo, mid):
            wl += counts[idx[bj, p]]
        wr = W - wl
        need = wl >= min_split or wr >= min_split
        if need:
            for p in range(lo, hi):
                go_left[idx[bj, p]] = 1 if p < mid else 0
            for j in range(k):
                if j == bj:
                    continue
                row = idx[j]
                pl = lo
                pr = 0
                # branchless: the left/right pattern is random
                for p in range(lo, hi):
                    t = row[p]
                    g = go_left[t]
                    row[pl] = t
                    buf[pr] = t
                    pl += g
                    pr += 1 - g
                for q in range(pr):
                    row[pl + q] = buf[q]
            # idx[bj] is already partitioned; the other covariates now agree with it
            ref[ln] = 0
            ref[rn] = 0
        else:
            # both children are terminal by size: only their membership matters
            ref[ln] = bj
            ref[rn] = bj
        stack[sp] = rn
        stack[sp + 1] = ln
        sp += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        weight[:n_nodes].copy(),
        rss[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def apply_tree(feature, threshold, left, right, X):
    """Leaf index reached by each row of X (rule: x[j] <= s goes left)."""
    m = X.shape[0]
    out = np.empty(m, dtype=np.int32)
    for i in range(m):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def apply_forest(offsets, feature, threshold, left, right, X):
    """Local leaf index per (tree, row); node arrays are concatenated per tree."""
    B = offsets.shape[0] - 1
    m = X.shape[0]
    out = np.empty((B, m), dtype=np.int32)
    for b in range(B):
        o = offsets[b]
        for i in range(m):
            node = 0
            while feature[o + node] >= 0:
                if X[i, feature[o + node]] <= threshold[o + node]:
                    node = left[o + node]
                else:
                    node = right[o + node]
            out[b, i] = node
    return out


@njit(cache=True, nogil=True)
def forest_weights(query_leaf, train_leaf, counts, offsets, node_weight):
    """Weights w[q, t] for each query; summed over trees in ascending order."""
    B, N = counts.shape
    m = query_leaf.shape[1]
    w = np.zeros((m, N), dtype=np.float64)
    for q in range(m):
        for b in range(B):
            leaf = query_leaf[b, q]
            inv = 1.0 / node_weight[offsets[b] + leaf]
            for t in range(N):
                c = counts[b, t]
                if c > 0 and train_leaf[b, t] == leaf:
                    w[q, t] += c * inv
        for t in range(N):
            w[q, t] = w[q, t] / B
    return w


@njit(cache=True, nogil=True)
def leaf_values(leaf, offsets, value):
    B, m = leaf.shape
    out = np.empty((B, m), dtype=np.float64)
    for b in range(B):
        for i in range(m):
            out[b, i] = value[offsets[b] + leaf[b, i]]
    return out


@njit(cache=True, nogil=True)
def oob_running(train_leaf, counts, offsets, value, checkpoints):
    """OOB predictions after the first b trees, for each b in ``checkpoints``.

    Returns (pred[len(checkpoints), N], n_oob[len(checkpoints), N]).
    """
    B, N = counts.shape
    nc = checkpoints.shape[0]
    pred = np.full((nc, N), np.nan)
    nobs = np.zeros((nc, N), dtype=np.int64)
    acc = np.zeros(N)
    cnt = np.zeros(N, dtype=np.int64)
    ci = 0
    for b in range(B):
        o = offsets[b]
        for t in range(N):
            if counts[b, t] == 0:
                acc[t] += value[o + train_leaf[b, t]]
                cnt[t] += 1
        while ci < nc and checkpoints[ci] == b + 1:
            for t in range(N):
                nobs[ci, t] = cnt[t]
                if cnt[t] > 0:
                    pred[ci, t] = acc[t] / cnt[t]
            ci += 1
    return pred, nobs


@njit(cache=True, nogil=True)
def leaf_members(offsets, train_leaf, counts):
    """CSR index of in-bag members per node: members[start[g]:start[g+1]].

    ``g`` is the global node index; members are in ascending record order.
    """
    B, N = counts.shape
    total = offsets[B]
    size = np.zeros(total + 1, dtype=np.int64)
    for b in range(B):
        o = offsets[b]
        for t in range(N):
            if counts[b, t] > 0:
                size[o + train_leaf[b, t] + 1] += 1
    for g in range(total):
        size[g + 1] += size[g]
    start = size
    fill = start[:-1].copy()
    members = np.empty(start[total], dtype=np.int32)
    for b in range(B):
        o = offsets[b]
        for t in range(N):
            if counts[b, t] > 0:
                g = o + train_leaf[b, t]
                members[fill[g]] = t
                fill[g] += 1
    return start, members


@njit(cache=True, nogil=True)
def forest_weights_csr(query_leaf, offsets, counts, node_weight, start, members):
    """Same result and summation order as ``forest_weights``, visiting leaf members only."""
    B, N = counts.shape
    m = query_leaf.shape[1]
    w = np.zeros((m, N), dtype=np.float64)
    for q in range(m):
        for b in range(B):
            g = offsets[b] + query_leaf[b, q]
            inv = 1.0 / node_weight[g]
            for p in range(start[g], start[g + 1]):
                t = members[p]
                w[q, t] += counts[b, t] * inv
        for t in range(N):
            w[q, t] = w[q, t] / B
    return w
