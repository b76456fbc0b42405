"""Compiled CART kernels.

Randomness comes from a counter-based splitmix64 hash, so every draw is a pure
function of (key, counter) and independent of scheduling.  Node keys are
derived from the node's heap path (root 1, children 2p and 2p+1), which makes a
depth-capped walk of a deep tree identical to a tree grown with that depth
limit.
"""

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

STREAM_BOOTSTRAP = np.uint64(1)
STREAM_TREE = np.uint64(2)


@nb.njit(cache=True, nogil=True)
def splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True, nogil=True)
def derive(key, a):
    return splitmix64(splitmix64(key) ^ a)


@nb.njit(cache=True, nogil=True)
def _uniform_index(key, counter, n):
    r = derive(key, np.uint64(counter))
    u = np.float64(r >> _S11) * (1.0 / 9007199254740992.0)
    k = np.int64(u * n)
    if k >= n:
        k = n - 1
    return k


@nb.njit(cache=True, nogil=True)
def bootstrap_rows(n, n_boot, forest_key, t_start, t_end):
    out = np.empty((t_end - t_start, n_boot), dtype=np.int64)
    for t in range(t_start, t_end):
        key = derive(derive(forest_key, np.uint64(t)), STREAM_BOOTSTRAP)
        for k in range(n_boot):
            out[t - t_start, k] = _uniform_index(key, k, n)
    return out


@nb.njit(cache=True, nogil=True)
def tree_keys(forest_key, t_start, t_end):
    out = np.empty(t_end - t_start, dtype=np.uint64)
    for t in range(t_start, t_end):
        out[t - t_start] = derive(derive(forest_key, np.uint64(t)), STREAM_TREE)
    return out


@nb.njit(cache=True, nogil=True)
def _grow(X, y, rows, max_depth, min_leaf, n_feat, key,
          feat, thr, left, right, value, count, depth, base):
    """Grow one tree into the node buffers starting at ``base``.

    Returns the number of nodes written.  Child indices are tree-local.
    """
    n_rows = rows.shape[0]
    d = X.shape[1]
    samples = rows.copy()
    perm = np.arange(d)
    xs = np.empty(n_rows)
    # stack: node id, start, end, depth, path
    st_node = np.empty(n_rows * 2 + 2, dtype=np.int64)
    st_start = np.empty(n_rows * 2 + 2, dtype=np.int64)
    st_end = np.empty(n_rows * 2 + 2, dtype=np.int64)
    st_depth = np.empty(n_rows * 2 + 2, dtype=np.int64)
    st_path = np.empty(n_rows * 2 + 2, dtype=np.uint64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_rows
    st_depth[0] = 0
    st_path[0] = np.uint64(1)
    sp = 1
    n_nodes = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_start[sp]
        e = st_end[sp]
        dep = st_depth[sp]
        path = st_path[sp]
        n = e - s
        tot = 0.0
        lo = np.inf
        hi = -np.inf
        for k in range(s, e):
            v = y[samples[k]]
            tot += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        j = base + node
        count[j] = n
        depth[j] = dep
        feat[j] = -1
        thr[j] = 0.0
        left[j] = -1
        right[j] = -1
        if lo == hi:
            value[j] = lo
            continue
        mean = tot / n
        if mean < lo:
            mean = lo
        elif mean > hi:
            mean = hi
        value[j] = mean
        if dep >= max_depth or n < 2 * min_leaf:
            continue

        # centred targets for a well-conditioned gain
        ctot = 0.0
        sse = 0.0
        for k in range(s, e):
            c = y[samples[k]] - mean
            ctot += c
            sse += c * c
        base_score = ctot * ctot / n
        tol = 1e-12 * sse

        if n_feat < d:
            nkey = derive(key, path)
            for q in range(d):
                perm[q] = q
            for q in range(n_feat):
                r = q + _uniform_index(nkey, q, d - q)
                tmp = perm[q]
                perm[q] = perm[r]
                perm[r] = tmp
            m = n_feat
        else:
            for q in range(d):
                perm[q] = q
            m = d

        best_gain = tol
        best_f = -1
        best_t = 0.0
        for q in range(m):
            f = perm[q]
            for k in range(n):
                xs[k] = X[samples[s + k], f]
            order = np.argsort(xs[:n], kind="mergesort")
            if xs[order[0]] == xs[order[n - 1]]:
                continue
            sl = 0.0
            for p in range(n - 1):
                sl += y[samples[s + order[p]]] - mean
                nl = p + 1
                nr = n - nl
                if nl < min_leaf:
                    continue
                if nr < min_leaf:
                    break
                xa = xs[order[p]]
                xb = xs[order[p + 1]]
                if xa == xb:
                    continue
                sr = ctot - sl
                gain = sl * sl / nl + sr * sr / nr - base_score
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    t = 0.5 * (xa + xb)
                    if t >= xb:
                        t = xa
                    best_t = t
        if best_f < 0:
            continue

        # partition samples[s:e] on x <= threshold
        i = s
        k2 = e - 1
        while i <= k2:
            if X[samples[i], best_f] <= best_t:
                i += 1
            else:
                tmp2 = samples[i]
                samples[i] = samples[k2]
                samples[k2] = tmp2
                k2 -= 1
        mid = i
        feat[j] = best_f
        thr[j] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[j] = lc
        right[j] = rc
        # push right first so the left subtree is laid out first
        st_node[sp] = rc
        st_start[sp] = mid
        st_end[sp] = e
        st_depth[sp] = dep + 1
        st_path[sp] = path * np.uint64(2) + np.uint64(1)
        sp += 1
        st_node[sp] = lc
        st_start[sp] = s
        st_end[sp] = mid
        st_depth[sp] = dep + 1
        st_path[sp] = path * np.uint64(2)
        sp += 1
    return n_nodes


@nb.njit(cache=True, nogil=True)
def grow_many(X, y, rows2d, keys, max_depth, min_leaf, n_feat):
    """Grow one tree per row of ``rows2d``; returns concatenated node arrays."""
    T = rows2d.shape[0]
    nb_rows = rows2d.shape[1]
    cap = T * (2 * nb_rows + 1)
    feat = np.empty(cap, dtype=np.int64)
    thr = np.empty(cap)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    value = np.empty(cap)
    count = np.empty(cap, dtype=np.int64)
    depth = np.empty(cap, dtype=np.int64)
    offsets = np.zeros(T + 1, dtype=np.int64)
    base = 0
    for t in range(T):
        k = _grow(X, y, rows2d[t], max_depth, min_leaf, n_feat, keys[t],
                  feat, thr, left, right, value, count, depth, base)
        base += k
        offsets[t + 1] = base
    return (feat[:base].copy(), thr[:base].copy(), left[:base].copy(), right[:base].copy(),
            value[:base].copy(), count[:base].copy(), depth[:base].copy(), offsets)


@nb.njit(cache=True, nogil=True)
def predict_trees(feat, thr, left, right, value, depth, offsets, X, depth_cap):
    """Per-tree predictions, shape (n_trees, n_rows)."""
    T = offsets.shape[0] - 1
    m = X.shape[0]
    out = np.empty((T, m))
    for t in range(T):
        b = offsets[t]
        for i in range(m):
            node = 0
            while left[b + node] >= 0 and depth[b + node] < depth_cap:
                if X[i, feat[b + node]] <= thr[b + node]:
                    node = left[b + node]
                else:
                    node = right[b + node]
            out[t, i] = value[b + node]
    return out


@nb.njit(cache=True, nogil=True)
def predict_trees_multi_cap(feat, thr, left, right, value, depth, offsets, X, caps):
    """Per-tree predictions for several depth caps, shape (n_caps, n_trees, n_rows)."""
    T = offsets.shape[0] - 1
    m = X.shape[0]
    nc = caps.shape[0]
    out = np.empty((nc, T, m))
    for t in range(T):
        b = offsets[t]
        for i in range(m):
            node = 0
            dep = 0
            c = 0
            # caps are ascending; record the value at each cap crossing
            while True:
                while c < nc and caps[c] <= dep:
                    out[c, t, i] = value[b + node]
                    c += 1
                if c == nc or left[b + node] < 0:
                    break
                if X[i, feat[b + node]] <= thr[b + node]:
                    node = left[b + node]
                else:
                    node = right[b + node]
                dep += 1
            while c < nc:
                out[c, t, i] = value[b + node]
                c += 1
    return out
