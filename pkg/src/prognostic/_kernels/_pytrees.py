"""Pure-numpy tree kernels.

Reference implementation of the compiled core in ``_ctrees.pyx``. Both
produce identical trees: candidate order, tie-breaking and the order of
every floating-point reduction are the same (running sums via ``cumsum``
and ``bincount``, never pairwise ``sum``).

Conventions shared with the compiled core
-----------------------------------------
codes
    uint8 matrix of histogram bins, ``255`` marks missing. A sample goes
    left at cut ``c`` iff its code is ``<= c`` (or it is missing and the
    node's ``missing_left`` flag is set).
rows
    Bootstrap or subsample row indices, sorted by time index for survival
    trees. Node segments stay sorted because partitioning is stable.
node arrays
    ``feature`` (-1 at leaves), ``cut``, ``missing_left``, ``left``,
    ``right``. Nodes are numbered in creation order; the left child is
    expanded first.
"""

import numpy as np

MISSING = 255
MASK64 = 0xFFFFFFFFFFFFFFFF


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & MASK64

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def draw_features(rng, p, mtry):
    """Partial Fisher-Yates draw of ``mtry`` of ``p`` features, returned sorted."""
    if mtry >= p:
        return list(range(p))
    perm = list(range(p))
    for i in range(mtry):
        j = i + rng.next() % (p - i)
        perm[i], perm[j] = perm[j], perm[i]
    return sorted(perm[:mtry])


def _seq_sum(a):
    return float(np.cumsum(a)[-1]) if len(a) else 0.0


def _risk_index(t, ev):
    """k(i): number of distinct node event times <= T_i, for a time-sorted segment."""
    n = len(t)
    starts = np.flatnonzero(np.concatenate([[True], t[1:] != t[:-1]]))
    group_ev = np.add.reduceat(ev, starts) > 0
    group_k = np.cumsum(group_ev)
    sizes = np.diff(np.append(starts, n))
    return np.repeat(group_k, sizes).astype(np.int64), int(group_k[-1]) if n else 0


def _suffix_after(counts):
    """Y[..., j] = sum over k > j of counts[..., k], for j = 0..K-1."""
    rev = np.cumsum(counts[..., :0:-1], axis=-1)
    return rev[..., ::-1]


def _logrank_stats(nLk, eLk, n_k, e_k):
    """Standardised log-rank statistic for each row of the (candidates, K+1) count arrays."""
    YL = _suffix_after(nLk).astype(float)
    Y = _suffix_after(n_k).astype(float)
    dL = eLk[..., 1:].astype(float)
    d = e_k[1:].astype(float)
    num_terms = dL - YL * d / Y
    with np.errstate(divide="ignore", invalid="ignore"):
        var_terms = (YL / Y) * (1.0 - YL / Y) * ((Y - d) / (Y - 1.0)) * d
    var_terms = np.where(Y > 1, var_terms, 0.0)
    num = np.cumsum(num_terms, axis=-1)[..., -1]
    var = np.cumsum(var_terms, axis=-1)[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.abs(num) / np.sqrt(var)
    return np.where(var > 0, stat, 0.0)


def logrank_statistic(time_left, event_left, time_right, event_right):
    """Two-sample standardised log-rank statistic (absolute value)."""
    t = np.concatenate([time_left, time_right]).astype(float)
    e = np.concatenate([event_left, event_right]).astype(np.int64)
    side = np.concatenate([np.ones(len(time_left), int), np.zeros(len(time_right), int)])
    order = np.argsort(t, kind="stable")
    t, e, side = t[order], e[order], side[order]
    if e.sum() == 0 or len(time_left) == 0 or len(time_right) == 0:
        return 0.0
    k, K = _risk_index(t, e)
    n_k = np.bincount(k, minlength=K + 1)
    e_k = np.bincount(k, weights=e, minlength=K + 1).astype(np.int64)
    nL = np.bincount(k[side == 1], minlength=K + 1)
    eL = np.bincount(k[side == 1], weights=e[side == 1], minlength=K + 1).astype(np.int64)
    return float(_logrank_stats(nL[None], eL[None], n_k, e_k)[0])


def grow_survival_tree(codes, nbins, rows, tidx, event, mtry, nodesize, rule, seed):
    """Grow one survival tree; ``rule`` 0 is log-rank, 1 the log-rank score test."""
    codes = np.asarray(codes)
    rows = np.array(rows, dtype=np.int64)
    tidx = np.asarray(tidx, dtype=np.int64)
    event = np.asarray(event, dtype=np.int64)
    p = codes.shape[1]
    rng = SplitMix64(seed)

    feature, cut, miss_left, left, right = [], [], [], [], []
    leaf_start, leaf_len, node_n = [], [], []
    leaf_tidx, leaf_H = [], []

    def new_node():
        for arr, v in ((feature, -1), (cut, -1), (miss_left, 0), (left, -1), (right, -1),
                       (leaf_start, -1), (leaf_len, 0), (node_n, 0)):
            arr.append(v)
        return len(feature) - 1

    new_node()
    stack = [(0, 0, len(rows))]
    while stack:
        node, start, end = stack.pop()
        seg = rows[start:end]
        n = end - start
        node_n[node] = n
        t = tidx[seg]
        ev = event[seg]
        k, K = _risk_index(t, ev)
        n_k = np.bincount(k, minlength=K + 1)
        e_k = np.bincount(k, weights=ev, minlength=K + 1).astype(np.int64)
        nev = int(ev.sum())

        best = 0.0
        best_f = best_c = best_m = -1
        if n >= 2 * nodesize and nev > 0:
            if rule == 1:
                Y = _suffix_after(n_k).astype(float)
                d = e_k[1:].astype(float)
                H = np.concatenate([[0.0], np.cumsum(d / Y)])
                a = ev - H[k]
                abar = _seq_sum(a) / n
                s2 = _seq_sum((a - abar) ** 2) / (n - 1)
            for f in draw_features(rng, p, mtry):
                nb = int(nbins[f])
                if nb < 1:
                    continue
                b = codes[seg, f].astype(np.int64)
                b[b == MISSING] = nb
                cnt_b = np.bincount(b, minlength=nb + 1)
                nM = int(cnt_b[nb])
                nL0 = np.cumsum(cnt_b[:nb])
                stats = np.zeros((nb, 2))
                if rule == 0:
                    cnt = np.bincount(b * (K + 1) + k, minlength=(nb + 1) * (K + 1)).reshape(nb + 1, K + 1)
                    evc = np.bincount(b * (K + 1) + k, weights=ev, minlength=(nb + 1) * (K + 1))
                    evc = evc.reshape(nb + 1, K + 1).astype(np.int64)
                    cumL = np.cumsum(cnt[:nb], axis=0)
                    cumE = np.cumsum(evc[:nb], axis=0)
                    for m in (0, 1):
                        stats[:, m] = _logrank_stats(cumL + m * cnt[nb], cumE + m * evc[nb], n_k, e_k)
                else:
                    sb = np.bincount(b, weights=a, minlength=nb + 1)
                    run = np.cumsum(sb[:nb])
                    for m in (0, 1):
                        SL = run + sb[nb] if m else run
                        nL = (nL0 + m * nM).astype(float)
                        den = nL * (1.0 - nL / n) * s2
                        with np.errstate(divide="ignore", invalid="ignore"):
                            st = np.abs(SL - nL * abar) / np.sqrt(den)
                        stats[:, m] = np.where(den > 0, st, 0.0)
                for m in (0, 1):
                    nL = nL0 + m * nM
                    ok = (nL >= nodesize) & (n - nL >= nodesize)
                    if nM == 0:
                        ok &= (nL0 >= n - nL0) == bool(m)
                    stats[~ok, m] = 0.0
                flat = int(np.argmax(stats))
                if stats.flat[flat] > best:
                    best = float(stats.flat[flat])
                    best_f, best_c, best_m = f, flat // 2, flat % 2

        if best > 0:
            code = codes[seg, best_f]
            go_left = np.where(code == MISSING, best_m == 1, code <= best_c)
            rows[start:end] = np.concatenate([seg[go_left], seg[~go_left]])
            mid = start + int(go_left.sum())
            feature[node], cut[node], miss_left[node] = best_f, best_c, best_m
            lo = new_node()
            hi = new_node()
            left[node], right[node] = lo, hi
            stack.append((hi, mid, end))
            stack.append((lo, start, mid))
        else:
            # Nelson-Aalen over the node's event times
            if K > 0:
                Y = _suffix_after(n_k).astype(float)
                d = e_k[1:].astype(float)
                H = np.cumsum(d / Y)
                ev_t = np.unique(t[ev == 1])
                leaf_start[node] = len(leaf_tidx)
                leaf_len[node] = K
                leaf_tidx.extend(ev_t.tolist())
                leaf_H.extend(H.tolist())
            else:
                leaf_start[node] = len(leaf_tidx)

    i32 = lambda x: np.asarray(x, dtype=np.int32)
    return {
        "feature": i32(feature),
        "cut": i32(cut),
        "missing_left": np.asarray(miss_left, dtype=np.int8),
        "left": i32(left),
        "right": i32(right),
        "leaf_start": i32(leaf_start),
        "leaf_len": i32(leaf_len),
        "node_n": i32(node_n),
        "leaf_tidx": i32(leaf_tidx),
        "leaf_H": np.asarray(leaf_H, dtype=float),
    }


def grow_boost_tree(codes, nbins, rows, grad, hess, features, max_depth, lam, min_child_weight, eta):
    """Grow one depth-limited regression tree on gradient statistics."""
    codes = np.asarray(codes)
    rows = np.array(rows, dtype=np.int64)
    grad = np.asarray(grad, dtype=float)
    hess = np.asarray(hess, dtype=float)

    feature, cut, miss_left, left, right, value = [], [], [], [], [], []

    def new_node():
        for arr, v in ((feature, -1), (cut, -1), (miss_left, 0), (left, -1), (right, -1), (value, 0.0)):
            arr.append(v)
        return len(feature) - 1

    new_node()
    stack = [(0, 0, len(rows), 0)]
    while stack:
        node, start, end, depth = stack.pop()
        seg = rows[start:end]
        n = end - start
        g = grad[seg]
        h = hess[seg]
        Gn = _seq_sum(g)
        Hn = _seq_sum(h)
        best = 0.0
        best_f = best_c = best_m = -1
        if depth < max_depth and n >= 2:
            parent = Gn * Gn / (Hn + lam)
            for f in features:
                nb = int(nbins[f])
                if nb < 1:
                    continue
                b = codes[seg, f].astype(np.int64)
                b[b == MISSING] = nb
                cb = np.bincount(b, minlength=nb + 1)
                gb = np.bincount(b, weights=g, minlength=nb + 1)
                hb = np.bincount(b, weights=h, minlength=nb + 1)
                nM = int(cb[nb])
                nL0 = np.cumsum(cb[:nb])
                GL0 = np.cumsum(gb[:nb])
                HL0 = np.cumsum(hb[:nb])
                gains = np.zeros((nb, 2))
                for m in (0, 1):
                    GL = GL0 + gb[nb] if m else GL0
                    HL = HL0 + hb[nb] if m else HL0
                    GR = Gn - GL
                    HR = Hn - HL
                    nL = nL0 + m * nM
                    gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent
                    ok = (nL >= 1) & (n - nL >= 1) & (HL >= min_child_weight) & (HR >= min_child_weight)
                    if nM == 0:
                        ok &= (nL0 >= n - nL0) == bool(m)
                    gains[:, m] = np.where(ok, gain, 0.0)
                flat = int(np.argmax(gains))
                if gains.flat[flat] > best:
                    best = float(gains.flat[flat])
                    best_f, best_c, best_m = f, flat // 2, flat % 2
        if best > 0:
            code = codes[seg, best_f]
            go_left = np.where(code == MISSING, best_m == 1, code <= best_c)
            rows[start:end] = np.concatenate([seg[go_left], seg[~go_left]])
            mid = start + int(go_left.sum())
            feature[node], cut[node], miss_left[node] = best_f, best_c, best_m
            lo = new_node()
            hi = new_node()
            left[node], right[node] = lo, hi
            stack.append((hi, mid, end, depth + 1))
            stack.append((lo, start, mid, depth + 1))
        else:
            value[node] = -Gn / (Hn + lam) * eta

    i32 = lambda x: np.asarray(x, dtype=np.int32)
    return {
        "feature": i32(feature),
        "cut": i32(cut),
        "missing_left": np.asarray(miss_left, dtype=np.int8),
        "left": i32(left),
        "right": i32(right),
        "value": np.asarray(value, dtype=float),
    }


def apply_trees(codes, feature, cut, missing_left, left, right, roots):
    """Terminal node (global index) reached by every row in every tree: shape (n, len(roots))."""
    codes = np.asarray(codes)
    n = codes.shape[0]
    out = np.empty((n, len(roots)), dtype=np.int32)
    rows = np.arange(n)
    for j, root in enumerate(roots):
        node = np.full(n, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            idx = rows[active]
            nd = node[idx]
            c = codes[idx, feature[nd]]
            go_left = np.where(c == MISSING, missing_left[nd] == 1, c <= cut[nd])
            node[idx] = np.where(go_left, left[nd], right[nd])
            active = feature[node] >= 0
        out[:, j] = node
    return out
