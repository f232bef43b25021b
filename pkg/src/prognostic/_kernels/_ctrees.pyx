# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree kernels.

Loop-for-loop counterpart of ``_pytrees``; see that module for the shared
conventions. Every floating-point reduction runs left to right so results
match the numpy reference bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt
from libc.stdint cimport int8_t, int32_t, int64_t, uint8_t, uint64_t
from libc.stdlib cimport free, malloc
from libc.string cimport memset

cnp.import_array()

DEF MISSING = 255


cdef inline uint64_t splitmix_next(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef int draw_features(uint64_t* state, int p, int mtry, int* perm, int* out) noexcept nogil:
    cdef int i, j, tmp, m
    if mtry >= p:
        for i in range(p):
            out[i] = i
        return p
    for i in range(p):
        perm[i] = i
    for i in range(mtry):
        j = i + <int>(splitmix_next(state) % <uint64_t>(p - i))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    # insertion sort of the drawn prefix
    for i in range(mtry):
        out[i] = perm[i]
    for i in range(1, mtry):
        tmp = out[i]
        j = i - 1
        while j >= 0 and out[j] > tmp:
            out[j + 1] = out[j]
            j -= 1
        out[j + 1] = tmp
    return mtry


cdef double logrank_stat(const int64_t* nL, const int64_t* eL, const int64_t* nk, const int64_t* ek,
                         int K, int64_t* YLbuf, int64_t* Ybuf) noexcept nogil:
    cdef int j
    cdef int64_t sL = 0, s = 0
    cdef double num = 0.0, var = 0.0, YL, Y, d, dL
    for j in range(K - 1, -1, -1):
        sL += nL[j + 1]
        s += nk[j + 1]
        YLbuf[j] = sL
        Ybuf[j] = s
    for j in range(K):
        YL = <double>YLbuf[j]
        Y = <double>Ybuf[j]
        dL = <double>eL[j + 1]
        d = <double>ek[j + 1]
        num = num + (dL - YL * d / Y)
    for j in range(K):
        Y = <double>Ybuf[j]
        if Ybuf[j] > 1:
            YL = <double>YLbuf[j]
            d = <double>ek[j + 1]
            var = var + (YL / Y) * (1.0 - YL / Y) * ((Y - d) / (Y - 1.0)) * d
    if var > 0:
        return fabs(num) / sqrt(var)
    return 0.0


cdef struct SurvBuffers:
    int64_t* kidx
    double* score
    int64_t* nk
    int64_t* ek
    int64_t* cnt
    int64_t* evc
    int64_t* cumL
    int64_t* cumE
    int64_t* tmpL
    int64_t* tmpE
    int64_t* YLbuf
    int64_t* Ybuf
    double* sb
    int64_t* cb
    int64_t* tmp_rows
    int* perm
    int* feats


def grow_survival_tree(const uint8_t[:, :] codes, const int32_t[:] nbins, rows_in,
                       const int64_t[:] tidx, const int64_t[:] event,
                       int mtry, int nodesize, int rule, seed):
    cdef int64_t[:] rows = np.array(rows_in, dtype=np.int64)
    cdef int64_t m = rows.shape[0]
    cdef int p = codes.shape[1]
    cdef int max_bins = 1
    cdef int f
    for f in range(p):
        if nbins[f] > max_bins:
            max_bins = nbins[f]
    cdef int64_t cap = 2 * m + 1

    feature = np.full(cap, -1, dtype=np.int32)
    cut = np.full(cap, -1, dtype=np.int32)
    miss = np.zeros(cap, dtype=np.int8)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    leaf_start = np.full(cap, -1, dtype=np.int32)
    leaf_len = np.zeros(cap, dtype=np.int32)
    node_n = np.zeros(cap, dtype=np.int32)
    leaf_tidx = np.zeros(m + 1, dtype=np.int32)
    leaf_H = np.zeros(m + 1, dtype=np.float64)
    cdef int32_t[:] v_feature = feature
    cdef int32_t[:] v_cut = cut
    cdef int8_t[:] v_miss = miss
    cdef int32_t[:] v_left = left
    cdef int32_t[:] v_right = right
    cdef int32_t[:] v_lstart = leaf_start
    cdef int32_t[:] v_llen = leaf_len
    cdef int32_t[:] v_nn = node_n
    cdef int32_t[:] v_ltidx = leaf_tidx
    cdef double[:] v_lH = leaf_H

    cdef uint64_t state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef int64_t n_nodes = 1, n_leaf = 0
    cdef int64_t* st_node = <int64_t*>malloc(cap * sizeof(int64_t))
    cdef int64_t* st_start = <int64_t*>malloc(cap * sizeof(int64_t))
    cdef int64_t* st_end = <int64_t*>malloc(cap * sizeof(int64_t))
    cdef SurvBuffers B
    cdef int64_t KB = m + 2
    B.kidx = <int64_t*>malloc(m * sizeof(int64_t) + 8)
    B.score = <double*>malloc(m * sizeof(double) + 8)
    B.nk = <int64_t*>malloc(KB * sizeof(int64_t))
    B.ek = <int64_t*>malloc(KB * sizeof(int64_t))
    B.cnt = <int64_t*>malloc((max_bins + 1) * KB * sizeof(int64_t))
    B.evc = <int64_t*>malloc((max_bins + 1) * KB * sizeof(int64_t))
    B.cumL = <int64_t*>malloc(KB * sizeof(int64_t))
    B.cumE = <int64_t*>malloc(KB * sizeof(int64_t))
    B.tmpL = <int64_t*>malloc(KB * sizeof(int64_t))
    B.tmpE = <int64_t*>malloc(KB * sizeof(int64_t))
    B.YLbuf = <int64_t*>malloc(KB * sizeof(int64_t))
    B.Ybuf = <int64_t*>malloc(KB * sizeof(int64_t))
    B.sb = <double*>malloc((max_bins + 1) * sizeof(double))
    B.cb = <int64_t*>malloc((max_bins + 1) * sizeof(int64_t))
    B.tmp_rows = <int64_t*>malloc(m * sizeof(int64_t) + 8)
    B.perm = <int*>malloc(p * sizeof(int) + 8)
    B.feats = <int*>malloc(p * sizeof(int) + 8)

    cdef int64_t sp = 0, node, start, end, n, pos, g, q, nev, K, t0
    cdef int has_ev, nf, fi, nb, b, c, mm, best_f, best_c, best_m, code, j
    cdef int64_t nM, nL0, nL, kk, lo, hi, mid, w
    cdef double best, stat, H, abar, s2, acc, SL, run, den, nLd, Yd
    cdef bint ok

    with nogil:
        st_node[0] = 0
        st_start[0] = 0
        st_end[0] = m
        sp = 1
        while sp > 0:
            sp -= 1
            node = st_node[sp]
            start = st_start[sp]
            end = st_end[sp]
            n = end - start
            v_nn[node] = <int32_t>n

            # risk index k(i) over the time-sorted segment
            K = 0
            nev = 0
            pos = start
            while pos < end:
                t0 = tidx[rows[pos]]
                g = pos
                has_ev = 0
                while g < end and tidx[rows[g]] == t0:
                    if event[rows[g]]:
                        has_ev = 1
                        nev += 1
                    g += 1
                if has_ev:
                    K += 1
                for q in range(pos, g):
                    B.kidx[q - start] = K
                pos = g
            memset(B.nk, 0, (K + 1) * sizeof(int64_t))
            memset(B.ek, 0, (K + 1) * sizeof(int64_t))
            for q in range(n):
                B.nk[B.kidx[q]] += 1
                B.ek[B.kidx[q]] += event[rows[start + q]]

            best = 0.0
            best_f = -1
            best_c = -1
            best_m = -1
            if n >= 2 * nodesize and nev > 0:
                if rule == 1:
                    # Nelson-Aalen at each k, then scores a_i = delta_i - H(T_i)
                    kk = 0
                    for j in range(K - 1, -1, -1):
                        kk += B.nk[j + 1]
                        B.Ybuf[j] = kk
                    H = 0.0
                    j = 0
                    for q in range(n):
                        # segment is time-sorted, so k(i) is nondecreasing
                        while j < B.kidx[q]:
                            H = H + (<double>B.ek[j + 1]) / (<double>B.Ybuf[j])
                            j += 1
                        B.score[q] = <double>event[rows[start + q]] - H
                    acc = 0.0
                    for q in range(n):
                        acc = acc + B.score[q]
                    abar = acc / <double>n
                    s2 = 0.0
                    for q in range(n):
                        s2 = s2 + (B.score[q] - abar) * (B.score[q] - abar)
                    s2 = s2 / <double>(n - 1)
                nf = draw_features(&state, p, mtry, B.perm, B.feats)
                for fi in range(nf):
                    f = B.feats[fi]
                    nb = nbins[f]
                    if nb < 1:
                        continue
                    memset(B.cb, 0, (nb + 1) * sizeof(int64_t))
                    if rule == 0:
                        memset(B.cnt, 0, (nb + 1) * (K + 1) * sizeof(int64_t))
                        memset(B.evc, 0, (nb + 1) * (K + 1) * sizeof(int64_t))
                        for q in range(n):
                            code = codes[rows[start + q], f]
                            b = nb if code == MISSING else code
                            B.cb[b] += 1
                            B.cnt[b * (K + 1) + B.kidx[q]] += 1
                            B.evc[b * (K + 1) + B.kidx[q]] += event[rows[start + q]]
                    else:
                        for b in range(nb + 1):
                            B.sb[b] = 0.0
                        for q in range(n):
                            code = codes[rows[start + q], f]
                            b = nb if code == MISSING else code
                            B.cb[b] += 1
                            B.sb[b] = B.sb[b] + B.score[q]
                    nM = B.cb[nb]
                    nL0 = 0
                    run = 0.0
                    if rule == 0:
                        memset(B.cumL, 0, (K + 1) * sizeof(int64_t))
                        memset(B.cumE, 0, (K + 1) * sizeof(int64_t))
                    for c in range(nb):
                        nL0 += B.cb[c]
                        if rule == 0:
                            for j in range(K + 1):
                                B.cumL[j] += B.cnt[c * (K + 1) + j]
                                B.cumE[j] += B.evc[c * (K + 1) + j]
                        else:
                            run = run + B.sb[c]
                        for mm in range(2):
                            nL = nL0 + mm * nM
                            ok = nL >= nodesize and n - nL >= nodesize
                            if nM == 0:
                                ok = ok and ((nL0 >= n - nL0) == (mm == 1))
                            if not ok:
                                continue
                            if rule == 0:
                                if mm == 1:
                                    for j in range(K + 1):
                                        B.tmpL[j] = B.cumL[j] + B.cnt[nb * (K + 1) + j]
                                        B.tmpE[j] = B.cumE[j] + B.evc[nb * (K + 1) + j]
                                    stat = logrank_stat(B.tmpL, B.tmpE, B.nk, B.ek, <int>K, B.YLbuf, B.Ybuf)
                                else:
                                    stat = logrank_stat(B.cumL, B.cumE, B.nk, B.ek, <int>K, B.YLbuf, B.Ybuf)
                            else:
                                SL = run + B.sb[nb] if mm == 1 else run
                                nLd = <double>nL
                                den = nLd * (1.0 - nLd / <double>n) * s2
                                if den > 0:
                                    stat = fabs(SL - nLd * abar) / sqrt(den)
                                else:
                                    stat = 0.0
                            if stat > best:
                                best = stat
                                best_f = f
                                best_c = c
                                best_m = mm

            if best > 0:
                # stable partition of the segment
                lo = 0
                for q in range(n):
                    code = codes[rows[start + q], best_f]
                    if (code == MISSING and best_m == 1) or (code != MISSING and code <= best_c):
                        B.tmp_rows[lo] = rows[start + q]
                        lo += 1
                mid = lo
                for q in range(n):
                    code = codes[rows[start + q], best_f]
                    if not ((code == MISSING and best_m == 1) or (code != MISSING and code <= best_c)):
                        B.tmp_rows[lo] = rows[start + q]
                        lo += 1
                for q in range(n):
                    rows[start + q] = B.tmp_rows[q]
                v_feature[node] = best_f
                v_cut[node] = best_c
                v_miss[node] = best_m
                v_left[node] = <int32_t>n_nodes
                v_right[node] = <int32_t>(n_nodes + 1)
                st_node[sp] = n_nodes + 1
                st_start[sp] = start + mid
                st_end[sp] = end
                sp += 1
                st_node[sp] = n_nodes
                st_start[sp] = start
                st_end[sp] = start + mid
                sp += 1
                n_nodes += 2
            else:
                v_lstart[node] = <int32_t>n_leaf
                if K > 0:
                    kk = 0
                    for j in range(K - 1, -1, -1):
                        kk += B.nk[j + 1]
                        B.Ybuf[j] = kk
                    H = 0.0
                    j = 0
                    for q in range(n):
                        if event[rows[start + q]] and B.kidx[q] > j:
                            # first event at this risk index: record its time
                            Yd = <double>B.Ybuf[j]
                            H = H + (<double>B.ek[j + 1]) / Yd
                            v_ltidx[n_leaf + j] = <int32_t>tidx[rows[start + q]]
                            v_lH[n_leaf + j] = H
                            j += 1
                    v_llen[node] = <int32_t>K
                    n_leaf += K

    free(st_node); free(st_start); free(st_end)
    free(B.kidx); free(B.score); free(B.nk); free(B.ek); free(B.cnt); free(B.evc)
    free(B.cumL); free(B.cumE); free(B.tmpL); free(B.tmpE); free(B.YLbuf); free(B.Ybuf)
    free(B.sb); free(B.cb); free(B.tmp_rows); free(B.perm); free(B.feats)

    return {
        "feature": feature[:n_nodes],
        "cut": cut[:n_nodes],
        "missing_left": miss[:n_nodes],
        "left": left[:n_nodes],
        "right": right[:n_nodes],
        "leaf_start": leaf_start[:n_nodes],
        "leaf_len": leaf_len[:n_nodes],
        "node_n": node_n[:n_nodes],
        "leaf_tidx": leaf_tidx[:n_leaf],
        "leaf_H": leaf_H[:n_leaf],
    }


def grow_boost_tree(const uint8_t[:, :] codes, const int32_t[:] nbins, rows_in,
                    const double[:] grad, const double[:] hess, features,
                    int max_depth, double lam, double min_child_weight, double eta):
    cdef int64_t[:] rows = np.array(rows_in, dtype=np.int64)
    cdef int32_t[:] feats = np.asarray(features, dtype=np.int32)
    cdef int nfeat = feats.shape[0]
    cdef int64_t m = rows.shape[0]
    cdef int p = codes.shape[1]
    cdef int max_bins = 1
    cdef int f
    for f in range(p):
        if nbins[f] > max_bins:
            max_bins = nbins[f]
    cdef int64_t cap = (1 << (max_depth + 1)) + 1
    if cap > 2 * m + 1:
        cap = 2 * m + 1

    feature = np.full(cap, -1, dtype=np.int32)
    cut = np.full(cap, -1, dtype=np.int32)
    miss = np.zeros(cap, dtype=np.int8)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    cdef int32_t[:] v_feature = feature
    cdef int32_t[:] v_cut = cut
    cdef int8_t[:] v_miss = miss
    cdef int32_t[:] v_left = left
    cdef int32_t[:] v_right = right
    cdef double[:] v_value = value

    cdef int64_t* st_node = <int64_t*>malloc(cap * sizeof(int64_t))
    cdef int64_t* st_start = <int64_t*>malloc(cap * sizeof(int64_t))
    cdef int64_t* st_end = <int64_t*>malloc(cap * sizeof(int64_t))
    cdef int* st_depth = <int*>malloc(cap * sizeof(int))
    cdef double* gb = <double*>malloc((max_bins + 1) * sizeof(double))
    cdef double* hb = <double*>malloc((max_bins + 1) * sizeof(double))
    cdef int64_t* cb = <int64_t*>malloc((max_bins + 1) * sizeof(int64_t))
    cdef int64_t* tmp_rows = <int64_t*>malloc(m * sizeof(int64_t) + 8)

    cdef int64_t sp, node, start, end, n, q, nM, nL0, nL, lo, mid, n_nodes = 1
    cdef int depth, fi, nb, b, c, mm, code, best_f, best_c, best_m
    cdef double Gn, Hn, parent, best, GL0, HL0, GL, HL, GR, HR, gain
    cdef bint ok

    with nogil:
        st_node[0] = 0
        st_start[0] = 0
        st_end[0] = m
        st_depth[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = st_node[sp]
            start = st_start[sp]
            end = st_end[sp]
            depth = st_depth[sp]
            n = end - start
            Gn = 0.0
            Hn = 0.0
            for q in range(start, end):
                Gn = Gn + grad[rows[q]]
            for q in range(start, end):
                Hn = Hn + hess[rows[q]]
            best = 0.0
            best_f = -1
            best_c = -1
            best_m = -1
            if depth < max_depth and n >= 2:
                parent = Gn * Gn / (Hn + lam)
                for fi in range(nfeat):
                    f = feats[fi]
                    nb = nbins[f]
                    if nb < 1:
                        continue
                    for b in range(nb + 1):
                        gb[b] = 0.0
                        hb[b] = 0.0
                        cb[b] = 0
                    for q in range(start, end):
                        code = codes[rows[q], f]
                        b = nb if code == MISSING else code
                        cb[b] += 1
                        gb[b] = gb[b] + grad[rows[q]]
                        hb[b] = hb[b] + hess[rows[q]]
                    nM = cb[nb]
                    nL0 = 0
                    GL0 = 0.0
                    HL0 = 0.0
                    for c in range(nb):
                        nL0 += cb[c]
                        GL0 = GL0 + gb[c]
                        HL0 = HL0 + hb[c]
                        for mm in range(2):
                            if mm == 1:
                                GL = GL0 + gb[nb]
                                HL = HL0 + hb[nb]
                            else:
                                GL = GL0
                                HL = HL0
                            GR = Gn - GL
                            HR = Hn - HL
                            nL = nL0 + mm * nM
                            ok = nL >= 1 and n - nL >= 1 and HL >= min_child_weight and HR >= min_child_weight
                            if nM == 0:
                                ok = ok and ((nL0 >= n - nL0) == (mm == 1))
                            if not ok:
                                continue
                            gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent
                            if gain > best:
                                best = gain
                                best_f = f
                                best_c = c
                                best_m = mm
            if best > 0:
                lo = 0
                for q in range(start, end):
                    code = codes[rows[q], best_f]
                    if (code == MISSING and best_m == 1) or (code != MISSING and code <= best_c):
                        tmp_rows[lo] = rows[q]
                        lo += 1
                mid = lo
                for q in range(start, end):
                    code = codes[rows[q], best_f]
                    if not ((code == MISSING and best_m == 1) or (code != MISSING and code <= best_c)):
                        tmp_rows[lo] = rows[q]
                        lo += 1
                for q in range(n):
                    rows[start + q] = tmp_rows[q]
                v_feature[node] = best_f
                v_cut[node] = best_c
                v_miss[node] = best_m
                v_left[node] = <int32_t>n_nodes
                v_right[node] = <int32_t>(n_nodes + 1)
                st_node[sp] = n_nodes + 1
                st_start[sp] = start + mid
                st_end[sp] = end
                st_depth[sp] = depth + 1
                sp += 1
                st_node[sp] = n_nodes
                st_start[sp] = start
                st_end[sp] = start + mid
                st_depth[sp] = depth + 1
                sp += 1
                n_nodes += 2
            else:
                v_value[node] = -Gn / (Hn + lam) * eta

    free(st_node); free(st_start); free(st_end); free(st_depth)
    free(gb); free(hb); free(cb); free(tmp_rows)
    return {
        "feature": feature[:n_nodes],
        "cut": cut[:n_nodes],
        "missing_left": miss[:n_nodes],
        "left": left[:n_nodes],
        "right": right[:n_nodes],
        "value": value[:n_nodes],
    }


def apply_trees(const uint8_t[:, :] codes, const int32_t[:] feature, const int32_t[:] cut,
                const int8_t[:] missing_left, const int32_t[:] left, const int32_t[:] right, roots):
    cdef int64_t[:] r = np.asarray(roots, dtype=np.int64)
    cdef int64_t n = codes.shape[0]
    cdef int64_t T = r.shape[0]
    out = np.empty((n, T), dtype=np.int32)
    cdef int32_t[:, :] v = out
    cdef int64_t i, j, node
    cdef int code
    with nogil:
        for i in range(n):
            for j in range(T):
                node = r[j]
                while feature[node] >= 0:
                    code = codes[i, feature[node]]
                    if code == MISSING:
                        node = left[node] if missing_left[node] else right[node]
                    elif code <= cut[node]:
                        node = left[node]
                    else:
                        node = right[node]
                v[i, j] = <int32_t>node
    return out


def logrank_statistic(time_left, event_left, time_right, event_right):
    from . import _pytrees
    return _pytrees.logrank_statistic(time_left, event_left, time_right, event_right)
