# cython: language_level=3
"""Compiled BART kernels: one backfitting sweep over all trees, and forest prediction.

Trees are stored heap-indexed (children of node ``k`` are ``2k+1`` and ``2k+2``).
Node codes in ``var``: ``>= 0`` split variable, ``-1`` leaf, ``-2`` absent.
Decision rule at a split: go left iff ``codes[var, i] <= cut``.

The random stream is splitmix64 with Box-Muller normals; ``_bartcore_py`` replays
the identical stream so both backends produce the same chains.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport cos, log, pow, sqrt
from libc.stdint cimport int32_t, int64_t, uint64_t

cnp.import_array()

cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _next(uint64_t* s) noexcept nogil:
    s[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    cdef uint64_t z = s[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unif(uint64_t* s) noexcept nogil:
    return <double>(_next(s) >> 11) * INV_2_53


cdef inline double _normal(uint64_t* s) noexcept nogil:
    cdef double u1 = 1.0 - _unif(s)
    cdef double u2 = _unif(s)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef inline int _depth(int k) noexcept nogil:
    cdef int d = 0
    while k > 0:
        k = (k - 1) // 2
        d += 1
    return d


cdef inline double _psplit(double alpha, double beta, int d) noexcept nogil:
    return alpha * pow(1.0 + d, -beta)


cdef inline double _ll(double n, double s, double sigma2, double tau2) noexcept nogil:
    return -0.5 * log(1.0 + n * tau2 / sigma2) + 0.5 * s * s * tau2 / (sigma2 * (sigma2 + n * tau2))


cdef int _ranges(const int32_t* var_row, const int32_t* cut_row, int k,
                 const int32_t[::1] ncut, int32_t[::1] lo, int32_t[::1] hi,
                 int32_t[::1] valid) noexcept nogil:
    cdef int p = ncut.shape[0]
    cdef int v, a, par, vv, cc, nvalid = 0
    for v in range(p):
        lo[v] = 0
        hi[v] = ncut[v] - 1
    a = k
    while a > 0:
        par = (a - 1) // 2
        vv = var_row[par]
        cc = cut_row[par]
        if a == 2 * par + 1:
            if cc - 1 < hi[vv]:
                hi[vv] = cc - 1
        else:
            if cc + 1 > lo[vv]:
                lo[vv] = cc + 1
        a = par
    for v in range(p):
        if hi[v] >= lo[v]:
            valid[nvalid] = v
            nvalid += 1
    return nvalid


cdef inline double _child_ps(int nvalid, int side_ok, int d, int max_depth,
                             double alpha, double beta) noexcept nogil:
    # side_ok: whether the split variable keeps a usable cut range in this child
    if d + 1 >= max_depth:
        return 0.0
    if nvalid - 1 + side_ok > 0:
        return _psplit(alpha, beta, d + 1)
    return 0.0


def sweep(int32_t[:, ::1] var, int32_t[:, ::1] cut, double[:, ::1] mu,
          int32_t[::1] top, int32_t[:, ::1] leaf_of, double[::1] r,
          const int32_t[:, ::1] codes, const int32_t[::1] ncut,
          double sigma2, double tau2, double alpha, double beta,
          double p_grow, double p_prune, int max_depth, uint64_t[::1] rng):
    """Run one Metropolis-within-Gibbs pass over every tree; returns accepted moves.

    ``r`` holds the full residual ``y - sum of trees`` and is updated in place.
    Leaf sufficient statistics are row-order sums gathered while forming each
    tree's partial residual; a pruned leaf takes the sum of its two children.
    """
    cdef int m = var.shape[0]
    cdef int cap = var.shape[1]
    cdef int n = r.shape[0]
    cdef int p = ncut.shape[0]
    cdef uint64_t state = rng[0]
    cdef double[::1] part = np.empty(n, dtype=np.float64)
    cdef double[::1] lsum = np.zeros(cap, dtype=np.float64)
    cdef int64_t[::1] lcnt = np.zeros(cap, dtype=np.int64)
    cdef int32_t[::1] lo = np.empty(p, dtype=np.int32)
    cdef int32_t[::1] hi = np.empty(p, dtype=np.int32)
    cdef int32_t[::1] valid = np.empty(p, dtype=np.int32)
    cdef int j, i, k, kk, d, nl, nnog, pick, nvalid, v, c, v0, c0, left, right, q
    cdef int root_only, sib_leaf, accepted = 0
    cdef int64_t nL, nR, nL2, nR2
    cdef double sL, sR, sL2, sR2, ri, u, logr, ps, psl, psr, psl0, psr0, pg_t, pv, pm
    cdef int32_t* var_row
    cdef int32_t* cut_row
    cdef int32_t* lf
    cdef double* muj
    cdef const int32_t* cv

    with nogil:
        for j in range(m):
            var_row = &var[j, 0]
            cut_row = &cut[j, 0]
            lf = &leaf_of[j, 0]
            muj = &mu[j, 0]
            for k in range(top[j] + 1):
                lcnt[k] = 0
                lsum[k] = 0.0
            for i in range(n):
                q = lf[i]
                ri = r[i] + muj[q]
                part[i] = ri
                lcnt[q] += 1
                lsum[q] += ri

            nl = 0
            nnog = 0
            for k in range(top[j] + 1):
                if var_row[k] == -1:
                    nl += 1
                elif var_row[k] >= 0:
                    if var_row[2 * k + 1] == -1 and var_row[2 * k + 2] == -1:
                        nnog += 1
            root_only = var_row[0] == -1

            u = _unif(&state)
            if root_only or u < p_grow:
                # grow
                pick = <int>(_unif(&state) * nl)
                k = -1
                for kk in range(top[j] + 1):
                    if var_row[kk] == -1:
                        if pick == 0:
                            k = kk
                            break
                        pick -= 1
                d = _depth(k)
                if d < max_depth:
                    nvalid = _ranges(var_row, cut_row, k, ncut, lo, hi, valid)
                    if nvalid > 0:
                        v = valid[<int>(_unif(&state) * nvalid)]
                        c = lo[v] + <int>(_unif(&state) * (hi[v] - lo[v] + 1))
                        nL = 0
                        nR = 0
                        sL = 0.0
                        sR = 0.0
                        cv = &codes[v, 0]
                        for i in range(n):
                            if lf[i] == k:
                                if cv[i] <= c:
                                    nL += 1
                                    sL += part[i]
                                else:
                                    nR += 1
                                    sR += part[i]
                        psl = _child_ps(nvalid, c - 1 >= lo[v], d, max_depth, alpha, beta)
                        psr = _child_ps(nvalid, hi[v] >= c + 1, d, max_depth, alpha, beta)
                        ps = _psplit(alpha, beta, d)
                        pg_t = 1.0 if root_only else p_grow
                        sib_leaf = 0
                        if k != 0:
                            if k % 2 == 1:
                                sib_leaf = var_row[k + 1] == -1
                            else:
                                sib_leaf = var_row[k - 1] == -1
                        logr = (log(ps) + log(1.0 - psl) + log(1.0 - psr) - log(1.0 - ps)
                                + log(p_prune) - log(<double>(nnog + 1 - sib_leaf))
                                - log(pg_t) + log(<double>nl)
                                + _ll(<double>nL, sL, sigma2, tau2)
                                + _ll(<double>nR, sR, sigma2, tau2)
                                - _ll(<double>lcnt[k], lsum[k], sigma2, tau2))
                        if log(1.0 - _unif(&state)) < logr:
                            accepted += 1
                            left = 2 * k + 1
                            right = 2 * k + 2
                            var_row[k] = v
                            cut_row[k] = c
                            var_row[left] = -1
                            var_row[right] = -1
                            cut_row[left] = 0
                            cut_row[right] = 0
                            for i in range(n):
                                if lf[i] == k:
                                    if cv[i] <= c:
                                        lf[i] = left
                                    else:
                                        lf[i] = right
                            if right > top[j]:
                                top[j] = right
                            lcnt[left] = nL
                            lsum[left] = sL
                            lcnt[right] = nR
                            lsum[right] = sR
            elif u < p_grow + p_prune:
                # prune
                pick = <int>(_unif(&state) * nnog)
                k = -1
                for kk in range(top[j] + 1):
                    if var_row[kk] >= 0 and var_row[2 * kk + 1] == -1 and var_row[2 * kk + 2] == -1:
                        if pick == 0:
                            k = kk
                            break
                        pick -= 1
                d = _depth(k)
                nvalid = _ranges(var_row, cut_row, k, ncut, lo, hi, valid)
                v = var_row[k]
                c = cut_row[k]
                left = 2 * k + 1
                right = 2 * k + 2
                nL = lcnt[left]
                nR = lcnt[right]
                sL = lsum[left]
                sR = lsum[right]
                psl = _child_ps(nvalid, c - 1 >= lo[v], d, max_depth, alpha, beta)
                psr = _child_ps(nvalid, hi[v] >= c + 1, d, max_depth, alpha, beta)
                ps = _psplit(alpha, beta, d)
                pg_t = 1.0 if k == 0 else p_grow
                logr = -(log(ps) + log(1.0 - psl) + log(1.0 - psr) - log(1.0 - ps)
                         + log(p_prune) - log(<double>nnog)
                         - log(pg_t) + log(<double>(nl - 1))
                         + _ll(<double>nL, sL, sigma2, tau2)
                         + _ll(<double>nR, sR, sigma2, tau2)
                         - _ll(<double>(nL + nR), sL + sR, sigma2, tau2))
                if log(1.0 - _unif(&state)) < logr:
                    accepted += 1
                    var_row[left] = -2
                    var_row[right] = -2
                    var_row[k] = -1
                    cut_row[k] = 0
                    for i in range(n):
                        if lf[i] == left or lf[i] == right:
                            lf[i] = k
                    while top[j] > 0 and var_row[top[j]] == -2:
                        top[j] -= 1
                    lcnt[k] = nL + nR
                    lsum[k] = sL + sR
            else:
                # change
                pick = <int>(_unif(&state) * nnog)
                k = -1
                for kk in range(top[j] + 1):
                    if var_row[kk] >= 0 and var_row[2 * kk + 1] == -1 and var_row[2 * kk + 2] == -1:
                        if pick == 0:
                            k = kk
                            break
                        pick -= 1
                d = _depth(k)
                nvalid = _ranges(var_row, cut_row, k, ncut, lo, hi, valid)
                v0 = var_row[k]
                c0 = cut_row[k]
                psl0 = _child_ps(nvalid, c0 - 1 >= lo[v0], d, max_depth, alpha, beta)
                psr0 = _child_ps(nvalid, hi[v0] >= c0 + 1, d, max_depth, alpha, beta)
                v = valid[<int>(_unif(&state) * nvalid)]
                c = lo[v] + <int>(_unif(&state) * (hi[v] - lo[v] + 1))
                psl = _child_ps(nvalid, c - 1 >= lo[v], d, max_depth, alpha, beta)
                psr = _child_ps(nvalid, hi[v] >= c + 1, d, max_depth, alpha, beta)
                left = 2 * k + 1
                right = 2 * k + 2
                nL2 = 0
                nR2 = 0
                sL2 = 0.0
                sR2 = 0.0
                cv = &codes[v, 0]
                for i in range(n):
                    if lf[i] == left or lf[i] == right:
                        if cv[i] <= c:
                            nL2 += 1
                            sL2 += part[i]
                        else:
                            nR2 += 1
                            sR2 += part[i]
                logr = (_ll(<double>nL2, sL2, sigma2, tau2) + _ll(<double>nR2, sR2, sigma2, tau2)
                        - _ll(<double>lcnt[left], lsum[left], sigma2, tau2)
                        - _ll(<double>lcnt[right], lsum[right], sigma2, tau2)
                        + log(1.0 - psl) + log(1.0 - psr) - log(1.0 - psl0) - log(1.0 - psr0))
                if log(1.0 - _unif(&state)) < logr:
                    accepted += 1
                    var_row[k] = v
                    cut_row[k] = c
                    for i in range(n):
                        if lf[i] == left or lf[i] == right:
                            if cv[i] <= c:
                                lf[i] = left
                            else:
                                lf[i] = right
                    lcnt[left] = nL2
                    lsum[left] = sL2
                    lcnt[right] = nR2
                    lsum[right] = sR2

            # leaf values given the (possibly new) structure
            for k in range(top[j] + 1):
                if var_row[k] == -1:
                    pv = 1.0 / (1.0 / tau2 + <double>lcnt[k] / sigma2)
                    pm = pv * lsum[k] / sigma2
                    muj[k] = pm + sqrt(pv) * _normal(&state)
            for i in range(n):
                r[i] = part[i] - muj[lf[i]]

    rng[0] = state
    return accepted


def predict(const int32_t[::1] var, const int32_t[::1] cut, const double[::1] mu,
            const int64_t[::1] offsets, const int32_t[:, ::1] codes):
    """Sum of tree outputs for each column of ``codes`` (shape ``(p, N)``)."""
    cdef int m = offsets.shape[0] - 1
    cdef int N = codes.shape[1]
    cdef int j, i, k
    cdef int64_t off
    out_arr = np.zeros(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for j in range(m):
            off = offsets[j]
            for i in range(N):
                k = 0
                while var[off + k] >= 0:
                    if codes[var[off + k], i] <= cut[off + k]:
                        k = 2 * k + 1
                    else:
                        k = 2 * k + 2
                out[i] += mu[off + k]
    return out_arr
