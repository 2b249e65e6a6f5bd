"""Pure numpy fallback for the compiled BART kernels.

Mirrors ``_bartcore.pyx`` operation for operation, including the splitmix64
stream and sequential (``bincount``) accumulation, so chains agree with the
compiled backend bit for bit.
"""
import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


class _SplitMix:
    __slots__ = ("state",)

    def __init__(self, state):
        self.state = int(state)

    def unif(self):
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        z ^= z >> 31
        return float(z >> 11) * _INV_2_53

    def normal(self):
        u1 = 1.0 - self.unif()
        u2 = self.unif()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


def _depth(k):
    d = 0
    while k > 0:
        k = (k - 1) // 2
        d += 1
    return d


def _psplit(alpha, beta, d):
    return alpha * math.pow(1.0 + d, -beta)


def _ll(n, s, sigma2, tau2):
    return -0.5 * math.log(1.0 + n * tau2 / sigma2) + 0.5 * s * s * tau2 / (sigma2 * (sigma2 + n * tau2))


def _ranges(var_row, cut_row, k, ncut):
    lo = np.zeros(len(ncut), dtype=np.int64)
    hi = ncut.astype(np.int64) - 1
    a = k
    while a > 0:
        par = (a - 1) // 2
        vv = var_row[par]
        cc = cut_row[par]
        if a == 2 * par + 1:
            hi[vv] = min(hi[vv], cc - 1)
        else:
            lo[vv] = max(lo[vv], cc + 1)
        a = par
    return lo, hi, np.flatnonzero(hi >= lo)


def _child_ps(nvalid, side_ok, d, max_depth, alpha, beta):
    if d + 1 >= max_depth:
        return 0.0
    if nvalid - 1 + int(side_ok) > 0:
        return _psplit(alpha, beta, d + 1)
    return 0.0


def _seq_sum(mask, values):
    """Count and row-order sum of ``values[mask]``."""
    idx = np.flatnonzero(mask)
    tot = np.bincount(np.zeros(idx.size, dtype=np.intp), weights=values[idx], minlength=1)
    return int(idx.size), float(tot[0])


def sweep(var, cut, mu, top, leaf_of, r, codes, ncut, sigma2, tau2, alpha, beta,
          p_grow, p_prune, max_depth, rng):
    m = var.shape[0]
    cap = var.shape[1]
    rs = _SplitMix(rng[0])
    accepted = 0
    for j in range(m):
        var_row = var[j]
        cut_row = cut[j]
        lf = leaf_of[j]
        part = r + mu[j][lf]
        lcnt = np.bincount(lf, minlength=cap).astype(np.int64)
        lsum = np.bincount(lf, weights=part, minlength=cap)

        t = int(top[j])
        head = var_row[: t + 1]
        nl = int(np.count_nonzero(head == -1))
        internal = np.flatnonzero(head >= 0)
        nog_nodes = [int(k) for k in internal if var_row[2 * k + 1] == -1 and var_row[2 * k + 2] == -1]
        nnog = len(nog_nodes)
        root_only = var_row[0] == -1

        u = rs.unif()
        if root_only or u < p_grow:
            pick = int(rs.unif() * nl)
            k = int(np.flatnonzero(head == -1)[pick])
            d = _depth(k)
            if d < max_depth:
                lo, hi, valid = _ranges(var_row, cut_row, k, ncut)
                nvalid = len(valid)
                if nvalid > 0:
                    v = int(valid[int(rs.unif() * nvalid)])
                    c = int(lo[v]) + int(rs.unif() * (hi[v] - lo[v] + 1))
                    in_node = lf == k
                    goes_left = codes[v] <= c
                    nL, sL = _seq_sum(in_node & goes_left, part)
                    nR, sR = _seq_sum(in_node & ~goes_left, part)
                    psl = _child_ps(nvalid, c - 1 >= lo[v], d, max_depth, alpha, beta)
                    psr = _child_ps(nvalid, hi[v] >= c + 1, d, max_depth, alpha, beta)
                    ps = _psplit(alpha, beta, d)
                    pg_t = 1.0 if root_only else p_grow
                    sib_leaf = 0
                    if k != 0:
                        sib = k + 1 if k % 2 == 1 else k - 1
                        sib_leaf = int(var_row[sib] == -1)
                    logr = (math.log(ps) + math.log(1.0 - psl) + math.log(1.0 - psr) - math.log(1.0 - ps)
                            + math.log(p_prune) - math.log(float(nnog + 1 - sib_leaf))
                            - math.log(pg_t) + math.log(float(nl))
                            + _ll(float(nL), sL, sigma2, tau2)
                            + _ll(float(nR), sR, sigma2, tau2)
                            - _ll(float(lcnt[k]), float(lsum[k]), sigma2, tau2))
                    if math.log(1.0 - rs.unif()) < logr:
                        accepted += 1
                        left, right = 2 * k + 1, 2 * k + 2
                        var_row[k] = v
                        cut_row[k] = c
                        var_row[left] = var_row[right] = -1
                        cut_row[left] = cut_row[right] = 0
                        lf[in_node] = np.where(goes_left[in_node], left, right)
                        top[j] = max(int(top[j]), right)
                        lcnt[left], lsum[left] = nL, sL
                        lcnt[right], lsum[right] = nR, sR
        elif u < p_grow + p_prune:
            pick = int(rs.unif() * nnog)
            k = nog_nodes[pick]
            d = _depth(k)
            lo, hi, valid = _ranges(var_row, cut_row, k, ncut)
            nvalid = len(valid)
            v = int(var_row[k])
            c = int(cut_row[k])
            left, right = 2 * k + 1, 2 * k + 2
            nL, sL = int(lcnt[left]), float(lsum[left])
            nR, sR = int(lcnt[right]), float(lsum[right])
            psl = _child_ps(nvalid, c - 1 >= lo[v], d, max_depth, alpha, beta)
            psr = _child_ps(nvalid, hi[v] >= c + 1, d, max_depth, alpha, beta)
            ps = _psplit(alpha, beta, d)
            pg_t = 1.0 if k == 0 else p_grow
            logr = -(math.log(ps) + math.log(1.0 - psl) + math.log(1.0 - psr) - math.log(1.0 - ps)
                     + math.log(p_prune) - math.log(float(nnog))
                     - math.log(pg_t) + math.log(float(nl - 1))
                     + _ll(float(nL), sL, sigma2, tau2)
                     + _ll(float(nR), sR, sigma2, tau2)
                     - _ll(float(nL + nR), sL + sR, sigma2, tau2))
            if math.log(1.0 - rs.unif()) < logr:
                accepted += 1
                var_row[left] = var_row[right] = -2
                var_row[k] = -1
                cut_row[k] = 0
                lf[(lf == left) | (lf == right)] = k
                while top[j] > 0 and var_row[top[j]] == -2:
                    top[j] -= 1
                lcnt[k], lsum[k] = nL + nR, sL + sR
        else:
            pick = int(rs.unif() * nnog)
            k = nog_nodes[pick]
            d = _depth(k)
            lo, hi, valid = _ranges(var_row, cut_row, k, ncut)
            nvalid = len(valid)
            v0 = int(var_row[k])
            c0 = int(cut_row[k])
            psl0 = _child_ps(nvalid, c0 - 1 >= lo[v0], d, max_depth, alpha, beta)
            psr0 = _child_ps(nvalid, hi[v0] >= c0 + 1, d, max_depth, alpha, beta)
            v = int(valid[int(rs.unif() * nvalid)])
            c = int(lo[v]) + int(rs.unif() * (hi[v] - lo[v] + 1))
            psl = _child_ps(nvalid, c - 1 >= lo[v], d, max_depth, alpha, beta)
            psr = _child_ps(nvalid, hi[v] >= c + 1, d, max_depth, alpha, beta)
            left, right = 2 * k + 1, 2 * k + 2
            in_node = (lf == left) | (lf == right)
            goes_left = codes[v] <= c
            nL2, sL2 = _seq_sum(in_node & goes_left, part)
            nR2, sR2 = _seq_sum(in_node & ~goes_left, part)
            logr = (_ll(float(nL2), sL2, sigma2, tau2) + _ll(float(nR2), sR2, sigma2, tau2)
                    - _ll(float(lcnt[left]), float(lsum[left]), sigma2, tau2)
                    - _ll(float(lcnt[right]), float(lsum[right]), sigma2, tau2)
                    + math.log(1.0 - psl) + math.log(1.0 - psr)
                    - math.log(1.0 - psl0) - math.log(1.0 - psr0))
            if math.log(1.0 - rs.unif()) < logr:
                accepted += 1
                var_row[k] = v
                cut_row[k] = c
                lf[in_node] = np.where(goes_left[in_node], left, right)
                lcnt[left], lsum[left] = nL2, sL2
                lcnt[right], lsum[right] = nR2, sR2

        for k in range(int(top[j]) + 1):
            if var_row[k] == -1:
                pv = 1.0 / (1.0 / tau2 + float(lcnt[k]) / sigma2)
                pm = pv * float(lsum[k]) / sigma2
                mu[j, k] = pm + math.sqrt(pv) * rs.normal()
        r[:] = part - mu[j][lf]

    rng[0] = rs.state
    return accepted


def predict(var, cut, mu, offsets, codes):
    m = len(offsets) - 1
    n_obs = codes.shape[1]
    out = np.zeros(n_obs, dtype=np.float64)
    cols = np.arange(n_obs)
    for j in range(m):
        off = int(offsets[j])
        node = np.zeros(n_obs, dtype=np.int64)
        while True:
            v = var[off + node]
            active = v >= 0
            if not active.any():
                break
            go_left = codes[np.where(active, v, 0), cols] <= cut[off + node]
            node = np.where(active, np.where(go_left, 2 * node + 1, 2 * node + 2), node)
        out += mu[off + node]
    return out
