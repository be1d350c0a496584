"""Pure-Python versions of the enumeration kernels in ``_core.pyx``.

Same signatures, same traversal order, same return values; used when the
compiled extension is unavailable and as its reference in tests.
"""
from __future__ import annotations

import math

import numpy as np


def enum_fixed(probs, offsets, dh, origin, gridsize, N, phitab, max_nodes):
    K = len(probs)
    probs, offsets, dh, phitab = list(probs), list(offsets), list(dh), list(phitab)
    mass, G, ones = np.zeros(N + 1), np.zeros(N + 1), np.zeros(N + 1)
    saw = np.zeros(N + 1, dtype=np.int64)
    bridge = np.zeros((N + 1, N + 1))
    hist = np.zeros(N * N + 1)
    mass[0] = G[0] = ones[0] = 1.0
    saw[0] = 1
    bridge[0, 0] = 1.0
    if N == 0:
        hist[0] = 1.0
    lt = [0] * gridsize
    nodes = 0

    def rec(depth, x, h, maxh, minh, w, ph, sq, multi):
        nonlocal nodes
        if depth == N:
            return True
        c = depth + 1
        for s in range(K):
            y = x + offsets[s]
            l = lt[y] + 1
            lt[y] = l
            phc = ph + phitab[l] - phitab[l - 1]
            sqc = sq + 2 * l - 1
            mc = multi + (l == 2)
            hh = h + dh[s]
            mx, mn = max(maxh, hh), min(minh, hh)
            wc = w * probs[s]
            nodes += 1
            if nodes > max_nodes:
                return False
            ww = wc * math.exp(-phc)
            mass[c] += wc
            G[c] += ww
            if mc == 0:
                ones[c] += ww
                if lt[origin] == 0:
                    saw[c] += 1
            if mn > 0 and hh == mx:
                bridge[hh, c] += ww
            if c == N:
                hist[sqc] += ww
            if not rec(c, y, hh, mx, mn, wc, phc, sqc, mc):
                return False
            lt[y] = l - 1
        return True

    ok = rec(0, origin, 0, 0, N + 1, 1.0, 0.0, 0, 0)
    return mass, G, ones, saw, bridge, hist, nodes if ok else -1


def energy_bound_check(probs, offsets, origin, gridsize, N, phitab, tol):
    K = len(probs)
    offsets, phitab = list(offsets), list(phitab)
    out = np.zeros(6, dtype=np.int64)
    lt = [0] * gridsize
    phi1 = phitab[1]
    pos = [origin] * (N + 1)
    ph = [0.0] * (N + 1)

    def leaf():
        suf: dict[int, int] = {}
        phs, shared = 0.0, 0
        for M in range(N - 1, 0, -1):
            x = pos[M + 1]
            so, f = suf.get(x, 0), lt[x]
            shared -= (f - so > 0 and so > 0)
            suf[x] = so + 1
            phs += phitab[so + 1] - phitab[so]
            shared += f - so - 1 > 0
            if ph[N] > ph[M] + phs + tol:
                out[2] += 1
            if shared == 0 and abs(ph[N] - ph[M] - phs) > tol:
                out[3] += 1
            out[5] += 2
        for M1 in range(N):
            win: dict[int, int] = {}
            phw = 0.0
            for M2 in range(M1 + 1, N + 1):
                x = pos[M2]
                l = win.get(x, 0) + 1
                win[x] = l
                phw += phitab[l] - phitab[l - 1]
                if phw > ph[N] + tol:
                    out[4] += 1
                out[5] += 1

    def rec(depth, rng):
        if depth == N:
            leaf()
            return
        c = depth + 1
        for s in range(K):
            x = pos[depth] + offsets[s]
            pos[c] = x
            l = lt[x] + 1
            lt[x] = l
            ph[c] = ph[depth] + phitab[l] - phitab[l - 1]
            r = rng + (l == 1)
            if ph[c] < phi1 * r - tol:
                out[0] += 1
            if ph[c] > phi1 * c + tol:
                out[1] += 1
            out[5] += 2
            rec(c, r)
            lt[x] = l - 1

    rec(0, 0)
    return out


def bridge_dfs(probs, offsets, dh, origin, gridsize, Lmax, Nmax, phitab, g, gi, mode, eps, max_nodes):
    K = len(probs)
    probs, offsets, dh, phitab = list(probs), list(offsets), list(dh), list(phitab)
    g, gi = np.asarray(g), np.asarray(gi)
    W = np.zeros((Lmax + 1, Nmax + 1, 1 << Lmax))
    slack = np.zeros(Lmax + 1)
    slacki = np.zeros(Lmax + 1)
    decay = [math.exp(-phitab[1] * j) for j in range(Lmax + 1)]
    lt = [0] * gridsize
    nodes = 0

    def rec(depth, x, h, H0, mask, w, ph):
        nonlocal nodes
        c = depth + 1
        for s in range(K):
            hh = h + dh[s]
            if hh < 1 or hh > Lmax:
                continue
            y = x + offsets[s]
            l = lt[y] + 1
            lt[y] = l
            phc = ph + phitab[l] - phitab[l - 1]
            wc = w * probs[s]
            H = H0
            m = mask & ((1 << (hh - 1)) - 1)
            if hh >= H:
                H = hh
                m |= 1 << (hh - 1)
            ww = wc * math.exp(-phc)
            nodes += 1
            if nodes > max_nodes:
                return False
            if hh == H:
                W[H, c, m] += ww
            live = [k for k in range(1, H + 1) if m >> (k - 1) & 1]
            r_all = live[0] if live else 0
            r_top = next((k for k in live if k < H), 0)
            tb = [decay[k - H] * g[k, hh] for k in range(H, Lmax + 1)]
            ti = [decay[k - H] * gi[k, hh, r_top if k == H else r_all] for k in range(H, Lmax + 1)]
            if c == Nmax or ww * sum(tb if mode == 0 else ti) < eps:
                for k in range(H, Lmax + 1):
                    slack[k] += ww * tb[k - H]
                    slacki[k] += ww * ti[k - H]
            elif not rec(c, y, hh, H, m, wc, phc):
                return False
            lt[y] = l - 1
        return True

    ok = rec(0, origin, 0, 0, 0, 1.0, 0.0)
    return W, slack, slacki, nodes if ok else -1


def plane_dfs(probs, offsets, dh, origin, gridsize, L, Nmax, phitab, gplane, xoff, eps, max_nodes):
    K = len(probs)
    probs, offsets, dh, phitab = list(probs), list(offsets), list(dh), list(phitab)
    out = np.zeros(Nmax + 1)
    if L == 0:
        out[0] = 1.0
    lt = [0] * gridsize
    slack = 0.0
    nodes = 0
    phi1 = phitab[1]

    def rec(depth, x, h, H0, w, ph):
        nonlocal nodes, slack
        c = depth + 1
        for s in range(K):
            hh = h + dh[s]
            y = x + offsets[s]
            l = lt[y] + 1
            lt[y] = l
            phc = ph + phitab[l] - phitab[l - 1]
            wc = w * probs[s]
            H = max(H0, hh)
            ww = wc * math.exp(-phc)
            nodes += 1
            if nodes > max_nodes:
                return False
            if hh == L:
                out[c] += ww
            bound = ww * gplane[L - hh + xoff]
            if L > H:
                bound *= math.exp(-phi1 * (L - H))
            if c == Nmax or bound < eps:
                slack += bound
            elif not rec(c, y, hh, H, wc, phc):
                return False
            lt[y] = l - 1
        return True

    ok = rec(0, origin, 0, 0, 1.0, 0.0)
    return out, slack, nodes if ok else -1


def _inner_pair(probs, offsets, lt, origin2, N2, phitab, counter):
    K = len(probs)
    if N2 == 0:
        return 1.0
    total = 0.0

    def rec(depth, x, w, ph):
        nonlocal total
        c = depth + 1
        for s in range(K):
            y = x + offsets[s]
            l = lt[y] + 1
            lt[y] = l
            phc = ph + phitab[l] - phitab[l - 1]
            wc = w * probs[s]
            counter[0] += 1
            if c == N2:
                total += wc * math.exp(-phc)
            else:
                rec(c, y, wc, phc)
            lt[y] = l - 1

    rec(0, origin2, 1.0, 0.0)
    return total


def pair_moment(probs, offsets, origin1, origin2, gridsize, N1, N2, phitab, max_nodes):
    K = len(probs)
    probs, offsets, phitab = list(probs), list(offsets), list(phitab)
    lt = [0] * gridsize
    counter = [0]
    if N1 == 0:
        return _inner_pair(probs, offsets, lt, origin2, N2, phitab, counter), counter[0]
    total = 0.0

    def rec(depth, x, w, ph):
        nonlocal total
        c = depth + 1
        for s in range(K):
            y = x + offsets[s]
            l = lt[y] + 1
            lt[y] = l
            phc = ph + phitab[l] - phitab[l - 1]
            wc = w * probs[s]
            counter[0] += 1
            if c == N1:
                total += wc * math.exp(-phc) * _inner_pair(probs, offsets, lt, origin2, N2, phitab, counter)
                if counter[0] > max_nodes:
                    return False
            elif not rec(c, y, wc, phc):
                return False
            lt[y] = l - 1
        return True

    ok = rec(0, origin1, 1.0, 0.0)
    return total, counter[0] if ok else -1


def bridge_paths(probs, offsets, dh, origin, gridsize, Lmax, Nmax, phitab, max_paths):
    K = len(probs)
    probs, offsets, dh, phitab = list(probs), list(offsets), list(dh), list(phitab)
    lt = [0] * gridsize
    rows: list[tuple] = []
    path = [0] * Nmax

    def rec(depth, x, h, H0, mask, w, ph):
        if depth == Nmax:
            return True
        c = depth + 1
        for s in range(K):
            hh = h + dh[s]
            if hh < 1 or hh > Lmax:
                continue
            y = x + offsets[s]
            l = lt[y] + 1
            lt[y] = l
            phc = ph + phitab[l] - phitab[l - 1]
            wc = w * probs[s]
            path[depth] = s
            H = H0
            m = mask & ((1 << (hh - 1)) - 1)
            if hh >= H:
                H = hh
                m |= 1 << (hh - 1)
            if hh == H:
                if len(rows) >= max_paths:
                    return False
                rows.append((tuple(path[:c]), c, H, m, wc * math.exp(-phc)))
            if not rec(c, y, hh, H, m, wc, phc):
                return False
            lt[y] = l - 1
        return True

    ok = rec(0, origin, 0, 0, 0, 1.0, 0.0)
    count = len(rows)
    steps = np.full((count, Nmax), -1, dtype=np.int8)
    for i, r in enumerate(rows):
        steps[i, : r[1]] = r[0]
    n = np.array([r[1] for r in rows], dtype=np.int8)
    span = np.array([r[2] for r in rows], dtype=np.int8)
    mask = np.array([r[3] for r in rows], dtype=np.uint64)
    wt = np.array([r[4] for r in rows], dtype=float)
    return steps, n, span, mask, wt, count if ok else -1
