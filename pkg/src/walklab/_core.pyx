# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Depth-first enumeration kernels over nearest-neighbour paths.

All kernels share one geometry convention: sites are flat indices into a box
of ``gridsize`` cells, step ``s`` moves the flat index by ``offsets[s]`` and
the height (first coordinate) by ``dh[s]``. Children are visited in step-index
order, so every sum is accumulated in a fixed order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()


def enum_fixed(double[::1] probs, int64_t[::1] offsets, int64_t[::1] dh, int64_t origin,
               int64_t gridsize, int N, double[::1] phitab, int64_t max_nodes):
    """Statistics of every path of length ``n <= N``.

    Returns ``(mass, G, ones, saw, bridge, hist, nodes)``; ``nodes = -1`` when
    the budget ran out.
    """
    cdef int K = probs.shape[0]
    mass_a = np.zeros(N + 1)
    G_a = np.zeros(N + 1)
    ones_a = np.zeros(N + 1)
    saw_a = np.zeros(N + 1, dtype=np.int64)
    bridge_a = np.zeros((N + 1, N + 1))
    hist_a = np.zeros(N * N + 1)
    cdef double[::1] mass = mass_a, G = G_a, ones = ones_a, hist = hist_a
    cdef int64_t[::1] saw = saw_a
    cdef double[:, ::1] bridge = bridge_a
    cdef int[::1] lt = np.zeros(gridsize, dtype=np.intc)
    cdef int64_t[::1] pos = np.zeros(N + 1, dtype=np.int64)
    cdef int64_t[::1] sq = np.zeros(N + 1, dtype=np.int64)
    cdef int[::1] h = np.zeros(N + 1, dtype=np.intc)
    cdef int[::1] maxh = np.zeros(N + 1, dtype=np.intc)
    cdef int[::1] minh = np.zeros(N + 1, dtype=np.intc)
    cdef int[::1] nxt = np.zeros(N + 1, dtype=np.intc)
    cdef int[::1] multi = np.zeros(N + 1, dtype=np.intc)
    cdef double[::1] w = np.zeros(N + 1)
    cdef double[::1] ph = np.zeros(N + 1)
    cdef int depth = 0, c, s, l, hh
    cdef int64_t x, nodes = 0
    cdef double ww

    pos[0] = origin
    minh[0] = N + 1
    w[0] = 1.0
    mass[0] = 1.0
    G[0] = 1.0
    ones[0] = 1.0
    saw[0] = 1
    bridge[0, 0] = 1.0
    hist[0] = 1.0 if N == 0 else 0.0
    while depth >= 0:
        if depth == N or nxt[depth] == K:
            if depth > 0:
                lt[pos[depth]] -= 1
            depth -= 1
            continue
        s = nxt[depth]
        nxt[depth] += 1
        c = depth + 1
        x = pos[depth] + offsets[s]
        pos[c] = x
        l = lt[x] + 1
        lt[x] = l
        ph[c] = ph[depth] + phitab[l] - phitab[l - 1]
        sq[c] = sq[depth] + 2 * l - 1
        multi[c] = multi[depth] + (1 if l == 2 else 0)
        hh = h[depth] + <int>dh[s]
        h[c] = hh
        maxh[c] = hh if hh > maxh[depth] else maxh[depth]
        minh[c] = hh if hh < minh[depth] else minh[depth]
        w[c] = w[depth] * probs[s]
        nxt[c] = 0
        nodes += 1
        if nodes > max_nodes:
            return mass_a, G_a, ones_a, saw_a, bridge_a, hist_a, -1
        ww = w[c] * exp(-ph[c])
        mass[c] += w[c]
        G[c] += ww
        if multi[c] == 0:
            ones[c] += ww
            if lt[origin] == 0:
                saw[c] += 1
        if minh[c] > 0 and hh == maxh[c]:
            bridge[hh, c] += ww
        if c == N:
            hist[sq[c]] += ww
        depth = c
    return mass_a, G_a, ones_a, saw_a, bridge_a, hist_a, nodes


def energy_bound_check(double[::1] probs, int64_t[::1] offsets, int64_t origin, int64_t gridsize,
                  int N, double[::1] phitab, double tol):
    """Count violations of the range, split and window bounds on all paths.

    Returns int64 counts ``[range_lower, length_upper, split_sub, split_equal,
    window, checks]``.
    """
    cdef int K = probs.shape[0]
    out_a = np.zeros(6, dtype=np.int64)
    cdef int64_t[::1] out = out_a
    cdef int[::1] lt = np.zeros(gridsize, dtype=np.intc)
    cdef int[::1] suf = np.zeros(gridsize, dtype=np.intc)
    cdef int64_t[::1] pos = np.zeros(N + 1, dtype=np.int64)
    cdef int[::1] nxt = np.zeros(N + 1, dtype=np.intc)
    cdef int[::1] rng = np.zeros(N + 1, dtype=np.intc)
    cdef double[::1] ph = np.zeros(N + 1)
    cdef double phi1 = phitab[1], phs, phw
    cdef int depth = 0, c, s, l, M, M1, M2, shared, so, f, t
    cdef int64_t x

    pos[0] = origin
    while depth >= 0:
        if depth == N or nxt[depth] == K:
            if depth > 0:
                lt[pos[depth]] -= 1
            depth -= 1
            continue
        s = nxt[depth]
        nxt[depth] += 1
        c = depth + 1
        x = pos[depth] + offsets[s]
        pos[c] = x
        l = lt[x] + 1
        lt[x] = l
        ph[c] = ph[depth] + phitab[l] - phitab[l - 1]
        rng[c] = rng[depth] + (1 if l == 1 else 0)
        nxt[c] = 0
        depth = c
        if ph[c] < phi1 * rng[c] - tol:
            out[0] += 1
        if ph[c] > phi1 * c + tol:
            out[1] += 1
        out[5] += 2
        if c < N:
            continue
        # splits (0,M] + (M,N]: suffix local times in suf, prefix = lt - suf
        phs = 0.0
        shared = 0
        for M in range(N - 1, 0, -1):
            x = pos[M + 1]
            so = suf[x]
            f = lt[x]
            shared -= 1 if (f - so > 0 and so > 0) else 0
            suf[x] = so + 1
            phs += phitab[so + 1] - phitab[so]
            shared += 1 if f - so - 1 > 0 else 0
            if ph[N] > ph[M] + phs + tol:
                out[2] += 1
            if shared == 0 and (ph[N] - ph[M] - phs > tol or ph[M] + phs - ph[N] > tol):
                out[3] += 1
            out[5] += 2
        for t in range(2, N + 1):
            suf[pos[t]] = 0
        # every window (M1, M2]
        for M1 in range(N):
            phw = 0.0
            for M2 in range(M1 + 1, N + 1):
                x = pos[M2]
                l = suf[x] + 1
                suf[x] = l
                phw += phitab[l] - phitab[l - 1]
                if phw > ph[N] + tol:
                    out[4] += 1
                out[5] += 1
            for t in range(M1 + 1, N + 1):
                suf[pos[t]] = 0
    return out_a


def bridge_dfs(double[::1] probs, int64_t[::1] offsets, int64_t[::1] dh, int64_t origin,
               int64_t gridsize, int Lmax, int Nmax, double[::1] phitab, double[:, ::1] g,
               double[:, :, ::1] gi, int mode, double eps, int64_t max_nodes):
    """Weighted bridge spectrum with breaking-point masks.

    ``W[k, n, mask]`` sums ``P * exp(-Phi)`` over bridges of span ``k`` and
    length ``n`` whose breaking points are the set bits (bit ``R-1`` for R).
    Heights are confined to ``1..Lmax``. ``g[k, s]`` is the expected number of
    future visits of the confined projected walk from ``s`` to ``k``;
    ``gi[k, s, r]`` counts only visits after the walk has been at height
    ``<= r`` (``r = 0``: no condition), which bounds future irreducible bridges
    whose lowest live breaking point is ``r``. A node is not expanded at depth
    ``Nmax`` or when its bound (bridge for ``mode == 0``, irreducible for
    ``mode == 1``) is below ``eps``; both bounds go to ``slack`` and ``slack_irr``.
    """
    cdef int K = probs.shape[0]
    cdef int nmask = 1 << Lmax
    W_a = np.zeros((Lmax + 1, Nmax + 1, nmask))
    slack_a = np.zeros(Lmax + 1)
    slacki_a = np.zeros(Lmax + 1)
    cdef double[:, :, ::1] W = W_a
    cdef double[::1] slack = slack_a
    cdef double[::1] slacki = slacki_a
    cdef double[::1] decay = np.exp(-phitab[1] * np.arange(Lmax + 1))
    cdef int[::1] lt = np.zeros(gridsize, dtype=np.intc)
    cdef int64_t[::1] pos = np.zeros(Nmax + 1, dtype=np.int64)
    cdef int[::1] h = np.zeros(Nmax + 1, dtype=np.intc)
    cdef int[::1] maxh = np.zeros(Nmax + 1, dtype=np.intc)
    cdef uint64_t[::1] mask = np.zeros(Nmax + 1, dtype=np.uint64)
    cdef int[::1] nxt = np.zeros(Nmax + 1, dtype=np.intc)
    cdef double[::1] w = np.zeros(Nmax + 1)
    cdef double[::1] ph = np.zeros(Nmax + 1)
    cdef int depth = 0, c, s, l, hh, H, k, r_all, r_top
    cdef int64_t x, nodes = 0
    cdef uint64_t m
    cdef double ww, wc, phc, bound, boundi

    pos[0] = origin
    w[0] = 1.0
    while depth >= 0:
        if nxt[depth] == K:
            if depth > 0:
                lt[pos[depth]] -= 1
            depth -= 1
            continue
        s = nxt[depth]
        nxt[depth] += 1
        hh = h[depth] + <int>dh[s]
        if hh < 1 or hh > Lmax:
            continue
        c = depth + 1
        x = pos[depth] + offsets[s]
        l = lt[x] + 1
        lt[x] = l
        phc = ph[depth] + phitab[l] - phitab[l - 1]
        wc = w[depth] * probs[s]
        H = maxh[depth]
        m = mask[depth] & ((<uint64_t>1 << (hh - 1)) - 1)
        if hh >= H:
            H = hh
            m |= <uint64_t>1 << (hh - 1)
        ww = wc * exp(-phc)
        nodes += 1
        if nodes > max_nodes:
            return W_a, slack_a, slacki_a, -1
        if hh == H:
            W[H, c, m] += ww
        # lowest live breaking point, with and without the current maximum
        r_all = 0
        r_top = 0
        for k in range(1, H + 1):
            if m & (<uint64_t>1 << (k - 1)):
                if r_all == 0:
                    r_all = k
                if r_top == 0 and k < H:
                    r_top = k
        bound = 0.0
        boundi = decay[0] * gi[H, hh, r_top]
        for k in range(H, Lmax + 1):
            bound += decay[k - H] * g[k, hh]
            if k > H:
                boundi += decay[k - H] * gi[k, hh, r_all]
        if c == Nmax or (bound if mode == 0 else boundi) * ww < eps:
            slacki[H] += ww * decay[0] * gi[H, hh, r_top]
            for k in range(H, Lmax + 1):
                slack[k] += ww * decay[k - H] * g[k, hh]
                if k > H:
                    slacki[k] += ww * decay[k - H] * gi[k, hh, r_all]
            lt[x] = l - 1
            continue
        pos[c] = x
        h[c] = hh
        maxh[c] = H
        mask[c] = m
        w[c] = wc
        ph[c] = phc
        nxt[c] = 0
        depth = c
    return W_a, slack_a, slacki_a, nodes


def plane_dfs(double[::1] probs, int64_t[::1] offsets, int64_t[::1] dh, int64_t origin,
              int64_t gridsize, int L, int Nmax, double[::1] phitab, double[::1] gplane,
              int xoff, double eps, int64_t max_nodes):
    """Weighted sums over paths ending at height ``L``, by length.

    ``gplane[L - s + xoff]`` is the expected number of future visits of the
    projected walk from ``s`` to ``L``; nodes whose bound falls below ``eps``
    or that reach depth ``Nmax`` are cut and their bound goes to ``slack``.
    """
    cdef int K = probs.shape[0]
    out_a = np.zeros(Nmax + 1)
    cdef double[::1] out = out_a
    cdef double slack = 0.0, phi1 = phitab[1]
    cdef int[::1] lt = np.zeros(gridsize, dtype=np.intc)
    cdef int64_t[::1] pos = np.zeros(Nmax + 1, dtype=np.int64)
    cdef int[::1] h = np.zeros(Nmax + 1, dtype=np.intc)
    cdef int[::1] maxh = np.zeros(Nmax + 1, dtype=np.intc)
    cdef int[::1] nxt = np.zeros(Nmax + 1, dtype=np.intc)
    cdef double[::1] w = np.zeros(Nmax + 1)
    cdef double[::1] ph = np.zeros(Nmax + 1)
    cdef int depth = 0, c, s, l, hh, H
    cdef int64_t x, nodes = 0
    cdef double ww, wc, phc, bound

    pos[0] = origin
    w[0] = 1.0
    if L == 0:
        out[0] = 1.0
    while depth >= 0:
        if nxt[depth] == K:
            if depth > 0:
                lt[pos[depth]] -= 1
            depth -= 1
            continue
        s = nxt[depth]
        nxt[depth] += 1
        c = depth + 1
        hh = h[depth] + <int>dh[s]
        x = pos[depth] + offsets[s]
        l = lt[x] + 1
        lt[x] = l
        phc = ph[depth] + phitab[l] - phitab[l - 1]
        wc = w[depth] * probs[s]
        H = hh if hh > maxh[depth] else maxh[depth]
        ww = wc * exp(-phc)
        nodes += 1
        if nodes > max_nodes:
            return out_a, slack, -1
        if hh == L:
            out[c] += ww
        bound = ww * gplane[L - hh + xoff]
        if L > H:
            bound *= exp(-phi1 * (L - H))
        if c == Nmax or bound < eps:
            slack += bound
            lt[x] = l - 1
            continue
        pos[c] = x
        h[c] = hh
        maxh[c] = H
        w[c] = wc
        ph[c] = phc
        nxt[c] = 0
        depth = c
    return out_a, slack, nodes


cdef double _inner_pair(double[::1] probs, int64_t[::1] offsets, int[::1] lt, int64_t origin2,
                        int N2, double[::1] phitab, int64_t[::1] pos, int[::1] nxt,
                        double[::1] w, double[::1] ph, int64_t* nodes) noexcept nogil:
    cdef int K = probs.shape[0]
    cdef int depth = 0, c, s, l
    cdef int64_t x
    cdef double total = 0.0
    pos[0] = origin2
    w[0] = 1.0
    ph[0] = 0.0
    nxt[0] = 0
    if N2 == 0:
        return 1.0
    while depth >= 0:
        if depth == N2 or nxt[depth] == K:
            if depth > 0:
                lt[pos[depth]] -= 1
            depth -= 1
            continue
        s = nxt[depth]
        nxt[depth] += 1
        c = depth + 1
        x = pos[depth] + offsets[s]
        pos[c] = x
        l = lt[x] + 1
        lt[x] = l
        ph[c] = ph[depth] + phitab[l] - phitab[l - 1]
        w[c] = w[depth] * probs[s]
        nxt[c] = 0
        nodes[0] += 1
        if c == N2:
            total += w[c] * exp(-ph[c])
        depth = c
    return total


def pair_moment(double[::1] probs, int64_t[::1] offsets, int64_t origin1, int64_t origin2,
                int64_t gridsize, int N1, int N2, double[::1] phitab, int64_t max_nodes):
    """``sum over path pairs of P1 * P2 * exp(-Phi_coupled)``.

    Walk 1 is enumerated to depth ``N1``; at each of its leaves walk 2 is
    enumerated on top of walk 1's local times, so increments of phi are the
    coupled ones.
    """
    cdef int K = probs.shape[0]
    cdef int[::1] lt = np.zeros(gridsize, dtype=np.intc)
    cdef int64_t[::1] pos = np.zeros(N1 + 1, dtype=np.int64)
    cdef int[::1] nxt = np.zeros(N1 + 1, dtype=np.intc)
    cdef double[::1] w = np.zeros(N1 + 1)
    cdef double[::1] ph = np.zeros(N1 + 1)
    cdef int64_t[::1] pos2 = np.zeros(N2 + 1, dtype=np.int64)
    cdef int[::1] nxt2 = np.zeros(N2 + 1, dtype=np.intc)
    cdef double[::1] w2 = np.zeros(N2 + 1)
    cdef double[::1] ph2 = np.zeros(N2 + 1)
    cdef int depth = 0, c, s, l
    cdef int64_t x, nodes = 0
    cdef double total = 0.0

    pos[0] = origin1
    w[0] = 1.0
    if N1 == 0:
        total = _inner_pair(probs, offsets, lt, origin2, N2, phitab, pos2, nxt2, w2, ph2, &nodes)
        return total, nodes
    while depth >= 0:
        if depth == N1 or nxt[depth] == K:
            if depth > 0:
                lt[pos[depth]] -= 1
            depth -= 1
            continue
        s = nxt[depth]
        nxt[depth] += 1
        c = depth + 1
        x = pos[depth] + offsets[s]
        pos[c] = x
        l = lt[x] + 1
        lt[x] = l
        ph[c] = ph[depth] + phitab[l] - phitab[l - 1]
        w[c] = w[depth] * probs[s]
        nxt[c] = 0
        nodes += 1
        if c == N1:
            total += w[c] * exp(-ph[c]) * _inner_pair(probs, offsets, lt, origin2, N2, phitab,
                                                       pos2, nxt2, w2, ph2, &nodes)
            if nodes > max_nodes:
                return total, -1
        depth = c
    return total, nodes


def bridge_paths(double[::1] probs, int64_t[::1] offsets, int64_t[::1] dh, int64_t origin,
                 int64_t gridsize, int Lmax, int Nmax, double[::1] phitab, int64_t max_paths):
    """List every bridge of span ``<= Lmax`` and length ``1..Nmax``.

    Returns ``(steps, n, span, mask, weight)`` with ``steps`` an
    ``(count, Nmax)`` int8 array padded by -1; ``count = -1`` signals that
    ``max_paths`` was exceeded (arrays then hold the first ``max_paths``).
    """
    cdef int K = probs.shape[0]
    steps_a = np.full((max_paths, Nmax), -1, dtype=np.int8)
    n_a = np.zeros(max_paths, dtype=np.int8)
    span_a = np.zeros(max_paths, dtype=np.int8)
    mask_a = np.zeros(max_paths, dtype=np.uint64)
    wt_a = np.zeros(max_paths)
    cdef cnp.int8_t[:, ::1] st = steps_a
    cdef cnp.int8_t[::1] nn = n_a, sp = span_a
    cdef uint64_t[::1] mk = mask_a
    cdef double[::1] wt = wt_a
    cdef int[::1] lt = np.zeros(gridsize, dtype=np.intc)
    cdef int64_t[::1] pos = np.zeros(Nmax + 1, dtype=np.int64)
    cdef int[::1] h = np.zeros(Nmax + 1, dtype=np.intc)
    cdef int[::1] maxh = np.zeros(Nmax + 1, dtype=np.intc)
    cdef uint64_t[::1] mask = np.zeros(Nmax + 1, dtype=np.uint64)
    cdef int[::1] nxt = np.zeros(Nmax + 1, dtype=np.intc)
    cdef int[::1] path = np.zeros(Nmax + 1, dtype=np.intc)
    cdef double[::1] w = np.zeros(Nmax + 1)
    cdef double[::1] ph = np.zeros(Nmax + 1)
    cdef int depth = 0, c, s, l, hh, H, t
    cdef int64_t x, count = 0
    cdef uint64_t m

    pos[0] = origin
    w[0] = 1.0
    while depth >= 0:
        if depth == Nmax or nxt[depth] == K:
            if depth > 0:
                lt[pos[depth]] -= 1
            depth -= 1
            continue
        s = nxt[depth]
        nxt[depth] += 1
        hh = h[depth] + <int>dh[s]
        if hh < 1 or hh > Lmax:
            continue
        c = depth + 1
        x = pos[depth] + offsets[s]
        l = lt[x] + 1
        lt[x] = l
        pos[c] = x
        h[c] = hh
        ph[c] = ph[depth] + phitab[l] - phitab[l - 1]
        w[c] = w[depth] * probs[s]
        path[c - 1] = s
        H = maxh[depth]
        m = mask[depth] & ((<uint64_t>1 << (hh - 1)) - 1)
        if hh >= H:
            H = hh
            m |= <uint64_t>1 << (hh - 1)
        maxh[c] = H
        mask[c] = m
        nxt[c] = 0
        depth = c
        if hh == H:
            if count >= max_paths:
                return steps_a, n_a, span_a, mask_a, wt_a, -1
            for t in range(c):
                st[count, t] = path[t]
            nn[count] = c
            sp[count] = H
            mk[count] = m
            wt[count] = w[c] * exp(-ph[c])
            count += 1
    return steps_a[:count], n_a[:count], span_a[:count], mask_a[:count], wt_a[:count], count
