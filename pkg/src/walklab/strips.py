"""The two-walk strip chain: irreducible pair pieces between common breaking
heights, their durations, perpendicular end offsets and overlaps.

Two sources feed ``simulate_sigma_chain``:

* ``StripTables``: exact enumeration of irreducible pair strips with
  ``n1 + n2 <= cutoff`` per start-offset class. The mass beyond the cutoff is
  an explicit "unknown" outcome.
* ``PairPathSampler``: pairs of drifted walks conditioned to stay above
  their start, cut at their common breaking heights. Without disorder these
  strips are i.i.d. with the strip law; the disorder enters through the
  per-strip importance weight ``exp(m (n1 + n2) - Phi1 - Phi2)`` with ``m``
  fixed by the normalisation ``E[weight] = 1``.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .bridges import PathTuple, irreducible_decomposition
from .exact_enum import bridge_paths, fixed_stats
from .potential import PotentialSpec, overlap_psi, phi_table
from .streams import RngStream
from .walk_model import Path, WalkConfig, step_law, step_vectors

Offset = tuple[int, ...]


def fixed_length_mass(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int) -> float:
    """Slope of ``-log B(n)`` over ``n = N/2..N`` from exact enumeration; 0 at ``beta = 0``."""
    if beta == 0:
        return 0.0
    B = fixed_stats(cfg, spec, beta, N).bridge.sum(axis=0)
    n = np.arange(max(1, N // 2), N + 1)
    return float(stats.linregress(n, -np.log(B[n])).slope)


# --- enumerated tables ----------------------------------------------------------

@dataclass(frozen=True)
class StripTable:
    """Irreducible pair strips from start offset ``dy`` (``None``: the far class).

    Entry ``i`` has lengths ``n1[i], n2[i]``, perpendicular end-offset change
    ``shift[i]`` (change of walk 2 minus walk 1), overlap ``zeta[i]`` and probability
    ``prob[i] = exp(m (n1 + n2)) E[exp(-Phi1 - Phi2); strip]``.
    """

    dy: Offset | None
    n1: np.ndarray
    n2: np.ndarray
    shift: np.ndarray
    zeta: np.ndarray
    prob: np.ndarray
    cutoff: int
    m_hat: float
    slack: float = 0.0
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_cdf", np.cumsum(self.prob))

    @property
    def captured(self) -> float:
        return float(self.prob.sum())

    def __len__(self) -> int:
        return int(self.prob.size)

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Entry index for each uniform, ``-1`` for the uncaptured remainder.

        Probabilities are scaled down when the captured mass exceeds 1.
        """
        scale = max(1.0, self.captured)
        idx = np.searchsorted(self._cdf, u * scale, side="right")
        return np.where(idx < self.prob.size, idx, -1)


@lru_cache(maxsize=8)
def _bridge_groups(cfg: WalkConfig, spec: PotentialSpec, beta: float, cutoff: int):
    """Bridges of length ``<= cutoff - 1`` grouped by (span, length)."""
    bp = bridge_paths(cfg, spec, beta, cutoff - 1, cutoff - 1)
    vec = step_vectors(cfg.d)
    groups = {}
    for k in np.unique(bp["span"]):
        for n in np.unique(bp["n"][bp["span"] == k]):
            sel = np.flatnonzero((bp["span"] == k) & (bp["n"] == n))
            steps = bp["steps"][sel, :n].astype(np.int64)
            sites = np.cumsum(vec[steps], axis=1)
            groups[int(k), int(n)] = (sites, bp["mask"][sel].astype(np.int64), bp["weight"][sel])
    return groups


def _overlap(s1: np.ndarray, s2: np.ndarray) -> np.ndarray:
    """Shared-visit counts of paired site sequences ``(P, n1, d)`` and ``(P, n2, d)``."""
    eq = np.all(s1[:, :, None, :] == s2[:, None, :, :], axis=-1)
    return eq.any(axis=2).sum(axis=1) + eq.any(axis=1).sum(axis=1)


def build_strip_table(cfg: WalkConfig, spec: PotentialSpec, beta: float, dy: Offset | None, cutoff: int,
                      m_hat: float | None = None, m_halfwidth: float = 0.0, chunk: int = 1 << 16) -> StripTable:
    """Enumerate irreducible pair strips with ``n1 + n2 <= cutoff`` started at offset ``dy``.

    ``m_hat`` defaults to ``fixed_length_mass`` at ``N = cutoff``. ``slack``
    bounds the extra captured mass when the true mass is up to
    ``m_halfwidth`` larger. ``dy=None`` builds the far class (walks that
    cannot meet, so every overlap is 0).
    """
    if cfg.h <= 0:
        raise ValueError("strips need h > 0")
    if cutoff < 2:
        raise ValueError("cutoff must be at least 2")
    if dy is not None:
        dy = tuple(int(c) for c in dy)
        if len(dy) != cfg.d - 1:
            raise ValueError("dy needs d-1 coordinates")
    m = fixed_length_mass(cfg, spec, beta, cutoff) if m_hat is None else float(m_hat)
    start2 = np.array((0, *(dy or (0,) * (cfg.d - 1))), dtype=np.int64)
    far = dy is None
    groups = _bridge_groups(cfg, spec, beta, cutoff)
    rows: dict[tuple, float] = {}
    for (k, n1), (s1, m1, w1) in groups.items():
        for n2 in range(1, cutoff - n1 + 1):
            if (k, n2) not in groups:
                continue
            s2, m2, w2 = groups[k, n2]
            top = 1 << (k - 1)
            i, j = np.nonzero((m1[:, None] & m2[None, :]) == top)
            if far or sum(abs(int(c)) for c in start2) > n1 + n2:
                z = np.zeros(i.size, dtype=np.int64)
            else:
                z = np.concatenate([_overlap(s1[i[a : a + chunk]], s2[j[a : a + chunk]] + start2)
                                    for a in range(0, i.size, chunk)] or [np.zeros(0, dtype=np.int64)])
            shift = s2[j, -1, 1:] - s1[i, -1, 1:]
            p = w1[i] * w2[j] * math.exp(m * (n1 + n2))
            keys = np.concatenate([shift, z[:, None]], axis=1)
            uk, inv = np.unique(keys, axis=0, return_inverse=True)
            tot = np.bincount(inv.ravel(), weights=p, minlength=uk.shape[0])
            for row, val in zip(uk, tot):
                key = (n1, n2, *row.tolist())
                rows[key] = rows.get(key, 0.0) + float(val)
    keys = sorted(rows)
    arr = np.array(keys, dtype=np.int64).reshape(-1, cfg.d + 2)
    prob = np.array([rows[q] for q in keys])
    n1a, n2a = arr[:, 0], arr[:, 1]
    slack = float(np.sum(prob * np.expm1(m_halfwidth * (n1a + n2a))))
    return StripTable(dy, n1a, n2a, arr[:, 2:-1], arr[:, -1], prob, cutoff, m, slack)


class StripTables:
    """Tables per start offset, built on demand; offsets with ``|dy|_1 > cutoff`` share the far table."""

    def __init__(self, cfg: WalkConfig, spec: PotentialSpec, beta: float, cutoff: int,
                 m_hat: float | None = None) -> None:
        self.cfg, self.spec, self.beta, self.cutoff = cfg, spec, beta, cutoff
        self.m_hat = fixed_length_mass(cfg, spec, beta, cutoff) if m_hat is None else m_hat
        self._tables: dict[Offset | None, StripTable] = {}

    def key(self, dy: Offset) -> Offset | None:
        return None if sum(abs(c) for c in dy) > self.cutoff else tuple(int(c) for c in dy)

    def __getitem__(self, dy: Offset) -> StripTable:
        k = self.key(dy)
        if k not in self._tables:
            self._tables[k] = build_strip_table(self.cfg, self.spec, self.beta, k, self.cutoff, self.m_hat)
        return self._tables[k]

    @property
    def phi1(self) -> float:
        return float(phi_table(self.spec, self.beta, 1)[1])


# --- chain samples --------------------------------------------------------------

@dataclass(frozen=True)
class ChainSample:
    """``(n_chains, steps)`` strip sequences; ``valid`` is a prefix mask per chain."""

    w: np.ndarray
    zeta: np.ndarray
    eq: np.ndarray
    valid: np.ndarray
    eq0: np.ndarray
    lengths: np.ndarray


def _table_chains(tables: StripTables, dy: Offset, n: int, steps: int, stream: RngStream) -> ChainSample:
    d1 = tables.cfg.d - 1
    off = np.tile(np.asarray(dy, dtype=np.int64), (n, 1))
    zeta = np.zeros((n, steps), dtype=np.int64)
    eq = np.zeros((n, steps), dtype=bool)
    valid = np.zeros((n, steps), dtype=bool)
    lengths = np.zeros((n, steps), dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for t in range(steps):
        u = stream.gen.random(n)
        keys = [tables.key(tuple(o)) for o in off]
        for k in set(keys):
            rows = np.flatnonzero(alive & np.array([q == k for q in keys]))
            if rows.size == 0:
                continue
            tab = tables[k if k is not None else (tables.cutoff + 1, *(0,) * (d1 - 1))]
            idx = tab.sample(u[rows])
            ok = idx >= 0
            r, i = rows[ok], idx[ok]
            off[r] += tab.shift[i]
            zeta[r, t] = tab.zeta[i]
            lengths[r, t] = tab.n1[i] + tab.n2[i]
            valid[r, t] = True
            eq[r, t] = np.all(off[r] == 0, axis=1)
            alive[rows[~ok]] = False
    return ChainSample(np.ones((n, steps)), zeta, eq, valid, np.full(n, not any(dy)), lengths)


class PairPathSampler:
    """Strip sequences cut from pairs of walks conditioned to stay above their start.

    Walks run ``horizon`` steps. A common breaking height counts only when
    both walks end at least ``guard`` levels above it, so that a later return
    (probability at most ``exp(-2 h guard)`` per walk) is negligible.
    """

    def __init__(self, cfg: WalkConfig, spec: PotentialSpec, beta: float, horizon: int = 600,
                 guard: int = 12, batch: int = 1000) -> None:
        if cfg.h <= 0:
            raise ValueError("strips need h > 0")
        self.cfg, self.spec, self.beta = cfg, spec, beta
        self.horizon, self.guard, self.batch = horizon, guard, batch
        self.phitab = phi_table(spec, beta, horizon + 1)

    @property
    def phi1(self) -> float:
        return float(self.phitab[1])

    def _walks(self, n: int, stream: RngStream) -> np.ndarray:
        """Step arrays of ``n`` walks whose heights stay positive up to the horizon."""
        cdf = np.cumsum(step_law(self.cfg).probs())[:-1].astype(np.float32)
        dh = step_vectors(self.cfg.d)[:, 0]
        out, have = [], 0
        while have < n:
            m = max(4 * (n - have), 64)
            u = stream.gen.random((m, self.horizon), dtype=np.float32)
            steps = np.searchsorted(cdf, u, side="right").astype(np.int8)
            ok = np.cumsum(dh[steps], axis=1).min(axis=1) > 0
            out.append(steps[ok])
            have += int(ok.sum())
        return np.concatenate(out)[:n]

    def strips(self, n: int, dy: Offset, stream: RngStream, max_steps: int) -> dict[str, np.ndarray]:
        """Per pair, up to ``max_steps`` strips: lengths, ``Phi1 + Phi2``, overlap, end equality."""
        cols = {k: [] for k in ("n", "phi", "zeta", "eq", "valid")}
        for lo in range(0, n, self.batch):
            m = min(self.batch, n - lo)
            res = self._batch(self._walks(m, stream), self._walks(m, stream), dy, max_steps)
            for k in cols:
                cols[k].append(res[k])
        return {k: np.concatenate(v) for k, v in cols.items()}

    def _batch(self, st1: np.ndarray, st2: np.ndarray, dy: Offset, M: int) -> dict[str, np.ndarray]:
        from .montecarlo import runs, site_codes

        d, T, n = self.cfg.d, self.horizon, st1.shape[0]
        vec = step_vectors(d)
        start2 = np.array((0, *dy), dtype=np.int64)
        pos = [np.cumsum(vec[st1.astype(np.int64)], axis=1), np.cumsum(vec[st2.astype(np.int64)], axis=1) + start2]
        H = T + 1
        common = np.ones((n, H), dtype=bool)
        first = []
        rows_t = np.repeat(np.arange(n), H)
        times = np.tile(np.arange(H), n)
        for P in pos:
            h = np.concatenate([np.zeros((n, 1), dtype=np.int64), P[:, :, 0]], axis=1)
            # r breaks the walk when it never rose above r before its last visit to r;
            # the piece boundary is that last visit
            last = np.full((n, H), -1, dtype=np.int64)
            inside = h.ravel() < H
            np.maximum.at(last, (rows_t[inside], h.ravel()[inside]), times[inside])
            pre_max = np.maximum.accumulate(h, axis=1)
            seen = last >= 0
            bp = seen & (np.take_along_axis(pre_max, np.maximum(last, 0), axis=1) <= np.arange(H)[None, :])
            trusted = np.arange(H)[None, :] <= (h[:, -1] - self.guard)[:, None]
            common &= bp & trusted
            first.append(last)
        common[:, 0] = True
        strip_of_h = np.cumsum(common, axis=1) - common  # number of common heights below h
        S = M + 2
        count = common.sum(axis=1) - 1  # complete strips per pair
        valid = np.arange(M)[None, :] < count[:, None]

        # strip boundary times and end offsets
        heights_sorted = np.where(common, np.arange(H)[None, :], H + 1)
        heights_sorted.sort(axis=1)
        K = heights_sorted[:, : M + 1]
        Kc = np.minimum(K, H - 1)
        rows = np.arange(n)[:, None]
        tb = [np.where(K <= H - 1, fh[rows, Kc], 0) for fh in first]
        lengths = (tb[0][:, 1:] - tb[0][:, :-1]) + (tb[1][:, 1:] - tb[1][:, :-1])
        perp = []
        for P, t, s0 in zip(pos, tb, (np.zeros(d, dtype=np.int64), start2)):
            full = np.concatenate([np.broadcast_to(s0, (n, 1, d)), P], axis=1)
            perp.append(full[rows, t[:, 1:], 1:])
        eq = np.all(perp[0] == perp[1], axis=-1)

        radius = T + int(np.abs(start2).sum())
        base = 2 * radius + 1
        codes = [site_codes(P, radius) for P in pos]
        big = base**d
        phi = np.zeros(n * S)
        per = []
        for c in codes:
            r, key, length = runs(c)
            hgt = key % base - radius
            s = np.minimum(strip_of_h[r, np.minimum(hgt, H - 1)], S - 1)
            phi += np.bincount(r * S + s, weights=self.phitab[length], minlength=n * S)
            per.append((r * big + key, length, r, s))
        _, i1, i2 = np.intersect1d(per[0][0], per[1][0], assume_unique=True, return_indices=True)
        zsum = np.bincount(per[0][2][i1] * S + per[0][3][i1], weights=per[0][1][i1] + per[1][1][i2],
                           minlength=n * S)
        phi = phi.reshape(n, S)[:, 1 : M + 1]
        zeta = zsum.reshape(n, S)[:, 1 : M + 1].astype(np.int64)
        return {"n": np.where(valid, lengths, 0), "phi": np.where(valid, phi, 0.0),
                "zeta": np.where(valid, zeta, 0), "eq": eq & valid, "valid": valid}


def normalising_mass(n: np.ndarray, phi: np.ndarray) -> float:
    """``m`` with ``mean exp(m n - phi) = 1`` over the given strips."""
    if np.all(phi == 0):
        return 0.0

    def f(m: float) -> float:
        return float(logsumexp(m * n - phi)) - math.log(n.size)

    hi = 1.0
    while f(hi) < 0:
        hi *= 2
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-12))


# --- sigma statistics -----------------------------------------------------------

@dataclass(frozen=True)
class ChainStats:
    """Statistics of the first strip index ``sigma_1`` and of ``exp(phi(1) rho_{sigma_1})``.

    ``p_sigma[m - 1]`` estimates ``P[sigma_1 = m]``. ``contraction`` counts
    chains with ``sigma_1`` found; ``contraction_conservative`` adds the
    unknown chains at the largest observed ``rho`` and the power-law tail
    beyond ``max_steps`` (capped at the observed residual mass), also at the
    largest ``rho``.
    """

    n_chains: int
    max_steps: int
    p_sigma: np.ndarray
    p_sigma_stderr: np.ndarray
    contraction: float
    contraction_stderr: float
    contraction_conservative: float
    conservative_stderr: float
    unknown_mass: float
    residual_mass: float
    tail_mass: float
    rho_max: int
    slope: float
    slope_stderr: float
    slope_window: tuple[int, ...]
    m_hat: float = 0.0

    @property
    def ci(self) -> tuple[float, float]:
        hw = 1.96 * self.conservative_stderr
        return self.contraction_conservative - hw, self.contraction_conservative + hw

    @property
    def slope_ci(self) -> tuple[float, float]:
        hw = 1.96 * self.slope_stderr
        return self.slope - hw, self.slope + hw


def _empty_stats(n: int) -> ChainStats:
    e = np.zeros(0)
    return ChainStats(n, 0, e, e, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0, math.nan, math.nan, ())


def sigma_statistics(cs: ChainSample, phi1: float, min_events: int = 10) -> ChainStats:
    n, M = cs.zeta.shape
    if M == 0:
        return _empty_stats(n)
    prev_eq = np.concatenate([cs.eq0[:, None], cs.eq[:, :-1]], axis=1)
    cond = cs.valid & (cs.zeta > 2 * (prev_eq & ~cs.eq))
    found = cond.any(axis=1)
    s = np.argmax(cond, axis=1)
    W = np.cumprod(np.where(cs.valid, cs.w, 1.0), axis=1)
    rows = np.arange(n)
    rho = cs.zeta[rows, s] + 2 * cs.eq[rows, s]
    rho_max = int(rho[found].max()) if found.any() else 0
    nv = cs.valid.sum(axis=1)
    W_last = np.where(nv > 0, W[rows, np.maximum(nv - 1, 0)], 1.0)
    unknown = ~found & (nv < M)
    beyond = ~found & (nv == M)

    found_part = np.where(found, W[rows, s] * np.exp(phi1 * rho), 0.0)
    unknown_part = np.where(unknown, W_last * math.exp(phi1 * rho_max), 0.0)

    ind = np.zeros((n, M))
    ind[rows[found], s[found]] = W[rows[found], s[found]]
    p = ind.mean(axis=0)
    pse = ind.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(M)
    counts = np.bincount(s[found], minlength=M)

    # log-log slope of P[sigma_1 = m + 1] against m, weighted least squares
    m_idx = np.arange(1, M)  # m = 1..M-1 for sigma_1 = m + 1
    ok = (counts[1:] >= min_events) & (p[1:] > 0)
    win = tuple(int(x) for x in m_idx[ok])
    slope = slope_se = math.nan
    if len(win) >= 3:
        x = np.log(m_idx[ok])
        y = np.log(p[1:][ok])
        wts = (p[1:][ok] / pse[1:][ok]) ** 2
        X = np.stack([np.ones_like(x), x], axis=1)
        A = X.T @ (wts[:, None] * X)
        coef = np.linalg.solve(A, X.T @ (wts * y))
        resid = y - X @ coef
        dof = len(win) - 2
        scale = max(1.0, float(wts @ resid**2) / dof)
        slope = float(coef[1])
        slope_se = float(math.sqrt(np.linalg.inv(A)[1, 1] * scale))

    residual = float(np.mean(np.where(beyond, W_last, 0.0)))
    tail = 0.0
    if beyond.any():
        if math.isfinite(slope) and slope < -1:
            # sum over m >= M of P[sigma_1 = m + 1], continued from the last fitted point
            m0 = win[-1]
            c0 = p[m0]
            tail = float(sum(c0 * (m / m0) ** slope for m in range(M, 100 * M)))
            tail += c0 * (100 * M / m0) ** slope * 100 * M / (-slope - 1)
            tail = min(tail, residual)
        else:
            tail = residual
    tail_part = tail * math.exp(phi1 * rho_max)
    cons = found_part + unknown_part
    return ChainStats(
        n, M, p, pse, float(found_part.mean()), float(found_part.std(ddof=1) / math.sqrt(n)),
        float(cons.mean() + tail_part), float(cons.std(ddof=1) / math.sqrt(n)),
        float(np.mean(np.where(unknown, W_last, 0.0))),
        residual, tail, rho_max, slope, slope_se, win)


def simulate_sigma_chain(source: StripTables | PairPathSampler, max_steps: int, stream: RngStream,
                         n_chains: int = 10_000, dy: Offset | None = None) -> ChainStats:
    """Run ``n_chains`` strip chains from start offset ``dy`` for up to ``max_steps`` strips."""
    d1 = source.cfg.d - 1
    dy = tuple(int(c) for c in dy) if dy is not None else (0,) * d1
    if max_steps == 0:
        return _empty_stats(n_chains)
    if isinstance(source, StripTables):
        return sigma_statistics(_table_chains(source, dy, n_chains, max_steps, stream), source.phi1)
    st = source.strips(n_chains, dy, stream, max_steps)
    ok = st["valid"]
    m = normalising_mass(st["n"][ok], st["phi"][ok])
    w = np.where(ok, np.exp(m * st["n"] - st["phi"]), 1.0)
    cs = ChainSample(w, st["zeta"], st["eq"], ok, np.full(n_chains, not any(dy)), st["n"])
    out = sigma_statistics(cs, source.phi1)
    return ChainStats(**{**out.__dict__, "m_hat": m})


# --- per-path check of the strip bound ---------------------------------------------

def _strip_rho(tup: PathTuple, dy: Offset) -> tuple[int, list[int]]:
    """``sum_i rho_i`` along the irreducible decomposition and the overlaps ``zeta_i``."""
    dec = irreducible_decomposition(tup)
    p1, p2 = tup.paths
    zetas, eqs = [], []
    for a, b in zip(dec.times, dec.times[1:]):
        s1 = [p1.site(t) for t in range(a[0] + 1, b[0] + 1)]
        s2 = [p2.site(t) for t in range(a[1] + 1, b[1] + 1)]
        shared = set(s1) & set(s2)
        zetas.append(sum(x in shared for x in s1) + sum(x in shared for x in s2))
        eqs.append(p1.site(b[0])[1:] == p2.site(b[1])[1:])
    eq_prev = not any(dy)
    total = int(eq_prev)
    for z, e in zip(zetas, eqs):
        if z > 2 * (eq_prev and not e):
            total += z + 2 * e
        eq_prev = e
    return total, zetas


def overlap_strip_violations(cfg: WalkConfig, spec: PotentialSpec, beta: float, Lmax: int, N_max: int,
                       dy: Offset = (), tol: float = 1e-12) -> dict[str, int]:
    """Check ``Phi1 + Phi2 - Phi_coupled <= phi(1) sum_i rho_i`` on all bridge pairs of equal span.

    Walk 2 starts at ``(0, dy)``; lengths are at most ``N_max`` and spans at most ``Lmax``.
    """
    dy = tuple(int(c) for c in dy) or (0,) * (cfg.d - 1)
    bp = bridge_paths(cfg, spec, beta, Lmax, N_max)
    phi1 = float(phi_table(spec, beta, 1)[1])
    paths = [Path(cfg.d, tuple(int(s) for s in bp["steps"][i, : bp["n"][i]])) for i in range(bp["n"].size)]
    shifted = [Path(cfg.d, q.steps, (0, *dy)) for q in paths]
    bad = checked = 0
    for i, q1 in enumerate(paths):
        for j, q2 in enumerate(shifted):
            if bp["span"][i] != bp["span"][j]:
                continue
            psi, _ = overlap_psi(q1, q2, spec, beta)
            total, _ = _strip_rho(PathTuple.of(q1, q2), dy)
            bad += psi > phi1 * total + tol
            checked += 1
    return {"violations": int(bad), "pairs": int(checked)}
