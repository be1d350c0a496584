"""Exact enumeration: partition functions, bridge spectra and truncated hyperplane sums.

Every quantity is a sum of ``P_h(path) * exp(-Phi(path))`` over a finite path
set, computed by depth-first traversal in lexicographic step order. Infinite
sums over path lengths are truncated; the omitted mass is bounded by a
certificate (see ``TruncatedSum``).
"""
from __future__ import annotations

import itertools
import math
import os
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Literal

import numpy as np

from ._backend import kernels
from .potential import PotentialSpec, phi_table
from .walk_model import (LocalTimeField, Path, StepLaw, WalkConfig, chernoff_level_tail,
                         local_times, step_law, step_vectors)

BUDGET_ENV = "WALKLAB_BUDGET"
DEFAULT_BUDGET = 2 * 10**9


class BudgetExceeded(RuntimeError):
    pass


class ToleranceUnreachable(RuntimeError):
    pass


def default_budget() -> int:
    return int(float(os.environ.get(BUDGET_ENV, DEFAULT_BUDGET)))


def _budget(budget: int | None) -> int:
    b = default_budget() if budget is None else int(budget)
    if b <= 0:
        raise ValueError("budget must be positive")
    return b


# --- geometry ---------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Flat indexing of the integer box ``lo[a] <= x_a < lo[a] + size[a]``."""

    lo: tuple[int, ...]
    size: tuple[int, ...]

    @property
    def strides(self) -> tuple[int, ...]:
        st, acc = [], 1
        for s in reversed(self.size):
            st.append(acc)
            acc *= s
        return tuple(reversed(st))

    @property
    def cells(self) -> int:
        return int(np.prod(self.size))

    def flat(self, site) -> int:
        return int(sum((c - l) * s for c, l, s in zip(site, self.lo, self.strides)))

    def offsets(self) -> np.ndarray:
        d = len(self.size)
        return (step_vectors(d) @ np.asarray(self.strides, dtype=np.int64)).astype(np.int64)

    @classmethod
    def around(cls, d: int, radius: int, heights: tuple[int, int] | None = None) -> Box:
        lo = [-radius] * d
        size = [2 * radius + 1] * d
        if heights is not None:
            lo[0], size[0] = heights[0], heights[1] - heights[0] + 1
        return cls(tuple(lo), tuple(size))


def _kernel_args(cfg: WalkConfig) -> tuple[np.ndarray, np.ndarray]:
    probs = step_law(cfg).probs()
    dh = step_vectors(cfg.d)[:, 0].astype(np.int64)
    return probs, dh


# --- generic visitor --------------------------------------------------------

def enumerate_paths(cfg: WalkConfig, N: int, visitor: Callable[[float, LocalTimeField, Path], Any],
                    budget: int | None = None, reduce: Callable[[Any, Any], Any] | None = None,
                    initial: Any = 0) -> Any:
    """Visit every N-step path in lexicographic step order.

    ``visitor(weight, local_times, path)`` is called once per path and the
    results are folded left with ``reduce`` (default ``+``) from ``initial``.
    This is the slow, fully general oracle; the compiled kernels cover the
    standard statistics.
    """
    if (2 * cfg.d) ** N > _budget(budget):
        raise BudgetExceeded(f"(2d)^N = {(2 * cfg.d) ** N} paths exceed the budget")
    probs = step_law(cfg).probs()
    acc = initial
    for steps in itertools.product(range(2 * cfg.d), repeat=N):
        path = Path(cfg.d, steps)
        weight = float(np.prod(probs[list(steps)])) if steps else 1.0
        val = visitor(weight, local_times(path), path)
        acc = val + acc if reduce is None else reduce(acc, val)
    return acc


# --- fixed length -----------------------------------------------------------

@dataclass(frozen=True)
class FixedStats:
    """All-paths statistics up to length N (index = path length)."""

    N: int
    mass: np.ndarray
    G: np.ndarray
    all_ones: np.ndarray
    saw_count: np.ndarray
    bridge: np.ndarray  # bridge[L, n] = b(L; n)
    sumsq_hist: np.ndarray  # at length N, indexed by sum of squared local times
    nodes: int


@lru_cache(maxsize=64)
def fixed_stats(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int,
                budget: int | None = None) -> FixedStats:
    total_nodes = sum((2 * cfg.d) ** n for n in range(1, N + 1))
    if total_nodes > _budget(budget):
        raise BudgetExceeded(f"{total_nodes} nodes exceed the budget")
    probs, dh = _kernel_args(cfg)
    box = Box.around(cfg.d, N)
    res = kernels.enum_fixed(probs, box.offsets(), dh, box.flat((0,) * cfg.d), box.cells, N,
                             phi_table(spec, beta, N + 1), total_nodes + 1)
    mass, G, ones, saw, bridge, hist, nodes = res
    return FixedStats(N, mass, G, ones, saw, bridge, hist, int(nodes))


def exact_G(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int, budget: int | None = None) -> float:
    """``E_h[exp(-Phi_beta(N))]``."""
    return float(fixed_stats(cfg, spec, beta, N, budget).G[N])


def exact_G_series(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int,
                   budget: int | None = None) -> np.ndarray:
    """``G(0..N)`` from one traversal."""
    return fixed_stats(cfg, spec, beta, N, budget).G.copy()


def summation_error(cfg: WalkConfig, N: int) -> np.ndarray:
    """Bound on the rounding error of ``log G(n)``, ``n = 0..N``.

    ``G(n)`` sums ``(2d)^n`` nonnegative terms, each carrying ``n`` rounded
    products, so its relative error is below ``((2d)^n + n + 1) u``; the log
    adds one more rounding.
    """
    u = np.finfo(float).eps / 2
    n = np.arange(N + 1, dtype=float)
    return ((2.0 * cfg.d) ** n + n + 2) * u * 1.01


def exact_B(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int,
            budget: int | None = None) -> tuple[float, np.ndarray]:
    """``(B(N), b(L; N) for L = 0..N)``; ``b(0; N) = 0`` for ``N >= 1``."""
    spectrum = fixed_stats(cfg, spec, beta, N, budget).bridge[:, N].copy()
    return float(spectrum.sum()), spectrum


def exact_restricted_G(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int, k: float,
                       budget: int | None = None) -> float:
    """``E_h[exp(-Phi(N)); sum_x l_x^2 <= k N]``.

    Computed as ``G(N)`` times the cumulative histogram share, so it is
    nondecreasing in ``k`` and equals ``G(N)`` exactly once ``k >= N``.
    """
    st = fixed_stats(cfg, spec, beta, N, budget)
    cut = math.floor(k * N + 1e-9)
    if cut < 0:
        return 0.0
    cum = np.cumsum(st.sumsq_hist)
    return float(st.G[N] * (cum[min(cut, cum.size - 1)] / cum[-1]))


def select_k(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int, spread: float = 1.5,
             budget: int | None = None) -> float:
    """Restriction level ``(mu + spread * sd) / N`` of ``sum_x l_x^2`` under the Gibbs weights.

    By Cantelli's inequality the restricted partition keeps at least
    ``spread**2 / (1 + spread**2)`` of ``G(N)``.
    """
    hist = fixed_stats(cfg, spec, beta, N, budget).sumsq_hist
    s = np.arange(hist.size, dtype=float)
    w = hist / hist.sum()
    mu = float(w @ s)
    sd = math.sqrt(max(float(w @ (s - mu) ** 2), 0.0))
    return (mu + spread * sd) / N


def energy_bound_violations(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int,
                       tol: float = 1e-12) -> dict[str, int]:
    """Violation counts of the energy bounds over all paths of length ``<= N``."""
    probs, _ = _kernel_args(cfg)
    box = Box.around(cfg.d, N)
    out = kernels.energy_bound_check(probs, box.offsets(), box.flat((0,) * cfg.d), box.cells, N,
                                phi_table(spec, beta, N + 1), tol)
    keys = ("range_lower", "length_upper", "split_subadditive", "split_equality", "window", "checks")
    return dict(zip(keys, (int(v) for v in out)))


# --- certificates -----------------------------------------------------------

def confined_green(law: StepLaw, Lmax: int) -> np.ndarray:
    """``g[k, s]``: expected visits at times ``t >= 1`` to height k of the projected
    walk from s, killed on leaving ``1..k``. Rows ``k = 0..Lmax``, columns ``s``."""
    g = np.zeros((Lmax + 1, Lmax + 1))
    for k in range(1, Lmax + 1):
        Q = np.diag(np.full(k, law.p_lazy))
        Q += np.diag(np.full(k - 1, law.p_plus), 1) + np.diag(np.full(k - 1, law.p_minus), -1)
        R = np.linalg.solve(np.eye(k) - Q, Q)  # sum_{t>=1} Q^t
        g[k, 1 : k + 1] = R[:, k - 1]
    return g


def confined_green_after(law: StepLaw, Lmax: int) -> np.ndarray:
    """``gi[k, s, r]``: like ``confined_green`` but counting only visits to k made
    after the walk has been at a height ``<= r`` at some time ``t >= 1``.
    ``r = 0`` imposes no condition."""
    g = confined_green(law, Lmax)
    gi = np.zeros((Lmax + 1, Lmax + 1, Lmax + 1))
    gi[:, :, 0] = g
    for k in range(1, Lmax + 1):
        Q = np.diag(np.full(k, law.p_lazy))
        Q += np.diag(np.full(k - 1, law.p_plus), 1) + np.diag(np.full(k - 1, law.p_minus), -1)
        # visits to k counted from time 0 once the condition holds
        after = np.linalg.solve(np.eye(k) - Q, np.eye(k)[:, k - 1])
        for r in range(1, k):
            # f(s) = sum_y Q[s,y] * (after[y] if y <= r else f(y)); solve on heights > r
            hi = slice(r, k)
            A = np.eye(k - r) - Q[hi, hi]
            f_hi = np.linalg.solve(A, Q[hi, :r] @ after[:r])
            f = Q[:, :r] @ after[:r] + Q[:, hi] @ f_hi
            gi[k, 1 : k + 1, r] = f
        # r >= k: every later visit to k already satisfies the condition
        gi[k, 1 : k + 1, k:] = g[k, 1 : k + 1, None]
    return gi


def plane_green(law: StepLaw, span: int) -> np.ndarray:
    """``gp[x + span]``: expected visits at times ``t >= 1`` of the projected walk to
    relative level ``x`` (``|x| <= span``)."""
    a = law.p_plus - law.p_minus
    if a <= 0:
        return np.full(2 * span + 1, math.inf)
    x = np.arange(-span, span + 1)
    ratio = law.p_minus / law.p_plus
    hit = np.where(x >= 0, 1.0, ratio ** (-x.astype(float)))
    return np.where(x == 0, 1.0 / a - 1.0, hit / a)


def chernoff_tail(cfg: WalkConfig, spec: PotentialSpec, beta: float, L: int, N_max: int) -> tuple[float, float]:
    """Closed-form bound on the omitted lengths ``N > N_max`` of a span-L sum."""
    bound, theta = chernoff_level_tail(step_law(cfg), L, N_max)
    return bound * math.exp(-float(phi_table(spec, beta, 1)[1]) * L), theta


# --- hyperplane sums ----------------------------------------------------------

Kind = Literal["G", "B", "Lambda", "B2", "Lambda2"]


@dataclass(frozen=True)
class TruncatedSum:
    """A truncated nonnegative series with a certified bound on what was left out.

    ``certified_tail`` bounds the omitted mass: lengths beyond ``N_max`` and
    subtrees cut at weight ``eps``, each bounded by its weight times the
    exact expected number of future completions (with the unavoidable new-site
    cost). When nothing was cut by weight, the closed-form Chernoff bound
    ``chernoff_tail`` is also valid and the smaller of the two is used.
    """

    value: float
    certified_tail: float
    N_max: int
    theta: float
    chernoff_tail: float
    eps: float = 0.0
    heuristic: bool = False
    by_length: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def upper(self) -> float:
        return self.value + self.certified_tail


@dataclass(frozen=True)
class BridgeSpectrum:
    """Single-walk bridge weights by span, length and breaking-point set."""

    Lmax: int
    N_max: int
    eps: float
    W: np.ndarray  # W[k, n, mask]
    slack: np.ndarray  # certified omitted bridge weight per span
    slack_irr: np.ndarray  # certified omitted irreducible weight per span
    nodes: int

    def b(self, L: int) -> np.ndarray:
        """``b(L; n)`` for ``n = 0..N_max``."""
        if L == 0:
            out = np.zeros(self.N_max + 1)
            out[0] = 1.0
            return out
        return self.W[L].sum(axis=1)

    def lam(self, L: int) -> np.ndarray:
        """Irreducible weights ``lambda(L; n)``: breaking-point set is ``{L}``."""
        out = np.zeros(self.N_max + 1)
        if L >= 1:
            out[:] = self.W[L, :, 1 << (L - 1)]
        return out

    def class_weights(self, L: int) -> dict[int, np.ndarray]:
        """``mask -> weight by length`` for span L (nonzero masks only)."""
        sub = self.W[L]
        return {int(m): sub[:, m] for m in np.flatnonzero(sub.sum(axis=0))}

    def Bbar(self, L: int) -> float:
        return float(self.b(L).sum())

    def Lambdabar(self, L: int) -> float:
        return float(self.lam(L).sum())

    def tail(self, L: int) -> float:
        return 0.0 if L == 0 else float(self.slack[L])

    def tail_irr(self, L: int) -> float:
        return 0.0 if L == 0 else float(min(self.slack_irr[L], self.slack[L]))

    def Bbar2(self, L: int) -> tuple[float, float]:
        """Pair sum (product of single sums) and its certified tail."""
        v, s = self.Bbar(L), self.tail(L)
        return v * v, 2 * v * s + s * s

    def Lambdabar2(self, L: int) -> tuple[float, float]:
        """Pairs of span-L bridges whose breaking-point sets meet only in ``{L}``."""
        if L == 0:
            return 0.0, 0.0
        totals = {m: float(w.sum()) for m, w in self.class_weights(L).items()}
        top = 1 << (L - 1)
        val = sum(a * b for ma, a in totals.items() for mb, b in totals.items() if ma & mb == top)
        v, s = self.Bbar(L), self.tail(L)
        return val, 2 * v * s + s * s


@lru_cache(maxsize=32)
def bridge_spectrum(cfg: WalkConfig, spec: PotentialSpec, beta: float, Lmax: int, N_max: int,
                    eps: float = 0.0, budget: int | None = None,
                    target: Literal["bridge", "irreducible"] = "bridge") -> BridgeSpectrum:
    """Enumerate bridges of span ``<= Lmax`` up to length ``N_max``.

    Subtrees whose certified future weight is below ``eps`` are cut and
    accounted in ``slack`` (all bridges) and ``slack_irr`` (irreducible ones).
    ``target`` chooses which of the two bounds decides the cut.
    """
    if Lmax > 16:
        raise ValueError("breaking-point masks support spans up to 16")
    law = step_law(cfg)
    probs, dh = _kernel_args(cfg)
    box = Box.around(cfg.d, N_max, heights=(0, Lmax + 1))
    g = confined_green(law, Lmax)
    gi = confined_green_after(law, Lmax)
    mode = {"bridge": 0, "irreducible": 1}[target]
    W, slack, slack_irr, nodes = kernels.bridge_dfs(
        probs, box.offsets(), dh, box.flat((0,) * cfg.d), box.cells, Lmax, N_max,
        phi_table(spec, beta, N_max + 1), g, gi, mode, eps, _budget(budget))
    if nodes < 0:
        raise BudgetExceeded(f"bridge enumeration (Lmax={Lmax}, N_max={N_max}, eps={eps}) over budget")
    return BridgeSpectrum(Lmax, N_max, eps, W, slack, slack_irr, int(nodes))


@lru_cache(maxsize=32)
def plane_sum(cfg: WalkConfig, spec: PotentialSpec, beta: float, L: int, N_max: int,
              eps: float = 0.0, budget: int | None = None) -> tuple[np.ndarray, float, int]:
    """Weights of paths ending at height L, by length, with certified cut slack."""
    law = step_law(cfg)
    probs, dh = _kernel_args(cfg)
    box = Box.around(cfg.d, N_max)
    span = N_max + abs(L)
    gp = plane_green(law, span)
    out, slack, nodes = kernels.plane_dfs(probs, box.offsets(), dh, box.flat((0,) * cfg.d), box.cells,
                                          L, N_max, phi_table(spec, beta, N_max + 1), gp, span, eps,
                                          _budget(budget))
    if nodes < 0:
        raise BudgetExceeded(f"hyperplane enumeration (L={L}, N_max={N_max}) over budget")
    return out, float(slack), int(nodes)


def _finish(value: float, tail: float, N_max: int, eps: float, cfg, spec, beta, L,
            by_length=None, heuristic=False) -> TruncatedSum:
    if cfg.h > 0:
        ch, theta = chernoff_tail(cfg, spec, beta, L, N_max)
    else:
        ch, theta = math.inf, 0.0
    if eps == 0.0 and not heuristic:
        tail = min(tail, ch)
    return TruncatedSum(value, tail, N_max, theta, ch, eps, heuristic, by_length)


def truncated_point_to_plane(cfg: WalkConfig, spec: PotentialSpec, beta: float, L: int, kind: Kind,
                             tol: float, N_max: int | None = None, eps: float | None = None,
                             budget: int | None = None) -> TruncatedSum:
    """Truncated hyperplane sum of the given kind at span L.

    With ``N_max``/``eps`` given, that truncation is used as is. Otherwise the
    horizon is grown (and the cut threshold shrunk) until the certified tail is
    at most ``tol``; ``ToleranceUnreachable`` is raised when the budget runs out
    first. For ``kind="G"`` at ``h = 0`` no certificate exists and the horizon
    grows until ``3`` consecutive increments change the value by less than
    ``tol/10``; the result is flagged ``heuristic``.
    """
    if kind == "G" and cfg.h == 0:
        return _heuristic_plane(cfg, spec, beta, L, tol, budget)
    fixed = N_max is not None
    n, e = (N_max, 0.0 if eps is None else eps) if fixed else (max(2 * L, 4), 0.0 if eps is None else eps)
    while True:
        try:
            ts = _evaluate(cfg, spec, beta, L, kind, n, e, budget)
        except BudgetExceeded as exc:
            if fixed:
                raise
            raise ToleranceUnreachable(f"tail above {tol} when the budget ran out ({exc})") from exc
        if fixed or ts.certified_tail <= tol:
            return ts
        n = int(n * 1.5) + 2
        if n > 400:
            raise ToleranceUnreachable(f"tail {ts.certified_tail:.3g} above {tol} at N_max={n}")
        if e > 0:
            e /= 10


def _evaluate(cfg, spec, beta, L, kind: Kind, N_max: int, eps: float, budget) -> TruncatedSum:
    if kind == "G":
        out, slack, _ = plane_sum(cfg, spec, beta, L, N_max, eps, budget)
        return _finish(float(out.sum()), slack, N_max, eps, cfg, spec, beta, L, out)
    # pair irreducibility is not a single-walk property, so pairs use the bridge cut
    target = "irreducible" if kind == "Lambda" else "bridge"
    bs = bridge_spectrum(cfg, spec, beta, max(L, 1), N_max, eps, budget, target)
    if kind == "B":
        return _finish(bs.Bbar(L), bs.tail(L), N_max, eps, cfg, spec, beta, L, bs.b(L))
    if kind == "Lambda":
        return _finish(bs.Lambdabar(L), bs.tail_irr(L), N_max, eps, cfg, spec, beta, L, bs.lam(L))
    if kind == "B2":
        v, t = bs.Bbar2(L)
    elif kind == "Lambda2":
        v, t = bs.Lambdabar2(L)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    # pair tails come from the single-walk tails, never from the Chernoff form
    return TruncatedSum(v, t, N_max, 0.0, math.inf, eps, False, None)


def _heuristic_plane(cfg, spec, beta, L, tol, budget, patience: int = 3) -> TruncatedSum:
    n = max(2 * abs(L), 4)
    prev, calm = None, 0
    while True:
        try:
            out, _, _ = plane_sum(cfg, spec, beta, L, n, 0.0, budget)
        except BudgetExceeded as exc:
            raise ToleranceUnreachable(f"no convergence before the budget ran out ({exc})") from exc
        val = float(out.sum())
        if prev is not None and abs(val - prev) < tol / 10:
            calm += 1
            if calm >= patience:
                return TruncatedSum(val, math.nan, n, 0.0, math.inf, 0.0, True, out)
        else:
            calm = 0
        prev = val
        n += 1


# --- two replicas -------------------------------------------------------------

def exact_second_moment(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: tuple[int, int],
                        dy: tuple[int, ...] = (), budget: int | None = None) -> float:
    """``E[exp(-Phi_coupled)]`` over independent walks of lengths ``N``; walk 2 starts at ``(0, dy)``."""
    N1, N2 = N
    dy = tuple(dy) or (0,) * (cfg.d - 1)
    if len(dy) != cfg.d - 1:
        raise ValueError("dy needs d-1 perpendicular coordinates")
    total_nodes = sum((2 * cfg.d) ** n for n in range(1, N1 + 1)) + (2 * cfg.d) ** N1 * sum(
        (2 * cfg.d) ** n for n in range(1, N2 + 1))
    if total_nodes > _budget(budget):
        raise BudgetExceeded(f"{total_nodes} pair nodes exceed the budget")
    start2 = (0, *dy)
    lo = [min(-N1, s - N2) for s in start2]
    hi = [max(N1, s + N2) for s in start2]
    box = Box(tuple(lo), tuple(h - l + 1 for h, l in zip(hi, lo)))
    probs, _ = _kernel_args(cfg)
    total, nodes = kernels.pair_moment(probs, box.offsets(), box.flat((0,) * cfg.d), box.flat(start2),
                                       box.cells, N1, N2, phi_table(spec, beta, N1 + N2 + 1),
                                       total_nodes + 1)
    return float(total)


def bridge_paths(cfg: WalkConfig, spec: PotentialSpec, beta: float, Lmax: int, N_max: int,
                 max_paths: int = 5_000_000) -> dict[str, np.ndarray]:
    """Every bridge of span ``<= Lmax`` and length ``<= N_max`` with its weight and breaking-point mask."""
    probs, dh = _kernel_args(cfg)
    box = Box.around(cfg.d, N_max, heights=(0, Lmax + 1))
    steps, n, span, mask, wt, count = kernels.bridge_paths(
        probs, box.offsets(), dh, box.flat((0,) * cfg.d), box.cells, Lmax, N_max,
        phi_table(spec, beta, N_max + 1), max_paths)
    if count < 0:
        raise BudgetExceeded(f"more than {max_paths} bridges")
    return {"steps": steps, "n": n.astype(np.int64), "span": span.astype(np.int64),
            "mask": mask, "weight": wt}

