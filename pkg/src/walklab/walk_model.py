"""Drift-tilted nearest-neighbour walk on Z^d.

Steps are indexed in a fixed order: index ``2a`` is ``+e_{a+1}`` and ``2a+1`` is
``-e_{a+1}``. The drift acts on the first axis only, so the projected walk
``S_1`` is a lazy three-outcome walk; every hyperplane computation runs on it.
"""
from __future__ import annotations

import math
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize_scalar

from .streams import RngStream

Site = tuple[int, ...]


@dataclass(frozen=True)
class WalkConfig:
    d: int
    h: float

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be an integer >= 1, got {self.d}")
        if not (self.h >= 0 and math.isfinite(self.h)):
            raise ValueError(f"drift must be finite and >= 0, got {self.h}")


@dataclass(frozen=True)
class StepLaw:
    d: int
    p_plus: float
    p_minus: float
    p_perp: float
    lambda_h: float

    @property
    def p_lazy(self) -> float:
        """Probability that ``S_1`` does not move."""
        return (2 * self.d - 2) * self.p_perp

    def probs(self) -> np.ndarray:
        """Step probabilities in step-index order."""
        p = np.full(2 * self.d, self.p_perp)
        p[0], p[1] = self.p_plus, self.p_minus
        return p

    def rho(self, theta: float) -> float:
        """``E[exp(-theta * S_1(1))]``."""
        return self.p_plus * math.exp(-theta) + self.p_minus * math.exp(theta) + self.p_lazy


def step_law(cfg: WalkConfig) -> StepLaw:
    eh, emh = math.exp(cfg.h), math.exp(-cfg.h)
    total = eh + emh + 2 * cfg.d - 2
    return StepLaw(cfg.d, eh / total, emh / total, 1.0 / total, math.log(total / (2 * cfg.d)))


def step_vectors(d: int) -> np.ndarray:
    """Unit steps as rows, in step-index order."""
    v = np.zeros((2 * d, d), dtype=np.int64)
    for a in range(d):
        v[2 * a, a] = 1
        v[2 * a + 1, a] = -1
    return v


def escape_prob(cfg: WalkConfig) -> float:
    """Probability that ``S_1(n) > 0`` for every ``n >= 1``.

    Equals ``p_plus - p_minus``, the reciprocal of the expected number of
    visits of ``S_1`` to 0.
    """
    law = step_law(cfg)
    return law.p_plus - law.p_minus


def hitting_prob_neg(cfg: WalkConfig, L: int) -> float:
    """Probability that ``S_1`` ever reaches ``-L``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return math.exp(-2.0 * L * cfg.h)


def projected_rate(law: StepLaw) -> float:
    """``min_theta rho(theta)``; the optimum sits at ``theta = h``."""
    return 2.0 * math.sqrt(law.p_plus * law.p_minus) + law.p_lazy


@dataclass(frozen=True)
class GreenSum:
    value: float
    certified_tail: float
    M: int


def green_sum(cfg: WalkConfig, M: int) -> GreenSum:
    """``sum_{m<=M} P[S_1(m)=0]`` with a Chernoff bound on the omitted terms."""
    law = step_law(cfg)
    dist = np.zeros(2 * M + 3)
    dist[M + 1] = 1.0
    total = 1.0
    for _ in range(M):
        nxt = law.p_lazy * dist
        nxt[1:] += law.p_plus * dist[:-1]
        nxt[:-1] += law.p_minus * dist[1:]
        dist = nxt
        total += dist[M + 1]
    r = projected_rate(law)
    tail = r ** (M + 1) / (1.0 - r) if r < 1 else math.inf
    return GreenSum(total, tail, M)


def green_horizon(cfg: WalkConfig, tol: float) -> int:
    """Smallest M whose certified Green-sum tail is below ``tol``."""
    r = projected_rate(step_law(cfg))
    if r >= 1:
        raise ValueError("no certificate without drift")
    return max(0, math.ceil(math.log(tol * (1 - r)) / math.log(r)) - 1)


def chernoff_level_tail(law: StepLaw, level: float, horizon: int) -> tuple[float, float]:
    """Bound on ``sum_{n>horizon} P[S_1(n) = level]`` (any sign of level).

    Returns ``(bound, theta)`` for the best ``theta > 0`` found by bounded
    scalar minimisation of the log bound.
    """
    if law.p_plus <= law.p_minus:
        return math.inf, 0.0

    def log_bound(theta: float) -> float:
        r = law.rho(theta)
        return theta * level + (horizon + 1) * math.log(r) - math.log1p(-r)

    # rho(theta) < 1 exactly on (0, log(p_plus/p_minus))
    hi = math.log(law.p_plus / law.p_minus) if law.p_minus > 0 else 50.0
    res = minimize_scalar(log_bound, bounds=(1e-9 * hi, (1 - 1e-9) * hi), method="bounded",
                          options={"xatol": 1e-10})
    return math.exp(res.fun), float(res.x)


@dataclass(frozen=True)
class HittingEstimate:
    L: int
    n_walks: int
    p_hat: float
    stderr: float
    horizon: int
    residual_bound: float


def hitting_mc(cfg: WalkConfig, L: int, n_walks: int, stream: RngStream,
               tail_tol: float = 1e-4, chunk: int = 1 << 15) -> HittingEstimate:
    """Monte Carlo frequency of reaching ``-L`` before a certified horizon.

    The horizon is the first N* whose Chernoff residual (probability of a
    first visit after N*) is below ``tail_tol``.
    """
    law = step_law(cfg)
    if cfg.h <= 0:
        raise ValueError("horizon certificate needs h > 0")
    horizon = 1
    while chernoff_level_tail(law, -L, horizon)[0] > tail_tol:
        horizon *= 2
    lo, hi = horizon // 2, horizon
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if chernoff_level_tail(law, -L, mid)[0] > tail_tol:
            lo = mid
        else:
            hi = mid
    horizon = hi
    residual = chernoff_level_tail(law, -L, horizon)[0]

    up, down = np.float32(law.p_plus), np.float32(law.p_plus + law.p_minus)
    hits = 0
    done = 0
    while done < n_walks:
        m = min(chunk, n_walks - done)
        u = stream.gen.random((m, horizon), dtype=np.float32)
        steps = (u < up).astype(np.int16) - ((u >= up) & (u < down)).astype(np.int16)
        hits += int(np.count_nonzero(np.cumsum(steps, axis=1).min(axis=1) <= -L))
        done += m
    p = hits / n_walks
    return HittingEstimate(L, n_walks, p, math.sqrt(p * (1 - p) / n_walks), horizon, residual)


@dataclass(frozen=True)
class Path:
    """Nearest-neighbour trajectory given by step indices from ``start``."""

    d: int
    steps: tuple[int, ...]
    start: Site = field(default=())

    def __post_init__(self) -> None:
        start = self.start or (0,) * self.d
        if len(start) != self.d or start[0] != 0:
            raise ValueError("start must have d coordinates and first coordinate 0")
        object.__setattr__(self, "start", tuple(int(c) for c in start))
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        if any(not 0 <= s < 2 * self.d for s in self.steps):
            raise ValueError("step index out of range")

    @classmethod
    def from_moves(cls, d: int, moves: Sequence[int], start: Site = ()) -> Path:
        """Build from signed axis labels: ``+1`` is +e1, ``-2`` is -e2."""
        idx = [2 * (abs(m) - 1) + (m < 0) for m in moves]
        return cls(d, tuple(idx), start)

    @classmethod
    def parse(cls, text: str, d: int = 1, start: Site = ()) -> Path:
        """``"++-"`` style paths along the first axis."""
        return cls.from_moves(d, [1 if c == "+" else -1 for c in text], start)

    def __len__(self) -> int:
        return len(self.steps)

    @cached_property
    def sites(self) -> np.ndarray:
        out = np.empty((len(self.steps) + 1, self.d), dtype=np.int64)
        out[0] = self.start
        if self.steps:
            out[1:] = self.start + np.cumsum(step_vectors(self.d)[list(self.steps)], axis=0)
        return out

    @property
    def heights(self) -> np.ndarray:
        return self.sites[:, 0]

    def site(self, n: int) -> Site:
        return tuple(int(c) for c in self.sites[n])


@dataclass(frozen=True)
class LocalTimeField:
    counts: Mapping[Site, int]
    M: int
    N: int

    @property
    def total(self) -> int:
        return self.N - self.M

    @property
    def support(self) -> frozenset[Site]:
        return frozenset(self.counts)

    def sumsq(self) -> int:
        return sum(c * c for c in self.counts.values())

    def __getitem__(self, x: Site) -> int:
        return self.counts.get(x, 0)


def local_times(path: Path, M: int = 0, N: int | None = None) -> LocalTimeField:
    """Visit counts at times ``M+1..N``; time ``M`` itself is not counted."""
    N = len(path) if N is None else N
    if not 0 <= M <= N <= len(path):
        raise ValueError(f"window ({M}, {N}] outside path of length {len(path)}")
    counts = Counter(path.site(n) for n in range(M + 1, N + 1))
    return LocalTimeField(dict(counts), M, N)


def sample_steps(cfg: WalkConfig, n_paths: int, N: int, stream: RngStream) -> np.ndarray:
    """``(n_paths, N)`` array of i.i.d. step indices."""
    p = step_law(cfg).probs()
    return stream.gen.choice(2 * cfg.d, size=(n_paths, N), p=p).astype(np.int8)


def sample_path(cfg: WalkConfig, N: int, stream: RngStream, start: Site = ()) -> Path:
    if N < 0:
        raise ValueError("N must be >= 0")
    steps = sample_steps(cfg, 1, N, stream)[0] if N else ()
    return Path(cfg.d, tuple(int(s) for s in steps), start)
