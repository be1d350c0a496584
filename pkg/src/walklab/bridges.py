"""Bridges, breaking points, irreducible pieces and backtracks of walk tuples.

Everything here works on explicit paths and is written for clarity, not
speed: it is the reference that the enumeration kernels' breaking-point
masks are tested against.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .walk_model import Path

Window = tuple[int, int]


@dataclass(frozen=True)
class PathTuple:
    """``p`` walks, each observed on a time window ``(M, N)``."""

    paths: tuple[Path, ...]
    windows: tuple[Window, ...] = field(default=())

    def __post_init__(self) -> None:
        paths = tuple(self.paths)
        if not paths:
            raise ValueError("need at least one path")
        if len({q.d for q in paths}) != 1:
            raise ValueError("paths live in different dimensions")
        windows = tuple(tuple(w) for w in self.windows) or tuple((0, len(q)) for q in paths)
        if len(windows) != len(paths):
            raise ValueError("one window per path")
        for q, (M, N) in zip(paths, windows):
            if not 0 <= M <= N <= len(q):
                raise ValueError(f"window ({M}, {N}) outside path of length {len(q)}")
        object.__setattr__(self, "paths", paths)
        object.__setattr__(self, "windows", windows)

    @classmethod
    def of(cls, *paths: Path) -> PathTuple:
        return cls(tuple(paths))

    @property
    def p(self) -> int:
        return len(self.paths)

    @property
    def d(self) -> int:
        return self.paths[0].d

    def heights(self, j: int) -> np.ndarray:
        """First coordinates of walk ``j`` over its window, relative to the window start."""
        M, N = self.windows[j]
        hts = self.paths[j].heights
        return hts[M : N + 1] - hts[M]

    def sub(self, windows: tuple[Window, ...]) -> PathTuple:
        return PathTuple(self.paths, windows)


@dataclass(frozen=True)
class BridgeDecomposition:
    """Split times ``times[i][j]`` (walk j, absolute) with ``times[0]`` the window
    starts and ``times[-1]`` the window ends; ``spans[i]`` is the span of piece i."""

    times: tuple[tuple[int, ...], ...]
    spans: tuple[int, ...]

    def pieces(self, tup: PathTuple) -> list[PathTuple]:
        return [tup.sub(tuple(zip(a, b))) for a, b in zip(self.times, self.times[1:])]


@dataclass(frozen=True)
class Backtrack:
    """Walk ``j`` on times ``(m, n)``; covers the heights ``covered[0] <= k < covered[1]``."""

    j: int
    m: int
    n: int
    span: int
    covered: tuple[int, int]

    def covers(self, k: int) -> bool:
        return self.covered[0] <= k < self.covered[1]


def _abs_heights(tup: PathTuple, j: int) -> np.ndarray:
    M, N = tup.windows[j]
    return tup.paths[j].heights[M : N + 1]


def bridge_span(tup: PathTuple, windows: tuple[Window, ...] | None = None) -> int | None:
    """Common span when every walk is a bridge between shared hyperplanes, else ``None``."""
    if windows is not None:
        tup = tup.sub(windows)
    starts, ends = set(), set()
    for j in range(tup.p):
        hts = _abs_heights(tup, j)
        starts.add(int(hts[0]))
        ends.add(int(hts[-1]))
        if len(hts) > 1 and not (np.all(hts[1:] > hts[0]) and np.all(hts[1:] <= hts[-1])):
            return None
    if len(starts) != 1 or len(ends) != 1:
        return None
    return ends.pop() - starts.pop()


def _require_bridge(tup: PathTuple) -> int:
    span = bridge_span(tup)
    if span is None:
        raise ValueError("not a bridge")
    return span


def _split_time(hts: np.ndarray, r: int) -> int | None:
    """Offset ``n >= 1`` where the relative heights split into a span-r bridge and a bridge above r."""
    pre_max = np.maximum.accumulate(hts)
    suf_min = np.minimum.accumulate(hts[::-1])[::-1]
    for n in range(1, len(hts)):
        after_ok = n == len(hts) - 1 or suf_min[n + 1] > r
        if hts[n] == r and pre_max[n] <= r and after_ok:
            return n
    return None


def breaking_points(tup: PathTuple) -> set[int]:
    """Relative heights R at which every walk splits into two bridges."""
    span = _require_bridge(tup)
    if span < 1:
        raise ValueError("breaking points need span >= 1")
    out = set()
    for r in range(1, span + 1):
        if all(_split_time(tup.heights(j), r) is not None for j in range(tup.p)):
            out.add(r)
    return out


def irreducible_decomposition(tup: PathTuple) -> BridgeDecomposition:
    """Repeatedly split off the piece up to the smallest breaking point."""
    _require_bridge(tup)
    times = [tuple(M for M, _ in tup.windows)]
    spans: list[int] = []
    cur = tup
    while True:
        span = bridge_span(cur)
        if span == 0:
            break
        r = min(breaking_points(cur))
        cut = tuple(M + _split_time(cur.heights(j), r) for j, (M, _) in enumerate(cur.windows))
        times.append(cut)
        spans.append(r)
        cur = cur.sub(tuple((c, N) for c, (_, N) in zip(cut, cur.windows)))
    return BridgeDecomposition(tuple(times), tuple(spans))


def backtracks(tup: PathTuple, j: int) -> list[Backtrack]:
    """All j-backtracks: descents from a running maximum at m to the last
    minimum n, with everything after n strictly above and ``n < N``."""
    _require_bridge(tup)
    M, N = tup.windows[j]
    hts = tup.paths[j].heights
    out = []
    for m in range(M, N):
        if any(hts[mu] > hts[m] for mu in range(M + 1, m + 1)):
            continue
        for n in range(m + 1, N):
            seg = hts[m + 1 : n + 1]
            if np.all(seg < hts[m]) and np.all(seg >= hts[n]) and np.all(hts[n + 1 : N + 1] > hts[n]):
                lo, hi = int(hts[n] - hts[M]), int(hts[m] - hts[M])
                out.append(Backtrack(j, m, n, hi - lo, (lo, hi)))
    return out


def covered_heights(tup: PathTuple) -> set[int]:
    """Interior relative heights covered by a backtrack of some walk."""
    span = _require_bridge(tup)
    cov = set()
    for j in range(tup.p):
        for bt in backtracks(tup, j):
            cov.update(k for k in range(bt.covered[0], bt.covered[1]) if 0 < k < span)
    return cov
