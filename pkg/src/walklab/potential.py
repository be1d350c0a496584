"""Disorder laws, the annealed transform phi, and path energies.

``phi(spec, beta, t) = -log E exp(-t * beta * V)`` for the built-in laws. The
annealed energy of a window is ``sum_x phi(beta, l_x)`` over its local times.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .walk_model import Path, Site, local_times


@dataclass(frozen=True)
class Bernoulli:
    """V = v with probability rho, else 0."""

    rho: float
    v: float

    def __post_init__(self) -> None:
        if not (0 < self.rho < 1 and self.v > 0):
            raise ValueError("Bernoulli needs 0 < rho < 1 and v > 0")

    def f(self, s: np.ndarray) -> np.ndarray:
        return -np.log1p(self.rho * np.expm1(-s * self.v))

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return np.where(u < self.rho, self.v, 0.0)

    @property
    def ess_sup(self) -> float:
        return self.v

    @property
    def atom_at_zero(self) -> float:
        return 1.0 - self.rho


@dataclass(frozen=True)
class ExponentialMean1:
    def f(self, s: np.ndarray) -> np.ndarray:
        return np.log1p(s)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return -np.log1p(-u)

    ess_sup = math.inf
    atom_at_zero = 0.0


@dataclass(frozen=True)
class PointMass:
    v: float

    def __post_init__(self) -> None:
        if not self.v > 0:
            raise ValueError("PointMass needs v > 0")

    def f(self, s: np.ndarray) -> np.ndarray:
        return s * self.v

    def quantile(self, u: np.ndarray) -> np.ndarray:
        return np.full_like(u, self.v, dtype=float)

    @property
    def ess_sup(self) -> float:
        return self.v

    atom_at_zero = 0.0


@dataclass(frozen=True)
class TrapLimit:
    """Hard-trap limit: each visited site costs ``beta_prime`` once."""

    beta_prime: float

    def __post_init__(self) -> None:
        if not self.beta_prime > 0:
            raise ValueError("TrapLimit needs beta_prime > 0")

    def f(self, s: np.ndarray) -> np.ndarray:
        return np.where(s > 0, self.beta_prime, 0.0)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError("the trap limit has no finite disorder realisation")

    ess_sup = math.inf
    atom_at_zero = math.nan


@dataclass(frozen=True)
class TabulatedPhi:
    """phi given on knots of ``s = beta * t``; linear between and past the last knot."""

    knots: tuple[float, ...]
    values: tuple[float, ...]
    _k: np.ndarray = field(init=False, repr=False, compare=False)
    _v: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        k = np.asarray(self.knots, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if k.ndim != 1 or k.shape != v.shape or k.size < 2:
            raise ValueError("need matching 1-D knots and values, at least two")
        if k[0] != 0 or np.any(np.diff(k) <= 0):
            raise ValueError("knots must start at 0 and increase strictly")
        object.__setattr__(self, "knots", tuple(k.tolist()))
        object.__setattr__(self, "values", tuple(v.tolist()))
        object.__setattr__(self, "_k", k)
        object.__setattr__(self, "_v", v)

    def f(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.interp(s, self._k, self._v)
        slope = (self._v[-1] - self._v[-2]) / (self._k[-1] - self._k[-2])
        return np.where(s > self._k[-1], self._v[-1] + slope * (s - self._k[-1]), out)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError("a tabulated transform does not determine a sampler")

    ess_sup = math.inf
    atom_at_zero = math.nan


PotentialSpec = Union[Bernoulli, ExponentialMean1, PointMass, TrapLimit, TabulatedPhi]


def phi(spec: PotentialSpec, beta: float, t: float | np.ndarray) -> float | np.ndarray:
    """Annealed transform ``phi_beta(t)``; vectorised over ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if beta < 0 or np.any(t_arr < 0):
        raise ValueError("beta and t must be nonnegative")
    out = spec.f(beta * t_arr)
    return float(out) if np.ndim(out) == 0 else out


def phi_table(spec: PotentialSpec, beta: float, t_max: int) -> np.ndarray:
    """``phi_beta(t)`` for integer ``t = 0..t_max`` (the enumeration kernels' input)."""
    return np.asarray(phi(spec, beta, np.arange(t_max + 1)), dtype=np.float64)


# --- environments -----------------------------------------------------------

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M2
    z = (z ^ (z >> np.uint64(27))) * _M3
    return z ^ (z >> np.uint64(31))


def site_uniforms(seed: int, sites: np.ndarray) -> np.ndarray:
    """Uniforms in (0,1) that depend only on ``(seed, site)``; rows of ``sites`` are coordinates."""
    sites = np.asarray(sites, dtype=np.int64)
    with np.errstate(over="ignore"):
        z = _mix(np.full(sites.shape[:-1], np.uint64(seed)) + _M1)
        for a in range(sites.shape[-1]):
            c = sites[..., a]
            zig = ((c << 1) ^ (c >> 63)).astype(np.uint64)
            z = _mix(z ^ (zig + _M1 * np.uint64(a + 1)))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) / float(1 << 53)


class Environment:
    """Lazily realised i.i.d. field; ``V_x`` is a pure function of (seed, x)."""

    def __init__(self, spec: PotentialSpec, seed: int) -> None:
        self.spec = spec
        self.seed = int(seed)
        self._cache: dict[Site, float] = {}

    def values(self, sites: np.ndarray) -> np.ndarray:
        return self.spec.quantile(site_uniforms(self.seed, sites))

    def __getitem__(self, x: Site) -> float:
        v = self._cache.get(x)
        if v is None:
            v = float(self.values(np.asarray([x]))[0])
            self._cache[x] = v
        return v

    def __len__(self) -> int:
        return len(self._cache)


# --- energies ---------------------------------------------------------------

def quenched_energy(path: Path, env: Environment, beta: float) -> float:
    """``beta * sum_{n=1}^N V_{S(n)}``."""
    lt = local_times(path)
    return beta * sum(c * env[x] for x, c in lt.counts.items())


def annealed_energy(path: Path, spec: PotentialSpec, beta: float, M: int = 0, N: int | None = None) -> float:
    lt = local_times(path, M, N)
    if not lt.counts:
        return 0.0
    return float(np.sum(phi(spec, beta, np.fromiter(lt.counts.values(), dtype=float))))


def coupled_energy(path1: Path, path2: Path, spec: PotentialSpec, beta: float) -> float:
    """``sum_x phi(beta, l1_x + l2_x)``."""
    if path1.d != path2.d:
        raise ValueError("paths live in different dimensions")
    l1, l2 = local_times(path1).counts, local_times(path2).counts
    joint = [l1.get(x, 0) + l2.get(x, 0) for x in set(l1) | set(l2)]
    return float(np.sum(phi(spec, beta, np.asarray(joint, dtype=float)))) if joint else 0.0


def overlap_psi(path1: Path, path2: Path, spec: PotentialSpec, beta: float) -> tuple[float, int]:
    """Energy defect of the pair and the shared-visit count.

    Returns ``(Phi1 + Phi2 - Phi_coupled, sum over shared sites of l1 + l2)``.
    Only shared sites contribute to the defect, so it is summed there directly.
    """
    if path1.d != path2.d:
        raise ValueError("paths live in different dimensions")
    l1, l2 = local_times(path1).counts, local_times(path2).counts
    shared = set(l1) & set(l2)
    if not shared:
        return 0.0, 0
    a = np.array([l1[x] for x in shared], dtype=float)
    b = np.array([l2[x] for x in shared], dtype=float)
    psi = float(np.sum(phi(spec, beta, a) + phi(spec, beta, b) - phi(spec, beta, a + b)))
    return psi, int(a.sum() + b.sum())


# --- assumption checks ------------------------------------------------------

DEFAULT_GRID = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 64)])


@dataclass(frozen=True)
class SpecReport:
    zero_at_origin: bool
    continuous_at_zero: bool
    monotone: bool
    concave: bool
    unbounded: bool
    sublinear: bool
    no_full_atom_at_zero: bool | None
    evidence: dict

    @property
    def all_pass(self) -> bool:
        return all((self.zero_at_origin, self.continuous_at_zero, self.monotone, self.concave,
                    self.unbounded, self.sublinear))


def validate_spec(spec: PotentialSpec, grid: Sequence[float] | None = None, rtol: float = 1e-9) -> SpecReport:
    """Check the standing assumptions on phi (with beta folded into the argument).

    Unboundedness compares the increment over the last doubling of the grid
    with the total; sublinearity compares phi(s)/s at the two ends of the grid.
    """
    s = np.unique(np.asarray(DEFAULT_GRID if grid is None else grid, dtype=float))
    if s[0] != 0:
        s = np.concatenate([[0.0], s])
    f = np.asarray(spec.f(s), dtype=float)
    scale = max(1.0, float(np.max(np.abs(f))))
    slopes = np.diff(f) / np.diff(s)

    s_top = s[-1]
    f_half = float(spec.f(np.asarray(s_top / 2)))
    last_doubling = f[-1] - f_half
    ratio_lo, ratio_hi = f[1] / s[1], f[-1] / s_top
    atom = spec.atom_at_zero
    return SpecReport(
        zero_at_origin=bool(abs(f[0]) <= rtol),
        continuous_at_zero=bool(abs(f[1]) <= 10 * s[1] * max(slopes[1], 0.0) + rtol),
        monotone=bool(np.all(np.diff(f) >= -rtol * scale)),
        concave=bool(np.all(np.diff(slopes) <= rtol * max(1.0, float(np.max(np.abs(slopes)))))),
        unbounded=bool(last_doubling > 1e-3 * max(f[-1], 1e-300)),
        sublinear=bool(ratio_hi <= 1e-2 * ratio_lo),
        no_full_atom_at_zero=None if math.isnan(atom) else bool(atom < 1.0),
        evidence={"last_doubling_increment": last_doubling, "phi_over_s_first": ratio_lo,
                  "phi_over_s_last": ratio_hi, "atom_at_zero": atom},
    )
