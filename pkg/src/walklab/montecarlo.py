"""Sampling estimators: annealed and quenched partition functions, the
two-replica second-moment ratio, the free-energy gap, Paley-Zygmund and
concentration checks.

Paths are drawn in vectorized batches. Every estimator takes an
``RngStream`` and records its seed and stream id, so rerunning with the same
stream replays it bit for bit. Strip-chain tools live in ``walklab.strips``
and are re-exported here.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .exact_enum import Box, exact_G, exact_second_moment
from .potential import Environment, PotentialSpec, phi_table, site_uniforms
from .streams import RngStream
from .strips import (ChainStats, PairPathSampler, StripTable, StripTables, build_strip_table,
                     overlap_strip_violations, simulate_sigma_chain)
from .walk_model import WalkConfig, sample_steps, step_law, step_vectors

__all__ = [
    "RngStream", "EstimateRecord", "spec_params", "mc_annealed_Z", "QuenchedResult", "mc_quenched_logZ",
    "mc_second_moment_ratio", "second_moment_curve", "FreeEnergyGap", "mc_free_energy_gap", "exact_quenched_Z",
    "PZReport", "paley_zygmund_check", "ConcentrationReport", "concentration_check",
    "StripTable", "StripTables", "build_strip_table", "PairPathSampler", "ChainStats",
    "simulate_sigma_chain", "overlap_strip_violations",
]

CHUNK = 1 << 15


# --- records ----------------------------------------------------------------

def spec_params(spec: PotentialSpec) -> dict[str, Any]:
    """JSON-ready description of a disorder law."""
    out: dict[str, Any] = {"law": type(spec).__name__}
    for f in dataclasses.fields(spec):
        if f.init:
            v = getattr(spec, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


@dataclass(frozen=True)
class EstimateRecord:
    """A Monte Carlo mean with ``stderr = sd / sqrt(n_samples)`` and its replay key."""

    quantity: str
    params: dict
    n_samples: int
    mean: float
    stderr: float
    seed: int
    stream_id: tuple[int, ...]
    wall_time: float = field(default=0.0, compare=False)
    extra: dict = field(default_factory=dict)

    def to_dict(self, timing: bool = False) -> dict[str, Any]:
        out = {"quantity": self.quantity, "params": self.params, "n_samples": self.n_samples,
               "mean": self.mean, "stderr": self.stderr, "seed": self.seed,
               "stream_id": list(self.stream_id), "extra": self.extra}
        if timing:
            out["wall_time"] = self.wall_time
        return out

    def stream(self) -> RngStream:
        return RngStream(self.seed, self.stream_id)


def _params(cfg: WalkConfig, spec: PotentialSpec, beta: float, **kw: Any) -> dict[str, Any]:
    return {"d": cfg.d, "h": cfg.h, "potential": spec_params(spec), "beta": beta, **kw}


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


# --- vectorized path geometry ---------------------------------------------------

def _sites(d: int, steps: np.ndarray, start: Sequence[int] = ()) -> np.ndarray:
    """``(n, N, d)`` positions at times ``1..N``."""
    pos = np.cumsum(step_vectors(d)[steps.astype(np.int64)], axis=1)
    if len(start):
        pos += np.asarray(start, dtype=np.int64)
    return pos


def site_codes(sites: np.ndarray, radius: int) -> np.ndarray:
    """Injective int64 codes of sites with coordinates in ``[-radius, radius]``."""
    base = 2 * radius + 1
    code = np.zeros(sites.shape[:-1], dtype=np.int64)
    for a in range(sites.shape[-1] - 1, -1, -1):
        code = code * base + (sites[..., a] + radius)
    return code


def runs(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row runs of equal sorted keys: ``(row, key, length)`` for each distinct key."""
    n, T = keys.shape
    if T == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e
    s = np.sort(keys, axis=1)
    new = np.ones_like(s, dtype=bool)
    new[:, 1:] = s[:, 1:] != s[:, :-1]
    starts = np.flatnonzero(new.ravel())
    lengths = np.diff(np.append(starts, n * T))
    return starts // T, s.ravel()[starts], lengths


def annealed_energies(codes: np.ndarray, phitab: np.ndarray) -> np.ndarray:
    """``sum_x phi(l_x)`` per row of site codes."""
    row, _, length = runs(codes)
    return np.bincount(row, weights=phitab[length], minlength=codes.shape[0])


def sumsq_local_times(codes: np.ndarray) -> np.ndarray:
    row, _, length = runs(codes)
    return np.bincount(row, weights=length.astype(float) ** 2, minlength=codes.shape[0])


def _pair_energies(s1: np.ndarray, s2: np.ndarray, phitab: np.ndarray,
                   radius: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    c1, c2 = site_codes(s1, radius), site_codes(s2, radius)
    return (annealed_energies(c1, phitab), annealed_energies(c2, phitab),
            annealed_energies(np.concatenate([c1, c2], axis=1), phitab))


# --- annealed and quenched ------------------------------------------------------

def mc_annealed_Z(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int, n: int,
                  stream: RngStream) -> EstimateRecord:
    """Mean of ``exp(-Phi_annealed(N))`` over ``n`` sampled paths."""
    if n < 2:
        raise ValueError("need n >= 2")
    t0 = time.perf_counter()
    key = (stream.seed, stream.stream_id)
    phitab = phi_table(spec, beta, N + 1)
    w = np.empty(n)
    for lo in range(0, n, CHUNK):
        m = min(CHUNK, n - lo)
        steps = sample_steps(cfg, m, N, stream)
        w[lo : lo + m] = np.exp(-annealed_energies(site_codes(_sites(cfg.d, steps), N), phitab))
    mean, se = _mean_se(w)
    return EstimateRecord("annealed_Z", _params(cfg, spec, beta, N=N), n, mean, se, *key,
                          time.perf_counter() - t0)


@dataclass(frozen=True)
class QuenchedResult:
    records: list[EstimateRecord]
    log_z: np.ndarray
    mean_log_z: float
    log_mean_z: float
    annealed: EstimateRecord

    @property
    def jensen_gap(self) -> float:
        """``log(mean Z) - mean(log Z)`` over the environment sample."""
        return self.log_mean_z - self.mean_log_z


def _quenched_log_weights(cfg: WalkConfig, spec: PotentialSpec, beta: float, env_seed: int,
                          sites: np.ndarray) -> np.ndarray:
    """``-beta * V`` at every visited site, cumulated over time: shape ``(n, N)``."""
    v = Environment(spec, env_seed).values(sites) if beta else np.zeros(sites.shape[:-1])
    return -beta * np.cumsum(v, axis=1)


def mc_quenched_logZ(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int, n_paths: int,
                     n_envs: int, stream: RngStream) -> QuenchedResult:
    """Path-MC estimate of ``Z_quenched`` in each of ``n_envs`` environments.

    Environment ``e`` and its paths come from ``stream.child(e)``.
    """
    if n_paths < 2 or n_envs < 2:
        raise ValueError("need n_paths, n_envs >= 2")
    key = (stream.seed, stream.stream_id)
    recs, logz = [], np.empty(n_envs)
    for e in range(n_envs):
        t0 = time.perf_counter()
        ch = stream.child(e)
        env_seed = int(ch.gen.integers(0, 2**63))
        steps = sample_steps(cfg, n_paths, N, ch)
        lw = _quenched_log_weights(cfg, spec, beta, env_seed, _sites(cfg.d, steps))[:, -1] if N else np.zeros(n_paths)
        mean, se = _mean_se(np.exp(lw))
        logz[e] = logsumexp(lw) - math.log(n_paths)
        recs.append(EstimateRecord("quenched_Z", _params(cfg, spec, beta, N=N, env_seed=env_seed), n_paths,
                                   mean, se, ch.seed, ch.stream_id, time.perf_counter() - t0))
    z = np.exp(logz)
    zm, zse = _mean_se(z)
    ann = EstimateRecord("annealed_Z_from_envs", _params(cfg, spec, beta, N=N), n_envs, zm, zse, *key)
    return QuenchedResult(recs, logz, float(logz.mean()), float(logsumexp(logz) - math.log(n_envs)), ann)


# --- second moment ------------------------------------------------------------

def mc_second_moment_ratio(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int, n_pairs: int,
                           dy: Sequence[int], stream: RngStream) -> EstimateRecord:
    """Plug-in ratio ``mean exp(-Phi_coupled) / (mean exp(-Phi_1) * mean exp(-Phi_2))``.

    Walk 2 starts at ``(0, dy)``. The stderr is the delta-method one; the
    plug-in bias is of order ``1/n_pairs`` and is not corrected.
    """
    r = second_moment_curve(cfg, spec, beta, [N], n_pairs, dy, stream)
    return r[0]


def second_moment_curve(cfg: WalkConfig, spec: PotentialSpec, beta: float, N_grid: Sequence[int],
                        n_pairs: int, dy: Sequence[int], stream: RngStream,
                        keep_samples: bool = False) -> list[EstimateRecord]:
    """``mc_second_moment_ratio`` for every N in the grid on common pairs (prefixes).

    With ``keep_samples`` the per-pair weights are attached under
    ``extra["samples"]`` as ``(3, n_pairs)`` arrays (coupled, walk 1, walk 2).
    """
    if n_pairs < 2:
        raise ValueError("need n_pairs >= 2")
    dy = tuple(int(c) for c in dy) or (0,) * (cfg.d - 1)
    if len(dy) != cfg.d - 1:
        raise ValueError("dy needs d-1 coordinates")
    t0 = time.perf_counter()
    key = (stream.seed, stream.stream_id)
    Nmax = max(N_grid)
    radius = Nmax + sum(abs(c) for c in dy)
    phitab = phi_table(spec, beta, 2 * Nmax + 1)
    W = np.empty((len(N_grid), 3, n_pairs))
    for lo in range(0, n_pairs, CHUNK):
        m = min(CHUNK, n_pairs - lo)
        s1 = _sites(cfg.d, sample_steps(cfg, m, Nmax, stream))
        s2 = _sites(cfg.d, sample_steps(cfg, m, Nmax, stream), (0, *dy))
        for g, N in enumerate(N_grid):
            e1, e2, e12 = _pair_energies(s1[:, :N], s2[:, :N], phitab, radius)
            W[g, :, lo : lo + m] = np.exp(-np.stack([e12, e1, e2]))
    out = []
    for g, N in enumerate(N_grid):
        a, b, c = W[g]
        A, B1, B2 = a.mean(), b.mean(), c.mean()
        ratio = float(A / (B1 * B2))
        infl = a / A - b / B1 - c / B2
        se = ratio * float(infl.std(ddof=1)) / math.sqrt(n_pairs)
        extra: dict[str, Any] = {"bias_order": "1/n_pairs"}
        if keep_samples:
            extra["samples"] = W[g]
        out.append(EstimateRecord("second_moment_ratio", _params(cfg, spec, beta, N=N, dy=list(dy)),
                                  n_pairs, ratio, se, *key, time.perf_counter() - t0, extra))
    return out


# --- free-energy gap ------------------------------------------------------------

@dataclass(frozen=True)
class FreeEnergyGap:
    """Per N: mean log Z_quenched, log of the environment-averaged Z, and
    ``E|log Z_quenched - log Z_annealed|`` with the fitted envelope constant."""

    N_grid: tuple[int, ...]
    mean_log_z: np.ndarray
    log_mean_z: np.ndarray
    gap: np.ndarray
    gap_stderr: np.ndarray
    c: float
    envelope: np.ndarray

    @property
    def jensen(self) -> np.ndarray:
        return self.log_mean_z - self.mean_log_z

    @property
    def coincidence(self) -> np.ndarray:
        """``|mean log Z_quenched / N + m_annealed(N)|`` with ``m_annealed(N) = -log mean Z / N``."""
        return np.abs(self.mean_log_z - self.log_mean_z) / np.asarray(self.N_grid)

    @property
    def envelope_ok(self) -> bool:
        return bool(np.all(self.gap <= self.envelope * (1 + 1e-12)))


def mc_free_energy_gap(cfg: WalkConfig, spec: PotentialSpec, beta: float, N_grid: Sequence[int],
                       samples: tuple[int, int], stream: RngStream) -> FreeEnergyGap:
    """Quenched log partition functions on common environments and path prefixes.

    ``samples = (n_paths, n_envs)``. The annealed value at each N is the
    environment average of the quenched estimates (an unbiased estimate of
    the annealed partition function), so the Jensen gap is nonnegative on
    the sample. ``c`` is the smallest constant with ``gap <= c (1 + beta sqrt N)``
    on the grid.
    """
    n_paths, n_envs = samples
    if n_paths < 2 or n_envs < 2:
        raise ValueError("need n_paths, n_envs >= 2")
    grid = tuple(int(N) for N in N_grid)
    if min(grid) < 1:
        raise ValueError("N must be >= 1")
    Nmax = max(grid)
    idx = np.asarray(grid) - 1
    logz = np.empty((n_envs, len(grid)))
    for e in range(n_envs):
        ch = stream.child(e)
        env_seed = int(ch.gen.integers(0, 2**63))
        steps = sample_steps(cfg, n_paths, Nmax, ch)
        lw = _quenched_log_weights(cfg, spec, beta, env_seed, _sites(cfg.d, steps))[:, idx]
        logz[e] = logsumexp(lw, axis=0) - math.log(n_paths)
    log_mean = logsumexp(logz, axis=0) - math.log(n_envs)
    dev = np.abs(logz - log_mean)
    gap = dev.mean(axis=0)
    se = dev.std(axis=0, ddof=1) / math.sqrt(n_envs)
    scale = 1 + beta * np.sqrt(np.asarray(grid, dtype=float))
    c = float(np.max(gap / scale))
    return FreeEnergyGap(grid, logz.mean(axis=0), log_mean, gap, se, c, c * scale)


# --- exact quenched partition functions at small N ----------------------------------

@dataclass(frozen=True)
class _AllPaths:
    prob: np.ndarray
    incidence: sparse.csr_matrix  # paths x box cells, local-time counts
    sumsq: np.ndarray
    box: Box
    sites: np.ndarray  # box cell coordinates


_ALL_PATHS: dict[tuple[int, float, int], _AllPaths] = {}


def _all_paths(cfg: WalkConfig, N: int) -> _AllPaths:
    key = (cfg.d, cfg.h, N)
    if key not in _ALL_PATHS:
        K = 2 * cfg.d
        if K**N > 5_000_000:
            raise ValueError(f"{K}^{N} paths is too many for full enumeration")
        steps = np.array(list(itertools.product(range(K), repeat=N)), dtype=np.int64).reshape(-1, N)
        logp = np.log(step_law(cfg).probs())[steps].sum(axis=1)
        box = Box.around(cfg.d, N)
        pos = _sites(cfg.d, steps) - np.asarray(box.lo)
        flat = (pos * np.asarray(box.strides)).sum(axis=-1)
        rows = np.repeat(np.arange(steps.shape[0]), N)
        inc = sparse.csr_matrix((np.ones(rows.size), (rows, flat.ravel())),
                                shape=(steps.shape[0], box.cells))
        inc.sum_duplicates()
        sumsq = np.asarray(inc.multiply(inc).sum(axis=1)).ravel()
        grids = np.indices(box.size).reshape(cfg.d, -1).T + np.asarray(box.lo)
        _ALL_PATHS[key] = _AllPaths(np.exp(logp), inc, sumsq, box, grids)
    return _ALL_PATHS[key]


def exact_quenched_Z(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int,
                     env_seeds: Sequence[int], k: float | None = None, chunk: int = 256) -> np.ndarray:
    """Exact ``Z_quenched`` (restricted to ``sum_x l_x^2 <= k N`` when ``k`` is given) per environment."""
    ap = _all_paths(cfg, N)
    prob = ap.prob
    if k is not None:
        if k < 1:
            raise ValueError("the restricted event is empty for k < 1")
        prob = np.where(ap.sumsq <= math.floor(k * N + 1e-9), prob, 0.0)
    seeds = list(env_seeds)
    out = np.empty(len(seeds))
    incT = ap.incidence.T.tocsr()
    for lo in range(0, len(seeds), chunk):
        block = seeds[lo : lo + chunk]
        V = np.stack([spec.quantile(site_uniforms(s, ap.sites)) for s in block]) if beta else \
            np.zeros((len(block), ap.box.cells))
        E = (incT.T @ V.T).T  # (envs, paths)
        out[lo : lo + len(block)] = np.exp(-beta * E) @ prob
    return out


def _env_seeds(stream: RngStream, n: int) -> np.ndarray:
    return stream.gen.integers(0, 2**63, size=n)


@dataclass(frozen=True)
class PZReport:
    z: np.ndarray
    EZ: float
    EZ2: float
    p_hat: float
    p_stderr: float
    bound: float
    second_moment: EstimateRecord

    @property
    def holds(self) -> bool:
        return self.p_hat >= self.bound - 3 * self.p_stderr


def paley_zygmund_check(cfg: WalkConfig, spec: PotentialSpec, beta: float, N: int, n_envs: int,
                        stream: RngStream) -> PZReport:
    """``P[Z >= EZ/2]`` over environments against ``(EZ)^2 / (4 E Z^2)`` with exact moments.

    The record ``second_moment`` is the environment average of ``Z^2``, to be
    compared with the exact value ``EZ2``.
    """
    seeds = _env_seeds(stream, n_envs)
    z = exact_quenched_Z(cfg, spec, beta, N, seeds)
    EZ = exact_G(cfg, spec, beta, N)
    EZ2 = exact_second_moment(cfg, spec, beta, (N, N))
    hit = (z >= 0.5 * EZ).astype(float)
    p, pse = _mean_se(hit)
    m2, m2se = _mean_se(z * z)
    rec = EstimateRecord("second_moment_env", _params(cfg, spec, beta, N=N), n_envs, m2, m2se,
                         stream.seed, stream.stream_id, extra={"exact": EZ2})
    return PZReport(z, EZ, EZ2, p, pse, 0.25 * EZ * EZ / EZ2, rec)


@dataclass(frozen=True)
class ConcentrationReport:
    log_z: np.ndarray
    median: float
    t_grid: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    slack: np.ndarray

    @property
    def violations(self) -> int:
        return int(np.sum(self.empirical > self.bound + self.slack))


def concentration_check(cfg: WalkConfig, spec: PotentialSpec, beta: float, k: float, N: int, n_envs: int,
                        stream: RngStream, t_grid: Sequence[float] | None = None) -> ConcentrationReport:
    """Tail of ``|log Z_restricted - median|`` against ``4 exp(-t^2 / (16 beta^2 Vmax^2 k N))``.

    The median is the sample median. ``slack`` is three binomial standard
    errors plus ``1/n_envs``.
    """
    vmax = spec.ess_sup
    if not math.isfinite(vmax):
        raise ValueError("concentration needs a bounded disorder law")
    if k < 1:
        raise ValueError("the restricted event is empty for k < 1")
    seeds = _env_seeds(stream, n_envs)
    logz = np.log(exact_quenched_Z(cfg, spec, beta, N, seeds, k=k))
    med = float(np.median(logz))
    t = np.asarray(t_grid if t_grid is not None else np.linspace(0, 4 * max(beta * vmax, 1e-9) * math.sqrt(k * N), 41))
    dev = np.abs(logz - med)
    emp = np.array([(dev >= ti).mean() for ti in t])
    scale = 16 * beta**2 * vmax**2 * k * N
    with np.errstate(divide="ignore"):
        bound = 4 * np.exp(-(t**2) / scale) if scale > 0 else np.where(t > 0, 0.0, 4.0)
    slack = 3 * np.sqrt(emp * (1 - emp) / n_envs) + 1 / n_envs
    return ConcentrationReport(logz, med, t, emp, bound, slack)
