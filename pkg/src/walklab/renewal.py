"""Masses of decaying series, the renewal sequence pi, renewal residuals, the
mass gap and the solvers for the effective drift and the critical inverse
temperature.

Masses come from truncated sums, which are lower bounds on the true values;
every estimate carries the interval that truncation slack induces on
``-log X`` next to the least-squares standard error.
"""
from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import optimize, stats

from .exact_enum import BridgeSpectrum, bridge_spectrum, fixed_stats
from .potential import PotentialSpec, phi_table
from .walk_model import WalkConfig, step_law

Method = Literal["slope-fit", "inf-ratio"]
Z95 = float(stats.norm.ppf(0.975))


class BracketError(RuntimeError):
    """The root of a monotone family is not inside the searched interval."""


class Divergence(RuntimeError):
    """A series that converges only in the ballistic regime was found to diverge."""


# --- mass estimation ----------------------------------------------------------

@dataclass(frozen=True)
class MassEstimate:
    """Decay rate of a series with a conservative 95% half-width.

    ``halfwidth`` adds the normal-quantile stderr interval to ``slack``, the
    worst-case shift of the estimate when each value moves inside its
    truncation interval.
    """

    m_hat: float
    method: Method
    window: tuple[int, ...]
    stderr: float
    slack: float

    @property
    def halfwidth(self) -> float:
        return Z95 * self.stderr + self.slack

    @property
    def ci(self) -> tuple[float, float]:
        return self.m_hat - self.halfwidth, self.m_hat + self.halfwidth


def _as_series(series: Mapping[int, float] | Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(series, Mapping):
        idx = np.array(sorted(series), dtype=float)
        val = np.array([series[int(i)] for i in idx], dtype=float)
    else:
        val = np.asarray(series, dtype=float)
        idx = np.arange(1, val.size + 1, dtype=float)
    return idx, val


def estimate_mass(series: Mapping[int, float] | Sequence[float], method: Method = "slope-fit",
                  slack: Mapping[int, float] | Sequence[float] | None = None,
                  window: Sequence[int] | None = None) -> MassEstimate:
    """Decay rate of ``X(L)``; a plain sequence is indexed from 1.

    ``slack[L]`` is a certified bound on ``X(L) - value`` (values are lower
    bounds). Slope-fit is the least-squares slope of the interval midpoints of
    ``-log X``; inf-ratio is ``min -log X(L) / L`` over ``L > 0``.
    """
    idx, val = _as_series(series)
    sl = np.zeros_like(val) if slack is None else _as_series(slack)[1]
    if sl.shape != val.shape:
        raise ValueError("slack must match the series")
    if window is not None:
        keep = np.isin(idx, np.asarray(window, dtype=float))
        idx, val, sl = idx[keep], val[keep], sl[keep]
    if method == "inf-ratio":
        keep = idx > 0
        idx, val, sl = idx[keep], val[keep], sl[keep]
    if idx.size == 0:
        raise ValueError("empty window")
    if np.any(val <= 0) or np.any(sl < 0):
        raise ValueError("series values must be positive and slacks nonnegative")
    hi, lo = -np.log(val), -np.log(val + sl)
    win = tuple(int(i) for i in idx)
    if method == "inf-ratio":
        ratios = hi / idx
        i = int(np.argmin(ratios))
        return MassEstimate(float(ratios[i]), method, win, 0.0, float((hi[i] - lo[i]) / idx[i]))
    if method != "slope-fit":
        raise ValueError(f"unknown method {method!r}")
    if idx.size < 2:
        raise ValueError("slope-fit needs at least two points")
    y = 0.5 * (hi + lo)
    xc = idx - idx.mean()
    c = xc / float(xc @ xc)
    slope = float(c @ y)
    resid = y - (y.mean() + slope * xc)
    dof = idx.size - 2
    stderr = math.sqrt(float(resid @ resid) / dof / float(xc @ xc)) if dof > 0 else 0.0
    return MassEstimate(slope, method, win, stderr, float(np.abs(c) @ (hi - lo)) / 2)


def resolved_window(values: Sequence[float], slacks: Sequence[float], max_rel: float = 0.1,
                    start: int = 1) -> tuple[int, ...]:
    """Leading indices (from ``start``) whose relative slack is at most ``max_rel``."""
    out = []
    for i, (v, s) in enumerate(zip(values, slacks), start=start):
        if v <= 0 or s > max_rel * v:
            break
        out.append(i)
    return tuple(out)


# --- spectra ----------------------------------------------------------------

@dataclass(frozen=True)
class Truncation:
    """Enumeration horizon and cut threshold for bridge spectra."""

    N_max: int = 80
    eps: float = 1e-9
    budget: int | None = None


def _spectra(cfg: WalkConfig, spec: PotentialSpec, beta: float, Lmax: int,
             tr: Truncation) -> tuple[BridgeSpectrum, BridgeSpectrum]:
    bri = bridge_spectrum(cfg, spec, beta, Lmax, tr.N_max, tr.eps, tr.budget, "bridge")
    irr = bridge_spectrum(cfg, spec, beta, Lmax, tr.N_max, tr.eps, tr.budget, "irreducible")
    return bri, irr


def bridge_series(cfg: WalkConfig, spec: PotentialSpec, beta: float, p: int, Lmax: int,
                  tr: Truncation = Truncation()) -> dict[str, np.ndarray]:
    """``Bbar^p``, ``Lambdabar^p`` for ``L = 0..Lmax`` with their certified slacks."""
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    bri, irr = _spectra(cfg, spec, beta, Lmax, tr)
    B, sB, Lam, sL = (np.zeros(Lmax + 1) for _ in range(4))
    B[0] = 1.0
    for L in range(1, Lmax + 1):
        if p == 1:
            B[L], sB[L] = bri.Bbar(L), bri.tail(L)
            Lam[L], sL[L] = irr.Lambdabar(L), irr.tail_irr(L)
        else:
            B[L], sB[L] = bri.Bbar2(L)
            Lam[L], sL[L] = bri.Lambdabar2(L)
    return {"B": B, "slack_B": sB, "Lambda": Lam, "slack_Lambda": sL}


def bridge_mass(cfg: WalkConfig, spec: PotentialSpec, beta: float, p: int = 1, Lmax: int = 4,
                tr: Truncation = Truncation(), max_rel: float = 0.1) -> MassEstimate:
    """Slope-fit mass of ``Bbar^p`` over the leading well-resolved spans."""
    s = bridge_series(cfg, spec, beta, p, Lmax, tr)
    win = resolved_window(s["B"][1:], s["slack_B"][1:], max_rel)
    if len(win) < 2:
        raise ValueError("fewer than two resolved spans; raise N_max or lower eps")
    return estimate_mass(s["B"][1:], "slope-fit", s["slack_B"][1:], win)


# --- renewal sequence -------------------------------------------------------

@dataclass(frozen=True)
class PiSequence:
    """``pi(k) = Lambdabar^p(k) exp(m k)`` for ``k = 1..K`` (index 0 unused)."""

    p: int
    values: np.ndarray
    m_B: MassEstimate
    tail: np.ndarray  # tail[T] estimates sum_{j >= T+2} j pi(j), T = 0..K-2
    slack: float
    tail_is_estimate: bool = True
    mean_length: float = math.nan
    lambda_rate: float = math.nan
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.values[1:])


def pi_sequence(cfg: WalkConfig, spec: PotentialSpec, beta: float, p: int, K: int,
                tr: Truncation = Truncation(), max_rel: float = 0.1) -> PiSequence:
    """Renewal masses from the irreducible weights and the fitted bridge mass.

    ``slack`` bounds how far the partial sums can sit above the computed ones:
    every irreducible weight at its upper value and the mass at the top of its
    interval. The tail ``sum_{j >= T+2} j pi(j)`` uses the computed terms plus
    a geometric continuation at the decay rate of the last two terms; it is
    an estimate, not a certificate.
    """
    if cfg.h <= 0:
        raise ValueError("the renewal sequence needs h > 0")
    s = bridge_series(cfg, spec, beta, p, K, tr)
    if beta == 0:
        # without disorder bridge weights do not decay exponentially
        mB = MassEstimate(0.0, "slope-fit", (), 0.0, 0.0)
    else:
        win = resolved_window(s["B"][1:], s["slack_B"][1:], max_rel)
        if len(win) < 2:
            raise ValueError("fewer than two resolved spans for the bridge mass")
        mB = estimate_mass(s["B"][1:], "slope-fit", s["slack_B"][1:], win)
    k = np.arange(K + 1)
    pi = s["Lambda"] * np.exp(mB.m_hat * k)
    pi[0] = 0.0
    upper = (s["Lambda"] + s["slack_Lambda"]) * np.exp((mB.m_hat + mB.halfwidth) * k)
    upper[0] = 0.0
    slack = float(upper.sum() - pi.sum())

    pos = np.flatnonzero(pi > 0)
    if pos.size >= 2:
        a, b = pos[-2], pos[-1]
        rate = math.log(pi[a] / pi[b]) / (b - a)
    else:
        rate = math.nan
    if rate > 0:
        # continue the last positive term geometrically: sum_{j > K} j pi_b r^{j-b}
        r = math.exp(-rate)
        beyond = pi[b] * r ** (K + 1 - b) * (K + 1 - K * r) / (1 - r) ** 2
    else:
        beyond = math.inf
    jp = k * pi
    tail = np.array([jp[T + 2 :].sum() + beyond for T in range(K - 1)])
    mean_len = float(jp.sum() + beyond)
    return PiSequence(p, pi, mB, tail, slack, True, mean_len, rate,
                      {"Lambda": s["Lambda"], "slack_Lambda": s["slack_Lambda"]})


# --- renewal identity ---------------------------------------------------------

@dataclass(frozen=True)
class RenewalResidual:
    """Renewal identity residuals at span L.

    ``residual``/``slack``: the full series, each side truncated on its own
    and bounded by the certified tails. ``matched``/``matched_slack``: both
    sides restricted to walks of length at most ``N_match`` (the identity is
    exact there), bounded by floating-point rounding only.
    """

    p: int
    L: int
    residual: float
    slack: float
    matched: float
    matched_slack: float
    N_match: int

    @property
    def ok(self) -> bool:
        return self.residual <= self.slack and self.matched <= self.matched_slack


_U = np.finfo(float).eps / 2


def _matched(bs: BridgeSpectrum, p: int, L: int) -> tuple[float, float]:
    N0 = bs.N_max
    if p == 1:
        lhs = bs.Bbar(L)
        rhs = sum(float(np.convolve(bs.lam(k), bs.b(L - k))[: N0 + 1].sum()) for k in range(1, L + 1))
    else:
        lhs = bs.Bbar(L) ** 2
        rhs = 0.0
        for k in range(1, L + 1):
            C = np.cumsum(bs.b(L - k))[::-1]  # C[a] = sum_{r <= N0 - a} b(L-k; r)
            u = {m: float(w @ C) for m, w in bs.class_weights(k).items()}
            top = 1 << (k - 1)
            rhs += sum(a * b for ma, a in u.items() for mb, b in u.items() if ma & mb == top)
    n_ops = bs.nodes + 4 * (L + 1) * (N0 + 1) ** 2 + (1 << (2 * L))
    return abs(lhs - rhs), 2 * n_ops * _U * (lhs + rhs)


def renewal_residual(cfg: WalkConfig, spec: PotentialSpec, beta: float, p: int, L: int,
                     tr: Truncation = Truncation(), N_match: int = 14) -> RenewalResidual:
    """``|Bbar^p(L) - sum_k Lambdabar^p(k) Bbar^p(L-k)|`` in both forms (see ``RenewalResidual``)."""
    if cfg.h <= 0:
        raise ValueError("the renewal identity needs h > 0")
    if L < 1:
        raise ValueError("L must be at least 1")
    s = bridge_series(cfg, spec, beta, p, L, tr)
    B, sB, Lam, sL = s["B"], s["slack_B"], s["Lambda"], s["slack_Lambda"]
    rhs = sum(Lam[k] * B[L - k] for k in range(1, L + 1))
    slack = sB[L] + sum(sL[k] * (B[L - k] + sB[L - k]) + Lam[k] * sB[L - k] for k in range(1, L + 1))
    full = abs(B[L] - rhs)
    if L == 1:
        full = abs(B[1] - Lam[1])
    exact = bridge_spectrum(cfg, spec, beta, L, N_match, 0.0, tr.budget, "bridge")
    m, ms = _matched(exact, p, L)
    return RenewalResidual(p, L, float(full), float(slack), m, ms, N_match)


# --- mass gap -----------------------------------------------------------------

@dataclass(frozen=True)
class MassGap:
    m_B: MassEstimate
    m_Lambda: MassEstimate
    gap: float
    ci: tuple[float, float]
    pointwise_ok: bool
    envelope_constant: float
    envelope_ok: bool
    series: dict = field(default_factory=dict, compare=False)

    @property
    def significant(self) -> bool:
        return self.ci[0] > 0


def mass_gap(cfg: WalkConfig, spec: PotentialSpec, beta: float, p: int, L_window: int,
             tr: Truncation = Truncation(N_max=120, eps=1e-11), max_rel: float = 0.5) -> MassGap:
    """Slope-fit masses of ``Bbar^p`` and ``Lambdabar^p`` over resolved spans ``<= L_window``.

    The gap interval adds the two half-widths. ``pointwise_ok`` checks
    ``Lambdabar <= Bbar + slack`` for every span; ``envelope_ok`` checks
    ``Lambdabar(L) <= (1/p) e^{2(phi(1) + lambda_h)} e^{-m_Lambda L}`` with the
    fitted ``m_Lambda``.
    """
    if cfg.h <= 0:
        raise ValueError("the mass gap needs h > 0")
    s = bridge_series(cfg, spec, beta, p, L_window, tr)
    B, sB, Lam, sL = s["B"][1:], s["slack_B"][1:], s["Lambda"][1:], s["slack_Lambda"][1:]
    wB = resolved_window(B, sB, max_rel)
    wL = resolved_window(Lam, sL, max_rel)
    if len(wB) < 2 or len(wL) < 2:
        raise ValueError("fewer than two resolved spans; raise N_max or lower eps")
    mB = estimate_mass(B, "slope-fit", sB, wB)
    mL = estimate_mass(Lam, "slope-fit", sL, wL)
    gap = mL.m_hat - mB.m_hat
    hw = mL.halfwidth + mB.halfwidth
    const = math.exp(2 * (float(phi_table(spec, beta, 1)[1]) + step_law(cfg).lambda_h)) / p
    L = np.arange(1, L_window + 1)
    env_ok = bool(np.all(Lam <= const * np.exp(-mL.m_hat * L)))
    return MassGap(mB, mL, gap, (gap - hw, gap + hw), bool(np.all(Lam <= B + sB)), const, env_ok, s)


# --- effective drift and critical temperature -----------------------------------

@dataclass(frozen=True)
class HBar:
    h_bar: float
    mass: float  # predicted lambda_h - lambda_{h_bar}
    halfwidth: float
    m_bar: MassEstimate  # hyperplane mass at h_bar
    evaluations: int


def solve_h_bar(cfg: WalkConfig, spec: PotentialSpec, beta: float, Lmax: int = 4,
                tr: Truncation = Truncation(), xtol: float = 1e-3) -> HBar:
    """Root of the increasing map ``h' -> mbar(h', beta) + h' - h`` on ``[0, h]``.

    ``mbar`` is the slope-fit bridge mass at drift ``h'``. The half-width of
    the prediction propagates the mass half-width at the root through the
    slope of the map.
    """
    h = cfg.h
    if h <= 0:
        raise ValueError("solve_h_bar needs h > 0")
    if beta == 0:
        zero = MassEstimate(0.0, "slope-fit", (), 0.0, 0.0)
        return HBar(h, 0.0, 0.0, zero, 0)
    masses: dict[float, MassEstimate] = {}

    def mbar(x: float) -> MassEstimate:
        if x not in masses:
            masses[x] = bridge_mass(WalkConfig(cfg.d, x), spec, beta, 1, Lmax, tr)
        return masses[x]

    def f(x: float) -> float:
        return mbar(x).m_hat + x - h

    if f(0.0) >= 0:
        raise BracketError(f"mbar(0, {beta}) >= h: no effective drift below h (beta >= beta_c)")
    hb = optimize.brentq(f, 0.0, h, xtol=xtol) if f(h) > 0 else h
    est = mbar(hb)
    dx = max(4 * xtol, 0.02)
    lo, hi = max(hb - dx, 0.0), min(hb + dx, h)
    slope = (f(hi) - f(lo)) / (hi - lo) if hi > lo else 1.0
    slope = max(slope, 1e-3)
    lam_prime = 2 * math.sinh(hb) / (2 * math.cosh(hb) + 2 * cfg.d - 2)
    hw = lam_prime * (est.halfwidth / slope + xtol)
    pred = step_law(cfg).lambda_h - step_law(WalkConfig(cfg.d, hb)).lambda_h
    return HBar(hb, pred, hw, est, len(masses))


@dataclass(frozen=True)
class BetaC:
    beta_c: float
    bracket: tuple[float, float]
    direct: MassEstimate
    extrapolated: float
    flagged: bool
    masses: dict = field(default_factory=dict, compare=False)


def zero_drift_mass(cfg: WalkConfig, spec: PotentialSpec, beta: float, Lmax: int = 4,
                    tr: Truncation = Truncation(eps=1e-8)) -> tuple[MassEstimate, float]:
    """Bridge mass at ``h = 0``: direct, and extrapolated from ``h' = 0.2, 0.1, 0.05``.

    The extrapolation is the second-order Richardson combination
    ``(8 m(0.05) - 6 m(0.1) + m(0.2)) / 3``.
    """
    direct = bridge_mass(WalkConfig(cfg.d, 0.0), spec, beta, 1, Lmax, tr, max_rel=0.5)
    m = {x: bridge_mass(WalkConfig(cfg.d, x), spec, beta, 1, Lmax, tr, max_rel=0.5).m_hat
         for x in (0.2, 0.1, 0.05)}
    return direct, (8 * m[0.05] - 6 * m[0.1] + m[0.2]) / 3


def solve_beta_c(cfg: WalkConfig, spec: PotentialSpec, beta_hi: float = 2.0, xtol: float = 1e-3,
                 Lmax: int = 4, tr: Truncation = Truncation(eps=1e-8), flag_tol: float = 0.05) -> BetaC:
    """Inverse temperature where the zero-drift mass reaches ``h = cfg.h``.

    Bisection on the direct zero-drift slope-fit mass, starting from
    ``mbar(0, 0) = 0``. At the root the extrapolated mass is also computed;
    the result is flagged when the two differ by more than ``flag_tol``.
    Finite-span fits at zero drift overestimate the mass, so the root is
    biased low.
    """
    h = cfg.h
    if h <= 0:
        raise ValueError("solve_beta_c needs h > 0")
    masses: dict[float, MassEstimate] = {}

    def m0(b: float) -> float:
        if b == 0:
            return 0.0
        if b not in masses:
            masses[b] = bridge_mass(WalkConfig(cfg.d, 0.0), spec, b, 1, Lmax, tr, max_rel=0.5)
        return masses[b].m_hat

    lo, hi = 0.0, beta_hi
    if m0(hi) <= h:
        raise BracketError(f"zero-drift mass at beta={hi} is below h={h}")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if m0(mid) < h:
            lo = mid
        else:
            hi = mid
    direct, extra = zero_drift_mass(cfg, spec, hi, Lmax, tr)
    return BetaC(0.5 * (lo + hi), (lo, hi), direct, extra, abs(direct.m_hat - extra) > flag_tol, dict(masses))


# --- supermultiplicativity constant ---------------------------------------------

@dataclass(frozen=True)
class KConstant:
    value: float
    truncated: float
    tail: float
    m_B: MassEstimate
    B: np.ndarray  # B(n), n = 0..N_max


def return_probs(cfg: WalkConfig, N: int) -> np.ndarray:
    """``P_h[S_1(n) = 0]`` for ``n = 0..N``."""
    law = step_law(cfg)
    dist = np.zeros(2 * N + 1)
    dist[N] = 1.0
    out = np.zeros(N + 1)
    out[0] = 1.0
    kern = np.array([law.p_minus, law.p_lazy, law.p_plus])
    for n in range(1, N + 1):
        dist = np.convolve(dist, kern, mode="same")
        out[n] = dist[N]
    return out


def k_constant(cfg: WalkConfig, spec: PotentialSpec, beta: float, N_max: int,
               budget: int | None = None) -> KConstant:
    """``(sum_n P_h[S_1(n)=0] / B(n))^2`` truncated at ``N_max`` plus a geometric tail.

    The tail continues the last term at ratio ``exp(m_B - lambda_h)`` with
    ``m_B`` the slope-fit mass of ``B(n)`` over the upper half of the lengths.
    """
    st = fixed_stats(cfg, spec, beta, N_max, budget)
    B = st.bridge.sum(axis=0)
    B[0] = 1.0
    terms = return_probs(cfg, N_max) / B
    n = np.arange(N_max + 1)
    mB = estimate_mass(dict(zip(n.tolist(), B.tolist())), "slope-fit",
                       window=range(max(1, N_max // 2), N_max + 1))
    rho = math.exp(mB.m_hat - step_law(cfg).lambda_h)
    if rho >= 1:
        raise Divergence(f"term ratio {rho:.4f} >= 1: sub-ballistic parameters")
    tail = terms[-1] * rho / (1 - rho)
    S = float(terms.sum())
    return KConstant((S + tail) ** 2, S * S, tail, mB, B)


def supermultiplicativity_violations(B: Sequence[float], K: float, N: int,
                                     rtol: float = 1e-12) -> dict[str, int]:
    """Counts of splits ``N1 + N2 <= N`` breaking ``B(N1)B(N2) <= B(N1+N2) <= K B(N1)B(N2)``."""
    B = np.asarray(B, dtype=float)
    lower = upper = 0
    for n1 in range(N + 1):
        for n2 in range(N + 1 - n1):
            prod = B[n1] * B[n2]
            lower += B[n1 + n2] < prod * (1 - rtol)
            upper += B[n1 + n2] > K * prod * (1 + rtol)
    return {"lower": int(lower), "upper": int(upper)}
