"""Experiment registry: each entry is a default configuration plus a runner.

A runner reads an ``ExperimentConfig``, fills a ``RunRecord`` with exact
values, estimate records, table rows and acceptance verdicts, and never
touches wall-clock time, so a replay reproduces the record exactly.
"""
from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

from .. import bridges, exact_enum, montecarlo, renewal, strips
from ..potential import ExponentialMean1, phi
from ..streams import RngStream
from ..walk_model import (Path, WalkConfig, escape_prob, green_horizon, green_sum, hitting_mc,
                          hitting_prob_neg, step_law)
from .config import ExperimentConfig
from .records import RunRecord

Runner = Callable[[ExperimentConfig, RunRecord, RngStream], None]


@dataclass(frozen=True)
class Experiment:
    name: str
    summary: str
    criteria: tuple[str, ...]
    defaults: dict[str, Any]
    run: Runner
    stream_id: int = 0
    tables: tuple[str, ...] = field(default=())


EXPERIMENTS: dict[str, Experiment] = {}

_EXP = {"law": "exponential_mean1"}
_BERN = {"law": "bernoulli", "prob_rho": 0.5, "value_v": 1.0}


def _register(name: str, summary: str, criteria: tuple[str, ...], defaults: dict[str, Any],
              tables: tuple[str, ...]) -> Callable[[Runner], Runner]:
    def deco(fn: Runner) -> Runner:
        EXPERIMENTS[name] = Experiment(name, summary, criteria, defaults, fn, len(EXPERIMENTS), tables)
        return fn
    return deco


def _walk_grid(cfg: ExperimentConfig) -> list[WalkConfig]:
    ds = cfg.sizes.d_grid or [cfg.walk.dimension_d]
    hs = cfg.sizes.h_grid or [cfg.walk.drift_h]
    return [WalkConfig(d, h) for d in ds for h in hs]


def _trunc(cfg: ExperimentConfig) -> renewal.Truncation:
    return renewal.Truncation(cfg.sizes.N_trunc, cfg.sizes.eps_trunc, cfg.budget)


def _need(v: Any, name: str) -> Any:
    if v is None:
        raise ValueError(f"this experiment needs sizes.{name}")
    return v


# --- identities of the free walk -------------------------------------------------

@_register("hitting-identity", "Monte Carlo probability of ever reaching -L against exp(-2 L h)",
           ("1",), {"walk": {"dimension_d": 1, "drift_h": 0.5}, "potential": _EXP, "beta": 0.0,
                    "sizes": {"d_grid": [1, 2, 3], "h_grid": [0.5, 1.0], "L_grid": [1, 2]},
                    "samples": {"n_walks": 10**6}}, ("hitting",))
def _hitting(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    ok = True
    Ls = cfg.sizes.L_grid or [1]
    for i, (wc, L) in enumerate(itertools.product(_walk_grid(cfg), Ls)):
        est = hitting_mc(wc, L, cfg.samples.n_walks, stream.child(i), cfg.tolerances.tail_tol)
        exact = hitting_prob_neg(wc, L)
        tol = max(cfg.tolerances.n_sigma * est.stderr, cfg.tolerances.abs_tol)
        ok &= abs(est.p_hat - exact) <= tol
        rec.estimates.append({"quantity": "hitting_prob", "params": {"d": wc.d, "h": wc.h, "L": L},
                              "n_samples": est.n_walks, "mean": est.p_hat, "stderr": est.stderr,
                              "seed": stream.seed, "stream_id": [*stream.stream_id, i], "extra": {}})
        rec.add_row("hitting", d=wc.d, h=wc.h, L=L, p_hat=est.p_hat, stderr=est.stderr, exact=exact,
                    horizon=est.horizon, residual_bound=est.residual_bound)
    rec.verdict("1", ok, rule="|p_hat - exp(-2Lh)| <= max(n_sigma * stderr, abs_tol)")


@_register("green-identity", "Reciprocal of the truncated return sum against the escape probability",
           ("2",), {"walk": {"dimension_d": 1, "drift_h": 0.5}, "potential": _EXP, "beta": 0.0,
                    "sizes": {"d_grid": [1, 2, 3], "h_grid": [0.25, 0.5, 1.0]}}, ("green",))
def _green(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    tol = 1e-8
    ok = True
    for wc in _walk_grid(cfg):
        gs = green_sum(wc, green_horizon(wc, tol * 1e-3))
        inv = 1.0 / gs.value
        alpha = escape_prob(wc)
        # the true sum lies in [value, value + tail], so 1/sum within inv * tail / value
        err = abs(inv - alpha)
        ok &= err <= tol and inv * gs.certified_tail / gs.value <= tol
        rec.add_row("green", d=wc.d, h=wc.h, M=gs.M, inverse_sum=inv, alpha=alpha,
                    tail=gs.certified_tail, abs_err=err)
    rec.verdict("2", ok, tol=tol)


# --- exact oracles ------------------------------------------------------------------

@_register("oracle-fixtures", "Hand-checked exact values, energy bounds and subadditivity",
           ("3", "4", "5"), {"walk": {"dimension_d": 2, "drift_h": 1.0}, "potential": _EXP, "beta": [1.0, 0.3],
                             "sizes": {"N": 10, "N_grid": [12]}}, ("fixtures", "violations", "subadditivity"))
def _fixtures(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    spec = ExponentialMean1()
    fx = []
    g = exact_enum.exact_G(WalkConfig(1, 0.0), spec, 1.0, 3, cfg.budget)
    fx.append(("G_d1_h0_N3", g, 7 / 48))
    c1 = WalkConfig(1, 1.0)
    b2, _ = exact_enum.exact_B(c1, spec, 1.0, 2, cfg.budget)
    fx.append(("B_d1_N2", b2, step_law(c1).p_plus ** 2 * math.exp(-2 * float(phi(spec, 1.0, 1)))))
    ok3 = all(abs(v - e) <= 1e-12 for _, v, e in fx)
    for name, v, e in fx:
        rec.add_row("fixtures", name=name, value=v, expected=e, abs_err=abs(v - e))
    tup = bridges.PathTuple.of(Path.parse("++-++"))
    bp = sorted(bridges.breaking_points(tup))
    bts = bridges.backtracks(tup, 0)
    ok3 &= bp == [2, 3] and len(bts) == 1 and bts[0].span == 1
    rec.exact["breaking_points"] = bp
    rec.exact["backtrack_spans"] = [b.span for b in bts]
    rec.verdict("3", ok3)

    wc = cfg.walk.build()
    pot = cfg.potential.build()
    N = _need(cfg.sizes.N, "N")
    total = 0
    for beta in cfg.betas:
        viol = exact_enum.energy_bound_violations(wc, pot, beta, N)
        for key, n in viol.items():
            rec.add_row("violations", check=f"beta={beta!r}:{key}", count=n)
            if key != "checks":
                total += n
    rec.verdict("4", total == 0, violations=total)

    Nmax = max(_need(cfg.sizes.N_grid, "N_grid"))
    rnd = exact_enum.summation_error(wc, Nmax)
    bad = 0
    for beta in cfg.betas:
        a = -np.log(exact_enum.exact_G_series(wc, pot, beta, Nmax, cfg.budget))
        for m in range(1, Nmax):
            for n in range(m, Nmax - m + 1):
                if a[m + n] > a[m] + a[n] + rnd[m] + rnd[n] + rnd[m + n]:
                    bad += 1
                rec.add_row("subadditivity", m=m, n=n, a_m=a[m], a_n=a[n], a_mn=a[m + n])
    rec.verdict("5", bad == 0, violations=bad)


# --- renewal structure ----------------------------------------------------------------

@_register("renewal", "Renewal identity residuals and the renewal mass sequence",
           ("6", "7"), {"walk": {"dimension_d": 2, "drift_h": 1.0}, "potential": _EXP, "beta": [0.0, 0.3],
                        "sizes": {"p_grid": [1, 2], "L_max": 4, "K": 6}}, ("renewal", "pi"))
def _renewal(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot, tr = cfg.walk.build(), cfg.potential.build(), _trunc(cfg)
    ok = True
    for beta, p in itertools.product(cfg.betas, cfg.sizes.p_grid):
        for L in range(1, _need(cfg.sizes.L_max, "L_max") + 1):
            r = renewal.renewal_residual(wc, pot, beta, p, L, tr)
            ok &= r.ok and r.matched_slack <= cfg.tolerances.slack_max
            rec.add_row("renewal", p=p, beta=beta, L=L, residual=r.residual, slack=r.slack,
                        matched=r.matched, matched_slack=r.matched_slack)
    rec.verdict("6", ok, rule="matched residual <= matched slack <= slack_max; full residual <= full slack")

    beta = cfg.betas[-1]
    K = _need(cfg.sizes.K, "K")
    pi = renewal.pi_sequence(wc, pot, beta, cfg.sizes.p_grid[0], K, tr)
    ps = pi.partial_sums
    for k in range(1, K + 1):
        tail = float(pi.tail[k]) if k < pi.tail.size else math.nan
        rec.add_row("pi", k=k, pi=pi.values[k], partial_sum=ps[k - 1], tail=tail)
    rec.exact["pi_slack"] = pi.slack
    rec.exact["m_B"] = pi.m_B.m_hat
    ok7 = (bool(np.all(pi.values[1:] >= 0)) and bool(np.all(np.diff(ps) >= 0))
           and ps[-1] <= 1 + pi.slack and ps[-1] > ps[-3] and bool(np.all(np.diff(pi.tail) <= 0)))
    rec.verdict("7", ok7, partial_sum=ps[-1], slack=pi.slack)


@_register("mass-gap", "Slope-fit masses of bridges and irreducible bridges",
           ("8",), {"walk": {"dimension_d": 2, "drift_h": 1.0}, "potential": _EXP, "beta": 0.3,
                    "sizes": {"L_max": 6, "N_trunc": 120, "eps_trunc": 1e-11}}, ("mass-gap",))
def _mass_gap(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot = cfg.walk.build(), cfg.potential.build()
    Lw = _need(cfg.sizes.L_max, "L_max")
    g = renewal.mass_gap(wc, pot, cfg.betas[0], cfg.sizes.p_grid[0], Lw, _trunc(cfg),
                         cfg.tolerances.max_rel_slack)
    s = g.series
    for L in range(1, Lw + 1):
        rec.add_row("mass-gap", L=L, Bbar=s["B"][L], Lambdabar=s["Lambda"][L], slack_B=s["slack_B"][L],
                    **{"slack_Λ": s["slack_Lambda"][L]})
    rec.exact.update(m_B=g.m_B.m_hat, m_Lambda=g.m_Lambda.m_hat, gap=g.gap, gap_ci=list(g.ci),
                     pointwise_ok=g.pointwise_ok, envelope_constant=g.envelope_constant,
                     envelope_ok=g.envelope_ok)
    rec.verdict("8", g.gap > 0 and g.significant, gap=g.gap, ci=list(g.ci))


@_register("ballistic-consistency", "Effective-drift mass prediction against the fixed-length mass",
           ("11",), {"walk": {"dimension_d": 2, "drift_h": 1.0}, "potential": _BERN, "beta": 0.3,
                     "sizes": {"N": 12, "L_max": 4}}, ("ballistic",))
def _ballistic(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot, beta = cfg.walk.build(), cfg.potential.build(), cfg.betas[0]
    hb = renewal.solve_h_bar(wc, pot, beta, _need(cfg.sizes.L_max, "L_max"), _trunc(cfg))
    N = _need(cfg.sizes.N, "N")
    G = exact_enum.exact_G_series(wc, pot, beta, N, cfg.budget)
    fit = renewal.estimate_mass(G[1:], "slope-fit", window=range(max(1, N // 2), N + 1))
    diff = hb.mass - fit.m_hat
    rec.add_row("ballistic", h_bar=hb.h_bar, predicted=hb.mass, pred_halfwidth=hb.halfwidth,
                fitted=fit.m_hat, fit_halfwidth=fit.halfwidth, diff=diff)
    rec.verdict("11", abs(diff) <= cfg.tolerances.agree_tol, diff=diff,
                combined_halfwidth=hb.halfwidth + fit.halfwidth)


# --- disorder averages ---------------------------------------------------------------

@_register("second-moment", "Environment average of Z^2 and the two-replica ratio curve",
           ("9", "10"), {"walk": {"dimension_d": 2, "drift_h": 1.0}, "potential": _BERN, "beta": 0.5,
                         "sizes": {"N": 6}, "samples": {"n_envs": 10**4},
                         "ratio_curve": {"walk": {"dimension_d": 4, "drift_h": 1.0}, "beta": [0.1, 2.0],
                                         "N_grid": [4, 8, 12, 16, 20], "n_pairs": 10**5}},
           ("second-moment",))
def _second_moment(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot, beta = cfg.walk.build(), cfg.potential.build(), cfg.betas[0]
    pz = montecarlo.paley_zygmund_check(wc, pot, beta, _need(cfg.sizes.N, "N"), cfg.samples.n_envs,
                                        stream.child(0))
    m2 = pz.second_moment
    rec.estimates.append(m2.to_dict())
    rec.exact.update(EZ=pz.EZ, EZ2=pz.EZ2, pz_p_hat=pz.p_hat, pz_bound=pz.bound, pz_holds=pz.holds)
    rec.verdict("9", abs(m2.mean - pz.EZ2) <= cfg.tolerances.n_sigma * m2.stderr,
                mc=m2.mean, stderr=m2.stderr, exact=pz.EZ2)

    rc = cfg.ratio_curve
    if rc is None:
        return
    wc2 = rc.walk.build()
    verdicts = []
    for i, b in enumerate(rc.beta):
        recs = montecarlo.second_moment_curve(wc2, pot, b, rc.N_grid, rc.n_pairs, (), stream.child(1 + i))
        mean = np.array([r.mean for r in recs])
        se = np.array([r.stderr for r in recs])
        for r in recs:
            rec.estimates.append(r.to_dict())
            rec.add_row("second-moment", beta=b, N=r.params["N"], ratio=r.mean, stderr=r.stderr)
        rel = (mean[-1] - mean[0]) / mean[0]
        # parametric bootstrap of the Spearman correlation between N and the ratio
        gen = stream.child(100 + i).gen
        draws = mean + se * gen.standard_normal((rc.n_boot, mean.size))
        rho = np.array([stats.spearmanr(rc.N_grid, row).statistic for row in draws])
        lo, hi = np.quantile(rho, [0.025, 0.975])
        verdicts.append({"beta": b, "rel_increase": rel, "increasing": bool(np.all(np.diff(mean) > 0)),
                         "spearman_ci": [float(lo), float(hi)]})
    flat, steep = verdicts[0], verdicts[-1]
    ok = flat["rel_increase"] <= cfg.tolerances.rel_change and steep["increasing"] and steep["spearman_ci"][0] > 0
    rec.verdict("10", ok, curves=verdicts)


@_register("free-energy-gap", "Quenched against annealed log partition functions along N",
           ("12",), {"walk": {"dimension_d": 4, "drift_h": 1.0}, "potential": _BERN, "beta": 0.1,
                     "sizes": {"N_grid": [8, 16, 24, 32]}, "samples": {"n_paths": 500, "n_envs": 400}},
           ("free-energy-gap",))
def _free_energy(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot, beta = cfg.walk.build(), cfg.potential.build(), cfg.betas[0]
    grid = _need(cfg.sizes.N_grid, "N_grid")
    fg = montecarlo.mc_free_energy_gap(wc, pot, beta, grid, (cfg.samples.n_paths, cfg.samples.n_envs), stream)
    co = fg.coincidence
    for j, N in enumerate(fg.N_grid):
        rec.add_row("free-energy-gap", N=N, mean_log_z=fg.mean_log_z[j], log_mean_z=fg.log_mean_z[j],
                    gap=fg.gap[j], gap_stderr=fg.gap_stderr[j], coincidence=co[j], envelope=fg.envelope[j])
    rec.exact["envelope_c"] = fg.c
    ok = bool(np.all(np.diff(co) < 0)) and bool(np.all(fg.jensen >= 0)) and fg.envelope_ok
    rec.verdict("12", ok, coincidence=co, jensen=fg.jensen, c=fg.c)


@_register("concentration", "Tail of the restricted log partition function against its Gaussian bound",
           ("concentration",), {"walk": {"dimension_d": 2, "drift_h": 1.0}, "potential": _BERN, "beta": 0.5,
                                "sizes": {"N": 8, "k_restrict": 4.0}, "samples": {"n_envs": 2000}},
           ("concentration",))
def _concentration(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot, beta = cfg.walk.build(), cfg.potential.build(), cfg.betas[0]
    rep = montecarlo.concentration_check(wc, pot, beta, _need(cfg.sizes.k_restrict, "k_restrict"),
                                         _need(cfg.sizes.N, "N"), cfg.samples.n_envs, stream)
    for t, e, b, s in zip(rep.t_grid, rep.empirical, rep.bound, rep.slack):
        rec.add_row("concentration", t=t, empirical=e, bound=b, slack=s)
    rec.exact["median_log_z"] = rep.median
    rec.verdict("concentration", rep.violations == 0, violations=rep.violations)


@_register("restricted-partition", "Partition function restricted by the sum of squared local times",
           ("13",), {"walk": {"dimension_d": 2, "drift_h": 1.0}, "potential": _EXP, "beta": [0.0, 0.1, 0.3],
                     "sizes": {"N_grid": list(range(1, 11))}}, ("restricted",))
def _restricted(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot = cfg.walk.build(), cfg.potential.build()
    ok = True
    khat = {}
    for beta in cfg.betas:
        for N in _need(cfg.sizes.N_grid, "N_grid"):
            st = exact_enum.fixed_stats(wc, pot, beta, N, cfg.budget)
            G = float(st.G[N])
            ks = sorted({*np.arange(0.5, N + 1.0, 0.25).tolist(), 1.0, float(N)})
            ratios = [exact_enum.exact_restricted_G(wc, pot, beta, N, k, cfg.budget) / G for k in ks]
            for k, r in zip(ks, ratios):
                rec.add_row("restricted", N=N, k=k, ratio=r)
            kh = exact_enum.select_k(wc, pot, beta, N, budget=cfg.budget)
            rh = exact_enum.exact_restricted_G(wc, pot, beta, N, kh, cfg.budget) / G
            khat[f"{beta!r}:{N}"] = [kh, rh]
            saw = float(st.all_ones[N]) / G
            ok &= bool(np.all(np.diff(ratios) >= 0))
            ok &= all(r == 1.0 for k, r in zip(ks, ratios) if k >= N)
            # the self-avoiding weight has its own accumulator: agreement up to summation rounding
            ok &= abs(ratios[ks.index(1.0)] - saw) <= 1e-10 and rh > 0.5
    rec.exact["k_hat"] = khat
    rec.verdict("13", ok)


@_register("strip-chain", "First-overlap index and contraction factor of the two-walk strip chain",
           ("14",), {"walk": {"dimension_d": 4, "drift_h": 1.0}, "potential": _BERN, "beta": 0.1,
                     "samples": {"n_chains": 40000, "max_steps": 20, "horizon": 2000}}, ("strip-chain",))
def _strip_chain(cfg: ExperimentConfig, rec: RunRecord, stream: RngStream) -> None:
    wc, pot, beta = cfg.walk.build(), cfg.potential.build(), cfg.betas[0]
    sampler = strips.PairPathSampler(wc, pot, beta, horizon=cfg.samples.horizon)
    dy = tuple(cfg.sizes.offset_dy) or None
    cs = strips.simulate_sigma_chain(sampler, cfg.samples.max_steps, stream, cfg.samples.n_chains, dy)
    for m, (p, se) in enumerate(zip(cs.p_sigma, cs.p_sigma_stderr), start=1):
        rec.add_row("strip-chain", m=m, p_sigma=p, stderr=se)
    rec.exact.update(contraction=cs.contraction, contraction_conservative=cs.contraction_conservative,
                     ci=list(cs.ci), slope=cs.slope, slope_ci=list(cs.slope_ci), unknown_mass=cs.unknown_mass,
                     residual_mass=cs.residual_mass, tail_mass=cs.tail_mass, rho_max=cs.rho_max,
                     m_hat=cs.m_hat)
    ok = cs.ci[1] < 1 and math.isfinite(cs.slope) and cs.slope_ci[1] <= -1
    rec.verdict("14", ok, contraction_ci=list(cs.ci), slope_ci=list(cs.slope_ci))
