"""Ensemble statistics: moment curves, ordering audits, contraction and invariant-law probes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import expm

from .lattice import GraphSpec, WeightSpec, site_weights
from .model import (ModelSpec, admissibility_check, mean_field_matrix, stationary_mean,
                    subcriticality_margin)
from .noise import NoiseFabric
from .simulator import Ensemble, SimParams, simulate_ensemble, simulate_stack


class AnalysisRefused(RuntimeError):
    pass


@dataclass
class Series:
    times: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray | None = None

    def rows(self):
        b = self.bound if self.bound is not None else np.full_like(self.value, np.nan)
        return list(zip(self.times.tolist(), self.value.tolist(), self.stderr.tolist(), b.tolist()))


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error over axis 0, ignoring NaN rows (aborted replicas)."""
    k = np.sum(~np.isnan(x), axis=0)
    m = np.nanmean(x, axis=0) if x.size else np.zeros(x.shape[1:])
    sd = np.nanstd(x, axis=0, ddof=1) if x.shape[0] > 1 else np.zeros_like(m)
    return m, sd / np.sqrt(np.maximum(k, 1))


def moment_curve(ens: Ensemble, v: np.ndarray) -> Series:
    if ens.n_replicas < 2:
        raise ValueError("moment curves need at least 2 replicas")
    m, se = _mean_se(ens.states @ v)
    return Series(ens.times, m, se)


def moment_bound(ens: Ensemble, v: np.ndarray, C: float) -> tuple[Series, bool]:
    """Empirical ``E||eta_t||`` against ``(1 + E||eta_0||) e^{Ct}``."""
    s = moment_curve(ens, v)
    s.bound = (1.0 + s.value[0]) * np.exp(C * s.times)
    return s, bool(np.all(s.value <= s.bound))


def comparison_audit(lower: Ensemble, upper: Ensemble, v: np.ndarray) -> dict:
    """``sum_x v(x)(lower - upper)^+`` per recorded time: mean, max and time integral."""
    if lower.times.shape != upper.times.shape or not np.allclose(lower.times, upper.times):
        raise ValueError("ensembles are on different time grids")
    viol = np.maximum(lower.states - upper.states, 0.0) @ v  # (R, n_rec)
    m, se = _mean_se(viol)
    integral = np.trapezoid(np.nan_to_num(viol), lower.times, axis=1) if len(lower.times) > 1 else viol[:, 0] * 0
    return {
        "series": Series(lower.times, m, se),
        "max": float(np.nanmax(viol, initial=0.0)),
        "integral": float(np.mean(integral)),
    }


def stability_check(a: Ensemble, b: Ensemble, v: np.ndarray, C1: float, C4: float, C5: float) -> tuple[Series, bool]:
    """``E||eta_t - xi_t|| <= E||eta_0 - xi_0|| e^{(C1 + 2 C4 + C5) t}`` for a coupled pair."""
    d = np.abs(a.states - b.states) @ v
    m, se = _mean_se(d)
    bound = m[0] * np.exp((C1 + 2 * C4 + C5) * a.times)
    return Series(a.times, m, se, bound), bool(np.all(m <= bound + 3 * se + 1e-12))


@dataclass
class RateFit:
    rate: float
    ci: tuple[float, float]
    window: tuple[float, float]
    n_points: int

    def to_dict(self):
        return {"rate": self.rate, "ci": list(self.ci), "window": list(self.window), "n_points": self.n_points}


def fit_decay(times: np.ndarray, series: np.ndarray, t_lo: float, t_hi: float) -> RateFit:
    """Least-squares slope of ``-log series`` on ``[t_lo, t_hi]``, with a 95% interval."""
    sel = (times >= t_lo - 1e-12) & (times <= t_hi + 1e-12) & (series > 0)
    t, y = times[sel], np.log(series[sel])
    if len(t) < 3:
        return RateFit(float("nan"), (float("nan"), float("nan")), (t_lo, t_hi), int(len(t)))
    r = stats.linregress(t, y)
    q = stats.t.ppf(0.975, len(t) - 2)
    return RateFit(-r.slope, (-r.slope - q * r.stderr, -r.slope + q * r.stderr), (t_lo, t_hi), int(len(t)))


@dataclass
class ContractionReport:
    times: np.ndarray
    series: np.ndarray
    stderr: np.ndarray
    margin: float
    bound: np.ndarray
    fit: RateFit
    oracle: np.ndarray | None
    bound_pass: bool
    oracle_pass: bool | None

    @property
    def passed(self) -> bool:
        return self.bound_pass and self.oracle_pass is not False

    def to_dict(self):
        return {
            "margin": self.margin,
            "fit": self.fit.to_dict(),
            "bound_pass": self.bound_pass,
            "oracle_pass": self.oracle_pass,
            "passed": self.passed,
            "max_excess_over_bound_in_se": float(np.max((self.series - self.bound) / np.maximum(self.stderr, 1e-300))),
        }

    def rows(self):
        o = self.oracle if self.oracle is not None else np.full_like(self.series, np.nan)
        return list(zip(self.times.tolist(), self.series.tolist(), self.stderr.tolist(), self.bound.tolist(), o.tolist()))


def w1_ordered(upper: Ensemble, lower: Ensemble, v: np.ndarray, A_margin: float,
               model: ModelSpec | None = None, eta0=None, xi0=None) -> ContractionReport:
    """Synchronous-coupling estimate of ``W1`` for ordered starts, checked against ``e^{-At}``."""
    if not A_margin > 0:
        raise AnalysisRefused(f"not subcritical (A = {A_margin:.6g})")
    diff = upper.states - lower.states
    if np.nanmin(diff, initial=0.0) < 0:
        raise AnalysisRefused("ensembles are not ordered; the coupling audit failed")
    d = diff @ v
    m, se = _mean_se(d)
    t = upper.times
    bound = m[0] * np.exp(-A_margin * t)
    fit = fit_decay(t, m, t[-1] / 4, t[-1])
    oracle, opass = None, None
    if model is not None and eta0 is not None and xi0 is not None:
        # for an affine model the mean difference solves the homogeneous equation
        oracle = _homogeneous(model, np.asarray(eta0) - np.asarray(xi0), t) @ v
        opass = bool(np.all(np.abs(m - oracle) <= 3 * se + 1e-12))
    return ContractionReport(t, m, se, A_margin, bound, fit, oracle,
                             bool(np.all(m <= bound + 3 * se + 1e-12)), opass)


def _homogeneous(model: ModelSpec, delta0: np.ndarray, times) -> np.ndarray:
    A, _ = mean_field_matrix(model)
    return np.stack([expm(t * A) @ delta0 for t in np.atleast_1d(times)])


@dataclass
class InvariantReport:
    stationary: np.ndarray
    mean_lower: np.ndarray
    se_lower: np.ndarray
    mean_upper: np.ndarray
    se_upper: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    sandwich: Series
    fit: RateFit
    margin: float
    ks_stat: float
    ks_pvalue: float
    extra: dict = field(default_factory=dict)

    @property
    def means_pass(self) -> bool:
        return bool(np.all(np.abs(self.z_lower) <= 3) and np.all(np.abs(self.z_upper) <= 3))

    @property
    def rate_pass(self) -> bool:
        return bool(self.fit.rate >= 0.8 * self.margin)

    @property
    def ks_pass(self) -> bool:
        return bool(self.ks_pvalue >= 1e-3)

    def to_dict(self):
        return {
            "stationary": self.stationary.tolist(),
            "mean_lower": self.mean_lower.tolist(),
            "se_lower": self.se_lower.tolist(),
            "mean_upper": self.mean_upper.tolist(),
            "se_upper": self.se_upper.tolist(),
            "margin": self.margin,
            "fit": self.fit.to_dict(),
            "ks_stat": self.ks_stat,
            "ks_pvalue": self.ks_pvalue,
            "means_pass": self.means_pass,
            "rate_pass": self.rate_pass,
            "ks_pass": self.ks_pass,
            **self.extra,
        }


def invariant_probe(model: ModelSpec, fabric: NoiseFabric, params: SimParams, burn_in: float,
                    large_state, w: WeightSpec | None = None, site: int | None = None) -> InvariantReport:
    """Sandwich the invariant law between the empty and a large start on common noise.

    Means are time averages over ``[burn_in, T]`` per replica (replicas are
    independent, so their spread gives the standard error).  The KS screen
    compares the final marginal at ``site`` of the lower ensemble with an
    independent upper-start ensemble.
    """
    g = model.graph
    w = w or params.weight
    A = subcriticality_margin(model, g, w)
    if not A > 0:
        raise AnalysisRefused(f"not subcritical (A = {A:.6g})")
    v = site_weights(g, w)
    n = model.n_sites
    large = np.broadcast_to(np.asarray(large_state, dtype=float), (n,))
    lo, up = simulate_stack([model, model], [np.zeros(n), large], fabric, params, pairs=[(0, 1)])
    indep = simulate_ensemble(model, large, fabric, params, replica_offset=params.replicas)
    pi = stationary_mean(model)
    sel = lo.times >= burn_in - 1e-12

    def tavg(ens):
        x = ens.states[:, sel, :].mean(1)
        return _mean_se(x)

    ml, sl = tavg(lo)
    mu, su = tavg(up)
    d = (up.states - lo.states) @ v
    dm, dse = _mean_se(d)
    fit = fit_decay(lo.times, dm, lo.times[-1] / 4, lo.times[-1])
    site = g.origin if site is None else site
    a = lo.states[:, -1, site]
    b = indep.states[:, -1, site]
    ks = stats.ks_2samp(a[~np.isnan(a)], b[~np.isnan(b)])
    with np.errstate(divide="ignore", invalid="ignore"):
        zl = np.where(sl > 0, (ml - pi) / sl, 0.0)
        zu = np.where(su > 0, (mu - pi) / su, 0.0)
    return InvariantReport(
        stationary=pi, mean_lower=ml, se_lower=sl, mean_upper=mu, se_upper=su, z_lower=zl, z_upper=zu,
        sandwich=Series(lo.times, dm, dse), fit=fit, margin=A, ks_stat=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        extra={"abort_rate": max(lo.abort_rate, indep.abort_rate),
               "ordering_max_violation": lo.audit.max_violation if lo.audit else None},
    )


def certified_margin(model: ModelSpec, g: GraphSpec, w: WeightSpec) -> float:
    rep = admissibility_check(model, g, w)
    if not rep.ok:
        raise AnalysisRefused("model is not admissible: " + ", ".join(rep.failed))
    return subcriticality_margin(model, g, w)
