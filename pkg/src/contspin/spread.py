"""Random-walk heat kernels on the fattened graph and front tracking for point sources."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .lattice import GraphSpec
from .noise import NoiseFabric, to_uniform
from .simulator import Ensemble


@dataclass
class KernelEstimate:
    times: np.ndarray
    K: np.ndarray  # (n_times, n_sites) empirical transition frequencies
    walkers: int
    source: int

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(self.K * (1.0 - self.K) / self.walkers)


def ctrw_simulate(ghat: GraphSpec, M: float, x0: int, times, fabric: NoiseFabric, walkers: int) -> KernelEstimate:
    """Walkers leave ``x`` at rate ``M deg(x)`` to a uniform neighbour; keyed by walker id and jump count."""
    if not M > 0:
        raise ValueError("rate M must be positive")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    order = np.argsort(times)
    n = ghat.n_sites
    deg = ghat.degrees
    width = max(int(deg.max()), 1)
    nbr = np.zeros((n, width), dtype=np.int64)
    for s, nb in enumerate(ghat.neighbors):
        nbr[s, : len(nb)] = nb
    ids = np.arange(walkers, dtype=np.uint64)
    b_hold = fabric.base("walker", ids, np.uint64(0))
    b_move = fabric.base("walker", ids, np.uint64(1))
    pos = np.full(walkers, int(x0), dtype=np.int64)
    clock = np.zeros(walkers)
    jumps = np.zeros(walkers, dtype=np.uint64)
    K = np.zeros((len(times), n))
    for i in order:
        t = times[i]
        while True:
            rate = M * deg[pos]
            e = -np.log(to_uniform(fabric.at_step(b_hold, jumps)))
            with np.errstate(divide="ignore"):
                nxt = clock + np.where(rate > 0, e / rate, np.inf)
            move = nxt <= t
            if not move.any():
                break
            u = to_uniform(fabric.at_step(b_move, jumps))
            d = deg[pos]
            choice = np.minimum((u * d).astype(np.int64), np.maximum(d - 1, 0))
            pos = np.where(move, nbr[pos, choice], pos)
            clock = np.where(move, nxt, clock)
            jumps = jumps + move.astype(np.uint64)
        K[i] = np.bincount(pos, minlength=n) / walkers
    return KernelEstimate(times, K, walkers, int(x0))


def heat_kernel_bound(m: float, dhat: int, t: float) -> float:
    """``(1/m) exp[-dhat ln(2 dhat / (e t))]`` with ``0 ln 0 = 0``; values above 1 are returned raw."""
    if not m > 0 or not t > 0:
        raise ValueError("need m > 0 and t > 0")
    if dhat < 0:
        raise ValueError("dhat must be >= 0")
    if dhat == 0:
        return 1.0 / m
    return math.exp(-dhat * math.log(2.0 * dhat / (math.e * t))) / m


@dataclass
class AuditRow:
    t: float
    site: int
    dhat: int
    K: float
    se: float
    bound: float
    vacuous: bool
    violation: bool


def kernel_bound_audit(est: KernelEstimate, ghat: GraphSpec, M: float, depth: int = 1) -> list[AuditRow]:
    """Compare ``K(t, x0, v)`` with the bound at rate floor ``m = M * min interior degree``.

    Sites within ``depth`` steps of the truncation boundary are left out.
    """
    inner = ghat.interior(depth)
    m = M * int(ghat.degrees[inner].min())
    d = ghat.distance_matrix[est.source]
    rows = []
    se = est.stderr
    for i, t in enumerate(est.times):
        if t <= 0:
            continue
        for v in inner:
            b = heat_kernel_bound(m, int(d[v]), float(t))
            vac = b > 1.0
            k = float(est.K[i, v])
            rows.append(AuditRow(float(t), int(v), int(d[v]), k, float(se[i, v]), b, vac,
                                 (not vac) and k > b + 3 * float(se[i, v])))
    return rows


# --- fronts -----------------------------------------------------------------


def occupied_set(ens_or_sups, eps: float, t: float | None = None, times=None, replica: int = 0) -> set[int]:
    """Sites whose running supremum at record time ``t`` is at least ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(ens_or_sups, Ensemble):
        i = ens_or_sups.index_of_time(t)
        row = ens_or_sups.sups[replica, i]
    else:
        sups = np.asarray(ens_or_sups)
        if sups.size == 0:
            return set()
        idx = np.flatnonzero(np.isclose(np.asarray(times), t, rtol=0, atol=1e-9))
        if len(idx) == 0:
            raise ValueError(f"time {t} is not on the record grid")
        row = sups[idx[0]]
    return set(np.flatnonzero(np.nan_to_num(row) >= eps).tolist())


def front_radii(ens: Ensemble, g: GraphSpec, x0: int, eps: float) -> np.ndarray:
    """``max dist(x0, z)`` over the occupied set, per (replica, record); empty sets give 0."""
    d = g.distance_matrix[x0]
    occ = np.nan_to_num(ens.sups) >= eps
    return np.where(occ, d[None, None, :], 0).max(-1)


@dataclass
class FrontFit:
    slope: float
    ci: tuple[float, float]
    intercept: float
    r2: float
    window: tuple[float, float]
    zero_speed: bool

    def to_dict(self):
        return {"slope": self.slope, "ci": list(self.ci), "intercept": self.intercept, "r2": self.r2,
                "window": list(self.window), "zero_speed": self.zero_speed}


def front_speed(ens: Ensemble, g: GraphSpec, x0: int, eps: float, window=(5.0, 20.0)) -> tuple[FrontFit, np.ndarray]:
    """Linear fit of the replica-mean front radius over ``window``."""
    radii = front_radii(ens, g, x0, eps)
    mean_r = radii[~ens.stopped].mean(0)
    t = ens.times
    sel = (t >= window[0] - 1e-9) & (t <= window[1] + 1e-9)
    if mean_r[sel].max(initial=0) == 0 or np.ptp(mean_r[sel]) == 0:
        return FrontFit(0.0, (0.0, 0.0), float(mean_r[sel].mean() if sel.any() else 0.0), 0.0, tuple(window), True), radii
    r = stats.linregress(t[sel], mean_r[sel])
    q = stats.t.ppf(0.975, int(sel.sum()) - 2)
    return FrontFit(float(r.slope), (r.slope - q * r.stderr, r.slope + q * r.stderr), float(r.intercept),
                    float(r.rvalue**2), tuple(window), False), radii


def containment(ens: Ensemble, g: GraphSpec, x0: int, eps: float, speed: float, times) -> dict[float, bool]:
    """Whether every replica's occupied set at ``t`` lies in the ball of radius ``speed * t``."""
    radii = front_radii(ens, g, x0, eps)
    out = {}
    for t in times:
        i = ens.index_of_time(t)
        out[float(t)] = bool(np.all(radii[~ens.stopped, i] <= speed * t))
    return out


@dataclass
class SupProfile:
    t: float
    distances: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    floor: float
    fit_window: tuple[float, float]
    slope: float
    c: float
    n_fit: int

    def to_dict(self):
        return {"t": self.t, "distances": self.distances.tolist(), "mean": self.mean.tolist(),
                "stderr": self.stderr.tolist(), "floor": self.floor, "fit_window": list(self.fit_window),
                "slope": self.slope, "c": self.c, "n_fit": self.n_fit}


def sup_moment_profile(ens: Ensemble, g: GraphSpec, x0: int, t: float, window: tuple[float, float]) -> SupProfile:
    """``E[sup_{r<=t} eta_r(x)]`` by distance, and the slope of its log against ``k ln k``.

    Distances whose replica mean falls below the Monte Carlo floor (every
    replica and site is zero) are left out of the fit.
    """
    i = ens.index_of_time(t)
    d = g.distance_matrix[x0]
    sups = ens.sups[~ens.stopped, i, :]
    dist = np.unique(d)
    mean = np.array([sups[:, d == k].mean() for k in dist])
    se = np.array([sups[:, d == k].mean(1).std(ddof=1) / math.sqrt(sups.shape[0]) if sups.shape[0] > 1 else 0.0
                   for k in dist])
    floor = 1.0 / sups.size
    sel = (dist >= window[0]) & (dist <= window[1]) & (dist >= 2) & (mean > 0)
    if sel.sum() < 3:
        return SupProfile(t, dist, mean, se, floor, tuple(window), float("nan"), float("nan"), int(sel.sum()))
    x = dist[sel] * np.log(dist[sel])
    r = stats.linregress(x, np.log(mean[sel]))
    return SupProfile(t, dist, mean, se, floor, tuple(window), float(r.slope), float(-r.slope), int(sel.sum()))


@dataclass
class SpreadReport:
    eps: float
    fit: FrontFit
    radius_times: np.ndarray
    radius_mean: np.ndarray
    containment: dict
    profile: SupProfile | None
    kernel_table: list = field(default_factory=list)

    def to_dict(self):
        return {
            "eps": self.eps,
            "front": self.fit.to_dict(),
            "containment": {str(k): v for k, v in self.containment.items()},
            "profile": None if self.profile is None else self.profile.to_dict(),
            "kernel_violations": sum(1 for r in self.kernel_table if r.violation),
        }
