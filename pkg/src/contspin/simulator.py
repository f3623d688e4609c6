"""Splitting integrator for the branching jump-diffusion on a finite truncation.

One step is drift (explicit Euler) -> diffusion (clamped Euler) -> jumps
(thinned Poisson events, thresholds from the pre-jump state) -> clamp at 0.

Everything runs on a stack of ``P`` processes x ``B`` replicas x ``n`` sites.
The processes in a stack read identical keyed variates, which is the
common-noise coupling; replicas are independent because the replica id is
part of every key.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.special import ndtr, ndtri

from .configuration import Configuration
from .lattice import WeightSpec, site_weights
from .model import FiniteAtoms, ModelSpec, StablePositive
from .noise import JumpTable, NoiseFabric, mix, to_uniform, _add_mul, _P

_GAP_IDX = _P[0] ^ _P[3]


@dataclass(frozen=True)
class SimParams:
    dt: float = 1e-3
    T: float = 1.0
    jump_cap: float = 1e6
    delta_cut: float = 1e-2
    m_guard: float = 1e8
    replicas: int = 100
    record_stride: int = 1
    weight: WeightSpec = field(default_factory=WeightSpec.constant)
    threads: int = 1
    block: int = 2048
    log_events: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if not self.m_guard > 0:
            raise ValueError("m_guard must be positive")
        if not 0 < self.delta_cut < self.jump_cap:
            raise ValueError("need 0 < delta_cut < jump_cap")
        if self.replicas < 1 or self.record_stride < 1:
            raise ValueError("replicas and record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def record_steps(self) -> np.ndarray:
        s = np.arange(0, self.n_steps + 1, self.record_stride)
        if s[-1] != self.n_steps:
            s = np.append(s, self.n_steps)
        return s


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_rec, n)
    sups: np.ndarray  # (n_rec, n)
    counts: dict
    stop_reason: str

    def configuration(self, i: int) -> Configuration:
        return Configuration.from_dense(np.nan_to_num(self.states[i]))


@dataclass
class CouplingAudit:
    """Per-step aggregates of ``sum_x v(x)(lower - upper)^+`` over live replicas."""

    times: np.ndarray
    mean: np.ndarray
    sumsq: np.ndarray
    max: np.ndarray
    live: np.ndarray
    integral: np.ndarray  # per replica, time integral of the violation

    @property
    def stderr(self) -> np.ndarray:
        n = np.maximum(self.live, 1)
        var = np.maximum(self.sumsq / n - self.mean**2, 0.0)
        return np.sqrt(var / np.maximum(n - 1, 1))

    @property
    def max_violation(self) -> float:
        return float(self.max.max(initial=0.0))

    @property
    def mean_integral(self) -> float:
        return float(np.nanmean(self.integral)) if len(self.integral) else 0.0


@dataclass
class Ensemble:
    times: np.ndarray
    states: np.ndarray  # (R, n_rec, n), NaN after a guard stop
    sups: np.ndarray
    stopped: np.ndarray  # (R,) bool
    stop_step: np.ndarray
    counts: dict
    replica_ids: np.ndarray
    model_name: str = ""
    audit: CouplingAudit | None = None
    events: list = field(default_factory=list)

    @property
    def n_replicas(self) -> int:
        return self.states.shape[0]

    @property
    def abort_rate(self) -> float:
        return float(self.stopped.mean())

    def live(self) -> np.ndarray:
        return self.states[~self.stopped]

    def mean(self) -> tuple[np.ndarray, np.ndarray]:
        """Replica mean and standard error per (record, site), aborted replicas excluded."""
        X = self.live()
        k = X.shape[0]
        m = X.mean(0)
        se = X.std(0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(m)
        return m, se

    def norms(self, v: np.ndarray) -> np.ndarray:
        return self.states @ v

    def trajectory(self, i: int) -> Trajectory:
        reason = "tau_m" if self.stopped[i] else "horizon"
        return Trajectory(self.times, self.states[i], self.sups[i], dict(self.counts), reason)

    def index_of_time(self, t: float) -> int:
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if len(idx) == 0:
            raise ValueError(f"time {t} is not on the record grid")
        return int(idx[0])


def _own_compensator(model: ModelSpec, v: np.ndarray, p: SimParams) -> np.ndarray:
    """``g(x) * int z mu_{x,x}(dz)`` over the retained window, per unit mass."""
    out = np.zeros(model.n_sites)
    for (y, x), mu in model.branching.items():
        if x != y:
            continue
        hi = p.jump_cap / v[x]
        if isinstance(mu, StablePositive):
            out[x] = mu.first_moment(p.delta_cut, hi)
        elif isinstance(mu, FiniteAtoms):
            out[x] = mu.first_moment(0.0, hi)
    return out * model.g


def _same_tables(a: JumpTable, b: JumpTable) -> bool:
    return all(np.array_equal(getattr(a, k), getattr(b, k)) for k in ("offsets", "targets", "rates", "sizes", "alpha", "lower"))


class _Stack:
    """Fixed-coefficient arrays for a stack of coupled models."""

    def __init__(self, models: Sequence[ModelSpec], params: SimParams):
        n = models[0].n_sites
        for m in models:
            if m.n_sites != n:
                raise ValueError("coupled models must share the truncation")
        self.models = list(models)
        self.n = n
        self.p = params
        self.v = site_weights(models[0].graph, params.weight)
        self.btab = JumpTable.branching(models[0], params.delta_cut)
        self.itab = JumpTable.immigration(models[0])
        for m in models[1:]:
            if not (_same_tables(self.btab, JumpTable.branching(m, params.delta_cut))
                    and _same_tables(self.itab, JumpTable.immigration(m))):
                raise ValueError("coupled models must share their jump measures")
        # sparse products sum each row in a fixed order, so results do not depend on the block size
        self.a_sp = [sparse.csr_matrix(m.a) for m in models]
        self.g = np.stack([m.g for m in models])
        self.c = np.stack([m.c for m in models])
        self.comp = np.stack([_own_compensator(m, self.v, params) for m in models])
        self.rho0 = np.stack([m.rho0 for m in models])
        self.phi = np.stack([m.phi for m in models])
        self.psi_diag = np.stack([np.diag(m.psi) for m in models])
        self.has_phi = bool(np.any(self.phi))
        self.phi_sp = [sparse.csr_matrix(m.phi) for m in models]
        it = self.itab
        cnt = np.diff(it.offsets)
        self.imm_site = np.repeat(np.arange(n), cnt)
        self.imm_J = max(it.max_components, 1)
        self.imm_key = self.imm_site * self.imm_J + (np.arange(len(it.rates)) - it.offsets[self.imm_site])


_FLUSH = 1e-280
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_S_FLAT = 8.5


def diffusion_substep(X: np.ndarray, two_c_dt, Z: np.ndarray) -> np.ndarray:
    """Clamped Euler step ``(x + sqrt(2 c x dt) Z)^+`` rescaled to keep the conditional mean at ``x``.

    The plain clamp adds about ``sigma * phi(0)`` of mass per step where ``x``
    is small against ``sigma``; dividing by ``E[(x + sigma Z)^+]`` removes that
    drift.  The map stays nonnegative and nondecreasing in ``x`` for fixed ``Z``.
    Values below ``_FLUSH`` are set to zero: subnormal rounding is not monotone.
    """
    X = X * (X > _FLUSH)
    var = two_c_dt * X
    sig = np.sqrt(var)
    out = np.maximum(X + sig * Z, 0.0)
    # the factor is 1 to double precision once x / sigma > _S_FLAT; only the rest is evaluated
    idx = np.flatnonzero((X * X < _S_FLAT**2 * var).ravel())
    if idx.size:
        x, sg = X.ravel()[idx], sig.ravel()[idx]
        q = x / sg
        m = x * ndtr(q) + sg * np.exp(-0.5 * q * q) * _INV_SQRT_2PI
        flat = out.reshape(-1)
        flat[idx] *= x / m
    return out * (out > _FLUSH)


def _hash_at(base, step, index):
    h = mix(_add_mul(base, np.uint64(step), _P[3]))
    return mix(_add_mul(h, np.asarray(index, dtype=np.uint64), _GAP_IDX))


def _exp(base, step, index):
    return -np.log(to_uniform(_hash_at(base, step, index)))


class _Block:
    """One block of replicas for a stack of processes."""

    def __init__(self, st: _Stack, fabric: NoiseFabric, replica_ids: np.ndarray):
        self.st = st
        self.f = fabric
        self.rid = replica_ids
        n = st.n
        sites = np.arange(n, dtype=np.uint64)
        r = replica_ids.astype(np.uint64)[:, None]
        self.b_brown = fabric.base("brownian", r, sites[None, :])
        self.b_gap = fabric.base("branch_gap", r, sites[None, :])
        self.b_pick = fabric.base("branch_pick", r, sites[None, :])
        self.b_size = fabric.base("branch_size", r, sites[None, :])
        keys = st.imm_key.astype(np.uint64)
        self.b_igap = fabric.base("immig_gap", r, keys[None, :]) if len(keys) else None
        self.counts = np.zeros((len(st.models), 3), dtype=np.int64)  # branch, immig, capped
        self.events: list = []

    def _thinned(self, theta, base_gap, step, on_event):
        """Gap-sum thinning on the cells of ``theta`` (shape (P, B, K))."""
        dt = self.st.p.dt
        P, B, K = theta.shape
        tmax = theta.max(0).ravel() * dt
        cells = np.flatnonzero(tmax > 0)
        if cells.size == 0:
            return
        thr = theta.reshape(P, -1)[:, cells] * dt
        tm = tmax[cells]
        base = base_gap.ravel()[cells]
        S = _exp(base, step, 0)
        k = 0
        while True:
            act = S <= tm
            if not act.any():
                return
            if not act.all():
                cells, thr, tm, base, S = cells[act], thr[:, act], tm[act], base[act], S[act]
            acc = S[None, :] <= thr
            rb, col = np.divmod(cells, K)
            on_event(rb, col, k, acc, S / dt)
            k += 1
            S = S + _exp(base, step, k)

    def jumps(self, Xpre: np.ndarray, step: int) -> np.ndarray:
        st, p = self.st, self.st.p
        inc = np.zeros_like(Xpre)
        P = Xpre.shape[0]
        bt = st.btab
        if bt.rates.size:
            theta = st.g[:, None, :] * Xpre * bt.total[None, None, :]

            def on_branch(rb, ys, k, acc, u):
                up = to_uniform(_hash_at(self.b_pick[rb, ys], step, k))
                us = to_uniform(_hash_at(self.b_size[rb, ys], step, k))
                comp = bt.pick(ys, up)
                z = bt.size(comp, us)
                tgt = bt.targets[comp]
                ok = z * st.v[tgt] <= p.jump_cap
                for q in range(P):
                    sel = acc[q] & ok
                    np.add.at(inc[q], (rb[sel], tgt[sel]), z[sel])
                    self.counts[q, 0] += int(sel.sum())
                    self.counts[q, 2] += int((acc[q] & ~ok).sum())
                if p.log_events:
                    self._log(rb, ys, "branch", u, z, tgt, acc[0] & ok, step)

            self._thinned(theta, self.b_gap, step, on_branch)
        it = st.itab
        if it.rates.size:
            w = st.imm_site
            rho = np.broadcast_to(st.rho0[:, None, :], Xpre.shape)
            if st.has_phi:
                rho = rho + np.stack([(sp @ Xpre[q].T).T for q, sp in enumerate(st.phi_sp)])
            theta = (rho[:, :, w] + st.psi_diag[:, None, w] * it.sizes[None, None, :]) * it.rates[None, None, :]
            theta = np.maximum(theta, 0.0)

            def on_immig(rb, cs, k, acc, u):
                z = it.sizes[cs]
                tgt = w[cs]
                ok = z * st.v[tgt] <= p.jump_cap
                for q in range(P):
                    sel = acc[q] & ok
                    np.add.at(inc[q], (rb[sel], tgt[sel]), z[sel])
                    self.counts[q, 1] += int(sel.sum())
                    self.counts[q, 2] += int((acc[q] & ~ok).sum())
                if p.log_events:
                    self._log(rb, tgt, "immig", u, z, tgt, acc[0] & ok, step)

            self._thinned(theta, self.b_igap, step, on_immig)
        return inc

    def _log(self, rb, src, kind, u, z, tgt, mask, step):
        sel = mask & (self.rid[rb] == 0)
        for i in np.flatnonzero(sel):
            self.events.append({"step": int(step), "site": int(src[i]), "kind": kind,
                                "u": float(u[i]), "size": float(z[i]), "target": int(tgt[i])})

    def step(self, X: np.ndarray, step: int) -> np.ndarray:
        st, p = self.st, self.st.p
        dt = p.dt
        D = np.stack([m.b + (st.a_sp[q] @ X[q].T).T - m.m * np.maximum(X[q], 0.0) ** m.lam
                      for q, m in enumerate(st.models)])
        X = X + dt * (D - st.comp[:, None, :] * X)
        if np.any(st.c):
            Z = to_uniform(_hash_at(self.b_brown, step, 0))
            X = diffusion_substep(X, 2.0 * st.c[:, None, :] * dt, ndtri(Z)[None])
        Xpre = np.maximum(X, 0.0)
        X = X + self.jumps(Xpre, step)
        return np.maximum(X, 0.0)


def _run_block(st: _Stack, fabric: NoiseFabric, X0: np.ndarray, rid: np.ndarray, pairs):
    p = st.p
    blk = _Block(st, fabric, rid)
    rec = p.record_steps
    P, B, n = X0.shape
    states = np.full((P, B, len(rec), n), np.nan)
    sups = np.full_like(states, np.nan)
    X = X0.copy()
    S = X.copy()
    alive = np.ones(B, dtype=bool)
    stop_step = np.full(B, -1, dtype=np.int64)
    ns = p.n_steps
    aud = None
    if pairs:
        aud = dict(mean=np.zeros(ns + 1), sumsq=np.zeros(ns + 1), max=np.zeros(ns + 1),
                   live=np.zeros(ns + 1), integral=np.zeros((len(pairs), B)))

    def audit(k):
        for j, (lo, hi) in enumerate(pairs):
            viol = np.maximum(X[lo] - X[hi], 0.0) @ st.v
            viol = np.where(alive, viol, 0.0)
            aud["mean"][k] += viol.sum() / len(pairs)
            aud["sumsq"][k] += (viol**2).sum() / len(pairs)
            aud["max"][k] = max(aud["max"][k], float(viol.max(initial=0.0)))
            if k > 0:
                aud["integral"][j] += viol * p.dt
        aud["live"][k] += alive.sum()

    ri = 0
    if rec[0] == 0:
        states[:, :, 0], sups[:, :, 0] = X, S
        ri = 1
    if aud is not None:
        audit(0)
    for k in range(1, ns + 1):
        Xn = blk.step(X, k)
        X = Xn if alive.all() else np.where(alive[None, :, None], Xn, X)
        S = np.maximum(S, X)
        over = (X @ st.v > p.m_guard).any(0) & alive
        if over.any():
            alive &= ~over
            stop_step[over] = k
        if aud is not None:
            audit(k)
        if ri < len(rec) and rec[ri] == k:
            states[:, :, ri] = np.where(alive[None, :, None], X, np.nan)
            sups[:, :, ri] = np.where(alive[None, :, None], S, np.nan)
            ri += 1
    return states, sups, ~alive, stop_step, blk.counts, aud, blk.events


def _initial(x0, n: int) -> np.ndarray:
    if isinstance(x0, Configuration):
        return x0.to_dense(n)
    arr = np.asarray(x0, dtype=float)
    if (arr < 0).any():
        raise ValueError("initial masses must be nonnegative")
    return arr


def simulate_stack(models: Sequence[ModelSpec], inits: Sequence, fabric: NoiseFabric, params: SimParams,
                   pairs: Sequence[tuple[int, int]] = (), replica_offset: int = 0) -> list[Ensemble]:
    """Run ``len(models)`` processes on common noise; ``pairs`` lists (lower, upper) audits."""
    st = _Stack(models, params)
    n, R, P = st.n, params.replicas, len(models)
    X0 = np.stack([np.broadcast_to(_initial(x, n), (R, n)) for x in inits])
    rid = np.arange(R, dtype=np.int64) + replica_offset
    chunks = [slice(i, min(i + params.block, R)) for i in range(0, R, params.block)]
    work = lambda sl: _run_block(st, fabric, X0[:, sl], rid[sl], list(pairs))
    if params.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(params.threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(sl) for sl in chunks]
    states = np.concatenate([q[0] for q in parts], axis=1)
    sups = np.concatenate([q[1] for q in parts], axis=1)
    stopped = np.concatenate([q[2] for q in parts])
    stop_step = np.concatenate([q[3] for q in parts])
    counts = sum(q[4] for q in parts)
    events = [e for q in parts for e in q[6]]
    audit = None
    if pairs:
        ag = [q[5] for q in parts]
        live = sum(a["live"] for a in ag)
        tot = sum(a["mean"] for a in ag)
        sq = sum(a["sumsq"] for a in ag)
        mean = np.divide(tot, live, out=np.zeros_like(tot), where=live > 0)
        audit = CouplingAudit(
            times=np.arange(params.n_steps + 1) * params.dt,
            mean=mean,
            sumsq=sq,
            max=np.max([a["max"] for a in ag], axis=0),
            live=live,
            integral=np.where(stopped, np.nan, np.concatenate([a["integral"] for a in ag], axis=1).mean(0)),
        )
    times = params.record_steps * params.dt
    out = []
    for q, m in enumerate(models):
        out.append(Ensemble(
            times=times, states=states[q], sups=sups[q], stopped=stopped, stop_step=stop_step,
            counts={"branch": int(counts[q, 0]), "immig": int(counts[q, 1]), "capped": int(counts[q, 2]),
                    "tau_m": int(stopped.sum())},
            replica_ids=rid, model_name=m.name, audit=audit, events=events if q == 0 else [],
        ))
    return out


def simulate_ensemble(model: ModelSpec, eta0, fabric: NoiseFabric, params: SimParams, replica_offset: int = 0) -> Ensemble:
    return simulate_stack([model], [eta0], fabric, params, replica_offset=replica_offset)[0]


def simulate(model: ModelSpec, eta0, fabric: NoiseFabric, params: SimParams, replica: int = 0) -> Trajectory:
    p1 = SimParams(**{**params.__dict__, "replicas": 1})
    return simulate_ensemble(model, eta0, fabric, p1, replica_offset=replica).trajectory(0)


def step(eta: Configuration, model: ModelSpec, fabric: NoiseFabric, params: SimParams, step_index: int,
         replica: int = 0) -> Configuration:
    """A single splitting step of one replica (the ensemble runner uses the same code)."""
    st = _Stack([model], params)
    blk = _Block(st, fabric, np.array([replica], dtype=np.int64))
    X = eta.to_dense(model.n_sites)[None, None, :]
    return Configuration.from_dense(blk.step(X, step_index)[0, 0])


def simulate_coupled(modelA: ModelSpec, modelB: ModelSpec, eta0, xi0, fabric: NoiseFabric, params: SimParams,
                     ) -> tuple[Ensemble, Ensemble]:
    """Common-noise run; the shared audit tracks ``sum v (xi - eta)^+`` (B's process below A's)."""
    a, b = simulate_stack([modelA, modelB], [eta0, xi0], fabric, params, pairs=[(1, 0)])
    return a, b


def finite_volume_refine(model: ModelSpec, eta0, fabric: NoiseFabric, params: SimParams,
                         volumes: Sequence[Sequence[int]]) -> list[Ensemble]:
    """Restricted models on nested volumes, all on one fabric, audited for monotonicity in N."""
    sets = [set(int(s) for s in vol) for vol in volumes]
    for small, big in zip(sets, sets[1:]):
        if not small <= big:
            raise ValueError("volumes must be nested")
    models = [model.restrict(sorted(s)) for s in sets]
    pairs = [(i, i + 1) for i in range(len(models) - 1)]
    return simulate_stack(models, [eta0] * len(models), fabric, params, pairs=pairs)


def write_events(path, events) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
