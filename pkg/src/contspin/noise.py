"""Counter-based keyed noise: every variate is a pure function of its key.

A key is ``(seed, kind, replica, site, step, index)``.  The hash chain uses
the splitmix64 finalizer, so random access by key needs no stream state and
two coupled processes simply read the same keys.

Poisson measures are realized on their ``u`` axis: within one step the marks
of the events at a source are ``u_k = S_k / dt`` where ``S_k`` are partial sums
of unit exponentials keyed by ``k``.  A consumer with threshold ``theta``
accepts exactly the events with ``S_k <= theta * dt``, so the accepted count is
Poisson(theta dt) and acceptance is monotone in ``theta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .model import EMPTY, FiniteAtoms, ModelSpec, StablePositive

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_P = [np.uint64(c) for c in (0x9E3779B97F4A7C15, 0xD1B54A32D192ED03, 0xABC98388FB8FAC03, 0x8CB92BA72F3D8DD7)]
_S30, _S27, _S31, _S12 = (np.uint64(s) for s in (30, 27, 31, 12))

KINDS = {
    "brownian": 1,
    "branch_gap": 2,
    "branch_pick": 3,
    "branch_size": 4,
    "immig_gap": 5,
    "immig_size": 6,
    "walker": 7,
}


def mix(z):
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z ^ (z >> _S30)
        z = z * _M1
        z = z ^ (z >> _S27)
        z = z * _M2
        z = z ^ (z >> _S31)
    return z


def _add_mul(h, k, p):
    with np.errstate(over="ignore"):
        return h + np.asarray(k, dtype=np.uint64) * p


def to_uniform(h):
    """Map 64-bit hashes to the open interval (0, 1).

    52 bits plus a half-ulp offset; with 53 bits the top value rounds to 1.0.
    """
    return ((h >> _S12).astype(np.float64) + 0.5) * 2.0**-52


@dataclass(frozen=True)
class NoiseFabric:
    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        object.__setattr__(self, "seed", int(self.seed))

    def root(self, kind: str) -> np.uint64:
        h = mix(np.uint64(self.seed))
        return mix(_add_mul(h, KINDS[kind], _P[0]))

    def base(self, kind: str, replicas, sites) -> np.ndarray:
        """Hash prefix for ``(kind, replica, site)``; broadcasts replicas against sites."""
        r = np.asarray(replicas, dtype=np.uint64)
        s = np.asarray(sites, dtype=np.uint64)
        h = mix(_add_mul(self.root(kind), r, _P[1]))
        return mix(_add_mul(h, s, _P[2]))

    @staticmethod
    def at_step(base, step):
        return mix(_add_mul(base, np.uint64(step) if np.isscalar(step) else step, _P[3]))

    @staticmethod
    def at_index(h, index):
        return mix(_add_mul(h, index, _P[0] ^ _P[3]))

    def uniform(self, kind: str, replicas, sites, step, index=0) -> np.ndarray:
        h = self.at_index(self.at_step(self.base(kind, replicas, sites), step), index)
        return to_uniform(h)

    def normal(self, kind: str, replicas, sites, step, index=0) -> np.ndarray:
        return ndtri(self.uniform(kind, replicas, sites, step, index))


def brownian_increment(f: NoiseFabric, x: int, step: int, dt: float, replica: int = 0) -> float:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return float(math.sqrt(dt) * f.normal("brownian", replica, x, step))


# --- jump tables ------------------------------------------------------------


@dataclass
class JumpTable:
    """Flattened components of per-source jump measures, for vectorized marks.

    Component ``j`` of source ``y`` lives at ``offsets[y] <= j < offsets[y+1]``
    with rate ``rates[j]``, target site ``targets[j]`` and either a fixed
    size (``alpha[j] == 0``) or a stable tail above ``lower[j]`` with index
    ``alpha[j]``.
    """

    n_sources: int
    offsets: np.ndarray
    targets: np.ndarray
    rates: np.ndarray
    sizes: np.ndarray
    alpha: np.ndarray
    lower: np.ndarray
    total: np.ndarray = field(init=False)
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cnt = np.diff(self.offsets)
        src = np.repeat(np.arange(self.n_sources), cnt)
        self.total = np.zeros(self.n_sources)
        np.add.at(self.total, src, self.rates)
        frac = np.zeros(len(self.rates))
        for y in range(self.n_sources):
            lo, hi = self.offsets[y], self.offsets[y + 1]
            if hi > lo:
                c = np.cumsum(self.rates[lo:hi]) / self.total[y]
                c[-1] = 1.0
                frac[lo:hi] = c
        # segment y occupies (y, y+1]; searchsorted on y + U picks the component
        self._cum = src + frac

    @classmethod
    def branching(cls, model: ModelSpec, delta_cut: float, cap_sizes=None) -> "JumpTable":
        rows = [[] for _ in range(model.n_sites)]
        for (y, x), mu in sorted(model.branching.items()):
            rows[y].extend(_components(mu, x, delta_cut))
        return cls._from_rows(rows)

    @classmethod
    def immigration(cls, model: ModelSpec) -> "JumpTable":
        rows = []
        for x, s in enumerate(model.sigma):
            if isinstance(s, StablePositive):
                raise NotImplementedError("stable immigration measures have no finite first moment")
            rows.append(_components(s, x, 0.0))
        return cls._from_rows(rows)

    @classmethod
    def _from_rows(cls, rows) -> "JumpTable":
        flat = [c for row in rows for c in row]
        offsets = np.concatenate([[0], np.cumsum([len(r) for r in rows])]).astype(np.int64)
        col = lambda i, dt: np.array([c[i] for c in flat], dtype=dt)
        return cls(
            n_sources=len(rows), offsets=offsets, targets=col(0, np.int64), rates=col(1, float),
            sizes=col(2, float), alpha=col(3, float), lower=col(4, float),
        )

    @property
    def max_components(self) -> int:
        return int(np.diff(self.offsets).max(initial=0))

    def pick(self, sources, u_pick) -> np.ndarray:
        return np.searchsorted(self._cum, np.asarray(sources) + u_pick, side="left")

    def size(self, comp, u_size) -> np.ndarray:
        a = self.alpha[comp]
        stable = a > 0
        z = self.sizes[comp].copy()
        if stable.any():
            z[stable] = self.lower[comp][stable] * u_size[stable] ** (-1.0 / a[stable])
        return z


def _components(mu, target: int, delta_cut: float):
    if mu is EMPTY or mu.is_empty:
        return []
    if isinstance(mu, FiniteAtoms):
        return [(target, r, z, 0.0, 0.0) for z, r in mu.atoms if r > 0]
    if isinstance(mu, StablePositive):
        return [(target, mu.mass(delta_cut), 0.0, mu.alpha, delta_cut)]
    raise TypeError(f"unsupported measure {mu!r}")


@dataclass(frozen=True)
class Event:
    step: int
    site: int
    kind: str
    u: float
    size: float
    target: int
    index: int


def _scalar_events(f, kind_gap, kind_pick, kind_size, table, src_key, src_row, step, dt, majorant, replica):
    if majorant <= 0:
        return []
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = []
    s, k = 0.0, 0
    while True:
        s += -math.log(float(f.uniform(kind_gap, replica, src_key, step, k)))
        if s > majorant * dt:
            return out
        target, z = src_row, 0.0
        if table is not None:
            comp = table.pick(np.array([src_row]), f.uniform(kind_pick, replica, src_key, step, k).reshape(1))
            z = float(table.size(comp, f.uniform(kind_size, replica, src_key, step, k).reshape(1))[0])
            target = int(table.targets[comp[0]])
        out.append(Event(step, src_row, "branch" if kind_gap == "branch_gap" else "immig", s / dt, z, target, k))
        k += 1


def branching_events(f: NoiseFabric, y: int, step: int, dt: float, majorant: float,
                     table: JumpTable | None = None, replica: int = 0) -> list[Event]:
    """Events at source ``y`` with mark ``u <= majorant``; the simulator reads the same keys."""
    return _scalar_events(f, "branch_gap", "branch_pick", "branch_size", table, y, y, step, dt, majorant, replica)


def immigration_events(f: NoiseFabric, step: int, dt: float, majorant: float, site: int = 0, atom: int = 0,
                       n_atoms: int = 1, table: JumpTable | None = None, replica: int = 0) -> list[Event]:
    """Events of the ``(site, atom)`` immigration stream with ``u <= majorant``."""
    key = site * n_atoms + atom
    evs = _scalar_events(f, "immig_gap", "immig_pick", "immig_size", None, key, site, step, dt, majorant, replica)
    if table is not None:
        comp = table.offsets[site] + atom
        evs = [Event(e.step, site, "immig", e.u, float(table.sizes[comp]), site, e.index) for e in evs]
    return evs


def accepted(events: list[Event], threshold: float) -> list[Event]:
    return [e for e in events if e.u <= threshold]
