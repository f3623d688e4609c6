"""Tempered configurations: sparse nonnegative mass per site, weighted l1 norm, order."""
from __future__ import annotations

import json
from typing import Iterable, Mapping

import numpy as np

from .lattice import GraphSpec, WeightSpec, site_weights

# flushed to zero; keeps the arithmetic out of the denormal range
TINY = 1e-300


class Configuration:
    """Sparse map ``site -> mass`` with every stored mass strictly positive."""

    __slots__ = ("_m",)

    def __init__(self, masses: Mapping[int, float] | Iterable[tuple[int, float]] = ()):
        items = masses.items() if isinstance(masses, Mapping) else masses
        m = {}
        for site, mass in items:
            mass = float(mass)
            if mass < 0 or mass != mass:
                raise ValueError(f"mass at site {site} must be >= 0, got {mass}")
            if mass >= TINY:
                m[int(site)] = mass
        self._m = m

    @classmethod
    def empty(cls) -> "Configuration":
        return cls()

    @classmethod
    def point(cls, site: int, mass: float = 1.0) -> "Configuration":
        return cls({site: mass})

    @classmethod
    def from_dense(cls, arr) -> "Configuration":
        arr = np.asarray(arr, dtype=float)
        idx = np.flatnonzero(arr >= TINY)
        return cls(zip(idx.tolist(), arr[idx].tolist()))

    def to_dense(self, n_sites: int) -> np.ndarray:
        out = np.zeros(n_sites)
        for s, v in self._m.items():
            if s >= n_sites:
                raise ValueError(f"site {s} outside truncation of {n_sites} sites")
            out[s] = v
        return out

    def __getitem__(self, site: int) -> float:
        return self._m.get(int(site), 0.0)

    def items(self):
        return self._m.items()

    @property
    def support(self) -> set[int]:
        return set(self._m)

    def __len__(self):
        return len(self._m)

    def __eq__(self, other):
        return isinstance(other, Configuration) and self._m == other._m

    def __repr__(self):
        body = ", ".join(f"{k}: {v:g}" for k, v in sorted(self._m.items()))
        return f"Configuration({{{body}}})"

    def scaled(self, factor: float) -> "Configuration":
        return Configuration({k: v * factor for k, v in self._m.items()})

    def to_json(self) -> str:
        return json.dumps({str(k): v for k, v in sorted(self._m.items())})

    @classmethod
    def from_json(cls, text: str) -> "Configuration":
        return cls({int(k): v for k, v in json.loads(text).items()})


def _weights_for(w: WeightSpec, g: GraphSpec | None, sites: Iterable[int]) -> dict[int, float]:
    sites = list(sites)
    if not sites:
        return {}
    if g is None:
        # sites are read as 1-d coordinates when no graph is given
        return {s: float(w.of_norm(abs(s))) for s in sites}
    v = site_weights(g, w)
    return {s: float(v[s]) for s in sites}


def norm(eta: Configuration, w: WeightSpec, g: GraphSpec | None = None) -> float:
    """Weighted l1 norm ``sum_x v(x) eta(x)``."""
    v = _weights_for(w, g, eta.support)
    return float(sum(v[s] * m for s, m in eta.items()))


def distance(eta: Configuration, xi: Configuration, w: WeightSpec, g: GraphSpec | None = None) -> float:
    sites = eta.support | xi.support
    v = _weights_for(w, g, sites)
    return float(sum(v[s] * abs(eta[s] - xi[s]) for s in sites))


def dominates(xi: Configuration, eta: Configuration) -> bool:
    """True iff ``eta <= xi`` sitewise."""
    return all(m <= xi[s] for s, m in eta.items())


def meet(eta: Configuration, xi: Configuration) -> Configuration:
    sites = eta.support & xi.support
    return Configuration({s: min(eta[s], xi[s]) for s in sites})


def difference(eta: Configuration, xi: Configuration) -> Configuration:
    """``eta - xi`` for ``xi <= eta``; negative parts are an error."""
    out = {}
    for s in eta.support | xi.support:
        d = eta[s] - xi[s]
        if d < 0:
            raise ValueError("difference would be negative; use meet first")
        out[s] = d
    return Configuration(out)


def positive_part_distance(eta: Configuration, xi: Configuration, w: WeightSpec, g: GraphSpec | None = None) -> float:
    """``sum_x v(x) (eta(x) - xi(x))^+``; zero iff ``eta <= xi``."""
    v = _weights_for(w, g, eta.support)
    return float(sum(v[s] * max(m - xi[s], 0.0) for s, m in eta.items()))


def positive_part_dense(lower: np.ndarray, upper: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized ``sum_x v(x)(lower - upper)^+`` over the trailing axis."""
    return np.maximum(lower - upper, 0.0) @ v
