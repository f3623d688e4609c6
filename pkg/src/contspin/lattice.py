"""Graphs, graph distance, balls, weight functions and the R-fattened graph.

Sites are dense integer ids ``0..n-1``.  For ``Z^d`` truncations the ids
enumerate the integer vectors with ``|x|_1 <= L`` in lexicographic order and
``GraphSpec.coords`` holds the inverse map.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class UnknownSiteError(KeyError):
    pass


def _l1_box(dimension: int, radius: int) -> np.ndarray:
    pts = [
        p
        for p in itertools.product(range(-radius, radius + 1), repeat=dimension)
        if sum(abs(c) for c in p) <= radius
    ]
    return np.array(pts, dtype=np.int64).reshape(-1, dimension)


@dataclass(frozen=True, eq=False)
class GraphSpec:
    """Finite connected graph; either a ``Z^d`` truncation or an edge list.

    Use :meth:`zd` or :meth:`from_edges` rather than the raw constructor.
    """

    kind: str
    n_sites: int
    edges: tuple[tuple[int, int], ...]
    dimension: int = 0
    radius: int = 0
    coords: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zd(cls, dimension: int, radius: int) -> "GraphSpec":
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if radius < 0:
            raise ValueError("truncation radius must be >= 0")
        coords = _l1_box(dimension, radius)
        index = {tuple(c): i for i, c in enumerate(coords)}
        edges = []
        for i, c in enumerate(coords):
            for axis in range(dimension):
                nb = c.copy()
                nb[axis] += 1
                j = index.get(tuple(nb))
                if j is not None:
                    edges.append((i, j))
        g = cls("zd", len(coords), tuple(edges), dimension, radius, coords)
        g._check()
        return g

    @classmethod
    def from_edges(cls, n_sites: int, edges: Iterable[Sequence[int]]) -> "GraphSpec":
        clean = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n_sites and 0 <= v < n_sites):
                raise UnknownSiteError(f"edge ({u}, {v}) outside 0..{n_sites - 1}")
            if u != v:
                clean.add((min(u, v), max(u, v)))
        g = cls("adjacency", int(n_sites), tuple(sorted(clean)))
        g._check()
        return g

    @classmethod
    def read_edge_list(cls, path: str | Path, n_sites: int | None = None) -> "GraphSpec":
        """Parse the text format: one ``u v`` pair per line, 0-based ids, ``#`` comments."""
        edges = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'u v', got {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
        if n_sites is None:
            n_sites = 1 + max((max(e) for e in edges), default=0)
        return cls.from_edges(n_sites, edges)

    def _check(self) -> None:
        if self.n_sites < 1:
            raise ValueError("graph needs at least one site")
        seen = np.zeros(self.n_sites, dtype=bool)
        seen[0] = True
        queue = deque([0])
        nbrs = self.neighbors
        while queue:
            u = queue.popleft()
            for w in nbrs[u]:
                if not seen[w]:
                    seen[w] = True
                    queue.append(w)
        if not seen.all():
            raise ValueError("graph is not connected")

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, ...]:
        lists: list[list[int]] = [[] for _ in range(self.n_sites)]
        for u, v in self.edges:
            lists[u].append(v)
            lists[v].append(u)
        return tuple(np.array(sorted(l), dtype=np.int64) for l in lists)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    @property
    def max_degree(self) -> int:
        # d >= 2 for any connected infinite graph; finite truncations may be smaller
        return max(int(self.degrees.max()), 2)

    @cached_property
    def _index(self) -> dict[tuple[int, ...], int]:
        if self.coords is None:
            return {}
        return {tuple(int(v) for v in c): i for i, c in enumerate(self.coords)}

    @property
    def origin(self) -> int:
        return self.site_id((0,) * self.dimension) if self.kind == "zd" else 0

    def site_id(self, coord: Sequence[int] | int) -> int:
        if self.kind != "zd":
            return self._check_site(int(coord))  # type: ignore[arg-type]
        if isinstance(coord, (int, np.integer)):
            coord = (int(coord),)
        key = tuple(int(c) for c in coord)
        try:
            return self._index[key]
        except KeyError:
            raise UnknownSiteError(f"coordinate {key} not in truncation") from None

    def coord(self, site: int) -> tuple[int, ...]:
        site = self._check_site(site)
        if self.coords is None:
            return (site,)
        return tuple(int(c) for c in self.coords[site])

    def _check_site(self, site: int) -> int:
        site = int(site)
        if not 0 <= site < self.n_sites:
            raise UnknownSiteError(f"site {site} not in 0..{self.n_sites - 1}")
        return site

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        if self.kind == "zd":
            c = self.coords
            return np.abs(c[:, None, :] - c[None, :, :]).sum(-1)
        return np.stack([self.bfs(s) for s in range(self.n_sites)])

    def bfs(self, source: int) -> np.ndarray:
        source = self._check_site(source)
        out = np.full(self.n_sites, -1, dtype=np.int64)
        out[source] = 0
        queue = deque([source])
        nbrs = self.neighbors
        while queue:
            u = queue.popleft()
            for w in nbrs[u]:
                if out[w] < 0:
                    out[w] = out[u] + 1
                    queue.append(w)
        return out

    @cached_property
    def norm1(self) -> np.ndarray:
        """``|x|_1`` per site; for edge-list graphs the distance to site 0."""
        if self.coords is not None:
            return np.abs(self.coords).sum(1)
        return self.bfs(0)

    def interior(self, depth: int) -> np.ndarray:
        """Sites at least ``depth`` steps away from the truncation boundary."""
        if self.kind == "zd":
            return np.flatnonzero(self.norm1 <= self.radius - depth)
        full = self.degrees == self.degrees.max()
        bad = np.flatnonzero(~full)
        if len(bad) == 0:
            return np.arange(self.n_sites)
        d = self.distance_matrix[:, bad].min(1)
        return np.flatnonzero(d > depth)


def dist(g: GraphSpec, x: int, y: int) -> int:
    x, y = g._check_site(x), g._check_site(y)
    if g.kind == "zd":
        return int(np.abs(g.coords[x] - g.coords[y]).sum())
    return int(g.bfs(x)[y])


def ball(g: GraphSpec, x: int, r: int) -> set[int]:
    if r < 0:
        raise ValueError("radius must be >= 0")
    x = g._check_site(x)
    return set(np.flatnonzero(g.distance_matrix[x] <= r).tolist())


@dataclass(frozen=True)
class WeightSpec:
    """Site weight ``v``: ``exponential`` e^{-delta|x|}, ``polynomial`` 1/(1+|x|^delta), ``constant``."""

    kind: str = "constant"
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("exponential", "polynomial", "constant"):
            raise ValueError(f"unknown weight family {self.kind!r}")
        if self.kind != "constant" and not self.delta > 0:
            raise ValueError("delta must be positive")

    @classmethod
    def exponential(cls, delta: float) -> "WeightSpec":
        return cls("exponential", float(delta))

    @classmethod
    def polynomial(cls, delta: float) -> "WeightSpec":
        return cls("polynomial", float(delta))

    @classmethod
    def constant(cls) -> "WeightSpec":
        return cls("constant", 0.0)

    def of_norm(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "exponential":
            return np.exp(-self.delta * r)
        if self.kind == "polynomial":
            return 1.0 / (1.0 + r**self.delta)
        return np.ones_like(r)

    def check_dimension(self, dimension: int) -> None:
        if self.kind == "polynomial" and not self.delta > dimension:
            raise ValueError(f"polynomial weight needs delta > d = {dimension}")


def weight(w: WeightSpec, x: Sequence[int] | int) -> float:
    """``v(x)`` for a lattice coordinate ``x`` (an int is read as a 1-d coordinate)."""
    r = abs(int(x)) if isinstance(x, (int, np.integer)) else sum(abs(int(c)) for c in x)
    return float(w.of_norm(r))


def site_weights(g: GraphSpec, w: WeightSpec) -> np.ndarray:
    return w.of_norm(g.norm1)


def weight_growth_kappa(w: WeightSpec, R: int, g: GraphSpec | None = None) -> float:
    """``ln sup_{dist(x,y) <= R} v(y)/v(x)``.

    With a graph the supremum is an exhaustive scan over the truncation;
    without one the closed form for ``Z^d`` is used (not available for the
    polynomial family, whose supremum depends on the truncation).
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if g is None:
        if w.kind == "exponential":
            return w.delta * R
        if w.kind == "constant":
            return 0.0
        raise ValueError("polynomial weight growth needs an explicit truncation")
    logv = np.log(site_weights(g, w))
    near = g.distance_matrix <= R
    diff = logv[None, :] - logv[:, None]
    kappa = float(diff[near].max())
    if not math.isfinite(kappa):
        raise ValueError("unbounded weight ratio")
    return kappa


def auxiliary_graph(g: GraphSpec, R: int) -> GraphSpec:
    """Same vertex set, with an edge between every pair at distance ``1..R``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    if R == 1:
        return g
    d = g.distance_matrix
    iu, ju = np.nonzero(np.triu((d >= 1) & (d <= R)))
    out = GraphSpec.from_edges(g.n_sites, zip(iu.tolist(), ju.tolist()))
    # keep lattice coordinates for weights and plotting; adjacency differs
    object.__setattr__(out, "coords", g.coords)
    object.__setattr__(out, "dimension", g.dimension)
    object.__setattr__(out, "radius", g.radius)
    return out
