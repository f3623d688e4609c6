"""The four named model families with their default parameters.

Every builder takes keyword overrides using the model's own symbols
(``b, a, m, lambda, c, g, alpha, phi, psi, R``) plus graph and weight knobs
(``dimension, L, delta, weight``).  Unknown keys raise ``KeyError``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .lattice import GraphSpec, WeightSpec
from .model import EMPTY, FiniteAtoms, KernelSpec, ModelSpec, StablePositive


@dataclass
class Preset:
    model: ModelSpec
    weight: WeightSpec
    params: dict[str, Any]


@dataclass(frozen=True)
class _Entry:
    name: str
    encodes: str
    defaults: dict[str, Any]
    build: Callable[[dict], Preset]


def _weight(p: dict) -> WeightSpec:
    kind = p["weight"]
    if kind == "constant":
        return WeightSpec.constant()
    return WeightSpec(kind, float(p["delta"]))


def _graph(p: dict) -> GraphSpec:
    if p.get("graph") is not None:
        return p["graph"]
    return GraphSpec.zd(int(p["dimension"]), int(p["L"]))


def _neighbor_pairs(g: GraphSpec, R: int = 1):
    d = g.distance_matrix
    return [(int(y), int(x)) for y, x in zip(*np.nonzero((d >= 1) & (d <= R)))]


def _build_cbi(p: dict) -> Preset:
    g = _graph(p)
    n = g.n_sites
    if p["kernel"] == "nearest-neighbor":
        kernel = KernelSpec("nearest-neighbor", c=p["a"], self_rate=p["a_self"])
    elif p["kernel"] == "box":
        kernel = KernelSpec("box", c=p["a"], R=int(p["R"]), self_rate=p["a_self"])
    else:
        kernel = KernelSpec(p["kernel"], c=p["a"], eps=p["eps"], self_rate=p["a_self"])
    own = FiniteAtoms(tuple(map(tuple, p["jumps"]))) if p["jumps"] else EMPTY
    branching = {(x, x): own for x in range(n)}
    sigma = FiniteAtoms(tuple(map(tuple, p["sigma"]))) if p["sigma"] else EMPTY
    psi = np.diag(np.full(n, float(p["psi"])))
    model = ModelSpec(
        graph=g, b=p["b"], a=kernel.matrix(g), m=0.0, lam=1.0, c=p["c"], g=p["g"],
        branching=branching, rho0=p["rho"], phi=np.diag(np.full(n, float(p["phi"]))),
        psi=psi, sigma=(sigma,) * n, kernel=kernel, name="cbi",
    )
    return Preset(model, _weight(p), p)


def _build_stable(p: dict) -> Preset:
    g = _graph(p)
    n = g.n_sites
    kernel = KernelSpec("nearest-neighbor", c=p["a"], self_rate=p["a_self"])
    stable = StablePositive(float(p["alpha"]), 1.0)
    sigma = FiniteAtoms(tuple(map(tuple, p["sigma"]))) if p["sigma"] else EMPTY
    model = ModelSpec(
        graph=g, b=p["b"], a=kernel.matrix(g), m=p["m"], lam=p["lambda"], c=p["c"], g=p["g"],
        branching={(x, x): stable for x in range(n)}, rho0=p["rho"],
        sigma=(sigma,) * n, kernel=kernel, name="stable-competition",
    )
    return Preset(model, _weight(p), p)


def _build_nn(p: dict) -> Preset:
    g = _graph(p)
    kernel = KernelSpec("nearest-neighbor", c=p["a"])
    jump = FiniteAtoms(((float(p["z"]), 1.0),))
    model = ModelSpec(
        graph=g, b=p["b"], a=kernel.matrix(g), m=p["m"], lam=p["lambda"], c=p["c"], g=p["g"],
        branching={pair: jump for pair in _neighbor_pairs(g)}, kernel=kernel, name="nearest-neighbor",
    )
    return Preset(model, _weight(p), p)


def _build_brw(p: dict) -> Preset:
    g = _graph(p)
    n = g.n_sites
    child = FiniteAtoms(((1.0, float(p["offspring_rate"])),))
    branching = {pair: child for pair in _neighbor_pairs(g, int(p["R"]))}
    own_rate = float(p["own_rate"])
    if own_rate > 0:
        for x in range(n):
            branching[(x, x)] = FiniteAtoms(((1.0, own_rate),))
    # own-site events are compensated in the equation; adding their mean back
    # through the drift keeps the process integer valued
    a = np.diag(np.full(n, own_rate * float(p["g"])))
    model = ModelSpec(
        graph=g, b=0.0, a=a, m=0.0, lam=1.0, c=0.0, g=p["g"],
        branching=branching, name="branching-rw",
    )
    return Preset(model, _weight(p), p)


_COMMON = {"dimension": 1, "L": 10, "weight": "exponential", "delta": 1.0}

_CATALOG = {
    "cbi": _Entry(
        "cbi",
        "infinite-type continuous-state branching process with immigration",
        {**_COMMON, "L": 5, "b": 1.0, "a": 0.25, "a_self": -1.0, "kernel": "nearest-neighbor", "eps": 1.0,
         "R": 1, "c": 0.5, "g": 1.0, "jumps": [[1.0, 0.5]], "rho": 0.0, "phi": 0.0, "psi": 0.0, "sigma": []},
        _build_cbi,
    ),
    "stable-competition": _Entry(
        "stable-competition",
        "local branching process with local competition (alpha-stable branching)",
        {**_COMMON, "L": 5, "b": 0.5, "a": 0.5, "a_self": 0.0, "m": 1.0, "lambda": 2.0, "c": 0.5, "g": 1.0,
         "alpha": 1.5, "rho": 1.0, "sigma": [[1.0, 0.5]], "R": 1},
        _build_stable,
    ),
    "nearest-neighbor": _Entry(
        "nearest-neighbor",
        "nearest-neighbour continuous-state branching process with unit jumps",
        {**_COMMON, "b": 0.0, "a": 1.0, "m": 0.0, "lambda": 1.0, "c": 1.0, "g": 1.0, "z": 1.0, "R": 1},
        _build_nn,
    ),
    "branching-rw": _Entry(
        "branching-rw",
        "continuous-time discrete-space branching random walk",
        {**_COMMON, "L": 10, "g": 1.0, "offspring_rate": 0.5, "own_rate": 0.0, "R": 1},
        _build_brw,
    ),
}


def list_presets() -> dict[str, dict]:
    return {k: {"encodes": e.encodes, "defaults": dict(e.defaults)} for k, e in _CATALOG.items()}


def build_preset(name: str, graph: GraphSpec | None = None, **overrides) -> Preset:
    try:
        entry = _CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(_CATALOG)}") from None
    unknown = set(overrides) - set(entry.defaults)
    if unknown:
        raise KeyError(f"preset {name!r} has no parameter(s) {sorted(unknown)}")
    params = {**entry.defaults, **overrides, "graph": graph}
    preset = entry.build(params)
    params.pop("graph")
    preset.params = params
    return preset
