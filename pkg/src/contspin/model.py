"""Coefficient families, admissibility constants, effective drift and the mean oracle.

The drift is ``B(x, eta) = b(x) + sum_y a(x,y) eta(y) - m(x) eta(x)^lam``,
diffusion ``c(x, t) = c(x) t``, branching rate ``g(x, t) = g(x) t``.  The
jump measures are cylindrical: a branching event from source ``y`` puts mass
``z`` on one target ``x`` with ``z ~ mu[y, x]``, and an immigration event puts
``z ~ sigma[x]`` on ``x`` with acceptance rate
``rho(x, eta, z delta_x) = rho0(x) + sum_y phi(x,y) eta(y) + psi(x,x) z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.linalg import expm
from scipy.special import gamma as gamma_fn

from .configuration import Configuration
from .lattice import GraphSpec, WeightSpec, site_weights


class UnsupportedAnalysis(ValueError):
    """Raised when an analysis needs an affine model and gets a nonlinear one."""


def stable_normalization(alpha: float) -> float:
    """``Gamma(2 - alpha) / (alpha (alpha - 1))`` for ``alpha`` in (1, 2)."""
    if not 1.0 < alpha < 2.0:
        raise ValueError(f"stable index must lie strictly inside (1, 2), got {alpha}")
    return float(gamma_fn(2.0 - alpha) / (alpha * (alpha - 1.0)))


# --- Levy measures on (0, inf) ---------------------------------------------
# All integrals are over the half-open interval (lo, hi].


@dataclass(frozen=True)
class EmptyMeasure:
    def mass(self, lo=0.0, hi=math.inf) -> float:
        return 0.0

    def first_moment(self, lo=0.0, hi=math.inf) -> float:
        return 0.0

    def second_moment(self, lo=0.0, hi=math.inf) -> float:
        return 0.0

    @property
    def is_empty(self) -> bool:
        return True


@dataclass(frozen=True)
class FiniteAtoms:
    """Finitely many atoms ``(size z > 0, rate >= 0)``."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = tuple((float(z), float(r)) for z, r in self.atoms)
        for z, r in atoms:
            if not z > 0:
                raise ValueError("atom sizes must be positive")
            if r < 0:
                raise ValueError("atom rates must be nonnegative")
        object.__setattr__(self, "atoms", atoms)

    def _sum(self, lo, hi, power):
        return float(sum(r * z**power for z, r in self.atoms if lo < z <= hi))

    def mass(self, lo=0.0, hi=math.inf) -> float:
        return self._sum(lo, hi, 0)

    def first_moment(self, lo=0.0, hi=math.inf) -> float:
        return self._sum(lo, hi, 1)

    def second_moment(self, lo=0.0, hi=math.inf) -> float:
        return self._sum(lo, hi, 2)

    @property
    def is_empty(self) -> bool:
        return all(r == 0 for _, r in self.atoms)


@dataclass(frozen=True)
class StablePositive:
    """Density ``scale * f(alpha) z^{-1-alpha}`` on (0, inf), ``alpha`` in (1, 2)."""

    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        stable_normalization(self.alpha)
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")

    @property
    def f(self) -> float:
        return self.scale * stable_normalization(self.alpha)

    def mass(self, lo=0.0, hi=math.inf) -> float:
        a = self.alpha
        if lo <= 0:
            return math.inf
        return self.f / a * (lo**-a - (0.0 if hi == math.inf else hi**-a))

    def first_moment(self, lo=0.0, hi=math.inf) -> float:
        a = self.alpha
        if lo <= 0:
            return math.inf
        return self.f / (a - 1) * (lo ** (1 - a) - (0.0 if hi == math.inf else hi ** (1 - a)))

    def second_moment(self, lo=0.0, hi=math.inf) -> float:
        a = self.alpha
        if hi == math.inf:
            return math.inf
        return self.f / (2 - a) * (hi ** (2 - a) - max(lo, 0.0) ** (2 - a))

    @property
    def is_empty(self) -> bool:
        return self.scale == 0


LevyMeasure1D = EmptyMeasure | FiniteAtoms | StablePositive
EMPTY = EmptyMeasure()


# --- interaction kernels ----------------------------------------------------


def lattice_shell_size(dimension: int, k: int) -> int:
    """Number of ``z`` in ``Z^d`` with ``|z|_1 = k``."""
    if k == 0:
        return 1
    return sum(2**i * math.comb(dimension, i) * math.comb(k - 1, i - 1) for i in range(1, dimension + 1))


@dataclass(frozen=True)
class KernelSpec:
    """Translation-invariant off-diagonal kernel ``a(x, y) = profile(dist(x, y))``.

    ``nearest-neighbor``: c at distance 1; ``exponential``: c e^{-eps k};
    ``box``: c for k <= R; ``polynomial``: c / (1 + k^eps).  ``self_rate`` is
    the diagonal ``a(x, x)``.
    """

    family: str
    c: float = 1.0
    eps: float = 1.0
    R: int = 1
    self_rate: float = 0.0

    def profile(self, k):
        k = np.asarray(k, dtype=float)
        if self.family == "nearest-neighbor":
            out = np.where(k == 1, self.c, 0.0)
        elif self.family == "exponential":
            out = self.c * np.exp(-self.eps * k)
        elif self.family == "box":
            out = np.where(k <= self.R, self.c, 0.0)
        elif self.family == "polynomial":
            out = self.c / (1.0 + k**self.eps)
        else:
            raise ValueError(f"unknown kernel family {self.family!r}")
        return np.where(k == 0, self.self_rate, out)

    def matrix(self, g: GraphSpec) -> np.ndarray:
        return self.profile(g.distance_matrix)


def lattice_c1_bound(kernel: KernelSpec, w: WeightSpec, dimension: int, tol: float = 1e-18) -> float:
    """Row bound ``sup_x [sum_{y != x} v(y) a(x,y) + a(x,x)^+ v(x)] / v(x)`` on all of ``Z^d``.

    Uses ``v(y)/v(x) <= e^{delta k}`` (exponential), ``<= 1`` (constant) and
    ``<= max(1, 2^{delta-1}) (1 + k^delta)`` (polynomial) at distance ``k``,
    and sums the shell series until the tail is below ``tol``.
    """
    fam = kernel.family
    if fam == "exponential" and w.kind == "exponential" and kernel.eps <= w.delta:
        return math.inf
    if fam == "polynomial":
        need = dimension + (w.delta if w.kind == "polynomial" else 0.0)
        if w.kind == "exponential" or kernel.eps <= need:
            return math.inf
    def ratio(k):
        if w.kind == "exponential":
            return math.exp(w.delta * k)
        if w.kind == "polynomial":
            return max(1.0, 2 ** (w.delta - 1)) * (1 + k**w.delta)
        return 1.0

    total = max(kernel.self_rate, 0.0)
    finite_range = {"nearest-neighbor": 1, "box": kernel.R}.get(fam)
    k = 1
    while True:
        term = lattice_shell_size(dimension, k) * float(kernel.profile(k)) * ratio(k)
        total += term
        if finite_range is not None:
            if k >= finite_range:
                break
        elif k > 10 and term <= tol * max(total, 1.0):
            break
        k += 1
        if k > 10_000_000:
            return math.inf
    return total


# --- the model --------------------------------------------------------------


@dataclass(eq=False)
class ModelSpec:
    graph: GraphSpec
    b: np.ndarray
    a: np.ndarray
    m: np.ndarray
    lam: float
    c: np.ndarray
    g: np.ndarray
    branching: Mapping[tuple[int, int], LevyMeasure1D] = field(default_factory=dict)  # (source, target)
    rho0: np.ndarray | None = None
    phi: np.ndarray | None = None
    psi: np.ndarray | None = None
    sigma: tuple[LevyMeasure1D, ...] | None = None
    kernel: KernelSpec | None = None
    name: str = "custom"

    def __post_init__(self):
        n = self.graph.n_sites
        vec = lambda x: np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
        self.b, self.m, self.c, self.g = vec(self.b), vec(self.m), vec(self.c), vec(self.g)
        self.rho0 = vec(0.0 if self.rho0 is None else self.rho0)
        self.a = np.asarray(self.a, dtype=float).reshape(n, n)
        self.phi = np.zeros((n, n)) if self.phi is None else np.asarray(self.phi, dtype=float).reshape(n, n)
        self.psi = np.zeros((n, n)) if self.psi is None else np.asarray(self.psi, dtype=float).reshape(n, n)
        self.sigma = tuple(self.sigma) if self.sigma is not None else (EMPTY,) * n
        if len(self.sigma) != n:
            raise ValueError("sigma needs one measure per site")
        clean = {}
        for (y, x), mu in dict(self.branching).items():
            if not (0 <= y < n and 0 <= x < n):
                raise ValueError(f"branching pair {(y, x)} outside truncation")
            if not mu.is_empty:
                clean[(int(y), int(x))] = mu
        self.branching = clean
        self.lam = float(self.lam)

    @property
    def n_sites(self) -> int:
        return self.graph.n_sites

    @property
    def is_affine(self) -> bool:
        return self.lam == 1.0 or not np.any(self.m)

    def own_measure(self, x: int) -> LevyMeasure1D:
        return self.branching.get((x, x), EMPTY)

    def branch_first_moments(self) -> np.ndarray:
        """``M[x, y] = int nu(x) H1(y, dnu)`` for ``x != y`` (zero diagonal)."""
        n = self.n_sites
        M = np.zeros((n, n))
        for (y, x), mu in self.branching.items():
            if x != y:
                M[x, y] = mu.first_moment()
        return M

    def sigma_moments(self) -> tuple[np.ndarray, np.ndarray]:
        m1 = np.array([s.first_moment() for s in self.sigma])
        m2 = np.array([s.second_moment() for s in self.sigma])
        return m1, m2

    def kernel_range(self) -> int:
        d = self.graph.distance_matrix
        mask = self.a != 0
        np.fill_diagonal(mask, False)
        r = int(d[mask].max()) if mask.any() else 0
        for (y, x) in self.branching:
            r = max(r, int(d[x, y]))
        return r

    def restrict(self, sites) -> "ModelSpec":
        """Zero ``B0``, ``g`` and ``rho`` outside ``sites``; ``B1`` is kept."""
        keep = np.zeros(self.n_sites, dtype=bool)
        keep[np.asarray(list(sites), dtype=int)] = True
        a = self.a.copy()
        diag = np.diag(self.a).copy()
        a[~keep, :] = 0.0
        # a negative diagonal belongs to B1 and survives the restriction
        np.fill_diagonal(a, np.where(keep, diag, np.minimum(diag, 0.0)))
        return replace(
            self,
            b=np.where(keep, self.b, 0.0),
            a=a,
            g=np.where(keep, self.g, 0.0),
            rho0=np.where(keep, self.rho0, 0.0),
            phi=np.where(keep[:, None], self.phi, 0.0),
            psi=np.where(keep[:, None], self.psi, 0.0),
            name=f"{self.name}|restricted",
        )

    def with_drift(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    def summary(self) -> dict:
        return {
            "name": self.name,
            "n_sites": self.n_sites,
            "lambda": self.lam,
            "kernel_range": self.kernel_range(),
            "kernel": None if self.kernel is None else vars(self.kernel),
        }


# --- admissibility ----------------------------------------------------------


@dataclass
class AdmissibilityReport:
    C1: float
    C1_row: float
    C1_col: float
    C1_lattice: float | None
    C2: np.ndarray
    C2_sum: float
    C3: np.ndarray
    C4: float
    C4_small_jump_sum: float
    C5: float
    C6: float
    passes: dict[str, bool]
    diagnostics: list[str]
    margin: float | None
    moment_C: float

    @property
    def ok(self) -> bool:
        return all(self.passes.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.passes.items() if not v]

    def to_dict(self) -> dict:
        fin = lambda x: None if x is None else (float(x) if math.isfinite(x) else str(x))
        return {
            "C1": fin(self.C1),
            "C1_row": fin(self.C1_row),
            "C1_col": fin(self.C1_col),
            "C1_lattice": fin(self.C1_lattice),
            "C2": [float(v) for v in self.C2],
            "C2_sum": fin(self.C2_sum),
            "C3": [float(v) for v in self.C3],
            "C4": fin(self.C4),
            "C4_small_jump_sum": fin(self.C4_small_jump_sum),
            "C5": fin(self.C5),
            "C6": fin(self.C6),
            "passes": dict(self.passes),
            "diagnostics": list(self.diagnostics),
            "margin": fin(self.margin),
            "moment_C": fin(self.moment_C),
            "scope": "certified on the finite truncation only",
        }


def _safe_max(values) -> float:
    values = [float(v) for v in values]
    return max(values) if values else 0.0


def admissibility_check(model: ModelSpec, g: GraphSpec | None = None, w: WeightSpec | None = None) -> AdmissibilityReport:
    g = g or model.graph
    if g.n_sites != model.n_sites:
        raise ValueError("graph does not match the model's truncation")
    w = w or WeightSpec.constant()
    v = site_weights(g, w)
    n = model.n_sites
    diag_msgs: list[str] = []
    passes = {}

    # (A1)
    a = model.a
    off = a - np.diag(np.diag(a))
    a0 = off + np.diag(np.maximum(np.diag(a), 0.0))  # the part living in B0
    ok1 = True
    if (off < 0).any():
        i, j = np.argwhere(off < 0)[0]
        diag_msgs.append(f"A1: negative off-diagonal interaction a({i},{j}) = {off[i, j]:g}")
        ok1 = False
    for name in ("b", "m"):
        if (getattr(model, name) < 0).any():
            diag_msgs.append(f"A1: {name} must be nonnegative")
            ok1 = False
    if model.lam < 0:
        diag_msgs.append("A1: killing exponent must be >= 0")
        ok1 = False
    C1_row = _safe_max((a0 @ v) / v)
    C1_col = _safe_max((v @ a0) / v)
    C1 = max(C1_row, C1_col)
    C1_lat = None
    if model.kernel is not None and g.kind == "zd":
        C1_lat = lattice_c1_bound(model.kernel, w, g.dimension)
        if not math.isfinite(C1_lat):
            diag_msgs.append("A1: kernel row sums diverge on the infinite lattice")
    passes["A1"] = ok1 and math.isfinite(C1)

    # (A2), (A3)
    passes["A2"] = bool((model.c >= 0).all())
    if not passes["A2"]:
        diag_msgs.append("A2: diffusion coefficient must be nonnegative")
    C2 = model.c.copy()
    C2_sum = float(v @ C2)
    passes["A3"] = bool((model.g >= 0).all())
    if not passes["A3"]:
        diag_msgs.append("A3: branching rate must be nonnegative")
    C3 = model.g.copy()

    # (A4); the split ||nu|| <= 1 for nu = z delta_x is z <= 1/v(x)
    small, big, cross = np.zeros(n), np.zeros(n), np.zeros(n)
    for (y, x), mu in model.branching.items():
        if x == y:
            s = 1.0 / v[x]
            small[x] = mu.second_moment(0.0, s)
            big[x] = mu.first_moment(s, math.inf)
        else:
            cross[y] += v[x] * mu.first_moment()
    with np.errstate(invalid="ignore"):
        small_sum = float(np.nansum(v * C3 * np.where(C3 > 0, small, 0.0)))
        C4 = _safe_max(np.concatenate([np.where(C3 > 0, C3 * big, 0.0), np.where(C3 > 0, C3 * cross / v, 0.0)]))
    passes["A4"] = math.isfinite(small_sum) and math.isfinite(C4)
    if not math.isfinite(small_sum):
        diag_msgs.append("A4: small-jump second moment sum diverges")
    if not math.isfinite(C4):
        diag_msgs.append("A4: jump first moment diverges (cross-site stable offspring are not admissible)")

    # (A5)
    m1s, m2s = model.sigma_moments()
    ok5 = True
    for name in ("rho0", "phi", "psi"):
        if (getattr(model, name) < 0).any():
            diag_msgs.append(f"A5: {name} must be nonnegative")
            ok5 = False
    with np.errstate(invalid="ignore"):
        phi_m1 = np.where(model.phi > 0, model.phi * m1s[:, None], 0.0)
        C5 = _safe_max((v @ phi_m1) / v)
    passes["A5"] = ok5 and math.isfinite(C5)

    # (A6)
    b_norm = float(v @ model.b)
    with np.errstate(invalid="ignore"):
        rho0_term = float(np.sum(np.where(model.rho0 > 0, v * model.rho0 * m1s, 0.0)))
        psi_term = float(np.sum(np.where(np.diag(model.psi) > 0, v * np.diag(model.psi) * m2s, 0.0)))
    const = b_norm + rho0_term + psi_term
    C6 = max(const, C1 + C5)
    passes["A6"] = math.isfinite(C6)
    if not math.isfinite(C6):
        diag_msgs.append("A6: immigration moments diverge")

    margin = None
    if model.is_affine and all(passes.values()):
        margin = subcriticality_margin(model, g, w)
    moment_C = 4.0 * C6 + C4
    return AdmissibilityReport(
        C1=C1, C1_row=C1_row, C1_col=C1_col, C1_lattice=C1_lat,
        C2=C2, C2_sum=C2_sum, C3=C3, C4=C4, C4_small_jump_sum=small_sum,
        C5=C5, C6=C6, passes=passes, diagnostics=diag_msgs,
        margin=margin, moment_C=moment_C,
    )


def small_jump_variance(model: ModelSpec, delta_cut: float) -> np.ndarray:
    """Per-site ``int_{z <= delta_cut} z^2 mu_{x,x}(dz)`` dropped by the simulator."""
    out = np.zeros(model.n_sites)
    for (y, x), mu in model.branching.items():
        if x == y and isinstance(mu, StablePositive):
            out[x] = mu.second_moment(0.0, delta_cut)
    return out


# --- effective drift and mean dynamics --------------------------------------


def drift(model: ModelSpec, X: np.ndarray) -> np.ndarray:
    """``B(x, eta)`` for every site; ``X`` may carry leading batch axes."""
    X = np.asarray(X, dtype=float)
    return model.b + X @ model.a.T - model.m * np.maximum(X, 0.0) ** model.lam


def effective_drift_dense(model: ModelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    m1s, m2s = model.sigma_moments()
    with np.errstate(invalid="ignore"):
        M = model.branch_first_moments() * model.g[None, :]
        imm = np.where(m1s > 0, m1s, 0.0)
        out = drift(model, X) + X @ M.T
        out = out + imm * (model.rho0 + X @ model.phi.T)
        out = out + np.where(np.diag(model.psi) > 0, np.diag(model.psi) * m2s, 0.0)
    return out


def effective_drift(model: ModelSpec, x: int, eta: Configuration | np.ndarray) -> float:
    X = eta.to_dense(model.n_sites) if isinstance(eta, Configuration) else np.asarray(eta, float)
    return float(effective_drift_dense(model, X)[x])


def mean_field_matrix(model: ModelSpec, g: GraphSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``(A_eff, b_eff)`` with ``d/dt E[eta_t] = b_eff + A_eff E[eta_t]`` for affine models."""
    if not model.is_affine:
        raise UnsupportedAnalysis(f"mean dynamics are not closed for lambda = {model.lam}")
    m1s, m2s = model.sigma_moments()
    A = model.a + model.branch_first_moments() * model.g[None, :]
    A = A + model.phi * np.where(m1s > 0, m1s, 0.0)[:, None]
    A = A - np.diag(model.m)
    bt = model.b + model.rho0 * m1s + np.diag(model.psi) * m2s
    return A, np.nan_to_num(bt, nan=0.0)


def subcriticality_margin(model: ModelSpec, g: GraphSpec | None = None, w: WeightSpec | None = None) -> float:
    """``min_y -(sum_x v(x) A_eff(x,y)) / v(y)``; positive certifies contraction."""
    g = g or model.graph
    w = w or WeightSpec.constant()
    v = site_weights(g, w)
    A, _ = mean_field_matrix(model, g)
    return float(np.min(-(v @ A) / v))


def mean_oracle(model: ModelSpec, m0: np.ndarray, times) -> np.ndarray:
    """Exact ``E[eta_t]`` for affine models via the augmented matrix exponential."""
    A, bt = mean_field_matrix(model)
    n = model.n_sites
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = bt
    start = np.append(np.asarray(m0, dtype=float), 1.0)
    return np.stack([(expm(t * aug) @ start)[:n] for t in np.atleast_1d(times)])


def stationary_mean(model: ModelSpec) -> np.ndarray:
    A, bt = mean_field_matrix(model)
    return np.linalg.solve(A, -bt)


def check_finite_range(model: ModelSpec, g: GraphSpec | None, R: int) -> bool:
    g = g or model.graph
    d = g.distance_matrix
    far = d > R
    off = model.a.copy()
    np.fill_diagonal(off, 0.0)
    if (off[far] != 0).any():
        return False
    for (y, x), mu in model.branching.items():
        if d[x, y] > R and model.g[y] > 0 and mu.first_moment() != 0:
            return False
    return True


def _quadratic_variation(model: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """``q0 + Q1 m``: the instantaneous variance input to each site at mean ``m``."""
    n = model.n_sites
    q0 = np.zeros(n)
    Q1 = np.diag(2.0 * model.c)
    for (y, x), mu in model.branching.items():
        Q1[x, y] += model.g[y] * mu.second_moment()
    for x, s in enumerate(model.sigma):
        if s.is_empty:
            continue
        if not isinstance(s, FiniteAtoms):
            raise UnsupportedAnalysis("variance oracle needs atomic immigration measures")
        m2 = s.second_moment()
        m3 = sum(r * z**3 for z, r in s.atoms)
        q0[x] += model.rho0[x] * m2 + model.psi[x, x] * m3
        Q1[x, :] += model.phi[x, :] * m2
    return q0, Q1


def moment_oracle(model: ModelSpec, m0: np.ndarray, times) -> tuple[np.ndarray, np.ndarray]:
    """Exact per-site means and variances from a deterministic start (affine models).

    The covariance solves ``C' = A C + C A^T + diag(q0 + Q1 m)``; mean and
    vectorized covariance are propagated together by one matrix exponential.
    """
    A, bt = mean_field_matrix(model)
    q0, Q1 = _quadratic_variation(model)
    n = model.n_sites
    N = n + n * n + 1
    G = np.zeros((N, N))
    G[:n, :n] = A
    G[:n, -1] = bt
    I = np.eye(n)
    G[n:-1, n:-1] = np.kron(I, A) + np.kron(A, I)
    diag_rows = n + np.arange(n) * (n + 1)
    G[diag_rows, :n] += Q1
    G[diag_rows, -1] += q0
    start = np.zeros(N)
    start[:n] = np.asarray(m0, dtype=float)
    start[-1] = 1.0
    means, variances = [], []
    for t in np.atleast_1d(times):
        out = expm(t * G) @ start
        means.append(out[:n])
        variances.append(np.maximum(out[diag_rows], 0.0))
    return np.stack(means), np.stack(variances)
