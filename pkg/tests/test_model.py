import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad, solve_ivp

from contspin.lattice import GraphSpec, WeightSpec, site_weights
from contspin.model import (EMPTY, FiniteAtoms, KernelSpec, ModelSpec, StablePositive, UnsupportedAnalysis,
                            admissibility_check, check_finite_range, effective_drift, lattice_c1_bound,
                            lattice_shell_size, mean_field_matrix, mean_oracle, moment_oracle, small_jump_variance,
                            stable_normalization, stationary_mean, subcriticality_margin)
from contspin.presets import build_preset, list_presets


def single_site(**kw):
    base = dict(graph=GraphSpec.zd(1, 0), b=0.0, a=0.0, m=0.0, lam=1.0, c=0.0, g=0.0)
    base.update(kw)
    return ModelSpec(**base)


def test_stable_normalization():
    assert stable_normalization(1.5) == pytest.approx(math.sqrt(math.pi) / 0.75, abs=1e-12)
    assert stable_normalization(1.5) == pytest.approx(2.36327, abs=1e-5)
    for bad in (1.0, 2.0, 0.5):
        with pytest.raises(ValueError):
            stable_normalization(bad)


def test_stable_small_jump_moment():
    mu = StablePositive(1.5)
    assert mu.second_moment(0.0, 1.0) == pytest.approx(stable_normalization(1.5) / 0.5, rel=1e-12)
    assert mu.second_moment(0.0, 1.0) == pytest.approx(4.72654, abs=1e-5)


@given(st.floats(1.05, 1.95), st.floats(0.05, 2.0), st.floats(2.5, 20.0))
def test_stable_moments_against_quadrature(alpha, lo, hi):
    mu = StablePositive(alpha, 1.3)
    dens = lambda z: 1.3 * stable_normalization(alpha) * z ** (-1 - alpha)
    assert mu.mass(lo, hi) == pytest.approx(quad(dens, lo, hi)[0], rel=1e-7)
    assert mu.first_moment(lo, hi) == pytest.approx(quad(lambda z: z * dens(z), lo, hi)[0], rel=1e-7)
    assert mu.second_moment(lo, hi) == pytest.approx(quad(lambda z: z * z * dens(z), lo, hi)[0], rel=1e-7)


def test_atoms_use_half_open_interval():
    mu = FiniteAtoms(((1.0, 2.0), (3.0, 0.5)))
    assert mu.mass(0, 1) == 2.0 and mu.mass(1, 3) == 0.5
    assert mu.first_moment() == 3.5 and mu.second_moment() == 6.5
    with pytest.raises(ValueError):
        FiniteAtoms(((-1.0, 1.0),))


def test_shell_sizes():
    assert [lattice_shell_size(1, k) for k in range(4)] == [1, 2, 2, 2]
    assert [lattice_shell_size(2, k) for k in range(4)] == [1, 4, 8, 12]
    g = GraphSpec.zd(3, 4)
    d = g.distance_matrix[g.origin]
    assert [lattice_shell_size(3, k) for k in range(5)] == np.bincount(d).tolist()


def test_c1_closed_form_geometric_series():
    k = KernelSpec("exponential", c=1.0, eps=1.0)
    q = math.exp(-0.5)
    assert lattice_c1_bound(k, WeightSpec.exponential(0.5), 1) == pytest.approx(2 * q / (1 - q), abs=1e-9)
    assert math.isinf(lattice_c1_bound(KernelSpec("exponential", eps=0.5), WeightSpec.exponential(0.5), 1))
    assert lattice_c1_bound(KernelSpec("box", c=1.0, R=2), WeightSpec.constant(), 1) == 4.0


def test_admissibility_nearest_neighbor_preset():
    p = build_preset("nearest-neighbor")
    rep = admissibility_check(p.model, p.model.graph, p.weight)
    assert rep.ok
    assert np.all(rep.C3 == 1.0) and np.all(rep.C2 == 1.0)
    # weighted row sum at an interior site: e^{1} + e^{-1}
    assert rep.C1_row == pytest.approx(math.e + math.exp(-1), rel=1e-12)
    # the infinite-lattice bound uses v(y)/v(x) <= e^{|x-y|} for both neighbours
    assert rep.C1_lattice == pytest.approx(2 * math.e, rel=1e-12)
    v = site_weights(p.model.graph, p.weight)
    assert rep.C4 == pytest.approx(np.max(((v @ (p.model.a > 0)) / v)), rel=1e-12)


def test_admissibility_zero_model():
    rep = admissibility_check(single_site())
    assert rep.ok
    assert (rep.C1, rep.C4, rep.C5, rep.C6) == (0.0, 0.0, 0.0, 0.0)


def test_admissibility_failures_are_named():
    g = GraphSpec.zd(1, 1)
    a = np.zeros((3, 3))
    a[0, 1] = -1.0
    rep = admissibility_check(ModelSpec(graph=g, b=0, a=a, m=0, lam=1, c=0, g=0))
    assert rep.failed == ["A1"] and "a(0,1)" in rep.diagnostics[0]
    z = np.zeros((3, 3))
    rep = admissibility_check(ModelSpec(graph=g, b=0, a=z, m=0, lam=1, c=-1, g=0))
    assert "A2" in rep.failed
    cross = ModelSpec(graph=g, b=0, a=z, m=0, lam=1, c=0, g=1, branching={(0, 1): StablePositive(1.5)})
    rep = admissibility_check(cross)
    assert "A4" in rep.failed


def test_effective_drift_examples():
    p = build_preset("nearest-neighbor", g=1.0)
    g = p.model.graph
    x = g.site_id(0)
    eta = np.zeros(g.n_sites)
    eta[g.site_id(-1)] = eta[g.site_id(1)] = 1.0
    assert effective_drift(p.model, x, eta) == pytest.approx(4.0)
    assert effective_drift(p.model, x, np.zeros(g.n_sites)) == 0.0
    cbi = build_preset("cbi", b=2.0, psi=0.5, sigma=[[1.0, 1.0], [2.0, 0.5]]).model
    m2 = 1.0 + 4.0 * 0.5
    assert effective_drift(cbi, 0, np.zeros(cbi.n_sites)) == pytest.approx(2.0 + 0.5 * m2)


def test_subcriticality_margin_examples():
    p = build_preset("nearest-neighbor", m=5.0, g=1.0, delta=0.5)
    A = subcriticality_margin(p.model, p.model.graph, p.weight)
    assert A == pytest.approx(5 - 2 * (math.exp(0.5) + math.exp(-0.5)), abs=1e-12)
    assert A == pytest.approx(0.4895, abs=1e-4)
    p0 = build_preset("nearest-neighbor", m=0.0)
    assert subcriticality_margin(p0.model, p0.model.graph, p0.weight) < 0
    assert subcriticality_margin(single_site(m=1.0)) == 1.0


def test_mean_field_refuses_nonlinear():
    p = build_preset("stable-competition")
    with pytest.raises(UnsupportedAnalysis):
        mean_field_matrix(p.model)


def test_mean_oracle_scalar():
    model = single_site(b=1.0, a=-1.0)
    t = np.array([0.0, 1.0, 3.0])
    assert mean_oracle(model, [0.0], t)[:, 0] == pytest.approx(1 - np.exp(-t))
    assert mean_oracle(model, [0.0], 1.0)[0, 0] == pytest.approx(0.63212, abs=1e-5)
    assert stationary_mean(model) == pytest.approx([1.0])
    zero = single_site()
    assert mean_oracle(zero, [2.5], [0.0, 4.0])[:, 0].tolist() == [2.5, 2.5]


def test_mean_oracle_against_ode(rng):
    p = build_preset("cbi", rho=0.5, sigma=[[0.5, 1.0]], phi=0.2)
    model = p.model
    A, b = mean_field_matrix(model)
    m0 = rng.exponential(size=model.n_sites)
    sol = solve_ivp(lambda t, m: A @ m + b, (0, 2), m0, t_eval=[0.5, 2.0], rtol=1e-10, atol=1e-12)
    assert np.allclose(mean_oracle(model, m0, [0.5, 2.0]), sol.y.T, rtol=1e-7)


def test_moment_oracle_variance_against_ode():
    # single-site CBI: V' = 2 a V + (2c + g m2) m, m' = a m + b
    c, g, a, b = 0.5, 1.0, -1.0, 1.0
    model = single_site(b=b, a=a, c=c, g=g, branching={(0, 0): FiniteAtoms(((1.0, 0.5),))})
    q = 2 * c + g * 0.5

    def rhs(t, y):
        m, V = y
        return [a * m + b, 2 * a * V + q * m]

    ts = [0.3, 1.0, 4.0]
    sol = solve_ivp(rhs, (0, 4), [2.0, 0.0], t_eval=ts, rtol=1e-11, atol=1e-13)
    means, var = moment_oracle(model, [2.0], ts)
    assert np.allclose(means[:, 0], sol.y[0], rtol=1e-8)
    assert np.allclose(var[:, 0], sol.y[1], rtol=1e-7)


def test_finite_range():
    p = build_preset("nearest-neighbor")
    assert check_finite_range(p.model, None, 1)
    assert not check_finite_range(p.model, None, 0)
    k = KernelSpec("box", c=1.0, R=3)
    g = GraphSpec.zd(1, 6)
    m = ModelSpec(graph=g, b=0, a=k.matrix(g), m=0, lam=1, c=0, g=0, kernel=k)
    assert check_finite_range(m, g, 3) and not check_finite_range(m, g, 2)


def test_small_jump_variance_only_for_stable():
    p = build_preset("stable-competition")
    sv = small_jump_variance(p.model, 0.01)
    assert sv == pytest.approx(np.full(p.model.n_sites, StablePositive(1.5).second_moment(0, 0.01)))
    assert not small_jump_variance(build_preset("cbi").model, 0.01).any()


def test_restrict_keeps_negative_diagonal():
    m = build_preset("cbi").model
    r = m.restrict([m.graph.origin])
    assert np.all(np.diag(r.a) == -1.0)
    assert r.b.sum() == 1.0 and r.g.sum() == 1.0


@pytest.mark.parametrize("name", sorted(list_presets()))
def test_presets_admissible(name):
    p = build_preset(name)
    assert admissibility_check(p.model, p.model.graph, p.weight).ok


def test_preset_catalog():
    cat = list_presets()
    assert len(cat) == 4
    assert cat["stable-competition"]["defaults"]["alpha"] == 1.5
    with pytest.raises(KeyError):
        build_preset("cbi", nope=1)
    with pytest.raises(KeyError):
        build_preset("unknown")
