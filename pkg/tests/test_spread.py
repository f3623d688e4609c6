import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from contspin.lattice import GraphSpec, auxiliary_graph
from contspin.model import ModelSpec
from contspin.noise import NoiseFabric
from contspin.presets import build_preset
from contspin.simulator import SimParams, simulate_ensemble
from contspin.spread import (containment, ctrw_simulate, front_radii, front_speed, heat_kernel_bound,
                             kernel_bound_audit, occupied_set, sup_moment_profile)


def test_heat_kernel_bound_examples():
    assert heat_kernel_bound(2.0, 0, 1.0) == 0.5
    assert heat_kernel_bound(1.0, 4, 1.0) == pytest.approx(math.exp(-4 * math.log(8 / math.e)), rel=1e-12)
    assert heat_kernel_bound(1.0, 4, 1.0) == pytest.approx(0.01333, abs=1e-5)
    assert heat_kernel_bound(1.0, 1, 10.0) == pytest.approx(13.59, abs=0.01)
    with pytest.raises(ValueError):
        heat_kernel_bound(0.0, 1, 1.0)


@given(st.integers(1, 12), st.floats(0.05, 5.0))
def test_heat_kernel_bound_decreasing_in_distance_when_small(d, t):
    # beyond dhat = t the bound falls with distance
    if d >= t:
        assert heat_kernel_bound(1.0, d + 1, t) < heat_kernel_bound(1.0, d, t)


def test_two_site_closed_form():
    g = GraphSpec.from_edges(2, [(0, 1)])
    est = ctrw_simulate(g, 1.0, 0, [0.0, 1.0], NoiseFabric(1), 100_000)
    exact = (1 + math.exp(-2)) / 2
    assert exact == pytest.approx(0.5677, abs=1e-4)
    assert abs(est.K[1, 0] - exact) <= 3 * est.stderr[1, 0]
    assert est.K[0, 0] == 1.0
    assert np.allclose(est.K.sum(1), 1.0)


def test_ctrw_deterministic_and_validated():
    g = GraphSpec.zd(1, 5)
    a = ctrw_simulate(g, 1.0, g.origin, [0.5, 2.0], NoiseFabric(3), 500)
    b = ctrw_simulate(g, 1.0, g.origin, [2.0, 0.5], NoiseFabric(3), 500)
    assert np.array_equal(a.K, b.K[::-1])
    with pytest.raises(ValueError):
        ctrw_simulate(g, 0.0, 0, [1.0], NoiseFabric(0), 10)


def test_audit_trivial_rows():
    g = GraphSpec.zd(1, 12)
    est = ctrw_simulate(g, 1.0, g.origin, [0.5, 1.0], NoiseFabric(2), 2000)
    rows = kernel_bound_audit(est, g, 1.0)
    for r in rows:
        if r.dhat == 0 or r.K == 0:
            assert not r.violation
    far = [r for r in rows if r.dhat >= 8]
    assert far and all(r.K == 0 and not r.violation for r in far)


def point_ensemble(preset, T=2.0, replicas=20, dt=1e-2, **kw):
    p = build_preset(preset, **kw)
    g = p.model.graph
    x0 = np.zeros(g.n_sites)
    x0[g.origin] = 1.0
    ens = simulate_ensemble(p.model, x0, NoiseFabric(1), SimParams(dt=dt, T=T, replicas=replicas,
                                                                   record_stride=10, weight=p.weight))
    return p, g, ens


def test_occupied_set_basics():
    _, g, ens = point_ensemble("nearest-neighbor", L=6)
    assert occupied_set(ens, 1.0, 0.0) == {g.origin}
    assert occupied_set(np.zeros((0, g.n_sites)), 0.1, 0.0, times=[]) == set()
    with pytest.raises(ValueError):
        occupied_set(ens, 0.0, 0.0)
    # running suprema only grow
    r = front_radii(ens, g, g.origin, 0.01)
    assert np.all(np.diff(r, axis=1) >= 0)


def test_pure_death_has_zero_speed():
    model = ModelSpec(graph=GraphSpec.zd(1, 5), b=0, a=-np.eye(11), m=0, lam=1, c=0, g=0)
    g = model.graph
    x0 = np.zeros(g.n_sites)
    x0[g.origin] = 1.0
    ens = simulate_ensemble(model, x0, NoiseFabric(0), SimParams(dt=1e-2, T=4.0, replicas=3, record_stride=10))
    fit, radii = front_speed(ens, g, g.origin, 0.5, (1.0, 4.0))
    assert fit.zero_speed and fit.slope == 0.0 and not radii.any()
    assert all(containment(ens, g, g.origin, 0.5, 0.0, [2.0, 4.0]).values())


def test_more_branching_spreads_faster():
    kw = dict(L=25, a=0.5, m=0.1, c=0.1, T=8.0, replicas=30)
    kw["lambda"] = 2.0
    _, g, lo = point_ensemble("nearest-neighbor", g=0.05, **kw)
    _, _, hi = point_ensemble("nearest-neighbor", g=0.5, **kw)
    f_lo, _ = front_speed(lo, g, g.origin, 0.01, (2.0, 8.0))
    f_hi, _ = front_speed(hi, g, g.origin, 0.01, (2.0, 8.0))
    assert f_hi.slope > f_lo.slope > 0


def test_sup_profile_decreasing_and_decaying():
    kw = {"lambda": 2.0}
    _, g, ens = point_ensemble("nearest-neighbor", L=25, a=0.5, g=0.05, m=0.1, c=0.1, T=6.0, replicas=30, **kw)
    prof = sup_moment_profile(ens, g, g.origin, 4.0, (8, 23))
    assert prof.c > 0 and prof.n_fit >= 3
    m, se = prof.mean, prof.stderr
    assert np.all(np.diff(m) <= 3 * (se[1:] + se[:-1]) + 1e-12)
    at0 = sup_moment_profile(ens, g, g.origin, 0.0, (2, 5))
    assert at0.mean[0] == 1.0


def test_auxiliary_graph_audit_uses_interior_degree():
    g = GraphSpec.zd(1, 15)
    h = auxiliary_graph(g, 2)
    est = ctrw_simulate(h, 1.0, g.origin, [1.0], NoiseFabric(4), 2000)
    rows = kernel_bound_audit(est, h, 1.0)
    r0 = next(r for r in rows if r.dhat == 0)
    assert r0.bound == pytest.approx(1 / 4)
