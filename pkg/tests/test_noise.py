import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from contspin.model import FiniteAtoms, ModelSpec, StablePositive
from contspin.lattice import GraphSpec
from contspin.noise import (JumpTable, NoiseFabric, accepted, branching_events, brownian_increment,
                            immigration_events, mix, to_uniform)

N = 100_000


def test_mix_matches_reference_splitmix64():
    # reference values of the splitmix64 finalizer computed with Python ints
    def ref(z):
        z ^= z >> 30
        z = (z * 0xBF58476D1CE4E5B9) % 2**64
        z ^= z >> 27
        z = (z * 0x94D049BB133111EB) % 2**64
        return z ^ (z >> 31)

    for z in (0, 1, 2**63, 0xDEADBEEF, 2**64 - 1):
        assert int(mix(np.uint64(z))) == ref(z)


@given(st.integers(0, 2**64 - 1))
def test_uniform_open_interval(h):
    u = float(to_uniform(np.uint64(h)))
    assert 0.0 < u < 1.0


def test_seed_range():
    NoiseFabric(2**64 - 1)
    with pytest.raises(ValueError):
        NoiseFabric(2**64)
    with pytest.raises(ValueError):
        NoiseFabric(-1)


@given(st.integers(0, 2**64 - 1), st.integers(0, 50), st.integers(0, 10**6))
def test_same_key_same_value(seed, x, step):
    a = brownian_increment(NoiseFabric(seed), x, step, 0.01, replica=3)
    b = brownian_increment(NoiseFabric(seed), x, step, 0.01, replica=3)
    assert a == b


def test_brownian_moments():
    dt = 0.01
    f = NoiseFabric(11)
    dw = math.sqrt(dt) * f.normal("brownian", 0, 5, np.arange(N, dtype=np.uint64))
    assert abs(dw.mean()) < 4 * math.sqrt(dt / N)
    assert dw.var() == pytest.approx(dt, rel=0.05)
    assert stats.kstest(dw / math.sqrt(dt), "norm").pvalue > 1e-3
    assert brownian_increment(f, 5, 17, dt) == pytest.approx(dw[17])


def test_sites_and_replicas_uncorrelated():
    f = NoiseFabric(3)
    steps = np.arange(N, dtype=np.uint64)
    a = f.normal("brownian", 0, 1, steps)
    b = f.normal("brownian", 0, 2, steps)
    c = f.normal("brownian", 1, 1, steps)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.02


def test_branching_event_counts_are_poisson():
    f = NoiseFabric(5)
    assert branching_events(f, 0, 0, 0.5, 0.0) == []
    counts = np.array([len(branching_events(f, 0, s, 0.5, 2.0)) for s in range(N)])
    assert counts.mean() == pytest.approx(1.0, abs=0.01)
    assert counts.var() == pytest.approx(1.0, abs=0.03)


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.integers(0, 1000))
def test_threshold_monotone(g1, g2, step):
    lo, hi = sorted((g1, g2))
    evs = branching_events(NoiseFabric(9), 2, step, 0.5, 6.0)
    a, b = accepted(evs, lo), accepted(evs, hi)
    assert set(a) <= set(b)
    # a consumer with majorant ``lo`` sees exactly the accepted prefix
    assert branching_events(NoiseFabric(9), 2, step, 0.5, lo) == a


def test_immigration_count_mean():
    f = NoiseFabric(2)
    lam, dt, steps = 2.0, 0.01, 20_000
    total = sum(len(immigration_events(f, s, dt, lam)) for s in range(steps))
    T = steps * dt
    assert abs(total - lam * T) < 4 * math.sqrt(lam * T)
    assert immigration_events(f, 0, dt, 0.0) == []


def test_jump_table_pick_and_sizes():
    g = GraphSpec.zd(1, 1)
    mu = {(1, 0): FiniteAtoms(((1.0, 1.0),)), (1, 2): FiniteAtoms(((2.0, 3.0),)),
          (1, 1): StablePositive(1.5)}
    model = ModelSpec(graph=g, b=0, a=np.zeros((3, 3)), m=0, lam=1, c=0, g=1, branching=mu)
    tab = JumpTable.branching(model, 0.1)
    r = StablePositive(1.5).mass(0.1)
    assert tab.total[1] == pytest.approx(4.0 + r)
    f = NoiseFabric(8)
    u = f.uniform("branch_pick", 0, 1, np.arange(N, dtype=np.uint64))
    comp = tab.pick(np.ones(N, dtype=np.int64), u)
    tgt = tab.targets[comp]
    freq = np.bincount(tgt, minlength=3) / N
    expect = np.array([1.0, r, 3.0]) / (4.0 + r)
    assert np.allclose(freq, expect, atol=4 * np.sqrt(expect / N))
    us = f.uniform("branch_size", 0, 1, np.arange(N, dtype=np.uint64))
    z = tab.size(comp, us)
    assert np.all(z[tgt == 2] == 2.0) and np.all(z[tgt == 0] == 1.0)
    # stable marks: P(Z > z) = (z / 0.1)^{-1.5} above the cut
    zs = z[tgt == 1]
    assert zs.min() >= 0.1
    assert stats.kstest(zs, lambda q: 1 - (np.maximum(q, 0.1) / 0.1) ** -1.5).pvalue > 1e-3


def test_jump_table_empty_source():
    g = GraphSpec.zd(1, 1)
    model = ModelSpec(graph=g, b=0, a=np.zeros((3, 3)), m=0, lam=1, c=0, g=1,
                      branching={(0, 1): FiniteAtoms(((1.0, 1.0),))})
    tab = JumpTable.branching(model, 0.1)
    assert tab.total.tolist() == [1.0, 0.0, 0.0]
    assert tab.max_components == 1
