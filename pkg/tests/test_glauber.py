import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from diluteising import gibbs as G
from diluteising import glauber as D
from diluteising import lattice as L
from diluteising.errors import InvalidParameter
from conftest import make_spec


def test_heat_bath_prob_examples():
    spec = make_spec((3, 3), 1.0, 0.0, bc="plus")
    plus = G.SpinConfig.constant(spec.region, spec.boundary, 1)
    # centre with four plus neighbours
    assert D.heat_bath_prob((2, 2), plus, spec) == pytest.approx(1 / (1 + math.exp(-4)))
    spec0 = make_spec((1, 1), 0.0, 3.0)
    assert D.heat_bath_prob((1, 1), G.SpinConfig.constant(spec0.region, spec0.boundary, -1),
                            spec0) == 0.5


@given(st.integers(0, 10_000), st.floats(0.0, 2.0), st.floats(0.0, 1.5),
       st.sampled_from(["plus", "minus", "free"]))
def test_heat_bath_matches_energy_oracle(seed, beta, h, bc):
    spec = make_spec((3, 3), beta, h, bc=bc, p=0.6, seed=seed)
    gen = np.random.default_rng(seed)
    s = spec.boundary.values.reshape(-1).copy()
    m = spec.region.mask.reshape(-1)
    s[m] = gen.choice(np.array([-1, 1], np.int8), m.sum())
    for x in np.flatnonzero(m):
        assert D.heat_bath_prob(int(x), s, spec) == pytest.approx(
            G.conditional_plus(spec, s, int(x)), abs=1e-12)


def _oracle_replay(spec, start, t_end, seed):
    s = spec.boundary.values.reshape(-1).copy()
    s[spec.region.mask.reshape(-1)] = start
    times, xs, marks = D.GraphicalNoise(seed).events(spec.region, 0.0, t_end)
    for x, u in zip(xs, marks):
        q = G.conditional_plus(spec, s, int(x))
        s[x] = 1 if u > 1 - q else -1
    return s, len(times)


def test_three_vertex_trace():
    spec = make_spec((1, 3), 0.8, 0.4, bc="minus")
    final, n = _oracle_replay(spec, -1, 4.0, seed=11)
    tr = D.run(None, spec, start=-1, t_end=4.0, seed=11)
    assert n > 0 and tr.events == n
    assert np.array_equal(tr.final.flat(), final)


@pytest.mark.parametrize("rule", ["heat-bath", "metropolis"])
def test_kernel_matches_python_replay(rule):
    spec = make_spec((5, 5), 0.9, 0.2, bc="minus", p=0.7, seed=4)
    tr = D.run(None, spec, start=1, t_end=6.0, seed=7, rule=rule)
    ref, n = D.replay_direct(spec.region, spec, 1, 0.0, 6.0, 7, rule=rule)
    assert tr.events == n
    assert np.array_equal(tr.final.flat(), ref)


def test_split_runs_agree():
    spec = make_spec((6, 6), 1.0, 0.1, bc="plus")
    whole = D.run(None, spec, start=-1, t_end=5.0, seed=3)
    half = D.run(None, spec, start=-1, t_end=2.3, seed=3)
    rest = D.run(None, spec, start=half.final, s=2.3, t_end=5.0, seed=3)
    assert np.array_equal(whole.final.flat(), rest.final.flat())


def test_stepper_step_pattern_irrelevant():
    spec = make_spec((6, 6), 1.0, 0.1, bc="plus")
    a = D.Stepper(spec, -1, seed=9)
    for t in np.linspace(0.1, 4.0, 17):
        a.advance(t)
    b = D.Stepper(spec, -1, seed=9)
    b.advance(4.0)
    assert np.array_equal(a.spins, b.spins)
    assert a.events == b.events
    with pytest.raises(InvalidParameter):
        b.advance(1.0)


def test_no_events_leaves_state():
    spec = make_spec((2, 2), 1.0, 0.0, bc="plus")
    tr = D.run(None, spec, start=-1, t_end=1e-12, seed=0)
    assert tr.events == 0
    assert np.array_equal(tr.final.flat(), tr.initial.flat())


def test_monotone_coupling_large_box():
    lo = make_spec((32, 32), 1.0, 0.1, bc="minus", p=0.8, seed=2)
    hi = G.GibbsSpec(lo.env, 1.0, 0.3, L.BoundaryCondition.plus(lo.region))
    a, b, out = D.monotone_couple(-1, 1, lo, hi, 100.0, seed=5)
    assert out.events > 1e5
    assert out.violations == 0
    assert np.all(a.flat() <= b.flat())


def test_monotone_coupling_rejects_unordered():
    spec = make_spec((3, 3), 1.0, 0.1, bc="minus")
    with pytest.raises(InvalidParameter):
        D.monotone_couple(1, -1, spec, spec, 1.0, seed=0)


def test_coalescence_at_high_temperature():
    spec = make_spec((8, 8), 0.1, 0.0, bc="free")
    a, b, _ = D.monotone_couple(-1, 1, spec, spec, 30.0, seed=1)
    assert np.array_equal(a.flat(), b.flat())


def _slab(ambient, r, c=(2, 2)):
    d = np.abs(ambient.ambient_coords() - np.asarray(c)).max(axis=1).reshape(ambient.shape)
    return (d <= r) & ambient.mask


@given(st.integers(0, 10_000), st.lists(st.integers(0, 3), min_size=4, max_size=4),
       st.lists(st.floats(0.2, 3.0), min_size=4, max_size=4))
@settings(max_examples=100)
def test_concatenation_rule(seed, radii, gaps):
    amb = L.LatticeRegion.box((5, 5))
    spec = G.GibbsSpec(L.uniform_environment(amb), 1.2, 0.3, L.BoundaryCondition.plus(amb))
    times = np.cumsum([0.0] + gaps)
    masks = [_slab(amb, r) for r in radii]
    gamma = D.SpaceTimeRegion(amb, np.stack(masks[:2]), times[:3])
    delta = D.SpaceTimeRegion(amb, np.stack(masks[1:]), times[1:])
    rep = D.concatenation_check(gamma, delta, spec, -1, seed)
    assert rep.ok


def test_concatenate_requires_shared_slab():
    amb = L.LatticeRegion.box((3, 3))
    a = D.SpaceTimeRegion(amb, np.stack([amb.mask, amb.mask]), [0, 1, 2])
    b = D.SpaceTimeRegion(amb, np.stack([_slab(amb, 0, (1, 1)), amb.mask]), [1, 2, 3])
    with pytest.raises(InvalidParameter):
        D.concatenate(a, b)


def test_cftp_single_vertex():
    beta, h = 1.0, 0.7
    spec = make_spec((1, 1), beta, h)
    hist = D.cftp_histogram(spec, 20000, seed=0)
    p = 1 / (1 + math.exp(-beta * h))
    assert abs(hist[1] / 20000 - p) < 4 * math.sqrt(p * (1 - p) / 20000)


def test_cftp_infinite_temperature_uniform():
    spec = make_spec((2, 2), 0.0, 0.0, bc="plus")
    hist = D.cftp_histogram(spec, 16000, seed=1)
    assert chisquare(hist).pvalue > 1e-3


@pytest.mark.parametrize("bc", ["plus", "minus", "free"])
def test_cftp_small_box_chi_square(bc):
    spec = make_spec((2, 3), 1.0, 0.3, bc=bc, p=0.7, seed=1)
    hist = D.cftp_histogram(spec, 40000, seed=2)
    ex = G.exact_gibbs(spec).probs
    assert chisquare(hist, ex * hist.sum()).pvalue > 1e-3


def test_cftp_sample_is_in_region():
    spec = make_spec((4, 4), 1.0, 0.2, bc="minus")
    cfg = D.cftp_sample(spec, seed=3)
    assert set(np.unique(cfg.site_values())) <= {-1, 1}
    assert cfg.window >= 1


def test_block_dynamics_single_block_is_exact():
    spec = make_spec((2, 2), 1.0, 0.3, bc="minus")
    ex = G.exact_gibbs(spec).probs
    counts = np.zeros(16, np.int64)
    for seed in range(3000):
        tr = D.block_dynamics(spec, [spec.region.mask], 3.0, seed)
        counts[G.config_index(tr.final.site_values())[0]] += 1
    assert chisquare(counts, ex * counts.sum()).pvalue > 1e-3


def test_annulus_blocks_cover():
    region = L.LatticeRegion.box((9, 9), origin=(-4, -4))
    g = np.abs(region.ambient_coords()).max(axis=1).astype(float)
    blocks = D.annulus_blocks(region, g, [0, 2, 4], 0.5)
    union = np.zeros(region.shape, bool)
    for b in blocks:
        union |= b
    assert np.array_equal(union, region.mask)
    spec = G.GibbsSpec(L.uniform_environment(region), 1.0, 0.1, L.BoundaryCondition.minus(region))
    tr = D.block_dynamics(spec, blocks, 2.0, seed=0)
    assert tr.events > 0
    with pytest.raises(InvalidParameter):
        D.block_dynamics(spec, blocks[:1], 1.0, seed=0)


def test_gap_single_vertex():
    est = D.gap_estimate(make_spec((1, 1), 1.0, 0.5), budget=8000, seed=0)
    assert abs(est.value - 1.0) < 3 * est.stderr
    assert D.gap_estimate(make_spec((1, 1), 1.0, 0.5), method="exact").value == pytest.approx(1.0)


def test_gap_two_vertices_against_generator():
    spec = make_spec((1, 2), 1.0, 0.0)
    exact = G.exact_generator_gap(spec).gap
    est = D.gap_estimate(spec, budget=20000, seed=0)
    assert abs(est.value - exact) < 3 * est.stderr
    assert not est.flagged


def test_gap_minus_boundary_grows_with_beta():
    # with minus boundary and a positive field the minus phase stiffens as beta grows
    gaps = [G.exact_generator_gap(make_spec((3, 3), b, 0.1, bc="minus")).gap
            for b in (0.5, 1.0, 2.0)]
    assert gaps == sorted(gaps)


def test_hit_at_time_zero():
    spec = make_spec((3, 3), 1.0, 0.2, bc="plus")
    pred = D.LinearPredicate.plus_fraction(spec.region, spec.region.mask, 0.5)
    assert D.hitting_time(spec, pred, 0, 10.0, start=1) == D.HitResult(0.0, False)


def test_strong_field_hitting_median():
    # each site flips up at its first clock ring: Exp(1), median ln 2
    spec = make_spec((1, 1), 1.0, 10.0, bc="free")
    pred = D.LinearPredicate.plus_fraction(spec.region, spec.region.mask, 1.0)
    ts = [D.hitting_time(spec, pred, s, 50.0).time for s in range(600)]
    assert np.median(ts) == pytest.approx(math.log(2), abs=0.1)


def test_hitting_monotone_in_field():
    base = make_spec((6, 6), 1.0, 0.2, bc="minus")
    specs = [G.GibbsSpec(base.env, 1.0, h, base.boundary) for h in (0.2, 0.5, 1.0, 2.0)]
    pred = D.LinearPredicate.plus_fraction(base.region, base.region.mask, 0.5)
    for seed in range(10):
        ts = [r.time for r in D.hitting_times(specs, pred, seed, 200.0)]
        assert np.all(np.diff(ts) <= 0)


def test_censoring_at_cap():
    spec = make_spec((4, 4), 1.0, 0.0, bc="minus")
    pred = D.LinearPredicate.plus_fraction(spec.region, spec.region.mask, 1.0)
    assert D.hitting_time(spec, pred, 0, 0.5) == D.HitResult(0.5, True)


def test_predicate_rejects_negative_weights():
    with pytest.raises(InvalidParameter):
        D.LinearPredicate(np.array([1.0, -1.0]), 0.0)
