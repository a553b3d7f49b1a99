import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diluteising import lattice as L
from diluteising.errors import InvalidParameter, OutOfBounds
from diluteising.wulff import SurfaceTensionModel, wulff_shape


def test_region_edges_join_unit_distance_neighbours():
    region = L.LatticeRegion.box((3, 4))
    u, v, k = region.edges()
    cu = region.ambient_coords()[u]
    cv = region.ambient_coords()[v]
    assert np.all(np.abs(cv - cu).sum(axis=1) == 1)
    internal, boundary = region.edge_sets()
    m = region.mask.reshape(-1)
    assert np.all(m[u[boundary]] ^ m[v[boundary]])
    assert internal.sum() == 3 * 3 + 2 * 4


def test_full_dilution_keeps_every_edge():
    region = L.LatticeRegion.box((6, 6))
    env = L.gen_environment(region, 1.0, 7)
    assert np.all(env.edge_couplings() == 1)


def test_tiny_p_closes_everything():
    region = L.LatticeRegion.box((5, 5), pad=0)
    for seed in range(20):
        env = L.gen_environment(region, 1e-9, seed)
        assert env.edge_couplings().sum() == 0


def test_open_fraction_concentrates():
    region = L.LatticeRegion.box((72, 72), pad=0)
    env = L.gen_environment(region, 0.7, 3)
    J = env.edge_couplings()
    assert len(J) >= 10_000
    assert abs(J.mean() - 0.7) < 0.014


@pytest.mark.parametrize("p", [0.0, -0.1, 1.5, float("nan")])
def test_bad_p_rejected(p):
    with pytest.raises(InvalidParameter):
        L.gen_environment(L.LatticeRegion.box((2, 2)), p, 0)


def test_environment_stable_under_region_extension():
    small = L.gen_environment(L.LatticeRegion.box((4, 4), pad=0), 0.5, 11)
    big = L.gen_environment(L.LatticeRegion.box((8, 8), pad=0), 0.5, 11)
    # edges of the small box are the leading slots of the big one
    assert np.array_equal(small.J[:3, :3], big.J[:3, :3])


@given(st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_snapshot_round_trip(seed, p):
    region = L.LatticeRegion.box((5, 4), origin=(-2, 1))
    env = L.gen_environment(region, p, seed)
    blob = L.dumps_environment(env)
    back = L.loads_environment(blob)
    assert np.array_equal(back.J, env.J)
    assert back.region.origin == region.origin
    assert L.dumps_environment(back) == blob
    assert L.dumps_environment(L.gen_environment(region, p, seed)) == blob


def test_scales_from_h():
    s = L.Scales.from_h(1 / 256, 2)
    assert (s.K, s.N) == (4, 256)
    s = L.Scales.from_h(0.3, 2)
    assert (s.K, s.N) == (1, 3)
    with pytest.raises(InvalidParameter):
        L.Scales(0.1, 10, 3)


@given(st.floats(1e-4, 0.9))
def test_scales_invariants(h):
    for d in (2, 3):
        s = L.Scales.from_h(h, d)
        assert s.K == max(1, math.floor(h ** (-1 / (2 * d)) + 1e-9))
        assert s.N % s.K == 0


def test_discretize_cube():
    # closed unit cells must fit, so the N-scaled cube [-4, 4] loses its outer half-cell
    pts = L.discretize(L.Box((-1, -1), (1, 1)), L.Scales(0.25, 4, 1)).coords()
    want = {(x, y) for x in range(-3, 4) for y in range(-3, 4)}
    assert {tuple(p) for p in pts} == want
    big = L.discretize(L.Box((-1, -1), (1, 1)), L.Scales(1 / 64, 64, 4)).coords()
    assert big.min() >= -64 and big.max() < 64


def test_discretize_point_is_empty():
    r = L.discretize(L.Box((0.0, 0.0), (0.0, 0.0)), L.Scales(1 / 32, 32, 2))
    assert r.n_vertices == 0


def test_discretize_disk_pixel_count():
    model = SurfaceTensionModel.isotropic()
    disk = wulff_shape(model, 2 * math.pi, 1.0)
    N, K = 32, 2
    pts = L.discretize(disk, L.Scales(1 / N, N, K)).coords()
    radius = 1.0 / math.sqrt(math.pi)
    # brute force: boxes whose closed cell lies in the disk
    count = 0
    for i in range(-12, 13):
        for j in range(-12, 13):
            cx, cy = K * i / N, K * j / N
            c = [(cx + a * K / (2 * N), cy + b * K / (2 * N)) for a in (-1, 1) for b in (-1, 1)]
            if all(disk.contains(np.array([q]))[0] for q in c):
                count += K * K
    assert len(pts) == count
    # boundary loss is at most a band of width K around the perimeter
    assert abs(len(pts) - math.pi * (radius * N) ** 2) < 2 * math.pi * radius * N * K


def test_box_decomposition_k1():
    region = L.LatticeRegion.box((3, 3))
    boxes = L.box_decomposition(region, 1)
    assert len(boxes) == region.n_ambient
    assert sum(b.interior for b in boxes) == region.n_vertices


def test_box_decomposition_counts_interior():
    K = 4
    for d in (2, 3):
        region = L.LatticeRegion.box((2 * K,) * d, origin=(-K // 2,) * d)
        boxes = L.box_decomposition(region, K)
        assert sum(b.interior for b in boxes) == 2 ** d


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_box_tiling_and_interior_subset(seed, K):
    gen = np.random.default_rng(seed)
    mask = gen.random((9, 7)) < 0.8
    region = L.LatticeRegion(mask, (-3, 2))
    boxes = L.box_decomposition(region, K)
    seen = np.concatenate([b.vertices for b in boxes])
    assert len(seen) == region.n_ambient
    assert len({tuple(p) for p in seen}) == region.n_ambient
    for b in boxes:
        if b.interior:
            assert region.contains(b.vertices).all()


def _cone_env(size=40, theta=math.pi / 2, bmax=1.0, scales=L.Scales(1 / 8, 8, 1)):
    region = L.LatticeRegion.box((size, size), origin=(-size // 2, -size // 2))
    env = L.uniform_environment(region)
    return env, L.carve_catalyst(env, theta, bmax, (0, 0), scales), scales


def test_carving_is_sound_and_idempotent():
    env, carved, scales = _cone_env()
    assert carved.n_carved > 0
    assert np.all(carved.J[carved.carved] == 0)
    again = L.carve_catalyst(carved, math.pi / 2, 1.0, (0, 0), scales)
    assert np.array_equal(again.carved, carved.carved)
    # no open edge from the shape to the lateral complement
    shape = wulff_shape(SurfaceTensionModel.isotropic(), math.pi / 2, 1.0)
    region = env.region
    inside = np.zeros(region.n_ambient, bool)
    pts = L.discretize(shape, scales).coords()
    inside[np.ravel_multi_index(tuple(region.to_index(pts).T), region.shape)] = True
    u, v, k = region.edges()
    J = carved.J.reshape(-1, 2)[u, k]
    amb = region.ambient_coords()
    for a, b, j in zip(u, v, J):
        if inside[a] != inside[b] and j:
            out = b if inside[a] else a
            assert L.in_discrete_cone(amb[out][None], math.pi / 2, scales)[0]


def test_carved_count_matches_brute_force_scan():
    env, carved, scales = _cone_env()
    shape = wulff_shape(SurfaceTensionModel.isotropic(), math.pi / 2, 1.0)
    pts = {tuple(p) for p in L.discretize(shape, scales).coords()}
    count = 0
    for (x, y) in pts:
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = (x + dx, y + dy)
            if q in pts:
                continue
            if not L.in_discrete_cone(np.array([q]), math.pi / 2, scales)[0]:
                count += 1
    assert carved.n_carved == count


def test_wide_cone_carves_only_laterally():
    env, carved, scales = _cone_env(theta=math.pi, bmax=1.5)
    region = env.region
    idx = np.argwhere(carved.carved)
    # the discrete half-plane is x_1 >= 1; carved edges never enter it from inside
    u, v, k = region.edges()
    amb = region.ambient_coords()
    flat = carved.carved.reshape(-1, 2)[u, k]
    assert flat.any()
    for a, b in zip(u[flat], v[flat]):
        xs = sorted([amb[a][0], amb[b][0]])
        assert xs[0] <= 0


def test_carving_outside_region_raises():
    region = L.LatticeRegion.box((6, 6))
    env = L.uniform_environment(region)
    with pytest.raises(OutOfBounds):
        L.carve_catalyst(env, math.pi / 2, 3.0, (0, 0), L.Scales(1 / 8, 8, 1))
