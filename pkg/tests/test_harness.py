import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from diluteising import harness as H
from diluteising import lattice as L
from diluteising.errors import InvalidParameter


def _cfg(**kw):
    base = dict(kind="nucleate", size=12, beta=1.5, h=[0.5], seeds=3, t_cap=50.0, bootstrap=50)
    base.update(kw)
    return H.ExperimentConfig.from_dict(base)


@pytest.mark.parametrize("bad", [
    {"kind": "melt"}, {"d": 4}, {"size": 2}, {"p": 0.0}, {"p": 1.5}, {"beta": 0.0},
    {"h": [0.3, -0.1]}, {"theta": 0.0}, {"theta": 7.0}, {"seeds": 0}, {"t_cap": -1.0},
    {"window_frac": 0.0}, {"obs_dt": 0.0}, {"workers": 0}, {"N": 4}, {"colour": "red"},
])
def test_config_validation(bad):
    with pytest.raises(InvalidParameter):
        _cfg(**bad)


def test_config_hash_ignores_output_and_workers():
    a = _cfg()
    b = _cfg(out="/tmp/x", workers=2)
    c = _cfg(beta=1.6)
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 16


def test_config_from_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('kind = "grow"\nbeta = 1.5\nh = 0.3\nb_plant = "1.5*B_root"\nseeds = [4, 7]\n')
    cfg = H.ExperimentConfig.from_toml(p)
    assert cfg.h == [0.3] and cfg.b_plant == ["1.5*B_root"]
    assert cfg.seed_list() == [4, 7]
    assert _cfg(seeds=3, seed_offset=10).seed_list() == [10, 11, 12]


def test_resolve_b():
    phys = H.physics(_cfg(h=[0.3]), 0.3)
    assert H.resolve_b(0.25, phys) == 0.25
    assert H.resolve_b("2*B_c", phys) == pytest.approx(2 * phys.full.B_c)
    assert H.resolve_b("1.5*B_root", phys) == pytest.approx(1.5 * phys.full.B_root)
    with pytest.raises(InvalidParameter):
        H.resolve_b("3*B_moon", phys)


def test_censored_median_examples():
    assert H.censored_median([1, 2, 3], [False] * 3) == 2
    assert H.censored_median([1, 9, 9], [False, True, True]) == math.inf
    assert H.censored_quantile([5, 1, 3, 9], [False, False, False, True], 0.25) == 1
    assert math.isnan(H.censored_median([], []))


@given(st.lists(st.floats(0, 100), min_size=1, max_size=30), st.integers(0, 2 ** 30))
def test_censoring_only_raises_the_median(times, seed):
    t = np.array(times)
    c = np.random.default_rng(seed).random(len(t)) < 0.3
    assert H.censored_median(t, c) >= H.censored_median(t, np.zeros_like(c))


def test_sign_test():
    wins, n, p = H.sign_test([5, 5, 5, 5, 5, 5], [1, 1, 1, 1, 1, 5])
    assert (wins, n) == (5, 5)
    assert p == pytest.approx(1 / 32)
    assert H.sign_test([1, 2], [1, 2]) == (0, 0, 1.0)


def test_bootstrap_ci_brackets_median():
    data = np.random.default_rng(0).exponential(size=400)
    lo, hi = H.bootstrap_ci(np.median, data, 400, seed=1)
    assert lo < np.median(data) < hi
    assert hi - lo < 0.3


def test_zero_cap_censors_everything():
    rep = H.nucleation_scan(_cfg(t_cap=0.0))
    assert all(r.censored and r.hit_time == 0.0 for r in rep.records)
    assert rep.rows[0]["censor_rate"] == 1.0
    assert math.isnan(rep.slope)


def test_nucleation_scan_small(tmp_path):
    cfg = _cfg(h=[2.0, 1.0], seeds=4, beta=0.6)
    rep = H.run_experiment(cfg, str(tmp_path))
    assert [r["h"] for r in rep.rows] == [2.0, 1.0]
    assert rep.rows[0]["median"] <= rep.rows[1]["median"]
    assert math.isfinite(rep.slope)
    recs = H.load_records(tmp_path / "runs.jsonl")
    assert len(recs) == 8 and recs[0].config_hash == cfg.config_hash()
    assert (tmp_path / "nucleation.csv").exists()
    assert json.loads((tmp_path / "config.json").read_text())["hash"] == cfg.config_hash()
    assert len(list((tmp_path / "envs").glob("*.dien"))) == 1


def test_nucleation_is_reproducible():
    a = H.nucleation_scan(_cfg(beta=0.6, h=[1.0]))
    b = H.nucleation_scan(_cfg(beta=0.6, h=[1.0]))
    assert [r.hit_time for r in a.records] == [r.hit_time for r in b.records]


def test_catalyst_setup_geometry():
    cfg = _cfg(kind="catalyst", size=40, h=[0.3])
    st = H.catalyst_setup(cfg)
    assert st.carved.n_carved > 0
    assert st.window.any()
    diff = st.plain.J != st.carved.J
    assert np.all(st.carved.J[diff] == 0)


def test_catalyst_ab_small(tmp_path):
    cfg = _cfg(kind="catalyst", size=40, h=[0.3], seeds=4, t_cap=2000.0)
    rep = H.run_experiment(cfg, str(tmp_path))
    assert rep.wins <= rep.untied <= 4
    assert 0 <= rep.frac_not_larger <= 1
    assert rep.window_sites > 0
    assert (tmp_path / "catalyst_pairs.csv").exists()
    assert len(list((tmp_path / "envs").glob("*.dien"))) == 2
    # the carved environment loads back and matches the setup
    setup = H.catalyst_setup(cfg)
    refs = {r.env_ref for r in rep.records if r.arm == "carved"}
    env = L.load_environment(tmp_path / "envs" / (refs.pop() + ".dien"))
    assert np.array_equal(env.J, setup.carved.J)


def test_plant_and_grow_small():
    cfg = _cfg(kind="grow", size=40, h=[0.3], seeds=3, t_cap=300.0)
    rep = H.plant_and_grow(cfg, ["1.5*B_root", "0.5*B_c"])
    big = rep.row(H.resolve_b("1.5*B_root", H.physics(cfg, 0.3)))
    small = rep.row(H.resolve_b("0.5*B_c", H.physics(cfg, 0.3)))
    assert big["grew"] == 3
    assert small["shrank"] == 3
    assert all(r.series["volume"][0] > 0 for r in rep.records)


def test_plant_window_must_fit():
    from diluteising.errors import OutOfBounds

    with pytest.raises(OutOfBounds):
        H.plant_and_grow(_cfg(kind="grow", size=16, h=[0.3], seeds=1), [3.0])


def test_grid_needs_three_cells():
    with pytest.raises(InvalidParameter):
        H.conductive_grid_experiment(_cfg(kind="grid", cells=2))


def test_directed_path_rule():
    n, d = 3, 2
    occ = np.zeros((4, n * n), bool)
    occ[0, 0] = True
    occ[1, [0, 4]] = True
    occ[2, [4, 8]] = True
    assert H._directed_path(occ, n, d)
    occ[2, 4] = False
    occ[2, 8] = True
    occ[1, 4] = False
    assert not H._directed_path(occ, n, d)


def test_grid_small(tmp_path):
    cfg = _cfg(kind="grid", h=[0.3], cells=3, seeds=2, t_cap=60.0)
    rep = H.run_experiment(cfg, str(tmp_path))
    assert rep.occupation.shape[0] == 2 and rep.occupation.shape[2] == 9
    assert rep.occupation[:, 0, 0].all()  # the planted cell starts occupied
    assert rep.cell_side == 17
    assert (tmp_path / "grid.json").exists()
