import json

import numpy as np
import pytest

from diluteising import gibbs as G
from diluteising import lattice as L
from diluteising.cli import main


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_env_gen_round_trip(tmp_path, capsys):
    out = tmp_path / "e.dien"
    assert main(["env", "gen", "--size", "12", "--p", "0.7", "--seed", "3", "--out", str(out)]) == 0
    env = L.load_environment(out)
    ref = L.gen_environment(env.region, 0.7, 3)
    assert np.array_equal(env.J, ref.J)


def test_env_gen_with_catalyst(tmp_path):
    out = tmp_path / "c.dien"
    assert main(["env", "gen", "--size", "30", "--p", "1", "--catalyst", "1.5708,0.8,0,0",
                 "--h", "0.3", "--out", str(out)]) == 0
    assert L.load_environment(out).n_carved > 0


@pytest.mark.parametrize("action", ["curve", "critical", "lambda2", "opt-theta"])
def test_wulff_actions(action, tmp_path):
    out = tmp_path / "w.csv"
    argv = ["wulff", action, "--tau", "iso:1", "--beta", "1.5", "--mstar", "0.99",
            "--grid", "6", "--out", str(out)]
    assert main(argv) == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) >= 2


def test_oracle_gibbs_and_gap(capsys):
    assert main(["oracle", "gibbs", "--size", "2", "--beta", "1.0", "--h", "0.2"]) == 0
    res = _json(capsys)
    assert main(["oracle", "gap", "--size", "2", "--beta", "1.0", "--h", "0.2"]) == 0
    gap = _json(capsys)
    assert gap["gap"] > 0
    assert res


def test_oracle_too_large_is_an_error(capsys):
    assert main(["oracle", "gibbs", "--size", "8", "--beta", "1.0"]) == 2
    assert "capped" in capsys.readouterr().err


def test_fk_actions(capsys):
    assert main(["fk", "escheck", "--size", "2", "--beta", "0.8", "--h", "0.3"]) == 0
    assert _json(capsys)
    assert main(["fk", "sw", "--size", "2", "--beta", "0.8", "--sweeps", "200"]) == 0
    assert _json(capsys)
    assert main(["fk", "tau", "--beta", "1.0", "--L", "2", "--H", "2", "--N", "2"]) == 0
    assert _json(capsys)["tau"] == pytest.approx(0.4926086727587128, rel=1e-9)


def test_glauber_run_writes_snapshots(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["glauber", "run", "--size", "6", "--beta", "1.0", "--h", "0.5", "--tcap", "4",
                 "--snapshot-every", "1", "--out", str(out)]) == 0
    snaps = sorted(out.glob("snap_*.npz"))
    assert len(snaps) >= 4 and (out / "final.npz").exists()
    sigma, _ = G.load_spin_config(out / "final.npz")
    assert set(np.unique(sigma.site_values())) <= {-1, 1}


def test_glauber_cftp_gap_hit(capsys):
    assert main(["glauber", "cftp", "--size", "3", "--beta", "1.0", "--h", "0.2"]) == 0
    assert _json(capsys)
    assert main(["glauber", "gap", "--size", "2", "--beta", "1.0", "--method", "exact"]) == 0
    assert _json(capsys)
    assert main(["glauber", "hit", "--size", "4", "--beta", "0.5", "--h", "1.0", "--tcap", "50"]) == 0
    assert _json(capsys)


def test_cg_on_snapshot(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["glauber", "run", "--size", "24", "--beta", "1.5", "--h", "0.2", "--bc", "plus",
                 "--start", "plus", "--tcap", "2", "--out", str(out)]) == 0
    capsys.readouterr()
    snap = str(out / "final.npz")
    for action in ("classify", "labels"):
        assert main(["cg", action, "--snapshot", snap, "--K", "3", "--mstar", "0.9",
                     "--beta", "1.5"]) == 0
        assert _json(capsys)
    assert main(["cg", "flow", "--snapshot", snap, "--K", "1", "--N", "12", "--mstar", "0.9",
                 "--beta", "1.5", "--b1", "0.2", "--b2", "1.0"]) == 0
    assert _json(capsys)


def test_exp_from_toml(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('kind = "nucleate"\nsize = 8\nbeta = 0.6\nh = [1.0]\nseeds = 2\n'
                   't_cap = 20.0\nbootstrap = 20\n')
    out = tmp_path / "o"
    assert main(["exp", "nucleate", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "runs.jsonl").exists()


def test_bad_parameter_exit_code(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('kind = "nucleate"\nbeta = -1.0\n')
    assert main(["exp", "nucleate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
