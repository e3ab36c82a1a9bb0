import csv
import hashlib
import json
import math

import numpy as np
import pytest

from satebd import cli, evolve
from satebd.config import RunConfig, config_hash, preset
from satebd.errors import ConfigError

TINY = [
    "--set", 'geometry={"left_sites": 4, "right_sites": 4, "cutoff": 2}',
    "--set", "N=2", "--set", "chi=[8]", "--set", "dt=0.05", "--set", "t_total=2.0",
]


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]} if rows else {}


def test_config_roundtrip(tmp_path):
    cfg = preset("production").with_overrides(**{"params.Omega": 1.5, "mode": "kicked",
                                                 "p_k": [0.0, 1.0]})
    assert cfg.to_dict()["params"]["U_bb"] == "inf"
    path = tmp_path / "c.json"
    cfg.save(path)
    back = RunConfig.load(path)
    assert back == cfg
    assert back.dumps() == cfg.dumps()
    assert config_hash(back) == config_hash(cfg)
    assert math.isinf(back.model_params().U_bb)


@pytest.mark.parametrize("change", [
    {"version": 7}, {"N": 31}, {"chi": []}, {"dt": 0.03, "t_total": 1.0}, {"mode": "x"},
    {"code_path": "fast"}, {"checkpoint_every": 3}, {"params.Omega": "big"},
    {"sweep": {"axis": "J", "values": [1]}}, {"geometry.cutoff": 3},
])
def test_config_rejects(change):
    with pytest.raises(ConfigError):
        preset("production").with_overrides(**change)


def test_config_requires_version():
    d = preset("smoke").to_dict()
    del d["version"]
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d | {"version": 1, "bogus": 1})


def test_exit_code_config_error(capsys):
    assert cli.main(["config", "--set", "N=99"]) == cli.EXIT_CONFIG
    assert cli.main(["config", "--config", "/nonexistent.json"]) == cli.EXIT_CONFIG
    assert cli.main(["config"]) == 0
    assert json.loads(capsys.readouterr().out)["version"] == 1


def test_ground_energy_and_determinism(tmp_path, capsys):
    args = ["ground", "--set", "params.U_bb=4.0",
            "--set", 'geometry={"left_sites": 2, "right_sites": 2, "cutoff": 3}', "--set", "N=2"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    a = (tmp_path / "a" / "ground.zip").read_bytes()
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert a == (tmp_path / "a" / "ground.zip").read_bytes()
    summary = json.loads((tmp_path / "a" / "ground.json").read_text())
    assert summary["energy"] == pytest.approx(-0.8284, abs=1e-4)
    assert summary["snapshot_sha256"] == hashlib.sha256(a).hexdigest()
    args = ["ground", "--set", 'geometry={"left_sites": 2, "right_sites": 2, "cutoff": 2}',
            "--set", "N=1", "--out", str(tmp_path / "c")]
    assert cli.main(args) == 0
    assert json.loads((tmp_path / "c" / "ground.json").read_text())["energy"] == pytest.approx(-1.0, abs=1e-6)


def test_ground_nonconvergence_exit(tmp_path):
    args = ["ground", *TINY, "--set", "ground.max_sweeps=2", "--out", str(tmp_path)]
    assert cli.main(args) == cli.EXIT_CONVERGENCE


def test_evolve_zero_time_header_only(tmp_path):
    assert cli.main(["evolve", *TINY, "--set", "t_total=0.0", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "chi8_pk0.csv").read_text()
    assert text.splitlines() == ["t,N_R,I,norm,charge,eps_lambda,mol_occ,imp_occ"]


def test_evolve_matches_fermion_oracle(tmp_path):
    common = ["--preset", "smoke", "--set", "t_total=3.0", "--out", str(tmp_path)]
    assert cli.main(["evolve", *common]) == 0
    assert cli.main(["oracle", "--kind", "fermion", *common]) == 0
    tebd = read_csv(tmp_path / "chi20_pk0.csv")
    ferm = read_csv(tmp_path / "fermion_pk0.csv")
    assert np.allclose(tebd["t"], ferm["t"])
    assert np.max(np.abs(tebd["N_R"] - ferm["N_R"])) < 1e-3
    # every artifact embeds its config and hashes
    summary = json.loads((tmp_path / "chi20_pk0.json").read_text())
    cfg = RunConfig.from_dict(summary["config"])
    assert summary["config_sha256"] == config_hash(cfg)
    body = (tmp_path / "chi20_pk0.csv").read_bytes()
    assert summary["csv_sha256"] == hashlib.sha256(body).hexdigest()


def test_evolve_from_snapshot_and_rerun_reproduces(tmp_path):
    out = str(tmp_path)
    assert cli.main(["ground", *TINY, "--out", out]) == 0
    assert cli.main(["evolve", *TINY, "--out", out, "--snapshot", str(tmp_path / "ground.zip")]) == 0
    first = (tmp_path / "chi8_pk0.csv").read_bytes()
    cfg_file = tmp_path / "embedded.json"
    cfg_file.write_text(json.dumps(json.loads((tmp_path / "chi8_pk0.json").read_text())["config"]))
    assert cli.main(["evolve", "--config", str(cfg_file), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "chi8_pk0.csv").read_bytes() == first
    bad = ["evolve", *TINY, "--set", "N=3", "--out", out, "--snapshot", str(tmp_path / "ground.zip")]
    assert cli.main(bad) == cli.EXIT_CONFIG


def test_resume_is_bit_identical(tmp_path, monkeypatch):
    args = [*TINY, "--set", "checkpoint_every=10", "--set", "sample_every=5",
            "--set", "params.Omega=1.0"]
    assert cli.main(["evolve", *args, "--out", str(tmp_path / "full")]) == 0
    reference = (tmp_path / "full" / "chi8_pk0.csv").read_bytes()

    class Interrupted(Exception):
        pass

    real_run = evolve.run

    def interrupted_run(state, plan, config, observer=None, **kw):
        def stop(t, s):
            if t > 1.0:
                raise Interrupted
        return real_run(state, plan, config, stop, **kw)

    monkeypatch.setattr(cli.evolve, "run", interrupted_run)
    with pytest.raises(Interrupted):
        cli.main(["evolve", *args, "--out", str(tmp_path / "cut")])
    monkeypatch.setattr(cli.evolve, "run", real_run)
    ckpt = tmp_path / "cut" / "chi8_pk0.ckpt.zip"
    assert not (tmp_path / "cut" / "chi8_pk0.csv").exists()
    assert cli.main(["resume", str(ckpt), *args, "--out", str(tmp_path / "cut")]) == 0
    assert (tmp_path / "cut" / "chi8_pk0.csv").read_bytes() == reference
    assert cli.main(["resume", str(ckpt), *args, "--set", "dt=0.1",
                     "--out", str(tmp_path / "cut")]) == cli.EXIT_CONFIG


def test_truncation_abort_exit(tmp_path):
    args = [*TINY, "--set", "chi=[1]", "--set", "abort_eps=1e-12", "--out", str(tmp_path)]
    assert cli.main(["evolve", *args]) == cli.EXIT_TRUNCATION
    summary = json.loads((tmp_path / "chi1_pk0.json").read_text())
    assert summary["status"] == "truncation-dominated"


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    args = [*TINY, "--set", 'sweep={"axis": "Omega", "values": [0.0, 1.0, 2.0]}']
    assert cli.main(["sweep", *args, "--out", str(tmp_path / "s1"), "--workers", "1"]) == 0
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    assert cli.main(["sweep", *args, "--out", str(tmp_path / "s2")]) == 0
    t1 = (tmp_path / "s1" / "sweep.csv").read_bytes()
    assert t1 == (tmp_path / "s2" / "sweep.csv").read_bytes()
    rows = json.loads((tmp_path / "s1" / "sweep.json").read_text())["rows"]
    assert [r["value"] for r in rows] == [0.0, 1.0, 2.0]
    monkeypatch.setenv(cli.WORKERS_ENV, "zero")
    assert cli.main(["sweep", *args, "--out", str(tmp_path / "s3")]) == cli.EXIT_CONFIG


def test_sweep_empty_grid(tmp_path):
    args = [*TINY, "--set", 'sweep={"axis": "Omega", "values": []}', "--out", str(tmp_path)]
    assert cli.main(["sweep", *args]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", *TINY, "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_sweep_point_configs():
    cfg = preset("production")
    assert cli.sweep_point_config(cfg, "n", 0.5).N == 15
    assert cli.sweep_point_config(cfg, "U", 4.0).model_params().U_bb == 4.0
    assert cli.sweep_point_config(cfg, "p_k", 1.0).kicks() == [1.0]
    assert cli.sweep_point_config(cfg, "Omega", 2).model_params().Omega == 2.0


def test_oracle_fermion_filled_band(tmp_path):
    args = ["oracle", "--kind", "fermion", *TINY, "--set", "N=4", "--set", "mode=kicked",
            "--set", f"p_k=[0.0, {np.pi / 2}]", "--out", str(tmp_path)]
    assert cli.main(args) == 0
    a = read_csv(tmp_path / "fermion_pk0.csv")
    b = read_csv(tmp_path / "fermion_pk1.5708.csv")
    assert np.max(np.abs(a["N_R"] - b["N_R"])) < 1e-6
    assert np.allclose(a["charge"], 4.0, atol=1e-12)


def test_oracle_transmission_scan(tmp_path):
    args = ["oracle", "--kind", "transmission", "--n-k", "5", "--set", "params.Omega=4.0",
            "--out", str(tmp_path)]
    assert cli.main(args) == 0
    rows = json.loads((tmp_path / "transmission.json").read_text())["rows"]
    mid = rows[2]
    assert mid["k"] == pytest.approx(np.pi / 2)
    assert mid["T_wavepacket"] < 0.01 and mid["T_closed_form"] == 0.0
    for r in rows:
        assert abs(r["T_wavepacket"] - r["T_closed_form"]) < 0.02
