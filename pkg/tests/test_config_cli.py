import json
from pathlib import Path

import numpy as np
import pytest

from qmc_feedback.cli import main
from qmc_feedback.config import (
    DEFAULT_HOMOGENEOUS,
    DEFAULT_TRACKING,
    build_family,
    build_problem,
    build_time_grid,
    config_hash,
    validate_config,
)
from qmc_feedback.errors import ConfigError

REPO = Path(__file__).resolve().parent.parent


def smoke_config(**overrides):
    cfg = {
        "model": {
            "n": 8, "T": 1.0, "nt": 8, "a0": 1.0, "cbar": 0.1, "qdec": 2.0,
            "smax": 8, "actuators": [[0.1, 0.45], [0.55, 0.9]], "q_obs": 1.0,
            "p_ter": 0.1, "scenario": "homogeneous",
        },
        "qmc": {"method": "shifted", "N_list": [17, 31], "s": 4, "R": 3, "seed": 3},
        "study": "qmc-rate",
        "params": {"reference_m": 8},
    }
    cfg.update(overrides)
    return cfg


# ----------------------------------------------------------------------------
# config validation
# ----------------------------------------------------------------------------

def test_unknown_top_level_key_rejected_by_name():
    with pytest.raises(ConfigError, match="bogus"):
        validate_config({"study": "points", "bogus": 1})


def test_unknown_model_key_rejected_by_name():
    cfg = smoke_config()
    cfg["model"]["typo_key"] = 3
    with pytest.raises(ConfigError, match="typo_key"):
        validate_config(cfg)


def test_missing_study_rejected():
    with pytest.raises(ConfigError, match="study"):
        validate_config({"model": {}})


def test_unknown_study_rejected():
    with pytest.raises(ConfigError, match="nonsense"):
        validate_config({"study": "nonsense"})


def test_bad_method_rejected():
    cfg = smoke_config()
    cfg["qmc"]["method"] = "sobol"
    with pytest.raises(ConfigError, match="sobol"):
        validate_config(cfg)


def test_bad_scenario_rejected():
    cfg = smoke_config()
    cfg["model"]["scenario"] = "steady"
    with pytest.raises(ConfigError, match="steady"):
        validate_config(cfg)


def test_config_hash_stable_and_sensitive():
    a = validate_config(smoke_config())
    b = validate_config(smoke_config())
    assert config_hash(a) == config_hash(b)
    c_raw = smoke_config()
    c_raw["qmc"]["seed"] = 4
    assert config_hash(validate_config(c_raw)) != config_hash(a)


def test_default_scenarios_build():
    for model in (DEFAULT_HOMOGENEOUS, DEFAULT_TRACKING):
        fam = build_family(model)
        data = build_problem(fam, model)
        grid = build_time_grid(model)
        assert fam.n == 64 and grid.nt == 64
        assert data.y0.shape == (64,)
        for t in (0.0, 0.5, 1.0):
            assert np.all(np.isfinite(data.g(t)))
    trk = build_problem(build_family(DEFAULT_TRACKING), DEFAULT_TRACKING)
    # terminal target consistent with the ramp and zero shifted initial state
    assert trk.gT == pytest.approx(trk.g(1.0))
    assert np.all(trk.y0 == trk.g(0.0))


# ----------------------------------------------------------------------------
# CLI behaviour
# ----------------------------------------------------------------------------

def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_invalid_key_exits_2(tmp_path, capsys):
    cfg = smoke_config()
    cfg["model"]["typo_key"] = 1
    rc = main(["run", "--config", write_cfg(tmp_path, cfg)])
    assert rc == 2
    assert "typo_key" in capsys.readouterr().err


def test_cli_missing_config_exits_2(capsys):
    assert main(["run"]) == 2
    assert main(["run", "--config", "/definitely/not/here.json"]) == 2


def test_cli_points_row_count(tmp_path):
    rc = main(["points", "--method", "lattice", "--N", "127", "--s", "4",
               "--out", str(tmp_path), "--deterministic"])
    assert rc == 0
    lines = (tmp_path / "points.csv").read_text().strip().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    rows = [ln for ln in lines if not ln.startswith("#")]
    assert any("kind=lattice" in c for c in comments)
    assert rows[0] == "k,x1,x2,x3,x4"
    assert len(rows) == 1 + 127


def test_cli_qmc_rate_smoke_monotone(tmp_path):
    cfg = smoke_config(out=str(tmp_path / "out"))
    rc = main(["run", "--config", write_cfg(tmp_path, cfg), "--deterministic",
               "--threads", "1"])
    assert rc == 0
    lines = (tmp_path / "out" / "qmc-rate.csv").read_text().strip().splitlines()
    rows = [ln.split(",") for ln in lines if not ln.startswith("#")][1:]
    errs = [float(r[1]) for r in rows]
    assert len(errs) == 2
    assert errs[1] < errs[0]


def test_cli_deterministic_byte_identical(tmp_path):
    cfg1 = smoke_config(out=str(tmp_path / "o1"))
    cfg2 = smoke_config(out=str(tmp_path / "o2"))
    p1 = write_cfg(tmp_path, cfg1, "c1.json")
    p2 = write_cfg(tmp_path, cfg2, "c2.json")
    assert main(["run", "--config", p1, "--deterministic", "--threads", "1"]) == 0
    assert main(["run", "--config", p2, "--deterministic", "--threads", "2"]) == 0
    a = (tmp_path / "o1" / "qmc-rate.csv").read_text().splitlines()
    b = (tmp_path / "o2" / "qmc-rate.csv").read_text().splitlines()
    # config-hash lines differ only through the out path, which is not hashed
    assert a == b


def test_cli_cbc_subcommand(tmp_path, capsys):
    rc = main(["cbc", "--N", "31", "--s", "3", "--out", str(tmp_path),
               "--deterministic"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "z=" in out
    rows = [ln for ln in (tmp_path / "cbc.csv").read_text().splitlines()
            if not ln.startswith("#")]
    assert len(rows) == 1 + 3


def test_cli_riccati_and_simulate(tmp_path):
    model = dict(smoke_config()["model"])
    cfg = {"model": model, "qmc": {"s": 4, "seed": 0}, "study": "riccati-check",
           "out": str(tmp_path / "out")}
    path = write_cfg(tmp_path, cfg)
    assert main(["riccati", "--config", path, "--out", str(tmp_path / "out"),
                 "--deterministic"]) == 0
    lines = (tmp_path / "out" / "riccati.csv").read_text().splitlines()
    rows = [ln for ln in lines if not ln.startswith("#")]
    assert rows[0].startswith("t,pi_fro")
    assert len(rows) == 1 + 8 + 1  # header + nt+1 nodes

    traj_path = tmp_path / "out" / "traj.csv"
    assert main(["simulate", "--config", path, "--sigma", "0.2,-0.1",
                 "--dump-trajectory", str(traj_path), "--deterministic"]) == 0
    rows = [ln for ln in traj_path.read_text().splitlines() if not ln.startswith("#")]
    assert rows[0].startswith("t,y_1")
    assert rows[0].endswith("u_1,u_2")
    assert len(rows) == 1 + 9


def test_cli_run_riccati_check_study(tmp_path):
    model = dict(smoke_config()["model"])
    cfg = {"model": model, "qmc": {"s": 2, "seed": 0}, "study": "riccati-check",
           "out": str(tmp_path / "out")}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--deterministic"]) == 0
    text = (tmp_path / "out" / "riccati-check.csv").read_text()
    assert "rel_error" in text


def test_cli_run_oracle_check_study(tmp_path):
    model = dict(smoke_config()["model"])
    cfg = {"model": model, "qmc": {"s": 2, "seed": 0}, "study": "oracle-check",
           "out": str(tmp_path / "out")}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--deterministic"]) == 0
    text = (tmp_path / "out" / "oracle-check.csv").read_text()
    assert "kkt_residual" in text
    kkt = float([ln for ln in text.splitlines() if ln.startswith("kkt_residual")][0]
                .split(",")[1])
    assert kkt <= 1e-10


def test_cli_mc_rate_writes_own_file(tmp_path):
    cfg = smoke_config(out=str(tmp_path / "out"), study="mc-rate")
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--deterministic",
                 "--threads", "1"]) == 0
    assert (tmp_path / "out" / "mc-rate.csv").exists()
    assert not (tmp_path / "out" / "qmc-rate.csv").exists()


def test_cli_points_study_kind(tmp_path):
    cfg = {"qmc": {"method": "mc", "N": 50, "s": 3, "seed": 1},
           "study": "points", "out": str(tmp_path / "out")}
    assert main(["run", "--config", write_cfg(tmp_path, cfg), "--deterministic"]) == 0
    rows = [ln for ln in (tmp_path / "out" / "points.csv").read_text().splitlines()
            if not ln.startswith("#")]
    assert len(rows) == 1 + 50


def test_shipped_configs_validate():
    for name in ("homogeneous.json", "tracking.json", "truncation.json",
                 "derivative-decay.json"):
        raw = json.loads((REPO / "configs" / name).read_text())
        cfg = validate_config(raw)
        assert cfg.study in ("qmc-rate", "riccati-check", "truncation",
                             "derivative-decay")
