import csv
import json

import numpy as np
import pytest

from mimofair.cli import (EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, RunConfig, builtin_config,
                          list_scenarios, main)
from mimofair.errors import ConfigError


def read_rates(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_registry():
    names = list(list_scenarios())
    assert len(names) == len(set(names)) == 7
    assert "7cell-sectorcoop-pfs" in names


@pytest.mark.parametrize("name", list(list_scenarios()))
def test_registry_round_trip(name):
    d = builtin_config(name)
    again = RunConfig.from_dict(json.loads(json.dumps(d))).to_dict()
    assert again == d


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        builtin_config("nope")
    assert main(["--scenario", "nope", "--out", "unused"]) == EXIT_CONFIG


def test_fullcoop_pfs_symmetric(tmp_path):
    out = tmp_path / "run"
    assert main(["--scenario", "2cell-fullcoop-pfs", "--out", str(out)]) == EXIT_OK
    rows = read_rates(out / "rates.csv")
    assert len(rows) == 8
    assert list(rows[0]) == ["group_id", "x_km", "y_km", "cluster_id", "Q_k", "R_bits"]
    R = np.array([float(r["R_bits"]) for r in rows])
    assert np.allclose(R, R[::-1], rtol=1e-6)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] and summary["software"]["version"]
    assert summary["config"] == builtin_config("2cell-fullcoop-pfs")
    assert not (out / "validation.csv").exists()


def test_nocoop_hfs_equal(tmp_path):
    out = tmp_path / "run"
    assert main(["--scenario", "2cell-nocoop-hfs", "--out", str(out)]) == EXIT_OK
    R = np.array([float(r["R_bits"]) for r in read_rates(out / "rates.csv")])
    assert np.ptp(R) <= 1e-3 * R.mean()


def test_malformed_config_writes_nothing(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    out = tmp_path / "out"
    assert main(["--config", str(bad), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    cfg = builtin_config("2cell-nocoop-pfs")
    cfg["scenario"]["partition"] = [{"bs": [0], "groups": [0, 1]}]
    bad.write_text(json.dumps(cfg))
    assert main(["--config", str(bad), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()
    assert main(["--out", str(out)]) == EXIT_CONFIG


def test_weighted_mode_needs_weights(tmp_path):
    assert main(["--scenario", "2cell-nocoop-pfs", "--mode", "weighted",
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["--scenario", "2cell-nocoop-pfs", "--mode", "weighted", "--weights", "1,2,3,4",
                 "--out", str(tmp_path / "o")]) == EXIT_OK


def test_config_file_and_validation(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(builtin_config("2cell-nocoop-pfs")))
    out = tmp_path / "o"
    code = main(["--config", str(cfg), "--mc-validate", "--mc-draws", "40", "--mc-N", "1,2",
                 "--seed", "3", "--out", str(out)])
    assert code in (EXIT_OK, 4)
    lines = (out / "validation.csv").read_text().splitlines()
    assert len(lines) == 1 + 8 * 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["mc"] == {"enabled": True, "draws": 40, "N": [1, 2], "seed": 3}


def test_non_convergence_exit_code(tmp_path):
    cfg = builtin_config("2cell-nocoop-pfs")
    cfg["max_outer"] = 1
    cfg["gap_tol"] = 1e-12
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert main(["--config", str(path), "--out", str(out)]) == EXIT_SOLVER
    assert json.loads((out / "summary.json").read_text())["converged"] is False


def test_jobs_do_not_change_output(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--scenario", "2cell-nocoop-pfs", "--out", str(a)]) == EXIT_OK
    assert main(["--scenario", "2cell-nocoop-pfs", "--out", str(b), "--jobs", "2"]) == EXIT_OK
    assert (a / "rates.csv").read_bytes() == (b / "rates.csv").read_bytes()


def test_list_scenarios_flag(capsys):
    assert main(["--list-scenarios"]) == EXIT_OK
    assert "2cell-fullcoop-hfs" in capsys.readouterr().out
