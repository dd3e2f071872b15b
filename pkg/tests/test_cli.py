import csv
import json
import subprocess
import sys

import pytest

from urllc_alloc.cli import main

SMALL = {"scenario": {"n_sensors": 6, "n_users": 2}, "sim": {"seed": 3}, "sweep": {"populations": [[4, 1], [6, 2]]}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        first = fh.readline()
        assert first.startswith("# manifest=")
        return list(csv.DictReader(fh))


def test_generate_solve_validate_round_trip(tmp_path, config):
    out = str(tmp_path / "run")
    assert main(["generate", "--config", config, "--out", out]) == 0
    sc = json.loads((tmp_path / "run" / "scenario.json").read_text())
    assert len(sc["sensors"]) == 6 and len(sc["users"]) == 2
    assert main(["solve", "--config", config, "--out", out]) == 0
    sol = json.loads((tmp_path / "run" / "solution.json").read_text())
    assert sol["report"]["status"] == "optimal"
    assert sol["report"]["z_star_w"] <= 1e-9
    assert main(["validate", "--config", config, "--out", out, "--trials", "20000",
                 "--relaxed-eps", "1e-3"]) == 0
    val = json.loads((tmp_path / "run" / "validation.json").read_text())
    assert val["report"]["passed"] is True
    man = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
    assert man["command"] == "validate" and man["wall_clock_s"] >= 0


def test_solve_is_byte_identical(tmp_path, config):
    for d in ("a", "b"):
        assert main(["solve", "--config", config, "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "solution.json").read_bytes()
    b = (tmp_path / "b" / "solution.json").read_bytes()
    assert a == b


def test_seed_changes_scenario(tmp_path, config):
    main(["generate", "--config", config, "--out", str(tmp_path / "a")])
    main(["generate", "--config", config, "--seed", "4", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "scenario.json").read_bytes() != (tmp_path / "b" / "scenario.json").read_bytes()


@pytest.mark.parametrize("strategy", ["fixed-na", "opt-bw"])
def test_solve_baseline_strategy(tmp_path, config, strategy):
    assert main(["solve", "--config", config, "--strategy", strategy, "--out", str(tmp_path)]) == 0
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["report"]["strategy"] == strategy


def test_unknown_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"system": {"w_maxx": 1.0}}))
    assert main(["generate", "--config", str(path), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError"


def test_unknown_section_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"solver": {}}))
    assert main(["generate", "--config", str(path), "--out", str(tmp_path)]) == 2


def test_infeasible_exits_3_with_binding(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, "system": {"psi": 3}}))
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "InfeasibleError"
    assert err["binding"] in ("ul-power", "dl-power", "bandwidth")


def test_latency_infeasible_exits_3(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**SMALL, "system": {"d_max": 2.5e-4}}))
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["binding"] == "latency"


def test_compare_lists_every_strategy(tmp_path, config):
    assert main(["compare", "--config", config, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert [r["strategy"] for r in rows] == ["joint", "eq-bw", "fixed-na", "fixed-nt", "opt-bw", "opt-na", "opt-nt"]
    joint = rows[0]
    assert float(joint["gap_dB"]) == 0.0
    for r in rows[1:]:
        if r["status"] == "ok":
            assert float(r["gap_dB"]) >= -1e-9


def test_feasibility_changes_sign_once(tmp_path, config):
    assert main(["feasibility", "--config", config, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "feasibility.csv")
    by_na = {}
    for r in rows:
        by_na.setdefault(int(r["n_a"]), []).append((int(r["n_t"]), float(r["z_star_W"]), int(r["n_t_min"])))
    for series in by_na.values():
        signs = [z <= 0 for _, z, _ in series]
        flips = sum(a != b for a, b in zip(signs, signs[1:]))
        assert flips == 1
        first_ok = next(n for n, z, _ in series if z <= 0)
        assert first_ok == series[0][2]


def test_sweeps_write_unit_headers(tmp_path, config):
    assert main(["sweep-na", "--config", config, "--out", str(tmp_path)]) == 0
    assert main(["sweep-pop", "--config", config, "--out", str(tmp_path)]) == 0
    na = read_csv(tmp_path / "sweep_na.csv")
    assert "total_power_dBm" in na[0] and "bandwidth_MHz" in na[0]
    pop = read_csv(tmp_path / "sweep_pop.csv")
    assert [(r["n_sensors"], r["n_users"]) for r in pop] == [("4", "1"), ("6", "2")]


def test_validate_rejects_mismatched_scenario(tmp_path, config):
    out = str(tmp_path)
    assert main(["solve", "--config", config, "--out", out]) == 0
    main(["generate", "--config", config, "--seed", "9", "--out", str(tmp_path / "other")])
    rc = main(["validate", "--out", out, "--scenario", str(tmp_path / "other" / "scenario.json"),
               "--trials", "100", "--relaxed-eps", "1e-3"])
    assert rc == 2


def test_module_entry_point(tmp_path, config):
    r = subprocess.run([sys.executable, "-m", "urllc_alloc", "generate", "--config", config,
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0
    assert (tmp_path / "scenario.json").exists()
