import json

import numpy as np
import pytest

from lpmfg import cli
from lpmfg.config import ConfigError, load_config, parse_config, preset_names
from lpmfg.io import read_array, read_flow, read_triple, write_array, write_flow, write_triple
from lpmfg.measures import MeanFieldFlow, OccupationTriple

ZERO = """
name = "zero"
[model]
kind = "linear"
[model.linear]
state_cost = 1.0
terminal_linear = 1.0
[model.initial_law]
kind = "point_mass"
x0 = 0.5
[grid]
N = 4
M = {M}
K = 0
action_range = [0.0, 0.0]
[simulation]
n_paths = 200
substeps = 1
"""


def write_cfg(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_presets_parse():
    names = preset_names()
    assert {"inventory-default", "uncontrolled", "zero-dynamics", "single-action-diffusion"} <= set(names)
    for name in names:
        cfg = load_config(name)
        assert cfg.name == name


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match=r"unknown key\(s\) in \[grid\]: Q"):
        parse_config({"grid": {"Q": 3}})
    with pytest.raises(ConfigError, match="model.inventory"):
        parse_config({"model": {"inventory": {"capacityy": 1.0}}})


def test_bad_values_rejected():
    with pytest.raises(ConfigError, match="grid.M"):
        parse_config({"grid": {"M": 0}})
    with pytest.raises(ConfigError, match="integer"):
        parse_config({"grid": {"N": 2.5}})
    with pytest.raises(ConfigError, match="damping"):
        parse_config({"equilibrium": {"damping": 1.5}})
    with pytest.raises(ConfigError, match="neither a file nor a preset"):
        load_config("no-such-preset")


def test_zero_grid_exits_one_naming_field(tmp_path, capsys):
    code = cli.main(["solve", "--config", write_cfg(tmp_path, ZERO.format(M=0)), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "grid.M" in capsys.readouterr().err


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    rho = rng.random((4, 6))
    flow = MeanFieldFlow(rho / rho.sum(axis=1, keepdims=True))
    write_flow(tmp_path / "flow.csv", flow)
    assert np.array_equal(read_flow(tmp_path / "flow.csv", 3, 5).rho, flow.rho)
    triple = OccupationTriple(rng.random(6), rng.random((3, 6, 2)), rng.random((3, 2)))
    write_triple(tmp_path, triple, prefix="x_")
    back = read_triple(tmp_path, 3, 5, 1, prefix="x_")
    for a, b in ((triple.nu, back.nu), (triple.m, back.m), (triple.lambda_b, back.lambda_b)):
        assert np.array_equal(a, b)
    arr = np.array([1 / 3, np.pi, -1e-300])
    write_array(tmp_path / "a.csv", arr, ("i",))
    assert np.array_equal(read_array(tmp_path / "a.csv", (3,)), arr)


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg = load_config("zero-dynamics")
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(cli.OUT_ENV, raising=False)
    assert cli.output_dir(cfg, None).as_posix() == "lpmfg-out/zero-dynamics"
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.output_dir(cfg, None) == tmp_path / "env"
    assert cli.output_dir(cfg, str(tmp_path / "flag")) == tmp_path / "flag"


def test_zero_dynamics_crosscheck(tmp_path):
    out = tmp_path / "zd"
    assert cli.main(["all", "--config", "zero-dynamics", "--out", str(out)]) == 0
    row = dict(zip(*[line.split(",") for line in (out / "comparison.csv").read_text().splitlines()]))
    assert float(row["w1_terminal"]) == 0.0 and float(row["max_tv"]) == pytest.approx(0.0, abs=1e-12)
    assert float(row["cost_gap"]) == pytest.approx(0.0, abs=1e-12)


def test_uncontrolled_preset_two_iterations(tmp_path):
    out = tmp_path / "u"
    assert cli.main(["solve", "--config", "uncontrolled", "--out", str(out)]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["converged"] and meta["iterations"] <= 2


def test_crosscheck_from_artifacts_and_mismatch(tmp_path):
    small = write_cfg(tmp_path, ZERO.format(M=10), "small.toml")
    other = write_cfg(tmp_path, ZERO.format(M=12), "other.toml")
    out = tmp_path / "art"
    assert cli.main(["solve", "--config", small, "--out", str(out)]) == 0
    for f in ("flow.csv", "nu.csv", "m.csv", "lambda_b.csv", "trace.csv", "metadata.json"):
        assert (out / f).exists()
    assert cli.main(["crosscheck", "--config", small, "--from", str(out), "--out", str(tmp_path / "cc")]) == 0
    assert cli.main(["crosscheck", "--config", other, "--from", str(out), "--out", str(tmp_path / "bad")]) == 1


def test_validate_and_seed_override(tmp_path, capsys):
    assert cli.main(["validate", "--config", "inventory-default"]) == 0
    assert "model admissible" in capsys.readouterr().out
    small = write_cfg(tmp_path, ZERO.format(M=10))
    assert cli.main(["simulate", "--config", small, "--seed", "5", "--out", str(tmp_path / "s")]) == 0
    assert (tmp_path / "s" / "sim_summary.csv").read_text().splitlines()[1].split(",")[4] == "5"
    assert cli.main(["simulate", "--config", small, "--seed", "-1", "--out", str(tmp_path / "s")]) == 1


def test_inventory_default_solves(tmp_path):
    out = tmp_path / "inv"
    assert cli.main(["solve", "--config", "inventory-default", "--out", str(out)]) == 0
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["converged"] and meta["residual"] <= 1e-6
    assert meta["boundary_mass"] <= meta["boundary_mass_bound"]
    for f in ("flow.csv", "nu.csv", "m.csv", "lambda_b.csv", "trace.csv"):
        assert (out / f).stat().st_size > 0
