import csv

import numpy as np
import pytest
import yaml

from mpr_estimation import scenarios
from mpr_estimation.cli import main
from mpr_estimation.policy import table as table_io
from mpr_estimation.scenarios import ConfigError

SMALL_SOLVER = {"D": 20, "n_paths": 4, "path_length": 60, "seed": 1}


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def test_presets_carry_published_constants():
    for name, make in scenarios.PRESETS.items():
        scen = make()
        scenarios.check_preset(scen)
        assert scen.channel.alpha == 0.75 and scen.solver.beta == 0.9
        assert scen.channel.power_sets[0] == (0.0, 1 / 3, 2 / 3, 1.0)
    np.testing.assert_array_equal(scenarios.two_drones().A[:2, :2], [[1, 0.1], [0, 1]])


def test_pendulum_discretisation_matches_series():
    Ac = scenarios.pendulum_continuous() * 0.01
    term, total = np.eye(2), np.eye(2)
    for k in range(1, 30):
        term = term @ Ac / k
        total = total + term
    np.testing.assert_allclose(scenarios.pendulum_block(), total, atol=1e-10, rtol=0)
    assert np.abs(np.linalg.eigvals(scenarios.pendulum_block())).max() > 1


def test_scenario_round_trip():
    scen = scenarios.PRESETS["two_pendulums"]()
    text = scen.dumps()
    again = scenarios.loads(text)
    assert again.dumps() == text
    np.testing.assert_array_equal(again.model.A, scen.model.A)
    assert again.channel == scen.channel and again.solver == scen.solver


@pytest.mark.parametrize("doc,field", [
    ({"preset": "nope"}, "preset"),
    ({"system": {"Q": [[1]], "sensors": []}}, "system.A"),
    ({"preset": "two_drones", "channel": {"alpha": -1}}, "channel.alpha"),
    ({"preset": "two_drones", "solver": {"beta": 2}}, "solver.beta"),
    ({"preset": "two_drones", "sim": {"policy": {"kind": "magic"}}}, "sim.policy.kind"),
    ({"preset": "two_drones", "sim": {"horizon": 0}}, "sim.horizon"),
    ({"preset": "two_drones", "channel": {"s": [1.0]}}, "channel"),
    ({"preset": "two_drones", "solver": {"bogus": 1}}, "solver"),
])
def test_invalid_config_names_field(doc, field):
    with pytest.raises(ConfigError) as exc:
        scenarios.scenario_from_dict(doc)
    assert exc.value.field.startswith(field)


def test_cli_probs(tmp_path):
    assert main(["probs", "two_drones", "--out-dir", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "probs_3-3.csv")))
    assert rows[0] == ["gamma_bits", "probability"]
    assert [r[0] for r in rows[1:]] == ["00", "10", "01", "11"]
    assert sum(float(r[1]) for r in rows[1:]) == pytest.approx(1.0)
    assert len(list(tmp_path.glob("probs_*-*.csv"))) == 16


def test_cli_solve_then_simulate(tmp_path):
    cfg = write_yaml(tmp_path / "s.yaml", {"preset": "two_drones", "solver": SMALL_SOLVER,
                                           "sim": {"horizon": 300, "n_runs": 2,
                                                   "record_trace": True,
                                                   "policy": {"kind": "table"}}})
    out = tmp_path / "out"
    assert main(["solve", cfg, "--out-dir", str(out), "--mu", "0.2"]) == 0
    text = (out / "policy.txt").read_text()
    assert table_io.dumps(table_io.loads(text)) == text
    assert main(["simulate", cfg, "--out-dir", str(out),
                 "--policy-file", str(out / "policy.txt")]) == 0
    metrics = dict(line.split("=", 1) for line in (out / "metrics.txt").read_text().split())
    assert float(metrics["mean_trace_cov"]) > 0
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header == "step,trace_P,total_power,gamma_bits"


def test_cli_missing_policy_file(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "s.yaml", {"preset": "two_drones",
                                           "sim": {"policy": {"kind": "table",
                                                              "file": "missing.txt"}}})
    assert main(["simulate", cfg, "--out-dir", str(tmp_path)]) != 0
    assert "sim.policy.file" in capsys.readouterr().err


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "bad.yaml", {"preset": "two_drones",
                                             "channel": {"sigma2": -1}})
    assert main(["probs", cfg, "--out-dir", str(tmp_path)]) == 2
    assert "channel.sigma2" in capsys.readouterr().err
    assert main(["probs", str(tmp_path / "nothing.yaml")]) == 2


def test_cli_nonconvergence_exit_code(tmp_path):
    cfg = write_yaml(tmp_path / "s.yaml", {"preset": "two_drones",
                                           "solver": {**SMALL_SOLVER, "vi_max_iters": 2}})
    assert main(["solve", cfg, "--out-dir", str(tmp_path)]) == 3


def test_cli_stability_and_regions(tmp_path):
    assert main(["stability", "two_pendulums", "--out-dir", str(tmp_path),
                 "--riccati-csv"]) == 0
    report = (tmp_path / "stability.txt").read_text()
    assert "cond1" in report and "riccati_status" in report
    assert (tmp_path / "riccati_trace.csv").read_text().startswith("k,trace_P")
    cfg = write_yaml(tmp_path / "two.yaml", {
        "preset": "two_drones",
        "channel": {"power_sets": [[0.0, 1.0], [0.0, 1.0]]}})
    assert main(["regions", cfg, "--out-dir", str(tmp_path), "--grid", "7",
                 "--mu", "0.1"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "regions.csv")))
    assert len(rows) == 49
    # on two-level channels the closed-form regions agree with the greedy search
    for r in rows:
        flags = "".join("1" if k != "0" else "0" for k in r["greedy_levels"].split("-"))
        assert flags == r["region"]


def test_cli_sweep(tmp_path):
    assert main(["sweep", "two_pendulums", "--out-dir", str(tmp_path), "--mu-grid", "0,1",
                 "--policies", "simple_tx,simple_rc,sic_m4,nosic_m2",
                 "--horizon", "300", "--runs", "1"]) == 0
    for name in ("simple_tx", "simple_rc", "sic_m4", "nosic_m2"):
        rows = list(csv.DictReader(open(tmp_path / f"sweep_{name}.csv")))
        assert len(rows) == 2 and float(rows[0]["mean_power"]) <= float(rows[1]["mean_power"])
    assert main(["sweep", "two_pendulums", "--policies", "wat", "--out-dir",
                 str(tmp_path)]) == 2
