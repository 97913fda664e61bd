import csv
import json

import pytest

from policynet import cli
from policynet.reformulate import solve_design
from policynet.scenarios import illustrative

INFEASIBLE = {
    "horizon": 1, "mode": "centralized",
    "agents": [{"id": 1, "A": [[1.0]], "D": [[1.0]], "E": [[1.0]], "x_init": [0.0],
                "Xi": {"lb": -1, "ub": 1}, "Q": [[1.0]],
                # |u| <= 1 and |xi| <= 1 cannot push the state above 5
                "Hx": [[0.0, -1.0], [0.0, 0.0], [0.0, 0.0]],
                "Hu": [[0.0], [1.0], [-1.0]], "h": [-5.0, 1.0, 1.0]}],
}


def run(tmp_path, *args):
    out = tmp_path / "out"
    return cli.main([*args, "--out", str(out)]), out


def read_csv(path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_writes_solution_and_manifest(tmp_path):
    code, out = run(tmp_path, "solve", "--scenario", "illustrative", "--mode", "centralized")
    assert code == 0
    sol = json.loads((out / "solution.json").read_text())
    net, cfg = illustrative()
    assert sol["objective"] == pytest.approx(solve_design(net, cfg.with_mode("centralized")).objective)
    assert (out / "policies.json").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["subcommand"] == "solve" and man["modes"] == ["centralized"]
    assert "argv" in man and man["phases"]


def test_unknown_mode_and_empty_seeds(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", "--mode", "telepathic")
    assert code == cli.EXIT_CONFIG
    assert "usage" in capsys.readouterr().err
    code, _ = run(tmp_path, "compare", "--seeds", ",")
    assert code == cli.EXIT_CONFIG


def test_missing_and_infeasible_configs(tmp_path):
    code, _ = run(tmp_path, "solve", "--config", str(tmp_path / "absent.json"))
    assert code == cli.EXIT_CONFIG
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(INFEASIBLE))
    code, _ = run(tmp_path, "solve", "--config", str(path))
    assert code == cli.EXIT_INFEASIBLE


def test_compare_table(tmp_path):
    code, out = run(tmp_path, "compare", "--scenario", "bipartite", "--seeds", "2")
    assert code == 0
    rows = read_csv(out / "compare.csv")
    assert list(rows[0]) == ["seed", "mode", "objective", "solve_ms", "suboptimality"]
    assert len(rows) == 6
    for seed in ("0", "1"):
        obj = {r["mode"]: float(r["objective"]) for r in rows if r["seed"] == seed}
        assert obj["local_rect"] >= obj["partially_nested"] - 1e-6
        assert obj["partially_nested"] >= obj["centralized"] - 1e-6


def test_compare_is_stable(tmp_path):
    a, out_a = run(tmp_path / "a", "compare", "--scenario", "illustrative", "--seeds", "1")
    b, out_b = run(tmp_path / "b", "compare", "--scenario", "illustrative", "--seeds", "1")
    strip = lambda rows: [{k: v for k, v in r.items() if k != "solve_ms"} for r in rows]
    assert strip(read_csv(out_a / "compare.csv")) == strip(read_csv(out_b / "compare.csv"))


def test_supply_chain_without_uncertainty(tmp_path):
    vals = {}
    for mode in ("local", "centralized"):
        code, out = run(tmp_path / mode, "solve", "--scenario", "supply-chain", "--mode", mode,
                        "--theta", "0", "--T", "6")
        assert code == 0
        vals[mode] = json.loads((out / "solution.json").read_text())["objective"]
    assert vals["local"] == pytest.approx(vals["centralized"], rel=1e-9)


def test_admm_log(tmp_path):
    code, out = run(tmp_path, "admm", "--scenario", "supply-chain", "--T", "6", "--rho", "0.1")
    assert code == 0
    summary = json.loads((out / "admm.json").read_text())
    assert summary["converged"] and summary["gap"] <= 1e-6
    rows = read_csv(out / "admm_log.csv")
    assert list(rows[0]) == ["iter", "objective", "primal_res", "dual_res"]
    assert len(rows) == summary["iterations"]


def test_roll_and_certify(tmp_path):
    code, out = run(tmp_path / "r", "roll", "--scenario", "energy-hub", "--M", "2", "--T", "3",
                    "--seeds", "2")
    assert code == 0
    summary = json.loads((out / "roll_summary.json").read_text())
    assert len(summary["runs"]) == 2
    assert list(read_csv(out / "roll.csv")[0]) == ["seed", "mode", "agent", "stage", "cost"]
    code, out = run(tmp_path / "c", "certify", "--scenario", "illustrative", "--mode", "local",
                    "--samples", "20")
    assert code == 0
    assert json.loads((out / "certify.json").read_text())["dominates"]
    for r in read_csv(out / "certify.csv"):
        assert float(r["realized"]) <= float(r["certificate"]) + 1e-7


def test_export_lp(tmp_path):
    code, out = run(tmp_path, "export-lp", "--scenario", "illustrative", "--mode", "centralized")
    assert code == 0
    assert (out / "design.mps").read_text().startswith("NAME")


def test_seed_parsing():
    assert cli.parse_seeds("3") == [0, 1, 2]
    assert cli.parse_seeds("3,5,8") == [3, 5, 8]
    assert cli.parse_seeds("2:5") == [2, 3, 4]
    for bad in ("", "x", "4:2"):
        with pytest.raises(cli.ConfigError):
            cli.parse_seeds(bad)
    assert cli.parse_mode("Partially_Nested").value == "partially_nested"
