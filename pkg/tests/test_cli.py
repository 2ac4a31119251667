import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from teamsort.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, main
from teamsort.dist import TypeDistribution
from teamsort.dist import load_csv as load_dist_csv
from teamsort.equilibrium import EquilibriumSolution, solve_equilibrium
from teamsort.inference import EarningsProfile


def summary_of(path):
    return json.loads(path.with_name(path.name + ".summary.json").read_text())


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    f = {k: d / v for k, v in dict(
        eq="eq.json", sample="sample.csv", report="report.json", panel="panel.csv",
        dec="dec.json", earnings="earnings.csv", dist="dist.csv", cf="cf.json", figs="figs",
    ).items()}
    codes = {}
    codes["solve"] = main(["solve", "--dist", "uniform", "--nw", "2", "--cw", "1", "--out", str(f["eq"])])
    codes["sample"] = main(["sample", "--eq", str(f["eq"]), "--m", "2000", "--seed", "4", "--out", str(f["sample"])])
    codes["verify"] = main(["verify", "--eq", str(f["eq"]), "--sample", str(f["sample"]), "--grid", "64", "--out", str(f["report"])])
    codes["simulate"] = main(["simulate", "--eq", str(f["eq"]), "--sample", str(f["sample"]), "--out", str(f["panel"])])
    codes["decompose"] = main(["decompose", "--panel", str(f["panel"]), "--out", str(f["dec"])])
    EarningsProfile.from_equilibrium(EquilibriumSolution.load_json(f["eq"])).save_csv(f["earnings"])
    codes["infer"] = main(["infer", "--earnings", str(f["earnings"]), "--out", str(f["dist"])])
    codes["counterfactual"] = main(
        ["counterfactual", "--workers", "uniform", "--firms", "beta:2,1", "--teams", "200", "--out", str(f["cf"])]
    )
    codes["figures"] = main(["figures", "--eq", str(f["eq"]), "--seed", "1", "--out", str(f["figs"])])
    return f, codes


def test_all_subcommands_succeed(pipeline):
    _, codes = pipeline
    assert codes == {k: EXIT_OK for k in codes}


def test_solve_output(pipeline):
    f, _ = pipeline
    data = json.loads(f["eq"].read_text())
    assert "p_low" in data and "C" in data
    s = summary_of(f["eq"])
    assert s["status"] == "ok" and s["exit_code"] == 0 and s["existence"] == "ok"
    # summaries carry 12 significant digits
    assert s["p_low"] == float(f"{data['p_low']:.12g}")


def test_verify_report_passes(pipeline):
    f, _ = pipeline
    assert json.loads(f["report"].read_text())["pass"] is True


def test_decompose_identity(pipeline):
    f, _ = pipeline
    d = json.loads(f["dec"].read_text())
    assert abs(d["total"] - d["between"] - d["within"]) <= 1e-11
    assert len(summary_of(f["dec"])["coworker"]) == 6


def test_infer_round_trip(pipeline):
    f, _ = pipeline
    dist = load_dist_csv(f["dist"])
    p = np.linspace(0.02, 0.98, 200)
    assert np.max(np.abs(dist.inv(p) - p)) <= 1e-2
    assert summary_of(f["dist"])["C_w"] == 1.0


def test_counterfactual_summary(pipeline):
    f, _ = pipeline
    s = summary_of(f["cf"])
    assert s["stable"] is True and s["certification"] == "heuristic"


def test_figure1_band(pipeline):
    f, _ = pipeline
    eq = EquilibriumSolution.load_json(f["eq"])
    r = rows(f["figs"] / "figure1.csv")
    assert len(r) == 101
    assert {x["region"] for x in r} == {"Mz", "Mixed", "Mx"}
    for x in r:
        assert float(x["x_low"]) <= float(x["x_high"]) + 1e-12
    mixed = [x for x in r if x["region"] == "Mixed"]
    for x in mixed:
        z, lo = float(x["z"]), float(x["x_low"])
        assert lo * eq.x_high * z == pytest.approx(eq.C, rel=1e-9) or lo == pytest.approx(eq.x_low, abs=1e-9)


def test_figure2_endpoints_and_mixed(pipeline):
    f, _ = pipeline
    eq = EquilibriumSolution.load_json(f["eq"])
    r = rows(f["figs"] / "figure2.csv")
    pts = {(float(x["p_x1"]), float(x["p_x2"]), float(x["p_z"])) for x in r}
    assert (0.0, 1.0, 1.0) in pts and (1.0, 1.0, 0.0) in pts
    mixed = [float(x["loss"]) for x in r if x["branch"] == "Mixed"]
    assert mixed and max(abs(v - eq.C) for v in mixed) <= 1e-3 * eq.C


def test_illustrative_figure1(tmp_path):
    knots = tmp_path / "knots.csv"
    knots.write_text("p,I\n0,0\n0.025,0.05\n0.1,0.1\n0.45,0.4577894550883199\n0.8,0.8\n0.95,0.9\n1,1\n")
    eq = tmp_path / "eq.json"
    assert main(["solve", "--dist", f"csv:{knots}", "--check", "off", "--out", str(eq)]) == EXIT_OK
    assert main(["figures", "--eq", str(eq), "--nz", "21", "--out", str(tmp_path / "figs")]) == EXIT_OK
    (row,) = [x for x in rows(tmp_path / "figs" / "figure1.csv") if abs(float(x["z"]) - 0.8) <= 1e-9]
    assert float(row["x_low"]) == pytest.approx(0.1, abs=1e-9)
    assert float(row["x_high"]) == pytest.approx(0.8, abs=1e-9)


def test_determinism(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        assert main(["solve", "--dist", "beta:2,1", "--cw", "1", "--out", str(d / "eq.json")]) == EXIT_OK
        assert main(["sample", "--eq", str(d / "eq.json"), "--seed", "9", "--m", "500", "--out", str(d / "s.csv")]) == EXIT_OK
        assert main(["simulate", "--eq", str(d / "eq.json"), "--sample", str(d / "s.csv"), "--out", str(d / "p.csv")]) == EXIT_OK
        assert main(["figures", "--eq", str(d / "eq.json"), "--seed", "9", "--out", str(d / "figs")]) == EXIT_OK
        names = ["eq.json", "eq.json.summary.json", "s.csv", "p.csv", "figs/figure1.csv", "figs/figure2.csv"]
        outs.append([(d / n).read_bytes() for n in names])
    assert outs[0] == outs[1]


def test_invalid_distribution_exit_2_with_summary(tmp_path):
    out = tmp_path / "eq.json"
    assert main(["solve", "--dist", "uniform:0.1,1.1", "--out", str(out)]) == EXIT_INVALID
    s = summary_of(out)
    assert s["exit_code"] == EXIT_INVALID and s["status"] == "failed" and s["error"]
    assert not out.exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["sample", "--eq", "missing.json"],
        ["verify", "--eq", "missing.json"],
        ["solve", "--cw", "lots"],
        ["solve", "--nw", "1"],
        ["sample", "--eq", "EQ", "--tol-mix", "0"],
        ["solve", "--bogus"],
    ],
)
def test_validation_failures_exit_2(tmp_path, pipeline, argv):
    f, _ = pipeline
    argv = [str(f["eq"]) if a == "EQ" else a for a in argv]
    out = tmp_path / "x.out"
    assert main(argv + ["--out", str(out)]) == EXIT_INVALID
    assert summary_of(out)["exit_code"] == EXIT_INVALID


def test_certificate_failure_exit_3(tmp_path, pipeline):
    f, _ = pipeline
    out = tmp_path / "r.json"
    code = main(["verify", "--eq", str(f["eq"]), "--sample", str(f["sample"]), "--tol-gap", "1e-15", "--out", str(out)])
    assert code == EXIT_FAILED
    assert json.loads(out.read_text())["pass"] is False
    assert summary_of(out)["status"] == "failed"


def test_config_defaults_and_override(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[common]\nseed = 7\n\n[solve]\ndist = beta:2,1\ncw = 2\n")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["solve", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["solve", "--config", str(cfg), "--cw", "3", "--out", str(b)]) == EXIT_OK
    sa, sb = summary_of(a), summary_of(b)
    assert sa["seed"] == 7 and sa["C_w"] == 2.0 and sb["C_w"] == 3.0
    ref = solve_equilibrium(TypeDistribution.beta(2, 1), check="off")
    assert sa["p_low"] == pytest.approx(ref.p_low, abs=1e-11)


def test_config_unknown_key_exit_2(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[solve]\ncolour = red\n")
    out = tmp_path / "eq.json"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_INVALID
    assert summary_of(out)["status"] == "failed"


def test_top_earnings_wage_constant(tmp_path, pipeline):
    f, _ = pipeline
    out = tmp_path / "eq.json"
    code = main(["solve", "--dist", "uniform", "--cw", "top-earnings", "--earnings", str(f["earnings"]), "--out", str(out)])
    assert code == EXIT_OK and summary_of(out)["C_w"] == 1.0
    assert main(["solve", "--cw", "top-earnings", "--out", str(out)]) == EXIT_INVALID


def test_infer_ode_method(tmp_path, pipeline):
    f, _ = pipeline
    out = tmp_path / "d.csv"
    assert main(["infer", "--earnings", str(f["earnings"]), "--method", "ode", "--eps", "1e-6", "--out", str(out)]) == EXIT_OK
    assert summary_of(out)["u0"] == 1.0
    assert main(["infer", "--earnings", str(f["earnings"]), "--method", "ode", "--eps", "0.1", "--out", str(out)]) == EXIT_INVALID


def test_three_worker_pipeline(tmp_path):
    eq = tmp_path / "eq.json"
    assert main(["solve", "--dist", "uniform", "--nw", "3", "--out", str(eq)]) == EXIT_OK
    assert main(["verify", "--eq", str(eq), "--m", "1500", "--out", str(tmp_path / "r.json")]) == EXIT_OK
    assert summary_of(tmp_path / "r.json")["grid_per_axis"] == 32
    assert main(["figures", "--eq", str(eq), "--out", str(tmp_path / "figs")]) == EXIT_OK


def test_oracle_three_value_example(tmp_path, capsys):
    assert main(["oracle", "--summary", str(tmp_path / "s.json")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "aggregate output 0.676000000000" in text
    assert "(0.1,0.1,0.4) (0.2,0.2,0.2) (0.4,0.4,0.1) output 0.672000000000" in text
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["aggregate_output"] == pytest.approx(0.676, abs=1e-12)


def test_console_script(tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "teamsort.cli", "oracle", "--summary", str(tmp_path / "s.json")],
        capture_output=True, text=True, check=False,
    )
    assert r.returncode == 0 and "0.676000000000" in r.stdout
