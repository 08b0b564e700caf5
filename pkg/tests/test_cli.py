import json
from pathlib import Path

import pytest

from allflow import cli

from conftest import case_text


@pytest.fixture(scope="module")
def twobus_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cases") / "twobus.json"
    p.write_text(case_text("twobus"))
    return str(p)


@pytest.fixture(scope="module")
def brazil7_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cases") / "brazil7.json"
    p.write_text(case_text("brazil7"))
    return str(p)


def read_all_outputs(out_dir) -> dict[str, bytes]:
    return {
        p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir())
    }


def test_validate_ok(twobus_path, capsys):
    assert cli.main(["validate", "--case", twobus_path]) == 0
    out = capsys.readouterr().out
    assert "2 buses" in out


def test_validate_missing_file(capsys):
    assert cli.main(["validate", "--case", "/nonexistent/case.json"]) == 2


def test_validate_bad_case(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    doc = json.loads(case_text("twobus"))
    doc["buses"][0]["kind"] = "load"
    del doc["buses"][0]["voltage_setpoint"]
    del doc["buses"][0]["angle_setpoint"]
    bad.write_text(json.dumps(doc))
    assert cli.main(["validate", "--case", str(bad)]) == 2


def test_run_two_bus_fixture(twobus_path, tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main([
        "run", "--case", twobus_path, "--gamma", "1.0", "--vwind", "1.0",
        "--out", str(out), "--seed", "0",
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    (cell,) = summary["cells"]
    assert cell["total_solutions"] == 2
    assert cell["real_solutions"] == 2
    assert cell["feasible"] == 1
    # the collapsed root fails the voltage band
    reasons = {r for rej in cell["rejected"] for r in rej["reasons"]}
    assert any(r.startswith("voltage-band") for r in reasons)

    scatter = (out / "scatter_gamma1_vw1.csv").read_text().splitlines()
    assert scatter[0] == "i_qr,Q_w,is_real,is_feasible"
    assert len(scatter) - 1 == cell["total_solutions"]
    assert sum(1 for ln in scatter[1:] if ln.endswith(",1")) == 1
    # wind columns are not applicable on a wind-free case
    assert scatter[1].startswith("nan,nan")

    grid = (out / "stability_grid.csv").read_text()
    assert "gamma=1" in grid

    dump = (out / "solutions_gamma1_vw1.txt").read_text().splitlines()
    assert len(dump) == cell["total_solutions"]
    assert dump[0].startswith("converged,")


def test_run_is_byte_deterministic(twobus_path, tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        code = cli.main([
            "run", "--case", twobus_path, "--gamma", "0.5,1.0",
            "--vwind", "1.0", "--out", str(out), "--seed", "7",
        ])
        assert code == 0
        outs.append(read_all_outputs(out))
    assert outs[0].keys() == outs[1].keys()
    for name in outs[0]:
        assert outs[0][name] == outs[1][name], f"{name} differs between runs"


def test_run_missing_case(tmp_path):
    assert cli.main([
        "run", "--case", "/nope.json", "--gamma", "1", "--vwind", "1",
        "--out", str(tmp_path / "x"),
    ]) == 2


def test_run_rejects_bad_grid(twobus_path, tmp_path):
    assert cli.main([
        "run", "--case", twobus_path, "--gamma", "-1", "--vwind", "1",
        "--out", str(tmp_path / "x"),
    ]) == 3


def test_solve_generic_cli_hits_cache(brazil7_path, brazil7_cache, capsys):
    _, cache_path = brazil7_cache
    code = cli.main([
        "solve-generic", "--case", brazil7_path, "--cache", cache_path,
        "--seed", "0",
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "start solutions" in out


def test_solve_generic_requires_wind(twobus_path, tmp_path):
    assert cli.main([
        "solve-generic", "--case", twobus_path,
        "--cache", str(tmp_path / "c.json"),
    ]) == 3


def test_run_seven_bus_full_grid(brazil7_path, brazil7_cache, tmp_path, capsys):
    _, cache_path = brazil7_cache
    out = tmp_path / "b7"
    code = cli.main([
        "run", "--case", brazil7_path,
        "--gamma", "0.5,1.0,1.5,2.0", "--vwind", "0.96,0.98,1.00",
        "--cache", cache_path, "--out", str(out), "--seed", "0",
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["cells"]) == 12
    for cell in summary["cells"]:
        assert cell["feasible"] <= cell["real_solutions"] <= cell["total_solutions"]
        assert cell["feasible"] >= 1
        stats = cell["path_stats"]
        assert stats["converged"] + stats["diverged"] + stats["stalled"] \
            == len(json.loads(Path(cache_path).read_text())["solutions"])
    scatters = list(out.glob("scatter_*.csv"))
    assert len(scatters) == 12
    for sc in scatters:
        rows = sc.read_text().splitlines()
        cell_total = summary["cells"][0]["total_solutions"]
        assert len(rows) - 1 == cell_total
    grid_rows = (out / "stability_grid.csv").read_text().splitlines()
    assert len(grid_rows) == 4  # header + three voltage rows
    modes = (out / "dominant_modes.csv").read_text().splitlines()
    assert modes[0].startswith("gamma,vw_mag")


def test_run_seven_bus_cached_deterministic(brazil7_path, brazil7_cache,
                                            tmp_path):
    _, cache_path = brazil7_cache
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        code = cli.main([
            "run", "--case", brazil7_path, "--gamma", "0.5",
            "--vwind", "1.00", "--cache", cache_path,
            "--out", str(out), "--seed", "0",
        ])
        assert code == 0
        outs.append(read_all_outputs(out))
    for name in outs[0]:
        assert outs[0][name] == outs[1][name], f"{name} differs"


def test_limits_file_override(twobus_path, tmp_path):
    limits = tmp_path / "limits.json"
    limits.write_text(json.dumps({"voltage_band": [1e-30, 1.5]}))
    out = tmp_path / "out"
    code = cli.main([
        "run", "--case", twobus_path, "--gamma", "1", "--vwind", "1",
        "--out", str(out), "--limits", str(limits),
    ])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    # widening the band admits the collapsed root as well
    (cell,) = summary["cells"]
    assert cell["feasible"] == 2


def test_cell_vocabulary_wording():
    from allflow.dynamics import EquilibriumRecord
    from allflow.param_sweep import ParameterPoint

    def record(verdict):
        return EquilibriumRecord(
            parameter_point=None, solution_index=0,
            solution=None, feasible=True, violated_limits=(),
            eigenvalues=None, verdict=verdict,
            stable=(verdict == "stable"), dominant_modes=(),
            damping_ratios=(),
        )

    def cell(records):
        return cli.CellReport(
            point=ParameterPoint.physical(1.0, 1.0),
            solutions=None, records=tuple(records), rejected=(),
        )

    assert cli.cell_vocabulary(cell([record("stable")] * 2)) \
        == "2 stable equilibria"
    assert cli.cell_vocabulary(cell([record("stable"), record("unstable")])) \
        == "1 stable equilibrium, 1 unstable equilibrium"
    assert cli.cell_vocabulary(cell([])) == "0 feasible"
    assert cli.cell_vocabulary(cell([record("marginal")])) \
        == "1 marginal equilibrium"


def test_emit_scatter_empty_solution_set(tmp_path):
    from allflow.homotopy import PathStats, Provenance, SolutionSet, TrackerConfig
    from allflow.param_sweep import ParameterPoint, SweepGrid
    from allflow.steady_poly import VariableMap

    point = ParameterPoint.physical(1.0, 1.0)
    empty = SolutionSet(
        solutions=(), path_stats=PathStats(0, 0, 0),
        provenance=Provenance("total-degree", 0, None, TrackerConfig()),
        system=None,
    )
    vmap = VariableMap(names=(), voltage={}, pv_reactive={},
                       wind_bus=None, wind={})
    report = cli.SweepReport(
        case_name="x", grid=SweepGrid((1.0,), (1.0,)), seed=0, vmap=vmap,
        cells=(cli.CellReport(point=point, solutions=empty, records=(),
                              rejected=()),),
    )
    path = cli.emit_scatter(report, point, tmp_path)
    assert path.read_text() == "i_qr,Q_w,is_real,is_feasible\n"


def test_console_entry_point(twobus_path):
    import subprocess, sys
    proc = subprocess.run(
        ["allflow", "validate", "--case", twobus_path],
        capture_output=True, text=True, timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    assert "2 buses" in proc.stdout


def test_validate_json_output(twobus_path, capsys):
    assert cli.main(["validate", "--case", twobus_path, "--json"]) == 0
    payload = json.loads(capsys.readouterr().out.splitlines()[0])
    assert isinstance(payload, list)
