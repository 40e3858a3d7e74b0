import json
import math
import re

import jsonschema
import numpy as np
import pytest

from geoquad.dynamics import transfer_probability
from geoquad.exceptions import ConfigError
from geoquad.harness import (
    Axis,
    ExperimentReport,
    emit,
    from_mapping,
    load_config,
    load_json,
    run_experiment,
    run_metric,
    run_population_trace,
    run_pulse,
)
from geoquad.harness.config import DEFAULTS, KINDS
from geoquad.harness.experiments import Cell, cell_schedule, evaluate_transfer, run_cells
from geoquad.harness.plot import to_svg
from geoquad.harness.report import to_csv, to_json, validate_document
from geoquad.models import DQDParams, dqd3_model
from geoquad.pulse import solve_fast_quad

SMALL = {"solver": {"steps": 2000, "samples": 2001}}


def small(kind, **sections):
    doc = {"kind": kind, **SMALL}
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(doc.get(key), dict):
            doc[key] = {**doc[key], **value}
        else:
            doc[key] = value
    return from_mapping(doc)


# configuration


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_has_valid_defaults(kind):
    cfg = from_mapping({"kind": kind})
    assert cfg.kind == kind
    assert cfg.model == DEFAULTS[kind]["model"]


def test_toml_layout(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("""
kind = "custom"
seed = 7
angular_factor = "2pi"

[model]
name = "dqd3"
omega = 2.0

[pulse]
protocols = ["geometric"]
epsilon0 = 150.0
epsilon_f = 10.0

[solver]
steps = 3000
step_rule = "midpoint"

[noise]
t2 = [5.0]
dephasing = "B"

[output]
dir = "out"
stem = "mine"
formats = ["csv"]

[[axes]]
name = "t_f"
values = [1.0, 2.0]
""")
    cfg = load_config(path)
    assert cfg.params == {"u_tilde": 100.0, "omega": 2.0, "de_z": 1.0}
    assert (cfg.eps0, cfg.eps_f, cfg.seed, cfg.factor) == (150.0, 10.0, 7, 2 * math.pi)
    assert cfg.steps == 3000 and cfg.step_rule == "midpoint"
    assert cfg.t2 == (5.0,) and cfg.dephasing == "B"
    assert cfg.name == "mine" and cfg.formats == ("csv",)
    assert cfg.axis("t_f").grid().tolist() == [1.0, 2.0]


@pytest.mark.parametrize("doc,match", [
    ({"kind": "nope"}, "kind"),
    ({"kind": "custom", "pulse": {"bogus": 1}}, r"pulse\.bogus"),
    ({"kind": "custom", "model": {"name": "dqd9"}}, "unknown model"),
    ({"kind": "custom", "model": {"omega": float("nan")}}, "finite"),
    ({"kind": "fig2_two_level", "model": {"name": "dqd3"}, "pulse": {"protocols": ["linear"]}}, "missing"),
    ({"kind": "custom", "pulse": {"protocols": ["analytic"]}}, "pauli"),
    ({"kind": "custom", "pulse": {"protocols": ["sw_closed_form"]}}, "sw2"),
    ({"kind": "custom", "pulse": {"protocols": []}}, "protocol"),
    ({"kind": "custom", "pulse": {"t_f": -1.0}}, "t_f"),
    ({"kind": "custom", "solver": {"steps": 1}}, "steps"),
    ({"kind": "custom", "solver": {"step_rule": "euler"}}, "step rule"),
    ({"kind": "custom", "noise": {"t2": [0.0]}}, "T2"),
    ({"kind": "custom", "noise": {"mode": "rigid"}}, "noise mode"),
    ({"kind": "custom", "seed": -1}, "seed"),
    ({"kind": "custom", "angular_factor": "3"}, "angular_factor"),
    ({"kind": "custom", "output": {"formats": ["png"]}}, "format"),
    ({"kind": "custom", "axes": [{"name": "t_f", "values": [1]}, {"name": "t_f", "values": [2]}]},
     "duplicate"),
    ({"kind": "custom", "axes": [{"name": "speed", "values": [1]}]}, "speed"),
    ({"kind": "fig7_optimal_time", "axes": [{"name": "t2", "values": [1]},
                                            {"name": "t_f", "values": [60]}]}, "50"),
    ({"kind": "fig7_optimal_time", "axes": [{"name": "t2", "values": [1]}]}, "t2 and t_f"),
    ({"kind": "custom", "pulse": {"eps0": 1.0, "epsilon0": 2.0}}, "either"),
])
def test_config_errors(doc, match):
    with pytest.raises(ConfigError, match=match):
        from_mapping(doc)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = ")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(bad)


def test_axis_rules():
    assert Axis("t_f", 1, 100, 3, "log").grid().tolist() == pytest.approx([1, 10, 100])
    assert Axis("t_f", 2, 2, 1).grid().tolist() == [2.0]
    for kw in ({"min": 1, "max": 2, "count": 1}, {"min": 1, "max": 2}, {"min": 0, "max": 1, "count": 3,
               "spacing": "log"}, {"values": ()}, {"values": (1, math.inf)}, {"min": 0, "max": 1,
               "count": 2.5}, {"min": 0, "max": 1, "count": 3, "spacing": "cubic"}):
        with pytest.raises(ConfigError):
            Axis("x", **kw)
    with pytest.raises(ConfigError):
        Axis("", values=(1,))


def test_overrides_and_digest():
    cfg = from_mapping({"kind": "custom"})
    assert cfg.with_overrides(seed=None) is cfg
    other = cfg.with_overrides(seed=3)
    assert other.seed == 3 and other.digest() != cfg.digest()
    # output placement does not change the identity of a run
    assert cfg.with_overrides(out_dir="elsewhere", threads=3, formats=("csv",)).digest() == cfg.digest()
    with pytest.raises(ConfigError):
        cfg.with_overrides(step_rule="rk4")
    assert len(cfg.digest()) == 64


def test_steps_for():
    cfg = from_mapping({"kind": "fig7_optimal_time"})
    assert cfg.steps_for(50.0) == 20000
    assert cfg.steps_for(10.0) == 4000
    assert cfg.steps_for(0.1) == 200
    assert from_mapping({"kind": "custom"}).steps_for(1.0) == 20000


# reports


def sample_report():
    return ExperimentReport("demo", [("a", [1.0, 2.0]), ("b", [10.0, 20.0, 30.0])],
                            {"x": np.arange(6.0).reshape(2, 3), "y": np.full(6, 0.1)},
                            config={"k": 1}, metadata={"m": "v"})


def test_report_shape_checks():
    r = sample_report()
    assert r.shape == (2, 3) and r.columns["y"].shape == (2, 3)
    with pytest.raises(ValueError):
        ExperimentReport("demo", [("a", [1.0, 2.0])], {"x": [1.0, 2.0, 3.0]})
    with pytest.raises(ValueError):
        ExperimentReport("demo", [("a", [1.0, 2.0])], {"x": [1.0, math.nan]})
    ok = ExperimentReport("demo", [("a", [1.0, 2.0])], {"x": [1.0, math.nan]}, [False, True])
    assert ok.failed.tolist() == [False, True]


def test_csv_layout():
    text = to_csv(sample_report())
    lines = text.split("\r\n")
    assert lines[0] == "a,b,x,y"
    assert lines[1] == "1.0,10.0,0.0,0.1"
    assert lines[3] == "1.0,30.0,2.0,0.1"
    assert lines[4] == "2.0,10.0,3.0,0.1"
    assert text.endswith("\r\n") and len(lines) == 8


def test_empty_report_is_header_only():
    r = ExperimentReport("empty", [("a", [])], {"x": []})
    assert to_csv(r) == "a,x\r\n"
    assert ExperimentReport.from_document(json.loads(to_json(r))) == r


def test_json_round_trip(tmp_path):
    r = sample_report()
    r.children["part"] = ExperimentReport("part", [("c", [0.5])], {"z": [1.0]})
    r.failed[1, 2] = True
    r.columns["x"][1, 2] = math.nan
    paths = emit(r, tmp_path, "demo", ("csv", "json", "svg"))
    names = sorted(p.split("/")[-1] for p in paths)
    assert names == ["demo-part.csv", "demo-part.svg", "demo.csv", "demo.json", "demo.svg"]
    back = load_json(tmp_path / "demo.json")
    assert back == r
    assert math.isnan(back.columns["x"][1, 2]) and back.failed[1, 2]
    doc = json.loads((tmp_path / "demo.json").read_text())
    assert doc["schema_version"] == "1.0" and doc["columns"]["x"][5] is None
    assert "timing" not in doc


def test_schema_rejects_bad_documents():
    doc = sample_report().to_document()
    validate_document(doc)
    for mutate in (lambda d: d.pop("kind"), lambda d: d.update(extra=1),
                   lambda d: d.update(schema_version="2.0"),
                   lambda d: d["columns"]["x"].append(1.0), lambda d: d["failed"].pop()):
        bad = json.loads(json.dumps(doc))
        mutate(bad)
        with pytest.raises(jsonschema.ValidationError):
            validate_document(bad)


def test_heatmap_cells_and_determinism():
    r = sample_report()
    svg = to_svg(r)
    assert svg.startswith("<svg") or svg.startswith("<?xml")
    assert len(re.findall(r'class="cell"', svg)) == 6 * len(r.columns)
    assert to_svg(sample_report()) == svg


def test_line_plot():
    r = ExperimentReport("demo", [("t_f", [1.0, 10.0, 100.0])], {"e_a": [1e-1, 1e-3, 1e-6], "e_b": [1, 2, 3]})
    svg = to_svg(r)
    assert len(re.findall(r'class="series"', svg)) == 2


# experiments


def test_single_cell_matches_direct_call():
    cfg = small("custom", pulse={"protocols": ["geometric"]}, axes=[{"name": "t_f", "values": [7.0]}])
    report = run_experiment(cfg, threads=1)
    m = dqd3_model(DQDParams(100, 1, 1))
    p = transfer_probability(m, solve_fast_quad(m, 200, 0, 7.0, n_samples=2001), steps=2000)
    assert report.columns["fidelity_geometric"][0] == p
    assert report.columns["error_geometric"][0] == 1 - p


def test_threads_match_serial(tmp_path):
    cfg = small("custom", axes=[{"name": "t_f", "values": [1.0, 3.0, 5.0]}])
    serial = run_experiment(cfg, threads=1)
    pooled = run_experiment(cfg, threads=2)
    assert serial == pooled
    a = emit(serial, tmp_path / "a", "r", ("csv", "json"))
    b = emit(pooled, tmp_path / "b", "r", ("csv", "json"))
    for x, y in zip(a, b):
        assert open(x, "rb").read() == open(y, "rb").read()


def test_failed_cells_are_recorded():
    cfg = small("custom", model={"de_z": 0.0, "omega": 0.0},
                axes=[{"name": "t_f", "values": [1.0]}], pulse={"protocols": ["geometric"]})
    report = run_experiment(cfg, threads=1)
    assert report.failed.all()
    assert math.isnan(report.columns["fidelity_geometric"][0])
    assert report.metadata["failures"][0]["protocol"] == "geometric"
    json.loads(to_json(report))


def test_run_cells_orders_results():
    cells = [Cell(i, "linear", "dqd3", (("de_z", 1.0), ("omega", 1.0), ("u_tilde", 100.0)), 1.0,
                  200.0, 0.0, float(i + 1), steps=200) for i in range(3)]
    out = run_cells(evaluate_transfer, cells, threads=2)
    assert [ok for ok, _ in out] == [True] * 3
    serial = run_cells(evaluate_transfer, cells, threads=1)
    assert [r["fidelity"] for _, r in out] == [r["fidelity"] for _, r in serial]


def test_cell_schedule_offsets():
    base = Cell(0, "geometric", "dqd3", (("de_z", 1.0), ("omega", 1.0), ("u_tilde", 100.0)), 1.0,
                200.0, 0.0, 10.0, samples=1001)
    from dataclasses import replace

    shifted = cell_schedule(replace(base, offset=2.0, noise_mode="additive"))
    resynth = cell_schedule(replace(base, offset=2.0))
    assert shifted.eps0 == resynth.eps0 == 202.0
    assert shifted.delta == cell_schedule(base).delta
    assert resynth.delta != shifted.delta


def test_fig5_grid_axes():
    cfg = small("fig5_grids", axes=[{"name": "de_z", "values": [0.5, 1.0]},
                                    {"name": "omega", "values": [1.0, 2.0]}], pulse={"t_f": 5.0})
    r = run_experiment(cfg, threads=1)
    assert r.shape == (2, 2)
    assert set(r.columns) == {"error_geometric", "fidelity_geometric", "delta_geometric",
                              "error_linear", "fidelity_linear"}
    assert np.all(r.columns["error_geometric"] < r.columns["error_linear"])


def test_quasistatic_gaussian():
    cfg = small("fig6_quasistatic", noise={"sigma": 1.0, "samples": 3}, seed=5, pulse={"t_f": 5.0})
    r = run_experiment(cfg, threads=1)
    assert r.axis_names == ["sample"]
    np.testing.assert_array_equal(r.columns["offset"], run_experiment(cfg, threads=1).columns["offset"])
    nf = r.metadata["noiseless_fidelity"]["geometric"]
    np.testing.assert_allclose(r.columns["deviation_geometric"], r.columns["fidelity_geometric"] - nf)


def test_quasistatic_zero_offset():
    cfg = small("fig6_quasistatic", axes=[{"name": "delta_eps", "values": [0.0, 1.0]}], pulse={"t_f": 5.0})
    r = run_experiment(cfg, threads=1)
    assert r.columns["deviation_geometric"][0] == 0.0


def test_miscalibration_rejects_negative_coupling():
    cfg = small("fig8_miscal", axes=[{"name": "t_f", "values": [5.0]},
                                     {"name": "delta_omega", "values": [-4.0]}])
    with pytest.raises(ConfigError):
        run_experiment(cfg, threads=1)


def test_optimal_time_structure():
    cfg = small("fig7_optimal_time", axes=[{"name": "t2", "values": [2.0]},
                                           {"name": "t_f", "values": [1.0, 3.0, 6.0]}],
                pulse={"protocols": ["geometric"]})
    r = run_experiment(cfg, threads=1)
    sweep = r.children["sweep"]
    assert sweep.shape == (1, 3)
    j = int(np.argmax(sweep.columns["fidelity_geometric"][0]))
    assert r.columns["tf_opt_geometric"][0] == [1.0, 3.0, 6.0][j]
    assert r.columns["fidelity_opt_geometric"][0] == sweep.columns["fidelity_geometric"][0, j]


def test_population_trace():
    cfg = small("pop_trace", noise={"t2": [1e9, 2.0]}, pulse={"t_f": 3.0},
                solver={"record_every": 50})
    r = run_population_trace(cfg, threads=1)
    assert r.axis_names == ["t2", "t"]
    for p in ("linear", "geometric"):
        total = sum(r.columns[f"pop{i}_{p}"] for i in range(3))
        np.testing.assert_allclose(total, 1, atol=1e-10)
        np.testing.assert_allclose(r.columns[f"fidelity_{p}"][0], r.columns[f"fidelity_{p}_noiseless"][0],
                                   atol=1e-6)
        assert r.columns[f"fidelity_{p}"][1, -1] < r.columns[f"fidelity_{p}_noiseless"][1, -1]
    none = run_population_trace(small("pop_trace", noise={"t2": []}, pulse={"t_f": 3.0},
                                      solver={"record_every": 50}), threads=1)
    assert none.axis("t2").tolist() == [math.inf]


def test_metric_and_pulse_reports():
    cfg = small("custom", axes=[{"name": "eps", "values": [50.0, 100.0, 150.0]}])
    r = run_metric(cfg)
    assert r.columns["gap"][1] == pytest.approx(np.ptp(np.linalg.eigvalsh(
        dqd3_model(DQDParams(100, 1, 1)).h_at(100.0))[:2]))
    np.testing.assert_allclose(r.columns["sqrt_g"] ** 2, r.columns["g_epsilon_epsilon"])
    p = run_pulse(small("custom", pulse={"t_f": 5.0}))
    assert p.columns["eps_geometric"][0] == 200 and p.columns["eps_linear"][-1] == 0
    assert p.metadata["pulses"]["geometric"]["killing_rel_spread"] < 1e-3
    assert p.metadata["pulses"]["linear"]["delta"] is None
