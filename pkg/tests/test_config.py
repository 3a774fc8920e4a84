import hashlib
import json
import os

import numpy as np
import pytest
import yaml

from geodesic_ot.config import (GEODESIC_PRESETS, PRESET_NAMES, box_grid,
                                load_problem, preset, spec_from_dict)
from geodesic_ot.errors import ConfigError, KernelSyntaxError
from geodesic_ot.kernel_expr import parse_kernel
from geodesic_ot.pipeline import export_outputs, run_pipeline
from geodesic_ot.transport import plan_cost

E1_YAML = """
mode: geodesic
kernel: {expr: "1/(0.5+norm(x))", dim: 2}
cost: both
endpoints: {a: [-2, 1], b: [2, 0]}
solver: {tol: 1e-4, homotopy_steps: 21}
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


# -- loading ---------------------------------------------------------------

def test_load_geodesic_yaml(tmp_path):
    spec = load_problem(_write(tmp_path, "e1.yaml", E1_YAML))
    assert spec.mode == "geodesic" and spec.dim == 2
    assert spec.a == [-2.0, 1.0] and spec.b == [2.0, 0.0]
    assert spec.cost_kinds == ("energy", "length")
    assert spec.solver["homotopy_steps"] == 21 and spec.solver["mesh_n"] == 101


def test_load_json_and_echo_round_trip(tmp_path):
    spec = load_problem(_write(tmp_path, "e1.yaml", E1_YAML))
    path = _write(tmp_path, "e1.json", json.dumps(spec.to_dict(with_output=False)))
    back = load_problem(path)
    assert back.to_dict(with_output=False) == spec.to_dict(with_output=False)


def test_fraction_strings(tmp_path):
    text = """
mode: transport
kernel: "norm(x)+1/10"
sources: {points: [[0, 0], [1, 0]], weights: ["1/4", "3/4"]}
targets: {box: {lower: [2, 2], upper: ["5/2", 2], counts: [2, 1]}}
transport: {method: sinkhorn, epsilon: "1/200"}
"""
    spec = load_problem(_write(tmp_path, "t.yaml", text))
    assert spec.epsilon == 1 / 200
    np.testing.assert_array_equal(spec.sources.measure().weights, [0.25, 0.75])
    np.testing.assert_array_equal(spec.targets.measure().points, [[2, 2], [2.5, 2]])


@pytest.mark.parametrize("edit, path", [
    (lambda r: r.pop("kernel"), "kernel"),
    (lambda r: r.pop("mode"), "mode"),
    (lambda r: r["endpoints"].pop("b"), "endpoints.b"),
    (lambda r: r.update(cost="area"), "cost"),
    (lambda r: r["solver"].update(mesh_n="many"), "solver.mesh_n"),
    (lambda r: r["solver"].update(color=1), "solver.color"),
    (lambda r: r["endpoints"].update(a=[1, 2, 3]), "endpoints.a"),
    (lambda r: r.update(output={"format": "xml"}), "output.format"),
])
def test_validation_names_the_field(edit, path):
    raw = yaml.safe_load(E1_YAML)
    edit(raw)
    with pytest.raises(ConfigError) as info:
        spec_from_dict(raw)
    assert info.value.path == path


def test_transport_validation():
    raw = {"mode": "transport", "kernel": "1", "sources": {"points": [[0.0]]},
           "targets": {"points": [[1.0]]}, "transport": {"method": "sinkhorn"}}
    with pytest.raises(ConfigError) as info:
        spec_from_dict(raw)
    assert info.value.path == "transport.epsilon"
    raw["targets"] = {"box": {"lower": [0.0], "upper": [1.0]}}
    with pytest.raises(ConfigError) as info:
        spec_from_dict(raw)
    assert info.value.path == "targets.box.counts"


def test_kernel_syntax_errors_pass_through():
    raw = yaml.safe_load(E1_YAML)
    raw["kernel"]["expr"] = "1/(0.5+"
    with pytest.raises(KernelSyntaxError):
        spec_from_dict(raw)


def test_unparseable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_problem(_write(tmp_path, "bad.yaml", "mode: [unclosed"))


# -- presets and grids ----------------------------------------------------

def test_box_grid_corners_and_order():
    g = box_grid([0, 10], [1, 12], [2, 3])
    np.testing.assert_array_equal(g, [[0, 10], [0, 11], [0, 12], [1, 10], [1, 11], [1, 12]])


@pytest.mark.parametrize("name, a, b", [(n, c["a"], c["b"]) for n, c in GEODESIC_PRESETS.items()])
def test_geodesic_preset_endpoints(name, a, b):
    spec = preset(name)
    assert spec.mode == "geodesic" and spec.a == list(a) and spec.b == list(b)


@pytest.mark.parametrize("name, kernel, eps, n_src, n_tgt, corner", [
    ("E4", "1/(0.5+norm(x))", 1 / 200, 9, 9, [-3.0, -1.0]),
    ("E5", "sin(x1)-sin(x2)+3", 3 / 4, 9, 9, [-5.0, -4.0]),
    ("E6", "norm(x)+1/10", 1 / 250, 8, 8, [-0.9, 0.6, -0.9]),
    ("E7", "norm(x)+1/10", 1 / 5, 3, 100, [-2.5, 3.0]),
])
def test_transport_preset_fidelity(name, kernel, eps, n_src, n_tgt, corner):
    spec = preset(name)
    mu, nu = spec.sources.measure(), spec.targets.measure()
    assert spec.epsilon == eps
    assert len(mu) == n_src and len(nu) == n_tgt
    np.testing.assert_allclose(mu.points[0], corner)
    assert parse_equal(spec.kernel, kernel, spec.dim)


def parse_equal(e1, e2, dim):
    pts = np.random.default_rng(0).uniform(-2, 2, (20, dim))
    return np.allclose(parse_kernel(e1, dim).values(pts), parse_kernel(e2, dim).values(pts))


def test_e7_measures():
    spec = preset("E7")
    np.testing.assert_array_equal(spec.sources.measure().weights, [0.25, 0.5, 0.25])
    nu = spec.targets.measure()
    np.testing.assert_allclose(nu.weights, 1 / 100)
    np.testing.assert_allclose(nu.points[[0, 9, 90, 99]],
                               [[0.5, 0.75], [0.5, 2.75], [2.5, 0.75], [2.5, 2.75]])
    assert spec.method == "sinkhorn"
    with pytest.raises(ConfigError):
        preset("E7", method="assignment")


def test_e4_target_box():
    nu = preset("E4").targets.measure()
    np.testing.assert_allclose(nu.points[0], [2.25, 0.25])
    np.testing.assert_allclose(nu.points[-1], [3.25, 1.25])


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("E9")
    assert PRESET_NAMES == ("E1", "E2", "E3", "E4", "E5", "E6", "E7")


# -- pipeline and export ----------------------------------------------------

@pytest.fixture(scope="module")
def e1_bundle():
    return run_pipeline(preset("E1"))


def test_pipeline_geodesic(e1_bundle):
    b = e1_bundle
    assert b.costs["energy"] == pytest.approx(2.2917, rel=1e-3)
    assert b.costs["length"] == pytest.approx(2.1409, rel=1e-3)
    assert b.reports["energy"].is_minimizer
    assert b.equivalence["length_squared_minus_twice_energy"] <= 1e-3 * (1 + 2 * b.costs["energy"])
    assert b.equivalence["length_gap"] <= 1e-4 * (1 + b.costs["length"])


def test_export_files_and_manifest(tmp_path, e1_bundle):
    manifest = export_outputs(e1_bundle, str(tmp_path / "a"))
    names = {f["path"] for f in manifest["files"]}
    assert names == {"energy/trajectory.csv", "energy/homotopy_trace.csv", "energy/detU.csv",
                     "energy/speed.csv", "length/trajectory.csv", "length/homotopy_trace.csv",
                     "length/speed.csv", "summary.json"}
    for f in manifest["files"]:
        data = (tmp_path / "a" / f["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == f["sha256"] and len(data) == f["bytes"]
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["optimality"]["energy"]["is_minimizer"] is True


def test_export_is_byte_identical(tmp_path, e1_bundle):
    m1 = export_outputs(e1_bundle, str(tmp_path / "a"))
    m2 = export_outputs(e1_bundle, str(tmp_path / "b"))
    assert m1 == m2
    for f in m1["files"]:
        assert (tmp_path / "a" / f["path"]).read_bytes() == (tmp_path / "b" / f["path"]).read_bytes()


def test_yaml_summary(tmp_path, e1_bundle):
    export_outputs(e1_bundle, str(tmp_path), fmt="yaml")
    rec = yaml.safe_load((tmp_path / "summary.yaml").read_text())
    assert rec["geodesic"]["energy"]["alpha"] == 1.0


def test_pipeline_transport_small(tmp_path):
    spec = preset("E5", kind="length")
    b = run_pipeline(spec)
    assert b.totals["length"] == pytest.approx(29.615, abs=1e-3)
    plan = b.plans["length"]
    assert abs(plan_cost(b.matrices["length"], plan) - b.totals["length"]) <= 1e-12
    manifest = export_outputs(b, str(tmp_path))
    assert {f["path"] for f in manifest["files"]} == {
        "length/cost_matrix.csv", "length/cost_matrix.csv.json", "length/plan.csv", "summary.json"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["transport"]["length"]["total_cost"] == b.totals["length"]
    assert os.path.getsize(tmp_path / "length" / "plan.csv") > 0
