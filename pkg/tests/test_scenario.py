import json

import numpy as np
import pytest

from extremal_flow.multimap import FunctionMap
from extremal_flow.scenario import ScenarioError, benchmark, benchmark_names, benchmark_path, loads


def _base():
    return json.loads(benchmark_path("constant_segment").read_text())


def test_benchmarks_load():
    names = benchmark_names()
    assert {"constant_segment", "planar_square", "rotating_segment", "singleton", "bangbang_scalar"} <= set(names)
    for name in names:
        sc = benchmark(name)
        rep = sc.F.check_hypotheses()
        assert rep["bound_ok"] and rep["lipschitz_ok"] and rep["tube_in_domain"], name


def test_unknown_field_reports_line():
    text = json.dumps({**_base(), "colour": "red"}, indent=1)
    with pytest.raises(ScenarioError) as err:
        loads(text)
    line = next(i for i, s in enumerate(text.splitlines(), 1) if '"colour"' in s)
    assert err.value.line == line
    assert "colour" in str(err.value)


def test_nested_unknown_field():
    d = _base()
    d["parameters"]["speed"] = 1
    with pytest.raises(ScenarioError) as err:
        loads(json.dumps(d, indent=1))
    assert "speed" in str(err.value) and err.value.line is not None


def test_json_syntax_error_line():
    with pytest.raises(ScenarioError) as err:
        loads('{\n "name": "x",\n "kind": \n}')
    assert err.value.line == 4


def test_kind_requirements():
    d = _base()
    del d["vertices"]
    with pytest.raises(ScenarioError):
        loads(json.dumps(d))
    d = _base()
    d["kind"] = "control"
    with pytest.raises(ScenarioError):
        loads(json.dumps(d))


def test_bad_expression():
    d = _base()
    d["vertices"] = [["__import__('os')"], ["1"]]
    with pytest.raises(ScenarioError):
        loads(json.dumps(d))


def test_dimension_mismatch():
    d = _base()
    d["domain"] = {"min": [-1.0, -1.0], "max": [1.0, 1.0]}
    with pytest.raises(ScenarioError):
        loads(json.dumps(d))


def test_weights_must_be_probabilities():
    d = _base()
    d["f0"] = {"weights": [0.7, 0.7]}
    with pytest.raises(ScenarioError):
        loads(json.dumps(d))


def test_expression_base_selection():
    d = _base()
    d["f0"] = {"expression": ["0.5*sin(t)"], "lipschitz": [0.5, 0.0]}
    sc = loads(json.dumps(d))
    assert isinstance(sc.f0, FunctionMap)
    np.testing.assert_allclose(sc.f0.evaluate(np.pi / 2, [0.0]), [0.5])


def test_control_scenario(scalar_control):
    sc = scalar_control
    assert sc.kind == "control" and sc.system is not None
    np.testing.assert_allclose(sc.f0(np.linspace(0, 1, 4), np.zeros((4, 1))), 0.0)


def test_parameter_defaults():
    d = _base()
    del d["parameters"]
    sc = loads(json.dumps(d))
    assert sc.param("eps0") == 0.1 and sc.param("seed") == 0
