import json

import pytest

from segadapt.config import DEFAULTS, ScenarioError, dump_scenario, load_scenario, scenario, validate_dict


def test_defaults_validate():
    sc = scenario()
    assert sc.duration == 20.0 and sc.controller == "none" and sc.injected == []
    assert sc.thresholds["entropy_max"] == 0.06


def problems(**raw):
    with pytest.raises(ScenarioError) as exc:
        validate_dict(dict({"schema_version": 1}, **raw))
    return exc.value.problems


def test_schema_errors():
    with pytest.raises(ScenarioError):
        validate_dict({})
    assert any("schema_version" in p for p in problems(schema_version=2))
    assert problems(duration=-1)
    assert problems(colour="red")
    assert problems(injections=[{"time": 1.0, "uncertainty": "bogus"}])


def test_semantic_errors():
    assert "unknown controller" in problems(controller="oracle")[0]
    assert "unknown uncertainty" in problems(injections=[{"time": 1.0, "uncertainty": "U42"}])[0]
    assert "beyond duration" in problems(injections=[{"time": 30.0, "uncertainty": "U01"}])[0]
    dup = problems(injections=[{"time": 1.0, "uncertainty": "U01"}, {"time": 2.0, "uncertainty": "U04"}])
    assert "duplicate criticality" in dup[0]
    assert problems(scripted_adaptations=[{"time_s": 1.0, "target": "fusion", "action": "SetParameter", "args": {"x": 1}}])
    assert "longer than a restart" in problems(delays={"restart": 5.0})[0]
    assert problems(scene={"num_classes": 6})
    assert problems(scene={"width": 63})


def test_partial_sections_merge_with_defaults():
    sc = scenario(delays={"restart": 0.2}, thresholds={"entropy_max": 0.1})
    assert sc.delays["restart"] == 0.2 and sc.delays["redeploy"] == DEFAULTS["delays"]["redeploy"]
    assert sc.thresholds["freq_min"] == 1.0


def test_yaml_and_json_roundtrip(tmp_path):
    sc = scenario(seed=4, controller="baseline", injections=[{"time": 5.0, "uncertainty": "U09"}])
    y = tmp_path / "s.yaml"
    dump_scenario(sc, str(y))
    assert load_scenario(y).to_dict() == sc.to_dict()
    j = tmp_path / "s.json"
    j.write_text(json.dumps(sc.to_dict()))
    assert load_scenario(j).to_dict() == sc.to_dict()


def test_load_failures(tmp_path):
    with pytest.raises(ScenarioError, match="no such file"):
        load_scenario(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- a\n- b\n")
    with pytest.raises(ScenarioError, match="mapping"):
        load_scenario(bad)
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ScenarioError, match="parse error"):
        load_scenario(broken)
