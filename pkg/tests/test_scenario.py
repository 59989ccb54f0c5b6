import json

import pytest

from errors import ScenarioError
from scenario import DEFAULTS, load_preset, load_scenario, parse_scenario, preset_names, scenario_hash

MINIMAL = {
    "geometry": {"n": 1, "grid": 16},
    "bundle": {"block_ranks": [1, 1], "degrees": [1, -1]},
}


def _raw(**blocks):
    raw = json.loads(json.dumps(MINIMAL))
    for block, values in blocks.items():
        raw.setdefault(block, {}).update(values)
    return raw


def test_every_preset_parses():
    names = preset_names()
    assert "split_1_-1" in names
    for name in names:
        scenario = load_preset(name)
        assert scenario.name == name
        scenario.bundle()


def test_unknown_preset():
    with pytest.raises(ScenarioError) as err:
        load_preset("nope")
    assert err.value.key == "<preset>"


def test_defaults_fill_optional_keys():
    scenario = parse_scenario(MINIMAL)
    assert scenario["flow.t_max"] == DEFAULTS["flow"]["t_max"]
    assert scenario["bundle.a_preset"] == "direct_sum"
    assert scenario["analysis.sigma_schedule"] is None
    assert scenario.flow_controls().stride == 50
    assert scenario.geometry().n == 1


def test_missing_required_key_is_named():
    raw = _raw()
    del raw["geometry"]["grid"]
    with pytest.raises(ScenarioError) as err:
        parse_scenario(raw)
    assert err.value.key == "geometry.grid"


def test_unknown_keys_and_blocks_are_rejected():
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_raw(flow={"dtt": 0.1}))
    assert err.value.key == "flow.dtt"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_raw(plots={}))
    assert err.value.key == "plots"


@pytest.mark.parametrize("block, key, value", [
    ("flow", "eps", 0.0),
    ("flow", "t_max", -1.0),
    ("analysis", "tau", "small"),
    ("frobenius", "degree", 0),
])
def test_tolerances_must_be_positive(block, key, value):
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_raw(**{block: {key: value}}))
    assert err.value.key == f"{block}.{key}"


def test_bundle_consistency_checks():
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_raw(bundle={"degrees": [1]}))
    assert err.value.key == "bundle.degrees"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_raw(bundle={"rank": 3}))
    assert err.value.key == "bundle.rank"
    with pytest.raises(ScenarioError) as err:
        parse_scenario(_raw(analysis={"sigma_schedule": [0.5]}))
    assert err.value.key == "analysis.sigma_schedule"


def test_json_errors_report_the_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "geometry": {"n": 1,\n}\n', encoding="utf-8")
    with pytest.raises(ScenarioError) as err:
        load_scenario(path)
    assert err.value.key.startswith("<line ")


def test_scenario_name_comes_from_the_file(tmp_path):
    path = tmp_path / "my_run.json"
    path.write_text(json.dumps(MINIMAL), encoding="utf-8")
    assert load_scenario(path).name == "my_run"
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.json")


def test_hash_ignores_spelled_out_defaults():
    a = parse_scenario(MINIMAL, name="x")
    b = parse_scenario(_raw(flow={"t_max": 20.0, "stride": 50}), name="x")
    c = parse_scenario(_raw(flow={"t_max": 21.0}), name="x")
    assert scenario_hash(a) == scenario_hash(b) == a.hash
    assert scenario_hash(a) != scenario_hash(c)
    assert len(a.hash) == 64


def test_output_dir_precedence(tmp_path):
    scenario = parse_scenario(MINIMAL, name="demo")
    assert scenario.output_dir().name == "demo"
    assert scenario.output_dir(str(tmp_path)) == tmp_path
