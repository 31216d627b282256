import numpy as np
import pytest

import config
from cli import (build_mesh, build_pivot, initial_data, load_scenario, main, parse_config, run_subcommand,
                 worker_pool)
from evolving_spaces import DUAL_FLOW
from exceptions import ConfigError

MINIMAL = """\
[geometry]
shape = interval

[flow]
field = dilation
"""


def _scenario_path(name):
    return config.SCENARIO_DIR / f"{name}.cfg"


def test_defaults_are_filled():
    scenario = parse_config(MINIMAL)
    assert scenario.geometry.n == 16
    assert scenario.flow.rate == pytest.approx(0.1)
    assert scenario.problem.pivot == "L2"
    assert scenario.problem.steps == 50
    assert scenario.run.check_time == pytest.approx(0.3)
    assert scenario.run.seed == config.DEFAULT_SEED


def test_comments_and_lists_are_parsed():
    text = """\
# translation on the plane
[geometry]
shape = circle
; semicolon comment
[flow]
field = translation
velocity = 0.5, -1.0
"""
    assert parse_config(text).flow.velocity == [0.5, -1.0]


def test_invalid_value_reports_its_line():
    text = MINIMAL + "\n[problem]\noperator = p-laplace\np = 0.5\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.lines == (9,)
    assert "problem.p" in str(info.value)


def test_duplicate_key_reports_both_lines():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "field = zero\n")
    assert info.value.lines == (5, 6)
    assert "duplicate key flow.field" in str(info.value)


def test_unknown_section_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "[solver]\n")
    assert info.value.lines == (6,)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + "speed = 2\n")
    assert info.value.lines == (6,)
    assert "flow.speed: unknown key" in str(info.value)


def test_missing_mandatory_key_points_at_the_section():
    with pytest.raises(ConfigError) as info:
        parse_config("[geometry]\nn = 8\n[flow]\nfield = zero\n")
    assert info.value.lines == (1,)
    assert "geometry.shape: missing mandatory key" in str(info.value)


def test_missing_mandatory_section():
    with pytest.raises(ConfigError) as info:
        parse_config("[geometry]\nshape = interval\n")
    assert "flow: missing mandatory section" in str(info.value)


def test_type_error_reports_its_line():
    with pytest.raises(ConfigError) as info:
        parse_config("[geometry]\nshape = interval\nn = abc\n[flow]\nfield = zero\n")
    assert info.value.lines == (3,)


def test_line_without_equals_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config("[geometry]\nshape interval\n")
    assert info.value.lines == (2,)


def test_key_outside_section_rejected():
    with pytest.raises(ConfigError):
        parse_config("shape = interval\n")


def test_unknown_field_rejected():
    with pytest.raises(ConfigError) as info:
        parse_config("[geometry]\nshape = interval\n[flow]\nfield = vortex\n")
    assert info.value.lines == (4,)


@pytest.mark.parametrize("extra,key", [
    ("[problem]\npivot = Hminus1\n", "problem.pivot"),
    ("[problem]\npivot = DualFlowL1\n", "problem.pivot"),
    ("[problem]\np = 3.0\n", "problem.p"),
    ("[problem]\nT = 0.2\n", "run.check_time"),
    ("[problem]\noperator = p-laplace\np = 3.0\nepsilon = 0.0\n", "problem.epsilon"),
])
def test_cross_field_rules(extra, key):
    text = "[geometry]\nshape = circle\n[flow]\nfield = radial-circle\n" + extra
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert key in str(info.value)


def test_cross_field_error_reports_the_key_line():
    text = "[geometry]\nshape = circle\n[flow]\nfield = radial-circle\n[problem]\npivot = Hminus1\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.lines == (6,)


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "absent.cfg")


def test_every_bundled_scenario_parses():
    paths = sorted(config.SCENARIO_DIR.glob("*.cfg"))
    assert len(paths) >= 7
    for path in paths:
        scenario = load_scenario(path)
        assert scenario.name == path.stem


def test_dualflow_scenario_builds_a_companion():
    scenario = load_scenario(_scenario_path("lambda_radial_dualflow"))
    mesh = build_mesh(scenario)
    pivot = build_pivot(scenario, mesh)
    assert pivot.variant == DUAL_FLOW
    assert pivot.companion.kind == mesh.flow.field.kind


def test_initial_data_catalog():
    scenario = parse_config(MINIMAL + "[problem]\ninitial = sine\ninitial_value = 2.0\n")
    values = initial_data(scenario)(np.array([[0.0], [0.5], [1.0]]))
    assert values == pytest.approx([0.0, 2.0, 0.0], abs=1e-15)


def test_worker_pool_keeps_submission_order():
    with worker_pool(3) as runner:
        assert list(runner(lambda k: k * k, range(6))) == [0, 1, 4, 9, 16, 25]
    with worker_pool(1) as runner:
        assert runner is map


def test_check_lambda_on_the_static_interval(tmp_path, capsys):
    scenario = load_scenario(_scenario_path("lambda_zero_l2"))
    assert run_subcommand("check-lambda", scenario, tmp_path) == config.EXIT_OK
    out = capsys.readouterr().out
    assert "PASS lambda-L2" in out
    assert "PASS mass-derivative" in out
    assert (tmp_path / "lambda_zero_l2" / "check-lambda" / "lambda-L2.csv").is_file()


def test_runs_are_byte_identical(tmp_path):
    scenario = load_scenario(_scenario_path("lambda_dilation_l2"))
    run_subcommand("check-lambda", scenario, tmp_path / "first")
    run_subcommand("check-lambda", scenario, tmp_path / "second")
    first = tmp_path / "first" / "lambda_dilation_l2" / "check-lambda" / "lambda-L2.csv"
    second = tmp_path / "second" / "lambda_dilation_l2" / "check-lambda" / "lambda-L2.csv"
    assert first.read_bytes() == second.read_bytes()


def test_check_flow_on_the_dilating_interval(tmp_path):
    scenario = load_scenario(_scenario_path("flow_dilation_interval"))
    assert run_subcommand("check-flow", scenario, tmp_path) == config.EXIT_OK
    assert (tmp_path / "flow_dilation_interval" / "check-flow" / "jacobian_constant.csv").is_file()


def test_unknown_subcommand_rejected(tmp_path):
    with pytest.raises(ConfigError):
        run_subcommand("plot", parse_config(MINIMAL), tmp_path)


def test_converge_needs_the_manufactured_forcing(tmp_path):
    with pytest.raises(ConfigError):
        run_subcommand("converge", parse_config(MINIMAL), tmp_path)


def test_main_maps_config_errors_to_exit_code(tmp_path, capsys):
    path = tmp_path / "broken.cfg"
    path.write_text("[geometry]\nshape = triangle\n[flow]\nfield = zero\n")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == config.EXIT_CONFIG_ERROR
    assert "line 2" in capsys.readouterr().err


def test_main_runs_the_static_stability_scenario(tmp_path, capsys):
    path = _scenario_path("stability_static")
    assert main(["stability", "--config", str(path), "--out", str(tmp_path), "--verbose"]) == config.EXIT_OK
    out = capsys.readouterr().out
    assert "PASS stability" in out
    assert (tmp_path / "stability_static" / "stability" / "stability.csv").is_file()


def test_main_rejects_a_non_positive_worker_count(tmp_path, capsys):
    path = _scenario_path("stability_static")
    argv = ["stability", "--config", str(path), "--out", str(tmp_path), "--workers", "0"]
    assert main(argv) == config.EXIT_CONFIG_ERROR
    assert "--workers" in capsys.readouterr().err
    assert not (tmp_path / "stability_static").exists()


def test_solve_conserves_mass_on_the_expanding_circle(tmp_path, capsys):
    scenario = load_scenario(_scenario_path("solve_circle_advection"))
    assert run_subcommand("solve", scenario, tmp_path) == config.EXIT_OK
    assert "PASS mass-conservation" in capsys.readouterr().out
    assert (tmp_path / "solve_circle_advection" / "solve" / "solve.csv").is_file()


def test_converge_writes_both_tables(tmp_path):
    scenario = load_scenario(_scenario_path("converge_heat"))
    assert run_subcommand("converge", scenario, tmp_path, workers=2) == config.EXIT_OK
    target = tmp_path / "converge_heat" / "converge"
    for name in ("eoc_space.csv", "eoc_time.csv", "fixed-domain-reference.csv"):
        assert (target / name).is_file()


def test_check_transport_on_the_expanding_circle(tmp_path):
    scenario = load_scenario(_scenario_path("transport_radial_l2"))
    assert run_subcommand("check-transport", scenario, tmp_path) == config.EXIT_OK
    target = tmp_path / "transport_radial_l2" / "check-transport"
    assert sorted(path.name for path in target.glob("transport-L2-*.csv")) == [f"transport-L2-{k}.csv"
                                                                              for k in range(5)]


def test_check_equivalence_on_the_dilating_interval(tmp_path):
    scenario = load_scenario(_scenario_path("equivalence_dilation_l2"))
    assert run_subcommand("check-equivalence", scenario, tmp_path) == config.EXIT_OK
    assert (tmp_path / "equivalence_dilation_l2" / "check-equivalence" / "compatibility.csv").is_file()
