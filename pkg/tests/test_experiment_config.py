import math

import pytest

from errors import ConfigError
from experiment_config import (
    ExperimentConfig,
    default_threads,
    load_config,
    parse_expression,
    parse_number,
    parse_shape,
    save_config,
)
from global_settings import THREADS_ENV_VAR
from grid_domain import Ball, Box, Translate, Union

RFK_TEXT = """
experiment: rfk
params:
  alpha: 1
  dim: 2
shapes:
  disk: ball_of_measure(measure=1)
  square: box_of_measure(measure=1)
  l: l_shape(measure=1)
resolutions: [1/32, 1/64]
"""


@pytest.mark.parametrize(
    "text, expected",
    [("1/32", 0.03125), ("2**-3", 0.125), ("sqrt(2)*pi", math.sqrt(2) * math.pi), ("inf", math.inf), ("-e", -math.e)],
)
def test_parse_number(text, expected):
    assert parse_number(text) == expected


def test_parse_number_keeps_plain_numbers():
    assert parse_number(3) == 3.0
    with pytest.raises(ConfigError):
        parse_number(True)
    with pytest.raises(ConfigError):
        parse_number("box(corner=[0], sides=[1])")


@pytest.mark.parametrize(
    "text",
    ["__import__('os')", "open('x')", "[x for x in range(3)]", "(1).real", "1/0", "ball(", "lambda: 1"],
)
def test_parse_expression_rejects_foreign_code(text):
    with pytest.raises(ConfigError):
        parse_expression(text, dim=2)


def test_parse_shapes():
    disk = parse_shape("ball_of_measure(measure=1)", 2)
    assert isinstance(disk, Ball)
    assert disk.radius == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)
    moved = parse_shape("translate(ball(center=[0, 0], radius=0.5), offset=[1/4, 0])", 2)
    assert isinstance(moved, Translate)
    assert moved.offset == (0.25, 0.0)
    l_shape = parse_shape("l_shape(measure=3)", 2)
    assert isinstance(l_shape, Union)
    assert l_shape.members[0] == Box([0.0, 0.0], [1.0, 2.0])
    with pytest.raises(ConfigError, match="dimension"):
        parse_shape("ball(center=[0, 0, 0], radius=1)", 2)
    with pytest.raises(ConfigError):
        parse_shape("1/2", 2)
    with pytest.raises(ConfigError):
        parse_shape("ball(center=[0, 0], radius=-1)", 2)


def test_shape_expressions_round_trip():
    for text in [
        "ball_of_measure(measure=1)",
        "box_of_measure(measure=1, aspect=2)",
        "l_shape(measure=1)",
        "two_balls(measure=1, distance=0.5)",
        "ellipse(center=[0, 0], semi_axes=[2, 0.5])",
        "annulus(center=[0, 0], inner=0.25, outer=1)",
        "translate(box(corner=[0, 0], sides=[1, 1]), offset=[0.5, 0.5])",
    ]:
        shape = parse_shape(text, 2)
        assert parse_shape(shape.to_expression(), 2) == shape


def test_load_and_save_round_trip(tmp_path, write_config):
    config = load_config(write_config("rfk.yaml", RFK_TEXT))
    assert config.kind == "rfk"
    assert config.labels == ["disk", "square", "l"]
    assert config.resolutions == (1 / 32, 1 / 64)
    assert config.params().alpha == 1.0
    assert config.output_dir.endswith("rfk")
    path = tmp_path / "saved.yaml"
    save_config(config, path)
    assert load_config(path) == config


def test_kind_from_command(write_config):
    text = RFK_TEXT.replace("experiment: rfk\n", "")
    assert load_config(write_config("a.yaml", text), kind="rfk").kind == "rfk"
    with pytest.raises(ConfigError, match="not 'schatten'"):
        load_config(write_config("b.yaml", RFK_TEXT), kind="schatten")


@pytest.mark.parametrize(
    "old, new, message",
    [
        ("box_of_measure(measure=1)", "box_of_measure(measure=2)", "measure"),
        ("[1/32, 1/64]", "[1/64, 1/32]", "descending"),
        ("[1/32, 1/64]", "[]", "resolutions"),
        ("experiment: rfk", "experiment: rfq", "unknown experiment"),
        ("  alpha: 1\n", "  alpha: 2\n", "alpha"),
        ("  alpha: 1\n", "  alpha: 1\n  newton_m: 1\n", "exactly one"),
        ("  l: l_shape", "  l#2: l_shape", "label"),
        ("resolutions:", "colour: red\nresolutions:", "unknown keys"),
    ],
)
def test_invalid_configs(write_config, old, new, message):
    text = RFK_TEXT.replace(old, new)
    with pytest.raises(ConfigError, match=message):
        load_config(write_config("bad.yaml", text))


def test_unreadable_files(tmp_path, write_config):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(write_config("broken.yaml", "params: [1, 2\n"))
    with pytest.raises(ConfigError):
        load_config(write_config("list.yaml", "- 1\n- 2\n"))


def test_newton_params(write_config):
    text = "params:\n  newton_m: 1\n  dim: 3\nshapes:\n  cube: box_of_measure(measure=1)\nresolutions: [1/8]\n"
    config = load_config(write_config("n.yaml", text), kind="spectrum")
    assert config.params().alpha == 2.0
    assert config.to_dict()["params"] == {"dim": 3, "newton_m": 1}


def test_overrides(tmp_path, write_config):
    config = load_config(write_config("rfk.yaml", RFK_TEXT))
    changed = config.with_overrides(h="1/128", seed=5, threads=3, output_dir=tmp_path)
    assert changed.resolutions == (1 / 128,)
    assert changed.mc.seed == 5
    assert changed.threads == 3
    assert changed.output_dir == str(tmp_path)
    assert config.resolutions == (1 / 32, 1 / 64)
    with pytest.raises(ConfigError):
        config.with_overrides(threads=0)


def test_threads_from_environment(write_config, monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "4")
    assert default_threads() == 4
    assert load_config(write_config("rfk.yaml", RFK_TEXT)).threads == 4
    assert load_config(write_config("t.yaml", RFK_TEXT + "threads: 2\n")).threads == 2
    with pytest.raises(ConfigError, match="threads"):
        load_config(write_config("zero.yaml", RFK_TEXT + "threads: 0\n"))
    monkeypatch.setenv(THREADS_ENV_VAR, "many")
    with pytest.raises(ConfigError):
        default_threads()


def test_probe_needs_no_resolutions():
    config = ExperimentConfig.from_dict({"experiment": "probe-convolution", "params": {"alpha": 0.3, "dim": 1}})
    assert config.resolutions == ()
    assert config.probe.r_values == (0.5, 1.0, 2.0)


def test_monte_carlo_settings(write_config):
    text = RFK_TEXT + "mc:\n  s: 4\n  n_samples: 2e5\n  seed: 9\n  lanes: 4\n"
    config = load_config(write_config("mc.yaml", text), kind="rfk")
    assert (config.mc.s, config.mc.n_samples, config.mc.seed, config.mc.lanes) == (4, 200_000, 9, 4)
