import math
import os

import numpy as np
import pytest

from errors import ConfigError
from experiment_config import ExperimentConfig
from experiments import (
    check_geometric,
    convergence_study,
    hks_sweep,
    resolution_plan,
    rfk_sweep,
    richardson_extrapolate,
    run_experiment,
    schatten_sweep,
)
from matrix_builder import assemble_interval_exact
from riesz_kernel import RieszParams
from spectrum_functions import eigen_sym

DISK = "ball_of_measure(measure=1)"
SQUARE = "box_of_measure(measure=1)"


def make_config(kind, shapes, resolutions, alpha=1.0, dim=2, **extra):
    data = {"experiment": kind, "params": {"alpha": alpha, "dim": dim}, "shapes": shapes, "resolutions": resolutions}
    data.update(extra)
    return ExperimentConfig.from_dict(data)


@pytest.mark.parametrize("order", [1.0, 2.0])
def test_richardson_recovers_power_law(order):
    hs = [1 / 16, 1 / 32, 1 / 64]
    values = [2.5 + 0.7 * h**order for h in hs]
    q, limit = richardson_extrapolate(values, 2.0)
    assert q == pytest.approx(order, rel=1e-8)
    assert limit == pytest.approx(2.5, abs=1e-10)


def test_richardson_without_differences():
    q, limit = richardson_extrapolate([1.0, 1.0, 1.0], 2.0)
    assert math.isnan(q)
    assert limit == 1.0


def test_resolution_plan():
    assert resolution_plan([0.1]) == ([0.1], {0.1: None})
    assert resolution_plan([0.1], companion=True) == ([0.2, 0.1], {0.1: 0.2})
    assert resolution_plan([0.2, 0.1, 0.05]) == ([0.2, 0.1, 0.05], {0.2: 0.1, 0.1: 0.2, 0.05: 0.1})


def test_check_geometric():
    assert check_geometric([1 / 16, 1 / 32, 1 / 64]) == 2.0
    with pytest.raises(ConfigError, match="geometric"):
        check_geometric([1 / 16, 1 / 32, 1 / 50])
    with pytest.raises(ConfigError):
        check_geometric([1 / 16, 1 / 32])


def test_rfk_translated_ball_is_reference():
    shapes = {"disk": DISK, "moved": f"translate({DISK}, offset=[1/4, -1/2])", "square": SQUARE}
    result = rfk_sweep(make_config("rfk", shapes, ["1/16"]))
    table = result.table
    assert table.value("moved", 1 / 16, "lambda1") == table.value("disk", 1 / 16, "lambda1")
    assert {row.h for row in table.rows} == {1 / 16}
    statuses = {v.shape: v.status for v in result.verdicts}
    assert statuses["moved"] == "reference"
    assert statuses["square"] in ("confirmed", "inconclusive")
    gap_row = table.select("lambda1_gap")[-1]
    assert gap_row.shape == "square"
    assert math.isfinite(gap_row.error)


def test_rfk_needs_a_ball():
    with pytest.raises(ConfigError, match="ball"):
        rfk_sweep(make_config("rfk", {"square": SQUARE}, ["1/8"]))


def test_schatten_inf_matches_rfk():
    shapes = {"disk": DISK, "square": SQUARE}
    rfk = rfk_sweep(make_config("rfk", shapes, ["1/8"]))
    schatten = schatten_sweep(make_config("schatten", {"square": SQUARE}, ["1/8"], p=[3, "inf"]))
    assert schatten.table.value("square", 1 / 8, "schatten_inf") == rfk.table.value("square", 1 / 8, "lambda1")
    assert schatten.table.value("ball_star", 1 / 8, "schatten_inf") == rfk.table.value("disk", 1 / 8, "lambda1")
    assert schatten.table.value("square", 1 / 8, "schatten_3") > schatten.table.value("square", 1 / 8, "schatten_inf")


def test_schatten_rejects_exponents_below_threshold():
    with pytest.raises(ConfigError, match="p0"):
        schatten_sweep(make_config("schatten", {"square": SQUARE}, ["1/8"], p=[2]))
    with pytest.raises(ConfigError):
        schatten_sweep(make_config("schatten", {"square": SQUARE}, ["1/8"], p=[2.5]))


def test_schatten_exploratory_exponents_are_not_asserted():
    config = make_config("schatten", {"square": SQUARE}, ["1/8"], p=[2, 2.5], exploratory=True)
    result = schatten_sweep(config)
    assert {v.status for v in result.verdicts} == {"exploratory"}
    assert result.exit_code == 0
    assert result.notes["exploratory_p"] == [2.0, 2.5]


def test_hks_argument_checks():
    config = make_config("hks", {}, ["1/8"], hks={"distances": [0.5, 1]})
    with pytest.raises(ConfigError, match="3 distances"):
        hks_sweep(config)
    config = make_config("hks", {}, ["1/8"], hks={"distances": [2, 1, 4]})
    with pytest.raises(ConfigError, match="ascending"):
        hks_sweep(config)


def test_convergence_needs_one_shape_and_a_geometric_plan():
    with pytest.raises(ConfigError):
        convergence_study(make_config("converge", {"disk": DISK, "square": SQUARE}, ["1/8", "1/16", "1/32"]))
    with pytest.raises(ConfigError):
        convergence_study(make_config("converge", {"disk": DISK}, ["1/8", "1/16"]))


def test_interval_extrapolation_matches_fine_reference():
    config = make_config(
        "converge", {"interval": "box(corner=[0], sides=[1])"}, ["1/64", "1/128", "1/256"], alpha=0.5, dim=1,
        p=[3],
    )
    result = convergence_study(config)
    extrapolated = result.table.value("interval", 1 / 256, "lambda1_extrapolated")
    reference = eigen_sym(assemble_interval_exact(RieszParams(0.5, 1), 2048, 1 / 2048)).lambda1
    assert extrapolated == pytest.approx(reference, abs=1e-3)
    assert result.notes["fits"]["lambda1"]["order"] > 0
    assert "schatten_3" in result.notes["fits"]


def test_spectrum_run_writes_outputs(tmp_path):
    config = make_config("spectrum", {"square": SQUARE}, ["1/16"], output=str(tmp_path))
    result, written = run_experiment(config)
    assert result.exit_code == 0
    assert {v.quantity for v in result.verdicts} == {"nonnegative", "trace_anchors", "jentsch", "nodal_parts_dominate"}
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["manifest.json", "spectrum.csv", "spectrum_square_0.csv", "spectrum_square_0.json"]


def test_newton_potential_spectrum():
    config = ExperimentConfig.from_dict(
        {
            "experiment": "spectrum",
            "params": {"newton_m": 1, "dim": 3},
            "shapes": {"cube": SQUARE},
            "resolutions": ["1/4"],
        }
    )
    result, written = run_experiment(config, write=False)
    assert written == []
    assert result.table.value("cube", 1 / 4, "lambda1") > 0
    assert result.exit_code == 0


def test_rfk_csv_is_identical_across_thread_counts(tmp_path):
    shapes = {"disk": DISK, "square": SQUARE, "l": "l_shape(measure=1)"}
    for threads in (1, 2):
        config = make_config("rfk", shapes, ["1/8"], threads=threads, output=str(tmp_path / f"t{threads}"))
        run_experiment(config)
    first = (tmp_path / "t1" / "rfk.csv").read_bytes()
    assert first == (tmp_path / "t2" / "rfk.csv").read_bytes()


def test_rearrange_check_run():
    config = make_config("rearrange-check", {"l": "l_shape(measure=1)"}, ["1/8"], n_functions=5, mc={"seed": 3})
    result, _ = run_experiment(config, write=False)
    assert result.exit_code == 0
    assert len(result.table.select("riesz_gap")) == 5
    assert result.table.rows[0].shape == "l/f000"
    assert {v.status for v in result.verdicts} == {"passed"}


def test_trace_mc_run_on_interval():
    config = make_config(
        "trace-mc", {"interval": "box(corner=[0], sides=[1])"}, ["1/32"], alpha=0.8, dim=1,
        mc={"s": 2, "n_samples": 20000, "seed": 1},
    )
    result, _ = run_experiment(config, write=False)
    quantities = [row.quantity for row in result.table.rows]
    assert quantities == ["trace_mc", "eigensum", "trace_exact"]
    assert result.notes["finite_variance"] == {"interval": True}
    assert result.table.rows[0].seed == 1


def test_trace_mc_infinite_variance_is_skipped():
    config = make_config(
        "trace-mc", {"interval": "box(corner=[0], sides=[1])"}, ["1/16"], alpha=0.4, dim=1,
        mc={"s": 3, "n_samples": 5000},
    )
    result, _ = run_experiment(config, write=False)
    assert {v.status for v in result.verdicts} == {"skipped"}
    assert result.exit_code == 0


def test_trace_mc_pair_singularity_squared_is_skipped():
    config = make_config(
        "trace-mc", {"interval": "box(corner=[0], sides=[1])"}, ["1/32"], alpha=0.6, dim=1,
        mc={"s": 2, "n_samples": 5000},
    )
    result, _ = run_experiment(config, write=False)
    assert result.notes["finite_variance"] == {"interval": False}
    assert {v.status for v in result.verdicts} == {"skipped"}


def test_bll_run():
    config = make_config("bll", {"disk": DISK, "square": SQUARE}, ["1/16"], alpha=1.5, mc={"n_samples": 20000})
    result, _ = run_experiment(config, write=False)
    statuses = {v.shape: v.status for v in result.verdicts}
    assert statuses["disk"] == "reference"
    assert len(result.table.select("bll_gap")) == 2


def test_probe_run():
    config = ExperimentConfig.from_dict(
        {"experiment": "probe-convolution", "params": {"alpha": 0.3, "dim": 1}, "probe": {"alpha2": 0.3}}
    )
    result, _ = run_experiment(config, write=False)
    assert [row.shape for row in result.table.rows] == ["r=0.5", "r=1.0", "r=2.0", "exact"]
    assert {v.quantity for v in result.verdicts} == {"ratio_constant", "ratio_vs_exact"}
    ratios = [row.value for row in result.table.rows]
    assert np.ptp(ratios) < 1e-3


@pytest.mark.slow
def test_disk_maximizes_every_schatten_column():
    shapes = {"disk": DISK, "square": SQUARE, "rectangle": "box_of_measure(measure=1, aspect=2)"}
    result = schatten_sweep(make_config("schatten", shapes, ["1/16", "1/32"], p=[3, 4, "inf"], threads=2))
    assert len(result.verdicts) == 12
    for verdict in result.verdicts:
        assert verdict.status == "confirmed", verdict
    for p in ("3", "4", "inf"):
        column = {label: result.table.value(label, 1 / 32, f"schatten_{p}_normalized") for label in shapes}
        assert max(column, key=column.get) == "disk"


@pytest.mark.slow
def test_rfk_ball_beats_every_shape():
    shapes = {"disk": DISK, "square": SQUARE, "rectangle": "box_of_measure(measure=1, aspect=2)", "l": "l_shape(measure=1)"}
    result = rfk_sweep(make_config("rfk", shapes, ["1/32", "1/64"], threads=2))
    for verdict in result.verdicts:
        assert verdict.status == "confirmed", verdict


@pytest.mark.slow
def test_two_balls_approach_half_ball_limit():
    config = make_config("hks", {"square": SQUARE}, ["1/16", "1/32"], hks={"distances": [1, 4, 16, 64]})
    result = hks_sweep(config)
    far = "two_balls(l=64.0)"
    assert abs(result.table.value(far, 1 / 32, "limit_deviation")) < 0.01
    assert result.table.value(far, 1 / 32, "near_degeneracy") < 0.01
    for label in ("two_balls(l=1.0)", "two_balls(l=4.0)", far):
        quotient = result.table.value(label, 1 / 32, "test_quotient")
        assert quotient <= result.table.value(label, 1 / 32, "lambda2") * (1 + 1e-12)
    assert abs(result.table.value(far, 1 / 32, "cross_term")) < abs(
        result.table.value("two_balls(l=1.0)", 1 / 32, "cross_term")
    )
    square = [v for v in result.verdicts if v.shape == "square"]
    assert [v.status for v in square] == ["confirmed", "confirmed"]


@pytest.mark.slow
def test_disk_refinement_differences_shrink():
    result = convergence_study(make_config("converge", {"disk": DISK}, ["1/16", "1/32", "1/64"]))
    assert result.notes["fits"]["lambda1"]["differences_shrink"]
    assert result.notes["fits"]["lambda1"]["order"] > 0
