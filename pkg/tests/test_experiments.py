import numpy as np
import pytest

from rscorrect.experiments import (
    GRADCHECK_OPS,
    ExperimentSpec,
    central_difference,
    gradcheck_suite,
    make_case,
    preset,
    relative_error,
    run_experiment,
    select_frames,
)


def test_central_difference_on_polynomial():
    x = np.array([1.0, -2.0, 0.5])
    g = central_difference(lambda: float(np.sum(x**3)), x)
    np.testing.assert_allclose(g, 3 * x**2, rtol=1e-8)
    np.testing.assert_array_equal(x, [1.0, -2.0, 0.5])


def test_relative_error_definition():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.1, 2.0], [1.0, 2.0]) == pytest.approx(0.05)
    assert relative_error([1e-9], [0.0]) == pytest.approx(0.1)


def test_gradcheck_suite_passes_and_negative_control():
    recs = gradcheck_suite(seed=1, trials=3)
    assert {r.op for r in recs} == set(GRADCHECK_OPS)
    assert all(r.ok for r in recs)
    bad = gradcheck_suite(seed=1, trials=1, ops=("backward_warp",), perturb=1e-3)
    assert not any(r.ok for r in bad)
    assert gradcheck_suite(trials=0) == []


def test_select_frames():
    assert select_frames([1, 2, 3], 3) == [1, 2, 3]
    assert select_frames([1, 2, 3], 2) == [2, 3]
    assert select_frames([1, 2, 3], 1) == [2]
    with pytest.raises(ValueError):
        select_frames([1, 2, 3], 0)


def test_make_case_shapes():
    case = make_case("two_layer", 0, size=32)
    assert len(case.frames) == 3 and case.gs.shape == (32, 32, 3)
    assert case.gt_bundle.shape == (32, 32)
    with pytest.raises(ValueError):
        make_case("outdoor", 0)


def test_spec_cells_order_and_validation():
    spec = ExperimentSpec("t", "standard", [5, 6], {"warper": ["awm", "dfw"], "test_ratio": [0.8, 0.2]})
    cells = spec.cells()
    assert [(c["config"]["warper"], c["test_ratio"], c["seed"]) for c in cells] == [
        ("awm", 0.8, 5), ("awm", 0.8, 6), ("awm", 0.2, 5), ("awm", 0.2, 6),
        ("dfw", 0.8, 5), ("dfw", 0.8, 6), ("dfw", 0.2, 5), ("dfw", 0.2, 6),
    ]
    for bad in (dict(seeds=[]), dict(grid={"speed": [1]}), dict(grid={"m": []}), dict(suite="x"),
                dict(base={"m": 0})):
        with pytest.raises(ValueError):
            ExperimentSpec("t", **{"suite": "standard", **bad})


def test_presets():
    assert preset("warpers").grid["warper"] == ["awm", "dfw", "backward", "fusion-only"]
    assert preset("readout").base["mode"] == "self"
    with pytest.raises(ValueError):
        preset("nope")


def test_run_experiment_parallel_matches_serial():
    spec = ExperimentSpec("t", "standard", [0, 1], {"warper": ["backward", "fusion-only"]},
                          {"iterations": 8}, size=32)
    serial = run_experiment(spec, jobs=1)
    parallel = run_experiment(spec, jobs=2)
    strip = [{k: v for k, v in r.items() if k != "runtime"} for r in serial]
    assert strip == [{k: v for k, v in r.items() if k != "runtime"} for r in parallel]
    assert [r["cell"] for r in serial] == [0, 1, 2, 3]
