"""
Full-size experiment runs. Deselected by default; run with `pytest -m slow`.
"""

import pytest

from services.experiments import ExperimentRunner
from schemas.experiment import load_experiment_spec

pytestmark = pytest.mark.slow


def _run(name, tmp_path, **overrides):
    spec = load_experiment_spec(name, output_dir=str(tmp_path / name), **overrides)
    return ExperimentRunner(spec).run()


def test_mushroom_isometry(tmp_path):
    results = _run("mushroom", tmp_path)
    loca = results["loca"]["scaled"]["stress"]
    adm = results["adm"]["stress"]
    dm = results["dm"]["stress"]
    assert loca < 1e-3
    assert 5e-4 <= adm <= 1e-2
    assert 0.01 <= dm <= 0.1
    assert loca < adm < dm


def test_out_of_sample_regions(tmp_path):
    regions = _run("frame_oos", tmp_path)["regions"]
    for name in ("interpolation", "frame", "extrapolation"):
        assert regions[name]["stress"] < 1e-2
    ratio = regions["interpolation"]["stress"] / regions["frame"]["stress"]
    assert 0.1 <= ratio <= 10.0


def test_decoder_interpolation(tmp_path):
    assert _run("frame_interp", tmp_path)["interpolation"]["mse_mean"] < 5e-3


def test_sphere(tmp_path):
    results = _run("sphere", tmp_path)
    assert results["loca"]["scaled"]["stress"] < 1e-2
    assert results["dm"]["stress"] > 0.05
    assert results["adm"]["stress"] < 0.05
    assert results["test"]["stress"] < 1e-2


@pytest.mark.parametrize("source,expected", [("mushroom", 2), ("sphere", 3)])
def test_dimension_sweep(tmp_path, source, expected):
    results = _run("dim_sweep", tmp_path, sweep_source=source)
    assert results["dim_sweep"]["selected_dim"] == expected


def test_wifi_localization(tmp_path):
    report = _run("wifi", tmp_path)["localization"]
    assert report["loca"]["relative_position_error"] < 0.05
    assert report["loca"]["position_error"] < report["dm"]["position_error"]
