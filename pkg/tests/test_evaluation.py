import json

import numpy as np
import pytest

from impactloc.core import DEFAULT_PLATE, Dataset, default_array, grid_locations
from impactloc.evaluation import (
    ExperimentConfig,
    GridError,
    LocalisationResult,
    cdf_value,
    error_cdf,
    infer_grid,
    inside_hull,
    run_experiment,
    subset_reference,
    summarize,
    write_report,
)
from impactloc.preprocess import ZeroRowWarning
from impactloc.wavesim import GvpModel, simulate_dataset


def _result(err, kernel="comp", iid="t"):
    return LocalisationResult(iid, kernel, (0.0, 0.0), (err, 0.0), (1.0, 1.0), True)


def test_infer_grid(ref_dataset):
    cols, rows, nx, ny = infer_grid(ref_dataset)
    assert (nx, ny) == (7, 5)
    assert cols[0] == 1 and rows[0] == 1 and cols[6] == 7 and rows[7] == 2


def test_named_subsets(ref_dataset):
    assert len(subset_reference(ref_dataset, "ri35")) == 35
    ri15 = subset_reference(ref_dataset, "RI15")
    assert len(ri15) == 15
    ys = ri15.Y[:, 1]
    assert all(np.sum(ys == y) == 3 for y in np.unique(ys))
    np.testing.assert_array_equal(np.unique(ri15.Y[:, 0]), [85.0, 145.0, 205.0])
    ri9 = subset_reference(ref_dataset, "ri9")
    ext9 = subset_reference(ref_dataset, "ext9")
    assert len(ri9) == len(ext9) == 9
    # every EXT9 point lies strictly inside the RI9 hull
    assert np.all(inside_hull(ext9.Y, ri9.Y, tol=-1e-6))
    # only the shared centre point of RI9 falls in the EXT9 hull
    np.testing.assert_array_equal(ri9.Y[inside_hull(ri9.Y, ext9.Y)], [[145.0, 100.0]])
    assert len(subset_reference(ref_dataset, [0, 5, 9])) == 3


def test_subset_errors(ref_dataset):
    with pytest.raises(ValueError):
        subset_reference(ref_dataset, "ri12")
    small = simulate_dataset(GvpModel("isotropic", 5.0), default_array(), DEFAULT_PLATE,
                             grid_locations(3, 3), 1.0)
    with pytest.raises(GridError):
        subset_reference(small, "ri15")
    with pytest.raises(ValueError):
        subset_reference(ref_dataset, [99])


def test_error_cdf_examples():
    assert cdf_value([1, 2, 3], 2) == pytest.approx(2 / 3)
    x, f = error_cdf([4.0, 4.0, 4.0])
    np.testing.assert_array_equal(x, [4.0])
    np.testing.assert_array_equal(f, [1.0])
    x, f = error_cdf(np.random.default_rng(0).exponential(size=50))
    assert np.all(np.diff(f) >= 0) and f[-1] == 1.0
    with pytest.raises(ValueError):
        error_cdf([])


def test_summarize_examples():
    s = summarize([_result(3), _result(4), _result(5)])
    assert s["mean"] == pytest.approx(4.0) and s["max"] == pytest.approx(5.0)
    one = summarize([_result(2.5)])
    assert one["mean"] == one["max"] == pytest.approx(2.5) and one["sd"] == 0.0
    with pytest.raises(ValueError):
        summarize([])


def test_summarize_recombines():
    errs = np.random.default_rng(1).uniform(0, 10, 11)
    rs = [_result(e) for e in errs]
    a, b, whole = summarize(rs[:4]), summarize(rs[4:]), summarize(rs)
    assert whole["mean"] == pytest.approx((4 * a["mean"] + 7 * b["mean"]) / 11, rel=1e-12)
    assert whole["max"] == max(a["max"], b["max"])


def test_per_kernel_breakdown():
    s = summarize([_result(1, "rbf"), _result(3, "cos")])
    assert s["per_kernel"]["rbf"]["mean"] == pytest.approx(1.0)


def test_interpolation_on_reference(ref_dataset):
    cfg = ExperimentConfig(kernels=("comp",), fusion=False, max_iter=300)
    rep = run_experiment(cfg, ref_dataset, ref_dataset)
    assert rep.mean_error("comp") < 1.0


def test_ext9_flags_extrapolated_targets(ref_dataset):
    cfg = ExperimentConfig(reference_subset="ext9", kernels=("rbf",), fusion=False, max_iter=50)
    rep = run_experiment(cfg, ref_dataset, ref_dataset)
    ext = subset_reference(ref_dataset, "ext9")
    inner = {tuple(p) for p in ext.Y}
    for r in rep.results:
        assert r.inside_hull == (tuple(r.true_location) in inner)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(reference_subset="ri7")
    with pytest.raises(ValueError):
        ExperimentConfig(sensor_subset=[])
    with pytest.raises(ValueError):
        ExperimentConfig(kernels=())


def test_report_files(tmp_path, ref_dataset):
    cfg = ExperimentConfig(kernels=("rbf", "cos"), max_iter=20, sensor_subset=[0, 1, 2, 3])
    # the rectangle centre is the singular point of the 4-sensor array
    with pytest.warns(ZeroRowWarning):
        rep = run_experiment(cfg, ref_dataset, ref_dataset)
    paths = write_report(rep, tmp_path)
    doc = json.loads(paths["summary"].read_text())
    assert set(doc["summaries"]) == {"rbf", "cos", "bma"}
    assert "rows 2-4" in doc["notes"]
    assert paths["svg"].read_text().lstrip().startswith("<?xml")
    assert len(paths["results"].read_text().splitlines()) == 1 + 3 * 35


@pytest.mark.filterwarnings("ignore::impactloc.preprocess.ZeroRowWarning")
def test_sensor_ablation_trend(experiments):
    four = experiments.run(sensors=[0, 1, 2, 3]).mean_error("bma")
    six = experiments.run().mean_error("bma")
    assert six <= four


def test_dataset_with_fewer_sensors_mismatch(ref_dataset):
    tgt = ref_dataset.with_sensors([0, 1, 2, 3])
    with pytest.raises(ValueError, match="sensor counts"):
        run_experiment(ExperimentConfig(kernels=("rbf",), max_iter=5), ref_dataset, tgt)
    assert isinstance(tgt, Dataset)
