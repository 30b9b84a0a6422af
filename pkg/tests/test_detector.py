import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdrradar import detector as det
from hdrradar.errors import CalibrationError, ParameterError
from hdrradar.numerics import SeededRng, complex_gaussian_noise


def test_cfar_factor_closed_form():
    # Pfa of cell-averaging with N exponential references is (1 + T/N)^-N
    for n in (8, 32, 144):
        t = float(det.cfar_factor(n, 1e-4))
        assert (1 + t / n) ** (-n) == pytest.approx(1e-4, rel=1e-10)
    assert float(det.cfar_factor(32, 1e-4)) == pytest.approx(10.67, abs=0.01)


def test_config_validation_and_counts():
    assert det.CfarConfig().full_training_count == 144
    for bad in (dict(alpha=0.0), dict(alpha=0.5), dict(train_cells=(0, 0)), dict(guard_cells=(1,))):
        with pytest.raises(ParameterError):
            det.CfarConfig(**bad)


def test_window_larger_than_frame():
    with pytest.raises(ParameterError):
        det.ca_cfar(np.ones((8, 8)), det.CfarConfig())


def test_cfar_on_noise_holds_alpha():
    cfg = det.CfarConfig(alpha=1e-3)
    fa = cells = 0
    for i in range(8):
        z = complex_gaussian_noise(SeededRng(i, 77), 256, 512, 1.0).data
        fa += len(det.ca_cfar(z, cfg))
        cells += z.size
    assert 0.5e-3 <= fa / cells <= 2e-3


def test_cfar_finds_strong_cell_and_edges_have_fewer_refs():
    z = complex_gaussian_noise(SeededRng(0), 64, 64, 1.0).data.copy()
    z[10, 0] = 100.0
    ds = det.ca_cfar(z, det.CfarConfig(alpha=1e-3))
    assert (10, 0) in {(r, c) for r, c, _ in ds.cells}
    ratio, thr = det.cfar_ratio(z, det.CfarConfig(alpha=1e-3))
    assert thr[0, 0] > thr[0, 32]   # clamped range edge: fewer references, higher factor


def test_cfar_zero_estimate_no_detection():
    z = np.zeros((32, 32))
    assert len(det.ca_cfar(z, det.CfarConfig())) == 0


def test_detection_set_sorted():
    ds = det.DetectionSet([(1, 1, 0.5), (2, 2, 0.9), (0, 0, 0.5)])
    assert [c[2] for c in ds.cells] == [0.9, 0.5, 0.5]
    assert ds.as_array().shape == (3, 2)


def test_prob_threshold_quantile():
    g = np.random.default_rng(0)
    maps = [g.random((100, 100)) for _ in range(10)]
    thr = det.calibrate_prob_threshold(maps, 1e-2)
    vals = np.concatenate([m.ravel() for m in maps])
    assert np.count_nonzero(vals > thr.value) == 1000
    assert not thr.degenerate
    held = g.random((1000, 1000))
    assert 0.5e-2 <= np.mean(held > thr.value) <= 2e-2


def test_prob_threshold_needs_enough_cells_and_flags_ties():
    with pytest.raises(CalibrationError):
        det.calibrate_prob_threshold([np.zeros((10, 10))], 1e-2)
    thr = det.calibrate_prob_threshold([np.full((100, 100), 0.5)], 1e-2)
    assert thr.degenerate
    assert len(det.detect_prob_map(np.full((4, 4), 0.5), thr)) == 0


def brute_match(dets, truth, tol, shape, dilation):
    m, n = shape
    hits = []
    for cells in truth:
        hit = False
        for r, c, _ in dets:
            for d, rr in cells:
                dd = min((r - d) % m, (d - r) % m)
                if max(dd, abs(c - rr)) <= tol:
                    hit = True
        hits.append(hit)
    dil = set()
    for cells in truth:
        for d, rr in cells:
            for a in range(-dilation, dilation + 1):
                for b in range(-dilation, dilation + 1):
                    if 0 <= rr + b < n:
                        dil.add(((d + a) % m, rr + b))
    fa = sum((r, c) not in dil for r, c, _ in dets)
    return hits, fa, m * n - len(dil)


cell = st.tuples(st.integers(0, 15), st.integers(0, 19))


@given(st.lists(cell, max_size=12, unique=True),
       st.lists(st.lists(cell, min_size=1, max_size=3), max_size=4))
def test_match_truth_against_brute_force(det_cells, truth):
    ds = det.DetectionSet([(r, c, 1.0) for r, c in det_cells])
    res = det.match_truth(ds, truth, tol=1, shape=(16, 20), dilation=2)
    hits, fa, nt = brute_match(ds.cells, truth, 1, (16, 20), 2)
    assert res.hits == hits
    assert res.false_alarms == fa
    assert res.non_truth_cells == nt


def test_match_truth_doppler_wrap():
    ds = det.DetectionSet([(255, 10, 1.0)])
    res = det.match_truth(ds, [[(0, 11)]], shape=(256, 512))
    assert res.hits == [True] and res.false_alarms == 0 and res.pd == 1.0


def test_cluster_merges_wrapped_neighbours():
    ds = det.DetectionSet([(0, 5, 2.0), (255, 5, 3.0), (100, 100, 1.0)])
    cl = det.cluster_detections(ds, (256, 512))
    assert [(r, c) for r, c, _ in cl.cells] == [(255, 5), (100, 100)]


def test_detections_csv_round_trip(tmp_path):
    rows = [(0, 1, 2, 0.25, True), (3, 4, 5, 1e-9, False)]
    det.write_detections_csv(tmp_path / "d.csv", rows)
    assert det.read_detections_csv(tmp_path / "d.csv") == rows
