import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from alseg import metrics_io as mio
from alseg.al_loop import PhaseReport
from alseg.errors import DataError, ParameterError, ShapeError

from _oracles import count_iou

masks = st.integers(1, 6).flatmap(lambda n: arrays(np.uint8, (n, n), elements=st.integers(0, 1)))


def test_iou_examples():
    m = np.array([[1, 0], [1, 1]])
    assert mio.iou(m, m).value == 1.0
    a = np.array([[1, 1, 0, 0]] * 2)
    assert mio.iou(a, 1 - a).value == 0.0


def test_iou_counted_fixture():
    pred = np.zeros((4, 4), dtype=int)
    truth = np.zeros((4, 4), dtype=int)
    pred[0, :4] = 1
    pred[1, :2] = 1          # 6 ones
    truth[0, 1:4] = 1
    truth[2, 0] = 1          # 4 ones, overlap 3
    s = mio.iou(pred, truth)
    assert (pred.sum(), truth.sum(), s.intersection, s.union) == (6, 4, 3, 7)
    assert s.value == 3 / 7
    assert s.value == pytest.approx(0.428571, abs=1e-6)


def test_iou_empty_convention_and_errors():
    z = np.zeros((3, 3))
    assert mio.iou(z, z).value == 1.0
    with pytest.raises(ShapeError):
        mio.iou(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(DataError):
        mio.iou(np.full((2, 2), 2), np.zeros((2, 2)))


@given(st.data())
@settings(max_examples=80, deadline=None)
def test_iou_properties(data):
    a = data.draw(masks)
    b = data.draw(arrays(np.uint8, a.shape, elements=st.integers(0, 1)))
    s = mio.iou(a, b).value
    assert s == mio.iou(b, a).value
    assert 0.0 <= s <= 1.0
    assert mio.iou(a, a).value == 1.0
    assert s == count_iou(a, b)


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_iou_monotone_when_adding_true_positive(data):
    truth = data.draw(masks)
    pred = data.draw(arrays(np.uint8, truth.shape, elements=st.integers(0, 1)))
    missed = np.argwhere((truth == 1) & (pred == 0))
    if len(missed) == 0:
        return
    i = tuple(missed[data.draw(st.integers(0, len(missed) - 1))])
    better = pred.copy()
    better[i] = 1
    assert count_iou(better, truth) >= count_iou(pred, truth)
    assert mio.iou(better, truth).value >= mio.iou(pred, truth).value


def test_predict_mask():
    z = np.zeros((1, 2, 3, 3))
    z[:, 1] = 1.0
    assert np.all(mio.predict_mask(z) == 1)
    assert np.all(mio.predict_mask(np.zeros((1, 2, 3, 3))) == 0)
    r = np.random.default_rng(0)
    z = r.normal(size=(1, 2, 5, 5))
    oracle = np.array([[1 if z[0, 1, i, j] > z[0, 0, i, j] else 0 for j in range(5)] for i in range(5)])
    np.testing.assert_array_equal(mio.predict_mask(z), oracle)
    with pytest.raises(ParameterError):
        mio.predict_mask(np.zeros((1, 3, 2, 2)))


def _reports():
    return [PhaseReport(1, 40, 0.5, 0.3, [3, 4], 1.25), PhaseReport(2, 90, 0.75, 0.2, [5], 2.5)]


def test_emit_reports_format(tmp_path):
    mio.emit_reports([("MFE", 0, _reports())], tmp_path, pool_size=2690)
    lines = (tmp_path / "phase_log.csv").read_text().splitlines()
    assert lines[0] == ",".join(mio.PHASE_LOG_COLUMNS)
    assert lines[2] == "2,90,3.345725,MFE,0,0.750000,0.200000,0.000000"
    curves = (tmp_path / "curves.csv").read_text().splitlines()
    assert curves == ["phase,acquisition,seed,test_iou", "1,MFE,0,0.500000", "2,MFE,0,0.750000"]
    assert b"\r" not in (tmp_path / "curves.csv").read_bytes()


def test_emit_reports_empty_is_header_only(tmp_path):
    mio.emit_reports([], tmp_path, pool_size=10)
    assert (tmp_path / "phase_log.csv").read_text() == ",".join(mio.PHASE_LOG_COLUMNS) + "\n"


def test_emit_reports_byte_identical(tmp_path):
    mio.emit_reports([("Random", 1, _reports())], tmp_path / "a", pool_size=100)
    mio.emit_reports([("Random", 1, _reports())], tmp_path / "b", pool_size=100)
    for name in ("phase_log.csv", "curves.csv", "queried_ids.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_timing_only_when_requested(tmp_path):
    mio.emit_reports([("MFE", 0, _reports())], tmp_path, pool_size=100, timing=True)
    assert mio.read_csv(tmp_path / "phase_log.csv")[0]["wallclock_s"] == "1.250000"
