import csv

import numpy as np
import pytest

from flow_core import FlowField, InvalidArgumentError, OcclusionMask, ShapeMismatchError
from metrics import (
    AGGREGATE_ID,
    CSV_HEADER,
    PAIRED_HEADER,
    EpeReport,
    aggregate,
    epe,
    paired_rows,
    quantiles,
    read_csv,
    write_csv,
    write_paired_csv,
)


def random_case(rng, h, w):
    est = FlowField(rng.normal(size=(h, w, 2)))
    gt = FlowField(rng.normal(size=(h, w, 2)))
    occ = OcclusionMask(rng.random((h, w)) < 0.3)
    return est, gt, occ


def test_perfect_estimate():
    gt = FlowField.constant(4, 3, 1, 2)
    occ = OcclusionMask(np.eye(3, 4, dtype=bool))
    r = epe(gt, gt, occ)
    assert (r.epe_all, r.epe_noc, r.epe_occ) == (0.0, 0.0, 0.0)


def test_unit_offset():
    gt = FlowField.constant(4, 3, 1, 2)
    est = FlowField.constant(4, 3, 2, 2)
    r = epe(est, gt, OcclusionMask(np.eye(3, 4, dtype=bool)))
    assert r.epe_all == pytest.approx(1.0)
    assert r.epe_noc == pytest.approx(1.0)
    assert r.epe_occ == pytest.approx(1.0)


def test_hand_computed_regions():
    est = FlowField(np.array([[[3.0, 4.0], [0.0, 0.0]]]))
    gt = FlowField.zeros(2, 1)
    r = epe(est, gt, OcclusionMask(np.array([[1, 0]])), id="s")
    assert r == EpeReport("s", 2.5, 0.0, 5.0, 2, 1, 1)


def test_empty_region_is_absent():
    r = epe(FlowField.zeros(3, 3), FlowField.zeros(3, 3), OcclusionMask.zeros(3, 3))
    assert r.epe_occ is None
    assert r.n_occ == 0
    assert r.n_noc + r.n_occ == r.n_all == 9


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        epe(FlowField.zeros(3, 3), FlowField.zeros(3, 4), OcclusionMask.zeros(3, 3))


def test_weighted_mean_identity():
    r = epe(*random_case(np.random.default_rng(0), 9, 11))
    total = r.n_noc * r.epe_noc + r.n_occ * r.epe_occ
    assert total == pytest.approx(r.n_all * r.epe_all, rel=1e-6)
    assert min(r.epe_noc, r.epe_occ) <= r.epe_all <= max(r.epe_noc, r.epe_occ)


def test_sign_and_permutation_invariance():
    rng = np.random.default_rng(1)
    est, gt, occ = random_case(rng, 6, 7)
    flipped = FlowField(2 * gt.data - est.data)
    r1, r2 = epe(est, gt, occ), epe(flipped, gt, occ)
    assert r1.epe_all == pytest.approx(r2.epe_all)

    perm = rng.permutation(42)

    def shuffle(a):
        return a.reshape(42, *a.shape[2:])[perm].reshape(a.shape)

    r3 = epe(FlowField(shuffle(est.data)), FlowField(shuffle(gt.data)), OcclusionMask(shuffle(occ.data)))
    assert r3.epe_occ == pytest.approx(r1.epe_occ)
    assert r3.epe_noc == pytest.approx(r1.epe_noc)


def test_aggregate_single_report():
    r = epe(*random_case(np.random.default_rng(2), 6, 6), id="a")
    agg = aggregate([r])
    assert agg.id == AGGREGATE_ID
    assert agg.epe_all == pytest.approx(r.epe_all)
    assert agg.epe_occ == pytest.approx(r.epe_occ)
    assert agg.n_all == r.n_all


def test_aggregate_equal_counts_is_arithmetic_mean():
    a = EpeReport("a", 1.0, 1.0, None, 4, 4, 0)
    b = EpeReport("b", 3.0, 3.0, None, 4, 4, 0)
    agg = aggregate([a, b])
    assert agg.epe_all == 2.0
    assert agg.epe_occ is None


def test_aggregate_matches_pooled_pixels():
    rng = np.random.default_rng(3)
    cases = [random_case(rng, 5, 8), random_case(rng, 12, 3)]
    agg = aggregate([epe(*c) for c in cases])

    err = np.concatenate([np.linalg.norm(e.data.astype(np.float64) - g.data, axis=-1).ravel() for e, g, _ in cases])
    occ = np.concatenate([o.occluded.ravel() for _, _, o in cases])
    assert agg.epe_all == pytest.approx(err.mean())
    assert agg.epe_occ == pytest.approx(err[occ].mean())
    assert agg.epe_noc == pytest.approx(err[~occ].mean())


def test_aggregate_empty():
    with pytest.raises(InvalidArgumentError):
        aggregate([])


def test_csv_roundtrip(tmp_path):
    reports = [
        EpeReport("a", 1.5, 1.0, 2.0, 10, 5, 5),
        EpeReport("b", 0.5, 0.5, None, 10, 10, 0),
    ]
    path = tmp_path / "epe.csv"
    total = write_csv(str(path), reports)
    with open(path, newline="") as f:
        assert next(csv.reader(f)) == CSV_HEADER
    rows = read_csv(str(path))
    assert [r.id for r in rows] == ["a", "b", AGGREGATE_ID]
    assert rows[1].epe_occ is None
    assert rows[2].epe_all == pytest.approx(total.epe_all)
    assert total.epe_all == pytest.approx(1.0)
    assert rows[2].epe_occ == pytest.approx(2.0)


def test_paired_rows():
    fwd = [EpeReport("a", 2.0, 1.0, 4.0, 4, 2, 2)]
    bwd = [EpeReport("a", 1.0, 1.0, 1.0, 4, 2, 2)]
    rows = paired_rows(fwd, bwd)
    assert len(rows) == 2
    row = dict(zip(PAIRED_HEADER, rows[0]))
    assert float(row["delta_all"]) == -1.0
    assert float(row["delta_noc"]) == 0.0
    assert float(row["delta_occ"]) == -3.0
    assert rows[1][0] == AGGREGATE_ID


def test_paired_rows_need_same_sequences(tmp_path):
    fwd = [EpeReport("a", 1.0, 1.0, None, 1, 1, 0)]
    bwd = [EpeReport("b", 1.0, 1.0, None, 1, 1, 0)]
    with pytest.raises(InvalidArgumentError):
        write_paired_csv(str(tmp_path / "p.csv"), fwd, bwd)


def test_quantiles():
    q = quantiles([0.0, 1.0, 2.0, 3.0, 4.0])
    assert q == {"min": 0.0, "q1": 1.0, "median": 2.0, "q3": 3.0, "max": 4.0}
    with pytest.raises(InvalidArgumentError):
        quantiles([])
