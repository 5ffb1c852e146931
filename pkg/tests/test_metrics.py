"""Outlier metrics against a brute-force per-pixel oracle."""

import numpy as np
import pytest

from msflow.metrics import (
    GroundTruth,
    aggregate_reports,
    evaluate,
    occlusion_split,
    outlier_map,
    render_error_map,
    round_percent,
    sceneflow_outliers,
)


def brute_force_outliers(pred, gt, valid, kind, combiner="and"):
    h, w = valid.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            if not valid[i, j]:
                continue
            if kind == "disparity":
                err = abs(pred[i, j] - gt[i, j])
                mag = abs(gt[i, j])
            else:
                err = np.hypot(*(pred[i, j] - gt[i, j]))
                mag = np.hypot(*gt[i, j])
            a = err > 3.0
            b = err > 0.05 * mag
            out[i, j] = (a and b) if combiner == "and" else (a or b)
    return out


def _random_instance(rng, h=16, w=32):
    gt_d1 = rng.uniform(0.5, 60, size=(h, w))
    gt_d2 = rng.uniform(0.5, 60, size=(h, w))
    gt_fl = rng.uniform(-40, 40, size=(h, w, 2))
    pred_d1 = gt_d1 + rng.normal(scale=3, size=(h, w))
    pred_d2 = gt_d2 + rng.normal(scale=3, size=(h, w))
    pred_fl = gt_fl + rng.normal(scale=3, size=(h, w, 2))
    masks = {}
    for name in ("d1", "d2", "fl"):
        occ = rng.random((h, w)) < 0.9
        noc = occ & (rng.random((h, w)) < 0.8)
        masks[name] = (occ, noc)
    gt = GroundTruth(
        d1=gt_d1, d2=gt_d2, fl=gt_fl,
        valid_d1_occ=masks["d1"][0], valid_d1_noc=masks["d1"][1],
        valid_d2_occ=masks["d2"][0], valid_d2_noc=masks["d2"][1],
        valid_fl_occ=masks["fl"][0], valid_fl_noc=masks["fl"][1],
    )
    return (pred_d1, pred_d2, pred_fl), gt


class TestOutlierMap:
    def test_official_thresholds(self):
        gt = np.array([[[10.0, 0.0]]])
        pred = np.array([[[14.0, 0.0]]])
        valid = np.ones((1, 1), dtype=bool)
        # err 4 > 3 and 40% > 5%: outlier under both combiners
        assert outlier_map(pred, gt, valid, "flow", "and")[0, 0]
        assert outlier_map(pred, gt, valid, "flow", "or")[0, 0]

    def test_combiner_difference(self):
        gt = np.array([[[100.0, 0.0]]])
        pred = np.array([[[104.0, 0.0]]])
        valid = np.ones((1, 1), dtype=bool)
        # err 4 > 3 but 4% < 5%: inlier under AND, outlier under OR
        assert not outlier_map(pred, gt, valid, "flow", "and")[0, 0]
        assert outlier_map(pred, gt, valid, "flow", "or")[0, 0]

    def test_perfect_prediction(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(1, 50, size=(8, 8))
        out = outlier_map(gt.copy(), gt, np.ones((8, 8), bool), "disparity")
        assert not out.any()

    def test_invalid_pixels_never_outliers(self):
        gt = np.full((4, 4), 10.0)
        pred = gt + 100.0
        valid = np.zeros((4, 4), bool)
        assert not outlier_map(pred, gt, valid, "disparity").any()

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            outlier_map(np.zeros((2, 2)), np.zeros((2, 2)), np.ones((2, 2), bool), "colour")

    def test_monotonicity(self):
        rng = np.random.default_rng(1)
        gt = rng.uniform(1, 50, size=(8, 8))
        pred = gt + rng.normal(scale=2, size=(8, 8))
        valid = np.ones((8, 8), bool)
        base = outlier_map(pred, gt, valid, "disparity").sum()
        pred[3, 3] = gt[3, 3] + 50.0
        assert outlier_map(pred, gt, valid, "disparity").sum() >= base


class TestSceneflowOutliers:
    def test_all_clean(self):
        z = np.zeros((4, 4), bool)
        assert not sceneflow_outliers(z, z, z, np.ones((4, 4), bool)).any()

    def test_union_rule(self):
        z = np.zeros((4, 4), bool)
        d2 = z.copy()
        d2[1, 2] = True
        out = sceneflow_outliers(z, d2, z, np.ones((4, 4), bool))
        assert out[1, 2] and out.sum() == 1

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            (p1, p2, pf), gt = _random_instance(rng)
            d1 = outlier_map(p1, gt.d1, gt.valid_d1_occ, "disparity")
            assert np.array_equal(d1, brute_force_outliers(p1, gt.d1, gt.valid_d1_occ, "disparity"))
            fl = outlier_map(pf, gt.fl, gt.valid_fl_occ, "flow")
            assert np.array_equal(fl, brute_force_outliers(pf, gt.fl, gt.valid_fl_occ, "flow"))
            joint = gt.valid_d1_occ & gt.valid_d2_occ & gt.valid_fl_occ
            d2 = outlier_map(p2, gt.d2, gt.valid_d2_occ, "disparity")
            sf = sceneflow_outliers(d1, d2, fl, joint)
            expect = (d1 | d2 | fl) & joint
            assert np.array_equal(sf, expect)


class TestOcclusionSplit:
    def test_equal_masks_empty_occ(self):
        rng = np.random.default_rng(3)
        v = rng.random((6, 6)) < 0.8
        gt = GroundTruth(
            d1=np.ones((6, 6)), d2=np.ones((6, 6)), fl=np.ones((6, 6, 2)),
            valid_d1_occ=v, valid_d1_noc=v,
            valid_d2_occ=v, valid_d2_noc=v,
            valid_fl_occ=v, valid_fl_noc=v,
        )
        noc, occ = occlusion_split(gt)
        assert not occ.any()
        assert np.array_equal(noc, v)

    def test_single_component_noc_invalid(self):
        ones = np.ones((3, 3), bool)
        fl_noc = ones.copy()
        fl_noc[1, 1] = False
        gt = GroundTruth(
            d1=np.ones((3, 3)), d2=np.ones((3, 3)), fl=np.ones((3, 3, 2)),
            valid_d1_occ=ones, valid_d1_noc=ones,
            valid_d2_occ=ones, valid_d2_noc=ones,
            valid_fl_occ=ones, valid_fl_noc=fl_noc,
        )
        noc, occ = occlusion_split(gt)
        assert occ[1, 1] and not noc[1, 1]

    def test_partition(self):
        rng = np.random.default_rng(4)
        (_, _, _), gt = _random_instance(rng)
        noc, occ = occlusion_split(gt)
        joint = gt.valid_d1_occ & gt.valid_d2_occ & gt.valid_fl_occ
        assert not (noc & occ).any()
        assert np.array_equal(noc | occ, joint)

    def test_noc_subset_enforced(self):
        ones = np.ones((2, 2), bool)
        zeros = np.zeros((2, 2), bool)
        with pytest.raises(ValueError, match="subset"):
            GroundTruth(
                d1=np.ones((2, 2)), d2=np.ones((2, 2)), fl=np.ones((2, 2, 2)),
                valid_d1_occ=zeros, valid_d1_noc=ones,
                valid_d2_occ=ones, valid_d2_noc=ones,
                valid_fl_occ=ones, valid_fl_noc=ones,
            )


class TestEvaluate:
    def test_sf_bounds(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            (p1, p2, pf), gt = _random_instance(rng)
            joint = gt.valid_d1_occ & gt.valid_d2_occ & gt.valid_fl_occ
            if joint.sum() == 0:
                continue
            rep = evaluate(p1, p2, pf, gt)
            rates = []
            for pred, g, kind in ((p1, gt.d1, "disparity"), (p2, gt.d2, "disparity"), (pf, gt.fl, "flow")):
                m = outlier_map(pred, g, joint, kind)
                rates.append(100.0 * m.sum() / joint.sum())
            assert rep.sf_all >= max(rates) - 1e-9
            assert rep.sf_all <= sum(rates) + 1e-9

    def test_perfect_all_zero(self):
        rng = np.random.default_rng(6)
        (_, _, _), gt = _random_instance(rng)
        rep = evaluate(gt.d1, gt.d2, gt.fl, gt)
        assert rep.as_dict() == {k: 0.0 for k in rep.as_dict()}

    def test_report_io(self, tmp_path):
        _, gt = _random_instance(np.random.default_rng(7))
        rep = evaluate(gt.d1 + 10, gt.d2, gt.fl, gt)
        rep.write(tmp_path / "metrics.txt", tmp_path / "metrics.json")
        text = (tmp_path / "metrics.txt").read_text()
        for key in ("D1-all", "D2-all", "Fl-all", "SF-all", "SF-noc", "SF-occ"):
            assert key in text
        import json

        data = json.loads((tmp_path / "metrics.json").read_text())
        assert set(data) == {"D1-all", "D2-all", "Fl-all", "SF-all", "SF-noc", "SF-occ"}

    def test_aggregate_mean(self):
        rng = np.random.default_rng(8)
        reps = []
        for _ in range(3):
            (p1, p2, pf), gt = _random_instance(rng)
            reps.append(evaluate(p1, p2, pf, gt))
        agg = aggregate_reports(reps)
        assert agg.sf_all == pytest.approx(sum(r.sf_all for r in reps) / 3)


class TestRounding:
    def test_half_up(self):
        assert round_percent(1.005) == 1.01
        assert round_percent(1.004999) == 1.0
        assert round_percent(2.675) == 2.68  # not banker's 2.67


class TestRenderErrorMap:
    def test_all_inliers_blue(self):
        out = np.zeros((4, 4), bool)
        img = render_error_map(out, np.ones((4, 4), bool))
        assert (img == img[0, 0]).all()
        assert img[0, 0, 2] > img[0, 0, 0]  # blue-dominant

    def test_all_outliers_red(self):
        out = np.ones((4, 4), bool)
        img = render_error_map(out, np.ones((4, 4), bool))
        assert img[0, 0, 0] > img[0, 0, 2]  # red-dominant

    def test_invalid_dark(self):
        out = np.zeros((4, 4), bool)
        img = render_error_map(out, np.zeros((4, 4), bool))
        assert (img <= 40).all()

    def test_occ_set_dark(self):
        out = np.zeros((4, 4), bool)
        occ = np.zeros((4, 4), bool)
        occ[0, 0] = True
        img = render_error_map(out, np.ones((4, 4), bool), occ)
        assert (img[0, 0] <= 40).all()
        assert img[1, 1, 2] > 100
