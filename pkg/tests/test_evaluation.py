import numpy as np
import pytest

import oracles
from sparsemos.evaluation import ConfusionCounts, accumulate, format_report, iou_mos, read_report, write_report
from sparsemos.geometry import IGNORE, MOVING, STATIC


class TestIoU:
    def test_worked_case(self):
        assert iou_mos(ConfusionCounts(tp=50, fp=25, fn=25)) == 0.5

    def test_perfect(self):
        lab = np.array([MOVING, STATIC, MOVING])
        assert iou_mos(accumulate(lab, lab)) == 1.0

    def test_inverted(self):
        gt = np.array([MOVING, STATIC, MOVING])
        pred = np.where(gt == MOVING, STATIC, MOVING)
        assert iou_mos(accumulate(pred, gt)) == 0.0

    def test_empty_denominator_flagged(self):
        c = accumulate(np.array([STATIC, STATIC]), np.array([STATIC, STATIC]))
        assert iou_mos(c) == 1.0
        assert iou_mos(c, with_flag=True) == (1.0, True)
        assert iou_mos(ConfusionCounts(tp=1), with_flag=True) == (1.0, False)

    def test_ignored_points_excluded(self):
        gt = np.array([MOVING, IGNORE, STATIC])
        pred = np.array([MOVING, MOVING, STATIC])
        c = accumulate(pred, gt, gt == IGNORE)
        assert (c.tp, c.fp, c.fn, c.tn, c.ignored) == (1, 0, 0, 1, 1)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(0, 60))
            gt = rng.choice([STATIC, MOVING, IGNORE], n)
            pred = rng.choice([STATIC, MOVING], n)
            ignore = gt == IGNORE
            assert iou_mos(accumulate(pred, gt, ignore)) == oracles.iou_bruteforce(pred, gt, ignore)

    def test_counts_add(self):
        a, b = ConfusionCounts(1, 2, 3, 4, 5), ConfusionCounts(5, 4, 3, 2, 1)
        assert a + b == ConfusionCounts(6, 6, 6, 6, 6)
        assert (a + b).total == 30

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(tp=-1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accumulate(np.zeros(2), np.zeros(3))
        with pytest.raises(ValueError):
            accumulate(np.zeros(2), np.zeros(2), np.zeros(3, bool))


class TestReport:
    def test_text(self):
        txt = format_report(ConfusionCounts(tp=50, fp=25, fn=25), {"00": ConfusionCounts(tn=3)})
        assert txt.startswith("iou_mos 0.500000\n")
        assert "sequence 00: iou_mos 1.000000" in txt and "(no moving points)" in txt

    def test_file_round_trip(self, tmp_path):
        write_report(tmp_path / "m.txt", ConfusionCounts(tp=3, fp=1), {"01": ConfusionCounts(tp=3, fp=1)})
        r = read_report(tmp_path / "m.txt")
        assert float(r["iou_mos"]) == 0.75
        assert r["tp"] == "3" and r["seq.01.empty"] == "0"
