import logging

import numpy as np
import pytest

from sparsemos.data.kitti import (
    FormatError,
    LabelRemap,
    SequenceDir,
    format_pose_line,
    read_calib,
    read_labels,
    read_poses,
    read_raw_labels,
    read_scan_bin,
    write_labels,
    write_poses,
    write_scan_bin,
)
from sparsemos.data.synthetic import SyntheticSceneConfig, generate_synthetic, write_sequence
from sparsemos.geometry import IGNORE, MOVING, STATIC, Pose

IDENTITY_LINE = "1 0 0 0 0 1 0 0 0 0 1 0\n"


class TestScanBin:
    def test_two_points(self, tmp_path):
        rec = np.array([[1, 2, 3, 0.5], [4, 5, 6, 0.1]], dtype="<f4")
        (tmp_path / "a.bin").write_bytes(rec.tobytes())
        assert len(rec.tobytes()) == 32
        s = read_scan_bin(tmp_path / "a.bin")
        np.testing.assert_array_equal(s.points, [[1, 2, 3], [4, 5, 6]])

    def test_empty(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(b"")
        assert len(read_scan_bin(tmp_path / "a.bin")) == 0

    def test_truncated(self, tmp_path):
        (tmp_path / "a.bin").write_bytes(bytes(20))
        with pytest.raises(FormatError, match="multiple of 16"):
            read_scan_bin(tmp_path / "a.bin")

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            read_scan_bin(tmp_path / "nope.bin")

    def test_round_trip_float32(self, tmp_path):
        pts = np.random.default_rng(0).normal(size=(50, 3)).astype(np.float32).astype(np.float64)
        write_scan_bin(tmp_path / "a.bin", pts)
        np.testing.assert_array_equal(read_scan_bin(tmp_path / "a.bin").points, pts)

    def test_range_crop(self, tmp_path):
        write_scan_bin(tmp_path / "a.bin", np.array([[1.0, 0, 0], [10.0, 0, 0]]))
        assert len(read_scan_bin(tmp_path / "a.bin", max_range=5.0)) == 1


class TestPoses:
    def test_identity_line(self, tmp_path):
        (tmp_path / "poses.txt").write_text(IDENTITY_LINE)
        (p,) = read_poses(tmp_path / "poses.txt")
        np.testing.assert_array_equal(p.matrix, np.eye(4))

    def test_bad_line_reports_line_number(self, tmp_path):
        (tmp_path / "poses.txt").write_text(IDENTITY_LINE + "1 0 0 0 0 1 0 0 0 0 1\n")
        with pytest.raises(FormatError, match=r"poses.txt:2.*12 values"):
            read_poses(tmp_path / "poses.txt")

    def test_non_numeric(self, tmp_path):
        (tmp_path / "poses.txt").write_text(IDENTITY_LINE.replace("0 0 1 0", "0 0 x 0"))
        with pytest.raises(FormatError, match=":1"):
            read_poses(tmp_path / "poses.txt")

    def test_non_orthonormal(self, tmp_path):
        (tmp_path / "poses.txt").write_text("2 0 0 0 0 1 0 0 0 0 1 0\n")
        with pytest.raises(FormatError, match="orthonormal"):
            read_poses(tmp_path / "poses.txt")

    def test_calib_conjugation(self, tmp_path):
        tr = Pose.from_yaw(0.3) @ Pose.from_translation((0.1, 0.2, 0.3))
        cam = Pose.from_translation((1.0, 0, 0))
        (tmp_path / "calib.txt").write_text("P0: " + " ".join(["0"] * 12) + "\nTr: " + format_pose_line(tr) + "\n")
        write_poses(tmp_path / "poses.txt", [cam])
        np.testing.assert_allclose(read_calib(tmp_path / "calib.txt").matrix, tr.matrix, atol=1e-12)
        (p,) = read_poses(tmp_path / "poses.txt", tmp_path / "calib.txt")
        np.testing.assert_allclose(p.matrix, (tr.inverse() @ cam @ tr).matrix, atol=1e-12)

    def test_calib_without_tr(self, tmp_path):
        (tmp_path / "calib.txt").write_text("P0: " + " ".join(["0"] * 12) + "\n")
        with pytest.raises(FormatError, match="Tr"):
            read_calib(tmp_path / "calib.txt")

    def test_round_trip(self, tmp_path):
        poses = [Pose.from_yaw(0.1 * i) @ Pose.from_translation((i, -i, 0.5)) for i in range(5)]
        write_poses(tmp_path / "poses.txt", poses)
        for a, b in zip(read_poses(tmp_path / "poses.txt"), poses):
            np.testing.assert_allclose(a.matrix, b.matrix, atol=1e-11)


class TestLabels:
    def test_default_remap(self, tmp_path):
        raw = np.array([0, 9, 40, 252, 1, 259 | (7 << 16)], dtype="<u4")
        (tmp_path / "a.label").write_bytes(raw.tobytes())
        assert read_labels(tmp_path / "a.label").tolist() == [IGNORE, STATIC, STATIC, MOVING, IGNORE, MOVING]

    def test_instance_bits_stripped(self, tmp_path):
        (tmp_path / "a.label").write_bytes(np.array([40 | (3 << 16)], dtype="<u4").tobytes())
        assert read_raw_labels(tmp_path / "a.label").tolist() == [40]

    def test_unknown_id_warns(self, tmp_path, caplog):
        (tmp_path / "a.label").write_bytes(np.array([9, 777], dtype="<u4").tobytes())
        with caplog.at_level(logging.WARNING):
            out = read_labels(tmp_path / "a.label")
        assert out.tolist() == [STATIC, STATIC]
        assert "777" in caplog.text

    def test_truncated(self, tmp_path):
        (tmp_path / "a.label").write_bytes(bytes(6))
        with pytest.raises(FormatError):
            read_labels(tmp_path / "a.label")

    def test_custom_remap_file(self, tmp_path):
        remap = LabelRemap(moving_ids={5}, ignore_ids={0}, default="ignore", warn_unknown=False)
        (tmp_path / "r.json").write_text(__import__("json").dumps(remap.to_dict()))
        loaded = LabelRemap.load(tmp_path / "r.json")
        assert loaded.apply(np.array([5, 0, 3])).tolist() == [MOVING, IGNORE, IGNORE]

    def test_invalid_default(self):
        with pytest.raises(ValueError):
            LabelRemap(default="car")

    def test_write_round_trip(self, tmp_path):
        lab = np.array([STATIC, MOVING, IGNORE, MOVING], dtype=np.int8)
        write_labels(tmp_path / "a.label", lab)
        assert read_labels(tmp_path / "a.label").tolist() == lab.tolist()


class TestSequenceDir:
    def test_synthetic_round_trip(self, tmp_path):
        frames = generate_synthetic(SyntheticSceneConfig(seed=1, scans_per_sequence=3))
        write_sequence(frames, tmp_path / "00")
        seq = SequenceDir(tmp_path / "00")
        assert len(seq) == 3 and seq.has_labels() and seq.name == "00"
        for i, fr in enumerate(frames):
            s = seq.scan(i)
            np.testing.assert_array_equal(s.points, fr.scan.points)
            np.testing.assert_array_equal(s.labels, fr.scan.labels)
            np.testing.assert_allclose(seq.pose(i).matrix, fr.pose.matrix, atol=1e-11)

    def test_missing_velodyne(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            SequenceDir(tmp_path)

    def test_too_few_poses(self, tmp_path):
        (tmp_path / "velodyne").mkdir()
        for i in range(2):
            write_scan_bin(tmp_path / "velodyne" / f"{i:06d}.bin", np.zeros((1, 3)))
        (tmp_path / "poses.txt").write_text(IDENTITY_LINE)
        with pytest.raises(FormatError, match="1 poses for 2 scans"):
            SequenceDir(tmp_path)

    def test_label_count_mismatch(self, tmp_path):
        (tmp_path / "velodyne").mkdir()
        (tmp_path / "labels").mkdir()
        write_scan_bin(tmp_path / "velodyne" / "000000.bin", np.zeros((2, 3)))
        write_labels(tmp_path / "labels" / "000000.label", np.array([STATIC]))
        (tmp_path / "poses.txt").write_text(IDENTITY_LINE)
        with pytest.raises(FormatError, match="1 labels for 2 points"):
            SequenceDir(tmp_path).scan(0)
