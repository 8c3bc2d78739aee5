"""Dataset loading: determinism, normalization, and format error contracts."""

import struct

import numpy as np
import pytest

from nmfprune.datasets import (
    CsvSource,
    DatasetError,
    IdxSource,
    SyntheticBlobs,
    load_dataset,
)


def write_idx_images(path, images):
    n, h, w = images.shape
    path.write_bytes(struct.pack(">iiii", 0x00000803, n, h, w) + images.tobytes())


def write_idx_labels(path, labels):
    path.write_bytes(struct.pack(">ii", 0x00000801, len(labels)) + labels.tobytes())


class TestBlobs:
    def test_deterministic(self):
        spec = SyntheticBlobs(1000, 16, 2, seed=5)
        a = load_dataset(spec, split_seed=1)
        b = load_dataset(spec, split_seed=1)
        assert np.array_equal(a.train_x, b.train_x)
        assert np.array_equal(a.train_y, b.train_y)
        assert np.array_equal(a.test_x, b.test_x)

    def test_split_sizes(self):
        ds = load_dataset(SyntheticBlobs(100, 4, 3, seed=0))
        assert len(ds.train_x) == 80
        assert len(ds.test_x) == 20
        assert ds.n_classes == 3
        assert ds.n_features == 4

    def test_normalized_on_train_split(self):
        ds = load_dataset(SyntheticBlobs(500, 8, 2, seed=1), split_seed=2)
        assert np.max(np.abs(ds.train_x.mean(axis=0))) < 1e-9
        assert np.max(np.abs(ds.train_x.std(axis=0) - 1.0)) < 1e-9

    def test_different_split_seed_differs(self):
        spec = SyntheticBlobs(200, 4, 2, seed=3)
        a = load_dataset(spec, split_seed=0)
        b = load_dataset(spec, split_seed=99)
        assert not np.array_equal(a.train_y, b.train_y)

    def test_degenerate_spec_rejected(self):
        with pytest.raises(DatasetError):
            load_dataset(SyntheticBlobs(1, 4, 2))


class TestCsv:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("1.0,2.0,0\n3.0,4.0,1\n" * 10)
        ds = load_dataset(CsvSource(str(p), label_column=2))
        assert ds.n_features == 2
        assert ds.n_classes == 2
        assert len(ds.train_x) + len(ds.test_x) == 20

    def test_header_skipped(self, tmp_path):
        p = tmp_path / "data.csv"
        p.write_text("x,y,label\n" + "1.0,2.0,0\n3.0,4.0,1\n" * 5)
        ds = load_dataset(CsvSource(str(p), label_column=2))
        assert len(ds.train_x) + len(ds.test_x) == 10

    def test_non_numeric_cell_located(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1.0,2.0,0\n3.0,oops,1\n")
        with pytest.raises(DatasetError, match=r"row 2, column 1"):
            load_dataset(CsvSource(str(p), label_column=2))

    def test_negative_label_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1.0,-1\n2.0,0\n")
        with pytest.raises(DatasetError, match="non-negative integer"):
            load_dataset(CsvSource(str(p), label_column=1))

    def test_missing_file_rejected(self):
        with pytest.raises(DatasetError, match="not found"):
            load_dataset(CsvSource("/nonexistent.csv", label_column=0))

    def test_ragged_rows_rejected(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("1.0,2.0,0\n1.0,2.0,3.0,0\n")
        with pytest.raises(DatasetError, match="inconsistent"):
            load_dataset(CsvSource(str(p), label_column=0))


class TestIdx:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, (50, 4, 4), dtype=np.uint8)
        labels = rng.integers(0, 3, 50, dtype=np.uint8)
        # Tiny counts can drop a class from the 80% split; pin one of each.
        labels[:3] = [0, 1, 2]
        write_idx_images(tmp_path / "imgs", images)
        write_idx_labels(tmp_path / "lbls", labels)
        ds = load_dataset(IdxSource(str(tmp_path / "imgs"), str(tmp_path / "lbls")))
        assert ds.image_shape == (1, 4, 4)
        assert ds.n_features == 16
        assert len(ds.train_x) == 40

    def test_magic_mismatch_names_expected(self, tmp_path):
        bad = tmp_path / "bad"
        bad.write_bytes(struct.pack(">iiii", 0x00000802, 1, 2, 2) + bytes(4))
        with pytest.raises(DatasetError, match="0x00000803"):
            load_dataset(IdxSource(str(bad), str(bad)))

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "trunc"
        p.write_bytes(struct.pack(">iiii", 0x00000803, 10, 4, 4) + bytes(8))
        with pytest.raises(DatasetError, match="data bytes"):
            load_dataset(IdxSource(str(p), str(p)))

    def test_count_mismatch_rejected(self, tmp_path):
        images = np.zeros((5, 2, 2), dtype=np.uint8)
        labels = np.zeros(6, dtype=np.uint8)
        write_idx_images(tmp_path / "imgs", images)
        write_idx_labels(tmp_path / "lbls", labels)
        with pytest.raises(DatasetError, match="counts differ"):
            load_dataset(IdxSource(str(tmp_path / "imgs"), str(tmp_path / "lbls")))
