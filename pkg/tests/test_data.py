import numpy as np
import pytest

from oudefend.data import (
    DatasetSpec,
    VideoBatch,
    class_names,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from oudefend.errors import ConfigError, FormatError


class TestGenerate:
    def test_same_seed_bitwise_identical(self):
        spec = DatasetSpec(num_train=10, num_test=5, seed=3)
        a_train, a_test = generate_dataset(spec)
        b_train, b_test = generate_dataset(spec)
        assert np.array_equal(a_train.pixels, b_train.pixels)
        assert np.array_equal(a_train.labels, b_train.labels)
        assert np.array_equal(a_test.pixels, b_test.pixels)

    def test_static_class_without_noise_is_constant(self):
        spec = DatasetSpec(num_train=10, num_test=5, noise_std=0.0, seed=0)
        train, _ = generate_dataset(spec)
        static = train.pixels[train.labels == 4]
        assert static.shape[0] > 0
        for video in static:
            for t in range(1, video.shape[1]):
                assert np.array_equal(video[:, t], video[:, 0])

    def test_moving_classes_move(self):
        spec = DatasetSpec(num_train=10, num_test=5, noise_std=0.0, seed=1)
        train, _ = generate_dataset(spec)
        mover = train.pixels[train.labels == 1][0]
        assert not np.array_equal(mover[:, 1], mover[:, 0])

    def test_class_balance_500(self):
        spec = DatasetSpec(num_train=500, num_test=5, seed=2)
        train, _ = generate_dataset(spec)
        counts = np.bincount(train.labels, minlength=5)
        assert counts.max() - counts.min() <= 1

    def test_pixels_in_range_and_finite(self):
        train, test = generate_dataset(DatasetSpec(num_train=8, num_test=4, seed=5))
        for batch in (train, test):
            assert np.isfinite(batch.pixels).all()
            assert batch.pixels.min() >= 0.0 and batch.pixels.max() <= 1.0

    def test_square_must_fit(self):
        with pytest.raises(ConfigError):
            DatasetSpec(height=16, width=16)  # square 6 + travel 14 > 16

    def test_class_names(self):
        spec = DatasetSpec(num_train=4, num_test=4)
        names = class_names(spec)
        assert names[0] == "left"
        assert len(names) == spec.num_classes
        assert len(set(names)) == len(names)


class TestPersistence:
    def make(self, seed=7):
        return generate_dataset(DatasetSpec(num_train=6, num_test=4, seed=seed))

    def test_round_trip_bitwise(self, tmp_path):
        batches = self.make()
        path = tmp_path / "data.bin"
        save_dataset(path, batches)
        train, test = load_dataset(path)
        assert np.array_equal(train.pixels, batches[0].pixels)
        assert np.array_equal(train.labels, batches[0].labels)
        assert np.array_equal(test.pixels, batches[1].pixels)
        assert np.array_equal(test.labels, batches[1].labels)

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "data.bin"
        save_dataset(path, self.make())
        raw = bytearray(path.read_bytes())
        raw[0] = ord("X")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_wrong_version(self, tmp_path):
        path = tmp_path / "data.bin"
        save_dataset(path, self.make())
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "data.bin"
        save_dataset(path, self.make())
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "data.bin"
        save_dataset(path, self.make())
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_dataset(path)

    def test_subset_helper(self):
        train, _ = self.make()
        sub = train.subset(np.arange(3))
        assert isinstance(sub, VideoBatch) and len(sub) == 3
