import gzip
import struct

import numpy as np
import pytest

from subtrust.data import (
    Dataset,
    IdxFormatError,
    SamplerConfig,
    SamplingError,
    SplitError,
    load_idx,
    split_subminibatches,
    stratified_minibatch,
    synth_gaussian,
    write_idx,
)
from subtrust.exceptions import ConfigError
from subtrust.netcore import Batch


def write_fixture(tmp_path, pixels, labels, images_magic=0x803, labels_magic=0x801):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    ip = tmp_path / "images.idx"
    lp = tmp_path / "labels.idx"
    ip.write_bytes(struct.pack(">IIII", images_magic, n, rows, cols) + pixels.tobytes())
    lp.write_bytes(struct.pack(">II", labels_magic, len(labels))
                   + bytes(int(v) for v in labels))
    return str(ip), str(lp)


class TestIdx:
    def test_handcrafted_two_image_fixture(self, tmp_path):
        pixels = np.arange(18, dtype=np.uint8).reshape(2, 3, 3)
        ip, lp = write_fixture(tmp_path, pixels, [0, 5])
        ds = load_idx(ip, lp)
        assert ds.inputs.shape == (2, 9)
        np.testing.assert_array_equal(ds.inputs * 255.0, pixels.reshape(2, 9))
        np.testing.assert_array_equal(ds.labels, [0, 5])

    def test_labels_parsed_in_order(self, tmp_path):
        pixels = np.zeros((3, 2, 2), dtype=np.uint8)
        ip, lp = write_fixture(tmp_path, pixels, [0, 5, 9])
        ds = load_idx(ip, lp)
        np.testing.assert_array_equal(ds.labels, [0, 5, 9])

    def test_wrong_images_magic_names_the_expected_value(self, tmp_path):
        pixels = np.zeros((1, 2, 2), dtype=np.uint8)
        ip, lp = write_fixture(tmp_path, pixels, [0], images_magic=0x801)
        with pytest.raises(IdxFormatError, match="0x00000803"):
            load_idx(ip, lp)

    def test_wrong_labels_magic_rejected(self, tmp_path):
        pixels = np.zeros((1, 2, 2), dtype=np.uint8)
        ip, lp = write_fixture(tmp_path, pixels, [0], labels_magic=0x803)
        with pytest.raises(IdxFormatError, match="0x00000801"):
            load_idx(ip, lp)

    def test_count_mismatch_rejected(self, tmp_path):
        pixels = np.zeros((2, 2, 2), dtype=np.uint8)
        ip, lp = write_fixture(tmp_path, pixels, [0])
        with pytest.raises(ValueError, match="mismatch"):
            load_idx(ip, lp)

    def test_truncated_file_is_an_io_error(self, tmp_path):
        pixels = np.zeros((2, 3, 3), dtype=np.uint8)
        ip, lp = write_fixture(tmp_path, pixels, [0, 1])
        raw = open(ip, "rb").read()
        open(ip, "wb").write(raw[:-5])
        with pytest.raises(EOFError, match="truncated"):
            load_idx(ip, lp)

    def test_gzip_transparent(self, tmp_path):
        pixels = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
        ip, lp = write_fixture(tmp_path, pixels, [1, 0])
        gz_ip = str(tmp_path / "images.idx.gz")
        with open(ip, "rb") as src, gzip.open(gz_ip, "wb") as dst:
            dst.write(src.read())
        ds = load_idx(gz_ip, lp)
        np.testing.assert_array_equal(ds.inputs * 255.0, pixels.reshape(2, 4))

    def test_round_trip_write_then_parse(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(5, 4, 3)).astype(np.uint8)
        labels = rng.integers(0, 4, size=5)
        ip, lp = str(tmp_path / "a.idx"), str(tmp_path / "b.idx")
        write_idx(pixels, labels, ip, lp)
        ds = load_idx(ip, lp)
        np.testing.assert_array_equal(np.round(ds.inputs * 255.0).astype(np.uint8),
                                      pixels.reshape(5, 12))
        np.testing.assert_array_equal(ds.labels, labels)
        # write what was parsed: bytes must be identical
        ip2, lp2 = str(tmp_path / "c.idx"), str(tmp_path / "d.idx")
        write_idx(np.round(ds.inputs * 255.0).astype(np.uint8).reshape(5, 4, 3),
                  ds.labels, ip2, lp2)
        assert open(ip, "rb").read() == open(ip2, "rb").read()
        assert open(lp, "rb").read() == open(lp2, "rb").read()


class TestStratified:
    def dataset(self, rng, n_classes=10, per_class=30, dim=12):
        return synth_gaussian(n_classes, per_class, dim, spread=5.0, seed=3)

    def test_exact_per_class_counts(self, rng):
        ds = self.dataset(rng)
        cfg = SamplerConfig(minibatch_size=100, sub_count=2)
        batch = stratified_minibatch(ds, cfg, np.random.default_rng(0))
        counts = np.bincount(batch.targets, minlength=10)
        assert np.all(counts == 10)

    def test_identical_rng_state_gives_identical_batches(self, rng):
        ds = self.dataset(rng)
        cfg = SamplerConfig(minibatch_size=50, sub_count=2)
        b1 = stratified_minibatch(ds, cfg, np.random.default_rng(9))
        b2 = stratified_minibatch(ds, cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(b1.indices, b2.indices)

    def test_sample_frequencies_close_to_uniform(self):
        # 10^4 draws of 2-per-class from 20-per-class pools: each sample is a
        # Binomial(T, 1/10); all counts must stay within 3 sigma of the mean
        ds = synth_gaussian(4, 20, 4, spread=5.0, seed=1)
        cfg = SamplerConfig(minibatch_size=8, sub_count=2)
        gen = np.random.default_rng(2024)
        counts = np.zeros(ds.n)
        draws = 10_000
        for _ in range(draws):
            batch = stratified_minibatch(ds, cfg, gen)
            counts[batch.indices] += 1
        p = 2.0 / 20.0
        sigma = np.sqrt(draws * p * (1 - p))
        assert np.all(np.abs(counts - draws * p) <= 3 * sigma)

    def test_pool_too_small_names_the_class(self, rng):
        ds = synth_gaussian(4, 3, 4, spread=5.0, seed=0)
        cfg = SamplerConfig(minibatch_size=16, sub_count=2)
        with pytest.raises(SamplingError, match="class"):
            stratified_minibatch(ds, cfg, np.random.default_rng(0))

    def test_indivisible_batch_size_rejected(self, rng):
        ds = self.dataset(rng)
        cfg = SamplerConfig(minibatch_size=55, sub_count=2)
        with pytest.raises(ConfigError, match="divisible"):
            stratified_minibatch(ds, cfg, np.random.default_rng(0))


class TestSplit:
    def test_exact_division(self, rng):
        batch = Batch(rng.normal(size=(100, 3)), rng.integers(0, 10, 100))
        parts = split_subminibatches(batch, 4)
        assert [p.n for p in parts] == [25, 25, 25, 25]

    def test_remainder_distribution(self, rng):
        batch = Batch(rng.normal(size=(10, 3)), rng.integers(0, 3, 10))
        parts = split_subminibatches(batch, 3)
        assert sorted((p.n for p in parts), reverse=True) == [4, 3, 3]

    def test_class_balance_when_divisible(self, rng):
        targets = np.repeat(np.arange(10), 10)
        order = rng.permutation(100)
        batch = Batch(rng.normal(size=(100, 3)), targets[order])
        parts = split_subminibatches(batch, 5)
        for part in parts:
            assert np.all(np.bincount(part.targets, minlength=10) == 2)

    def test_partition_is_disjoint_and_exhaustive(self, rng):
        batch = Batch(rng.normal(size=(37, 2)), rng.integers(0, 5, 37),
                      indices=np.arange(37))
        parts = split_subminibatches(batch, 4)
        assert max(p.n for p in parts) - min(p.n for p in parts) <= 1
        seen = np.concatenate([p.indices for p in parts])
        assert sorted(seen.tolist()) == list(range(37))

    def test_batch_too_small_rejected(self, rng):
        batch = Batch(rng.normal(size=(2, 2)), [0, 1])
        with pytest.raises(SplitError):
            split_subminibatches(batch, 3)


class TestSynth:
    def test_zero_spread_collapses_onto_the_means(self):
        ds = synth_gaussian(3, 5, 4, spread=0.0, seed=0)
        assert np.all(ds.inputs == 0.0)  # all means are the scaled origin

    def test_zero_noise_puts_samples_exactly_on_vertices(self):
        ds = synth_gaussian(3, 5, 4, spread=2.0, seed=0, noise=0.0)
        for c in range(3):
            rows = ds.inputs[ds.labels == c]
            expected = np.zeros(4)
            expected[c] = 2.0
            assert np.all(rows == expected)

    def test_wide_spread_is_linearly_separable(self):
        # spread 10 -> unit noise variance; nearest-mean classification
        ds = synth_gaussian(4, 250, 6, spread=10.0, seed=7)
        means = np.zeros((4, 6))
        means[np.arange(4), np.arange(4)] = 10.0
        pred = np.argmin(
            ((ds.inputs[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1
        )
        assert np.mean(pred == ds.labels) >= 0.99

    def test_deterministic(self):
        a = synth_gaussian(3, 10, 5, spread=4.0, seed=11)
        b = synth_gaussian(3, 10, 5, spread=4.0, seed=11)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_contiguous_head_stays_balanced(self):
        ds = synth_gaussian(5, 100, 8, spread=3.0, seed=2).subset(100)
        assert np.all(np.bincount(ds.labels, minlength=5) == 20)

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            synth_gaussian(1, 10, 5, spread=1.0, seed=0)
        with pytest.raises(ConfigError):
            synth_gaussian(6, 10, 5, spread=1.0, seed=0)  # dim < classes
