import os
from collections import Counter

import numpy as np
import pytest

from gradpipe.convergence import LogisticObjective
from gradpipe.data import (
    BatchSampler,
    load_idx,
    next_batch,
    read_idx,
    synth_blobs,
    synth_quadratic_stream,
    write_idx,
)
from gradpipe.errors import ConfigError, IdxParseError

MNIST_CANDIDATES = [
    "/root/data/t10k-images-idx3-ubyte",
    "/root/data/mnist/t10k-images-idx3-ubyte",
    os.path.expanduser("~/mnist/t10k-images-idx3-ubyte"),
]


def make_idx_fixture(path, n=4, rows=5, cols=6, seed=0):
    gen = np.random.default_rng(seed)
    images = gen.integers(0, 256, size=(n, rows, cols)).astype(np.uint8)
    write_idx(str(path), images)
    return images


class TestIdx:
    def test_fixture_round_trip(self, tmp_path):
        img_path = tmp_path / "images.idx"
        images = make_idx_fixture(img_path)
        parsed = read_idx(str(img_path))
        assert parsed.shape == (4, 5, 6)
        assert np.array_equal(parsed, images)

    def test_write_read_write_byte_identical(self, tmp_path):
        p1 = tmp_path / "a.idx"
        p2 = tmp_path / "b.idx"
        make_idx_fixture(p1)
        write_idx(str(p2), read_idx(str(p1)))
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_with_labels(self, tmp_path):
        img_path = tmp_path / "images.idx"
        lbl_path = tmp_path / "labels.idx"
        make_idx_fixture(img_path)
        write_idx(str(lbl_path), np.array([0, 1, 2, 1], dtype=np.uint8))
        ds = load_idx(str(img_path), str(lbl_path))
        assert ds.n == 4
        assert ds.dim == 30
        assert ds.features.max() <= 1.0 and ds.features.min() >= 0.0
        assert list(ds.targets) == [0, 1, 2, 1]

    def test_truncated_header(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(b"\x00\x00\x08\x03\x00\x00")
        with pytest.raises(IdxParseError) as exc:
            read_idx(str(p))
        assert exc.value.offset == 6

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.idx"
        p.write_bytes(b"\x12\x34\x08\x01" + b"\x00" * 8)
        with pytest.raises(IdxParseError) as exc:
            read_idx(str(p))
        assert exc.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short.idx"
        good = tmp_path / "good.idx"
        make_idx_fixture(good)
        p.write_bytes(good.read_bytes()[:-3])
        with pytest.raises(IdxParseError):
            read_idx(str(p))

    def test_mnist_if_present(self):
        path = next((p for p in MNIST_CANDIDATES if os.path.exists(p)), None)
        if path is None:
            pytest.skip("MNIST test file not present")
        ds = load_idx(path)
        assert ds.n == 10_000
        assert ds.dim == 784


class TestBlobs:
    def test_same_seed_identical(self):
        a = synth_blobs(3, 5, 2.0, seed=4, n=50)
        b = synth_blobs(3, 5, 2.0, seed=4, n=50)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.targets, b.targets)

    def test_zero_sep_indistinguishable(self):
        ds = synth_blobs(2, 10, 0.0, seed=1, n=4000)
        obj = LogisticObjective.from_dataset(ds, lam=1e-3)
        w = np.zeros(10)
        gamma = 0.5 / obj.lipschitz()
        for _ in range(300):
            w -= gamma * obj.full_grad(w)
        margins = ds.features @ w
        pred = np.where(margins > 0, 1, 0)
        acc = float(np.mean(pred == ds.targets))
        assert abs(acc - 0.5) < 0.06

    def test_separated_blobs_linearly_separable(self):
        ds = synth_blobs(2, 2, 10.0, seed=2, n=500)
        obj = LogisticObjective.from_dataset(ds, lam=1e-4)
        w = np.zeros(2)
        gamma = 1.0 / obj.lipschitz()
        for _ in range(2000):
            w -= gamma * obj.full_grad(w)
        pred = np.where(ds.features @ w > 0, 1, 0)
        acc = float(np.mean(pred == ds.targets))
        assert acc > 0.99

    def test_standardized(self):
        ds = synth_blobs(3, 6, 3.0, seed=5, n=2000)
        assert np.max(np.abs(ds.features.mean(axis=0))) < 1e-9
        assert np.max(np.abs(ds.features.std(axis=0) - 1.0)) < 1e-9
        assert "standardize" in ds.metadata

    def test_bad_params(self):
        with pytest.raises(ConfigError):
            synth_blobs(1, 5, 1.0, 0, 10)
        with pytest.raises(ConfigError):
            synth_blobs(2, 5, -1.0, 0, 10)


class TestQuadraticStream:
    def test_centered_and_bounded(self):
        A = np.eye(3)
        ds = synth_quadratic_stream(A, 0.5, seed=6, n=200)
        assert np.max(np.abs(ds.features.mean(axis=0))) < 1e-12
        # centering can nudge a vector slightly past the nominal radius
        assert np.max(np.linalg.norm(ds.features, axis=1)) <= 0.5 + 0.2


class TestSampler:
    def test_full_batch_no_shuffle(self):
        s = BatchSampler(0, 10, 10, "sequential")
        for t in range(5):
            assert list(s.indices(t)) == list(range(10))

    def test_replay_identical(self):
        s = BatchSampler(3, 4, 20, "shuffle")
        for t in (0, 7, 13):
            assert np.array_equal(s.indices(t), s.indices(t))

    def test_epoch_permutation_property(self):
        n, bs = 23, 5
        s = BatchSampler(1, bs, n, "shuffle")
        bpe = s.batches_per_epoch
        assert bpe == 5
        for epoch in range(3):
            seen = []
            for slot in range(bpe):
                seen.extend(s.indices(epoch * bpe + slot))
            assert Counter(seen) == Counter(range(n))

    def test_epochs_differ(self):
        s = BatchSampler(1, 8, 64, "shuffle")
        assert not np.array_equal(s.indices(0), s.indices(s.batches_per_epoch))

    def test_with_replacement_deterministic(self):
        s = BatchSampler(9, 6, 50, "with_replacement")
        assert np.array_equal(s.indices(3), s.indices(3))
        assert not np.array_equal(s.indices(3), s.indices(4))

    def test_reconstruction_from_params(self):
        # the full index sequence is a pure function of (seed, batch_size, n)
        a = BatchSampler(5, 4, 12, "shuffle")
        b = BatchSampler(5, 4, 12, "shuffle")
        seq_a = [list(a.indices(t)) for t in range(9)]
        seq_b = [list(b.indices(t)) for t in range(9)]
        assert seq_a == seq_b

    def test_next_batch(self):
        ds = synth_blobs(2, 3, 1.0, seed=0, n=10)
        s = BatchSampler(0, 4, 10, "shuffle")
        x, y, idx = next_batch(s, ds, 0)
        assert x.shape == (4, 3)
        assert np.array_equal(x, ds.features[idx])
        assert np.array_equal(y, ds.targets[idx])

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            BatchSampler(0, 0, 10)
        with pytest.raises(ConfigError):
            BatchSampler(0, 11, 10)
