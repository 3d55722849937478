import pytest

from gradpipe import layers as L
from gradpipe.errors import ConfigError
from gradpipe.partition import (
    balanced_split_points,
    is_warmup,
    make_partition,
    source_iteration,
)


class TestMakePartition:
    def test_no_split(self):
        p = make_partition(8, [])
        assert p.K == 1
        assert p.ranges == ((1, 8),)

    def test_single_split(self):
        p = make_partition(8, [4])
        assert p.K == 2
        assert p.ranges == ((1, 4), (5, 8))

    def test_three_splits_delays(self):
        p = make_partition(8, [1, 3, 5])
        assert p.K == 4
        assert [p.delay(k) for k in range(1, 5)] == [3, 2, 1, 0]

    def test_round_trip_covers_all_layers(self):
        for splits in ([], [3], [1, 2, 3], [2, 5, 7]):
            p = make_partition(8, splits)
            flat = []
            for k in range(1, p.K + 1):
                lo, hi = p.ranges[k - 1]
                flat.extend(range(lo, hi + 1))
            assert flat == list(range(1, 9))

    def test_layer_slice(self):
        p = make_partition(6, [2, 4])
        assert p.layer_slice(1) == slice(0, 2)
        assert p.layer_slice(2) == slice(2, 4)
        assert p.layer_slice(3) == slice(4, 6)

    def test_module_of_layer(self):
        p = make_partition(6, [2, 4])
        assert [p.module_of_layer(i) for i in range(1, 7)] == [1, 1, 2, 2, 3, 3]

    def test_bad_split_points(self):
        with pytest.raises(ConfigError):
            make_partition(4, [0])
        with pytest.raises(ConfigError):
            make_partition(4, [4])
        with pytest.raises(ConfigError):
            make_partition(4, [2, 2])
        with pytest.raises(ConfigError):
            make_partition(4, [3, 1])
        with pytest.raises(ConfigError):
            make_partition(2, [1, 1, 1])


class TestSchedule:
    def test_k1_never_warmup(self):
        for t in range(20):
            assert not is_warmup(t, 1, 1)
            assert source_iteration(t, 1, 1) == t

    def test_warmup_boundary(self):
        assert is_warmup(1, 1, 3)  # 1 - 3 + 1 = -1
        assert not is_warmup(2, 1, 3)  # 2 - 3 + 1 = 0

    def test_last_module_delay_zero(self):
        for K in (1, 2, 5):
            for t in (0, 3, 10):
                assert source_iteration(t, K, K) == t

    def test_arithmetic(self):
        assert source_iteration(10, 1, 3) == 8
        assert source_iteration(1, 2, 4) == -1

    def test_warmup_iff_negative_source(self):
        for K in range(1, 6):
            for k in range(1, K + 1):
                for t in range(12):
                    assert is_warmup(t, k, K) == (source_iteration(t, k, K) < 0)


class TestBalancedSplit:
    def test_equal_affines_split_evenly(self):
        specs = [
            L.Affine(64, 64), L.Tanh(),
            L.Affine(64, 64), L.Tanh(),
            L.Affine(64, 64), L.Tanh(),
            L.Affine(64, 64), L.SoftmaxCrossEntropyHead(64),
        ]
        assert balanced_split_points(specs, 2) == [4]
        assert balanced_split_points(specs, 4) == [2, 4, 6]

    def test_k1_no_splits(self):
        specs = [L.Affine(4, 4), L.SoftmaxCrossEntropyHead(4)]
        assert balanced_split_points(specs, 1) == []

    def test_k_equals_layer_count(self):
        specs = [L.Affine(4, 4), L.Relu(), L.SoftmaxCrossEntropyHead(4)]
        pts = balanced_split_points(specs, 3)
        assert pts == [1, 2]

    def test_module_count_valid(self):
        specs = [L.Affine(4, 4), L.Relu(), L.SoftmaxCrossEntropyHead(4)]
        with pytest.raises(ConfigError):
            balanced_split_points(specs, 4)
        for K in (1, 2, 3):
            pts = balanced_split_points(specs, K)
            assert make_partition(len(specs), pts).K == K
