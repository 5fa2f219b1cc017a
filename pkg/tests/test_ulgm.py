import json

import numpy as np
import pytest

from modalalign.errors import ContractError
from modalalign.ulgm import (
    MODALITIES,
    CenterPair,
    LabelStore,
    class_centers,
    generate_label,
    momentum_update,
    regenerate_labels,
    relative_offset,
    update_centers,
)


class TestCenters:
    def test_single_positive(self):
        f = np.array([[1.0, 2.0]])
        pair = class_centers(f, np.array([1.0]))
        np.testing.assert_array_equal(pair.positive, f[0])
        assert pair.negative is None
        assert (pair.n_positive, pair.n_negative) == (1, 0)

    def test_two_positives_mean(self):
        f = np.array([[1.0, 0.0], [3.0, 2.0]])
        pair = class_centers(f, np.array([0.5, 2.0]))
        np.testing.assert_array_equal(pair.positive, [2.0, 1.0])

    def test_zero_labels_excluded(self):
        f = np.array([[1.0], [5.0], [-1.0]])
        pair = class_centers(f, np.array([1.0, 0.0, -1.0]))
        np.testing.assert_array_equal(pair.positive, [1.0])
        np.testing.assert_array_equal(pair.negative, [-1.0])

    def test_matches_group_by_oracle(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(40, 5))
        labels = rng.normal(size=40)
        pair = class_centers(f, labels)
        np.testing.assert_allclose(pair.positive, f[labels > 0].mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(pair.negative, f[labels < 0].mean(axis=0), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            class_centers(np.zeros((0, 2)), np.zeros(0))

    def test_update_centers_all_sources(self):
        rng = np.random.default_rng(1)
        features = {s: rng.normal(size=(6, 3)) for s in ("all",) + MODALITIES}
        labels = {s: rng.normal(size=6) for s in ("all",) + MODALITIES}
        centers = update_centers(features, labels)
        assert set(centers) == {"all", "t", "a", "v"}


class TestRelativeOffset:
    def test_on_positive_center(self):
        pair = CenterPair(np.array([1.0, 1.0]), np.array([-1.0, -1.0]), 1, 1)
        alpha = relative_offset(np.array([1.0, 1.0]), pair)
        assert alpha == pytest.approx(1.0, abs=1e-7)

    def test_equidistant_zero(self):
        pair = CenterPair(np.array([1.0]), np.array([-1.0]), 1, 1)
        assert relative_offset(np.array([0.0]), pair) == 0.0

    def test_hand_ratio(self):
        # Dp = 1, Dn = 3 -> alpha = 2 / (4 + eps) ~ 0.5
        pair = CenterPair(np.array([1.0]), np.array([-3.0]), 1, 1)
        alpha = relative_offset(np.array([0.0]), pair)
        assert alpha == pytest.approx(0.5, abs=1e-7)

    def test_absent_center_fallback(self):
        assert relative_offset(np.ones(2), CenterPair(None, np.zeros(2), 0, 1)) == 0.0
        assert relative_offset(np.ones(2), CenterPair(np.zeros(2), None, 1, 0)) == 0.0

    def test_bounded_and_antisymmetric(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            dim = int(rng.integers(1, 6))
            pos, neg, f = rng.normal(size=(3, dim))
            pair = CenterPair(pos, neg, 1, 1)
            swapped = CenterPair(neg, pos, 1, 1)
            alpha = relative_offset(f, pair)
            assert -1.0 < alpha < 1.0
            assert relative_offset(f, swapped) == pytest.approx(-alpha, abs=1e-12)


class TestGenerateLabel:
    def test_no_migration(self):
        assert generate_label(0.3, 0.3, 1.5, 3.0, -3.0, 3.0) == 1.5

    def test_hand_value(self):
        assert generate_label(0.5, 0.0, 1.0, 3.0, -3.0, 3.0) == 2.5

    def test_clamped(self):
        assert generate_label(1.0, 0.0, 2.8, 3.0, -3.0, 3.0) == 3.0
        assert generate_label(-1.0, 0.0, -2.8, 3.0, -3.0, 3.0) == -3.0


class TestMomentum:
    def test_constant_stream_fixed_point_exact(self):
        c = 0.7300000000000001
        y = c
        for t in range(1, 20):
            y = momentum_update(y, c, t)
            assert y == c

    def test_two_step_closed_form(self):
        y1 = momentum_update(0.0, 1.0, 1)
        assert y1 == 1.0
        y2 = momentum_update(y1, 2.0, 2)
        assert y2 == pytest.approx(5.0 / 3.0, abs=1e-15)

    def test_coefficients_match_closed_form(self):
        # Weight of the k-th raw label after t events must be 2k / (t (t+1)).
        t_max = 10
        for k in range(1, t_max + 1):
            y = 0.0
            for t in range(1, t_max + 1):
                y = momentum_update(y, 1.0 if t == k else 0.0, t)
            assert abs(y - 2.0 * k / (t_max * (t_max + 1))) < 1e-12

    def test_coefficients_sum_to_one(self):
        for t_max in range(1, 11):
            y = 0.0
            for t in range(1, t_max + 1):
                y = momentum_update(y, 1.0, t)
            assert abs(y - 1.0) < 1e-12

    def test_invalid_count(self):
        with pytest.raises(ContractError):
            momentum_update(0.0, 1.0, 0)


class TestLabelStore:
    def test_starts_at_ground_truth(self):
        store = LabelStore([1.0, -2.0])
        for m in MODALITIES:
            np.testing.assert_array_equal(store.column(m), [1.0, -2.0])

    def test_record_and_counts(self):
        store = LabelStore([0.0, 1.0])
        store.record(0, "a", 2.0)
        assert store.column("a")[0] == 2.0
        assert store.counts[0, MODALITIES.index("a")] == 1
        store.record(0, "a", -1.0)
        # t=2: (1/3) * 2 + (2/3) * (-1)
        assert store.column("a")[0] == pytest.approx(0.0, abs=1e-15)

    def test_labels_stay_in_range(self):
        store = LabelStore([2.9], label_min=-3.0, label_max=3.0)
        for _ in range(5):
            store.record(0, "t", 10.0)  # raw out of range would escape without clamping
        assert store.column("t")[0] <= 3.0

    def test_json_round_trip(self):
        store = LabelStore([1.0, -1.0], ids=[7, 9])
        store.record(1, "v", 0.25)
        payload = json.loads(json.dumps(store.to_dict()))
        again = LabelStore.from_dict(payload)
        np.testing.assert_array_equal(store.labels, again.labels)
        np.testing.assert_array_equal(store.counts, again.counts)
        assert again.ids == [7, 9]

    def test_slice(self):
        store = LabelStore([1.0, 2.0, 3.0])
        got = store.slice(np.array([2, 0]))
        np.testing.assert_array_equal(got["t"], [3.0, 1.0])


class TestRegenerate:
    def test_identical_sources_degenerate_to_ground_truth(self):
        # When every modality's features equal the fused features, all offsets
        # match and the generated labels stay at the ground truth.
        rng = np.random.default_rng(3)
        f = rng.normal(size=(10, 4))
        y = rng.normal(size=10)
        store = LabelStore(y)
        features = {"all": f, "t": f, "a": f, "v": f}
        regenerate_labels(store, features, beta=3.0)
        for m in MODALITIES:
            np.testing.assert_allclose(store.column(m), y, atol=1e-12)

    def test_distinct_features_move_labels(self):
        rng = np.random.default_rng(4)
        y = np.concatenate([np.ones(10), -np.ones(10)])
        f_all = np.concatenate([np.ones((10, 3)), -np.ones((10, 3))]) + rng.normal(scale=0.1, size=(20, 3))
        f_t = rng.normal(size=(20, 3))  # uninformative modality
        features = {"all": f_all, "t": f_t, "a": f_all, "v": f_all}
        store = LabelStore(y)
        changed = regenerate_labels(store, features, beta=3.0)
        assert changed > 0
        assert np.max(np.abs(store.column("t") - y)) > 0.05
