import numpy as np
import pytest

from losxfer.dataprep import (EventTable, StayGrid, augment, augmented_names,
                              compute_scaling, impute_ffill_bfill,
                              load_events_csv, load_prepared, load_targets_csv,
                              prepare_domain, resample_hourly, retain_features,
                              save_events_csv, save_prepared, save_targets_csv,
                              split_and_scale, split_dataset)
from losxfer.errors import NonFiniteError, ValidationError


def _events(rows, domain="d"):
    stays, offs, feats, vals = zip(*rows)
    return EventTable(domain=domain, stay_ids=stays, offsets=offs,
                      features=feats, values=vals)


def _random_events(rng, m=12, features=("hr", "bp", "o2"), density=0.5):
    rows = []
    for stay in range(1, m + 1):
        for feat in features:
            for hour in range(24):
                for _ in range(rng.integers(0, 3)):
                    if rng.random() < density:
                        rows.append((stay, hour * 60 + float(rng.integers(0, 60)),
                                     feat, float(rng.normal())))
    # every stay needs at least one record to exist in the table
    for stay in range(1, m + 1):
        rows.append((stay, 0.0, features[0], float(rng.normal())))
    return _events(rows)


class TestEventTable:
    def test_offset_window_enforced(self):
        with pytest.raises(ValidationError, match="offset"):
            _events([(1, 1440.0, "hr", 1.0)])
        with pytest.raises(ValidationError, match="offset"):
            _events([(1, -0.5, "hr", 1.0)])

    def test_nonfinite_value_rejected(self):
        with pytest.raises(NonFiniteError):
            _events([(1, 3.0, "hr", float("nan"))])

    def test_csv_round_trip(self, tmp_path, rng):
        events = _random_events(rng, m=3)
        save_events_csv(events, tmp_path / "e.csv")
        back = load_events_csv(tmp_path / "e.csv", domain="d")
        assert (back.stay_ids == events.stay_ids).all()
        np.testing.assert_array_equal(back.offsets, events.offsets)
        np.testing.assert_array_equal(back.values, events.values)
        targets = {1: 2.5, 2: 3.5}
        save_targets_csv(targets, tmp_path / "t.csv")
        assert load_targets_csv(tmp_path / "t.csv") == targets


class TestResample:
    def test_hour_bucket_mean(self):
        events = _events([(1, 185.0, "hr", 5.0), (1, 200.0, "hr", 7.0)])
        coll = resample_hourly(events)
        grid = coll.grids[0]
        j = coll.feature_names.index("hr")
        assert grid.values[3, j] == 6.0
        assert not grid.mask[3, j]

    def test_empty_cell_masked(self):
        events = _events([(1, 30.0, "hr", 2.0)])
        grid = resample_hourly(events).grids[0]
        assert grid.mask[5, 0]
        assert np.isnan(grid.values[5, 0])

    def test_boundary_is_half_open(self):
        events = _events([(1, 59.999, "hr", 1.0), (1, 60.0, "hr", 3.0)])
        grid = resample_hourly(events).grids[0]
        assert grid.values[0, 0] == 1.0
        assert grid.values[1, 0] == 3.0

    def test_matches_bucketing_oracle(self, rng):
        events = _random_events(rng)
        coll = resample_hourly(events)
        stay_ids = [g.stay_id for g in coll.grids]
        for gi, grid in enumerate(coll.grids):
            for j, feat in enumerate(coll.feature_names):
                for t in range(24):
                    bucket = [v for s, o, f, v in zip(events.stay_ids,
                                                      events.offsets,
                                                      events.features,
                                                      events.values)
                              if s == stay_ids[gi] and f == feat
                              and 60 * t <= o < 60 * (t + 1)]
                    if bucket:
                        assert grid.values[t, j] == pytest.approx(
                            sum(bucket) / len(bucket), rel=1e-12)
                        assert not grid.mask[t, j]
                    else:
                        assert grid.mask[t, j]

    def test_record_order_irrelevant(self, rng):
        events = _random_events(rng, m=4)
        perm = rng.permutation(len(events))
        shuffled = EventTable(domain="d", stay_ids=events.stay_ids[perm],
                              offsets=events.offsets[perm],
                              features=events.features[perm],
                              values=events.values[perm])
        a = resample_hourly(events)
        b = resample_hourly(shuffled)
        assert a.feature_names == b.feature_names
        for ga, gb in zip(a.grids, b.grids):
            np.testing.assert_array_equal(
                np.nan_to_num(ga.values), np.nan_to_num(gb.values))


class TestRetention:
    def _collection(self, per_stay_values):
        """per_stay_values: list over stays of lists of (hour, value) for
        a single feature 'f'."""
        rows = []
        for stay, pairs in enumerate(per_stay_values, start=1):
            rows.append((stay, 0.0, "anchor", 1.0 * stay))
            rows.append((stay, 120.0, "anchor", 2.0 * stay))
            for hour, value in pairs:
                rows.append((stay, hour * 60.0, "f", value))
        return resample_hourly(_events(rows))

    def test_single_recording_dropped(self):
        coll = self._collection([[(3, 5.0)] for _ in range(10)])
        kept = retain_features(coll)
        assert "f" not in kept

    def test_boundary_thirty_percent_inclusive(self):
        stays = [[(1, 1.0), (2, 2.0)]] * 3 + [[(1, 7.0)]] * 7
        kept = retain_features(self._collection(stays))
        assert "f" in kept  # 3 of 10 = exactly 30%

    def test_two_equal_values_not_unique(self):
        stays = [[(1, 4.0), (5, 4.0)]] * 10
        kept = retain_features(self._collection(stays))
        assert "f" not in kept

    def test_matches_set_cardinality_oracle(self, rng):
        events = _random_events(rng, m=10, density=0.12)
        coll = resample_hourly(events)
        kept = retain_features(coll)
        for j, feat in enumerate(coll.feature_names):
            qualifying = 0
            for grid in coll.grids:
                observed = grid.values[~grid.mask[:, j], j]
                if len(set(observed.tolist())) >= 2:
                    qualifying += 1
            expected = qualifying / len(coll.grids) >= 0.30
            assert (feat in kept) == expected

    def test_empty_result_advises(self):
        coll = self._collection([[(1, 1.0)]])
        coll = resample_hourly(_events([(1, 0.0, "only", 1.0)]))
        with pytest.raises(ValidationError, match="relax"):
            retain_features(coll)


class TestImpute:
    def _grid(self, values, mask):
        return StayGrid(stay_id=1, values=np.asarray(values, dtype=float),
                        mask=np.asarray(mask, dtype=bool))

    def test_fill_semantics(self):
        values = np.full((4, 1), np.nan)
        values[1, 0] = 4.0
        mask = np.array([[True], [False], [True], [True]])
        filled, ind = impute_ffill_bfill(self._grid(values, mask))
        np.testing.assert_array_equal(filled[:, 0], [4.0, 4.0, 4.0, 4.0])
        np.testing.assert_array_equal(ind[:, 0], [1.0, 0.0, 1.0, 1.0])

    def test_fully_observed_untouched(self, rng):
        values = rng.normal(size=(24, 3))
        filled, ind = impute_ffill_bfill(
            self._grid(values, np.zeros((24, 3), dtype=bool)))
        np.testing.assert_array_equal(filled, values)
        assert not ind.any()

    def test_never_observed_stays_nan(self):
        values = np.full((24, 1), np.nan)
        filled, ind = impute_ffill_bfill(
            self._grid(values, np.ones((24, 1), dtype=bool)))
        assert np.isnan(filled).all()
        assert (ind == 1.0).all()

    def test_matches_two_pass_scalar_oracle(self, rng):
        for _ in range(30):
            mask = rng.random((24, 4)) < 0.5
            values = np.where(mask, np.nan, rng.normal(size=(24, 4)))
            filled, ind = impute_ffill_bfill(self._grid(values, mask))
            for j in range(4):
                col = values[:, j].copy()
                last = np.nan
                for t in range(24):  # forward
                    if not np.isnan(col[t]):
                        last = col[t]
                    elif not np.isnan(last):
                        col[t] = last
                nxt = np.nan
                for t in range(23, -1, -1):  # backward
                    if not np.isnan(col[t]):
                        nxt = col[t]
                    elif not np.isnan(nxt):
                        col[t] = nxt
                np.testing.assert_array_equal(np.nan_to_num(filled[:, j], nan=-9),
                                              np.nan_to_num(col, nan=-9))
            np.testing.assert_array_equal(ind, mask.astype(float))


class TestAugment:
    @pytest.mark.parametrize("n,width", [(25, 51), (33, 67)])
    def test_width_law(self, n, width, rng):
        filled = rng.normal(size=(4, 24, n))
        ind = rng.integers(0, 2, size=(4, 24, n)).astype(float)
        out = augment(filled, ind)
        assert out.shape == (4, 24, width)
        names = augmented_names([f"x{i}" for i in range(n)])
        assert len(names) == width
        assert names[-1] == "hour"
        assert names[n:2 * n] == tuple(f"x{i}_indicator" for i in range(n))

    def test_fully_observed_indicator_columns_zero(self, rng):
        filled = rng.normal(size=(2, 24, 3))
        out = augment(filled, np.zeros_like(filled))
        assert not out[:, :, 3:6].any()

    def test_default_hour_column_is_step_index(self, rng):
        out = augment(rng.normal(size=(2, 24, 1)), np.zeros((2, 24, 1)))
        np.testing.assert_array_equal(out[0, :, 2], np.arange(24))


class TestSplit:
    def test_sizes_70_15_15(self):
        tr, va, te = split_dataset(100, seed=0)
        assert (len(tr), len(va), len(te)) == (70, 15, 15)

    def test_partition_property(self, rng):
        for _ in range(20):
            m = int(rng.integers(10, 200))
            tr, va, te = split_dataset(m, seed=int(rng.integers(1 << 31)))
            joined = np.concatenate([tr, va, te])
            assert len(joined) == m
            assert len(np.unique(joined)) == m
            assert len(tr) == int(np.floor(0.70 * m))
            assert len(va) == int(np.floor(0.15 * m))

    def test_seed_determinism(self):
        a = split_dataset(57, seed=5)
        b = split_dataset(57, seed=5)
        for x, y in zip(a, b):
            assert (x == y).all()

    def test_minimum_size(self):
        with pytest.raises(ValidationError):
            split_dataset(9, seed=0)


def _prepared(rng, m=20, features=("hr", "bp"), missing=0.3):
    rows = []
    for stay in range(1, m + 1):
        for feat in features:
            for hour in range(24):
                if rng.random() >= missing:
                    rows.append((stay, hour * 60.0 + 10.0, feat,
                                 float(rng.normal(loc=hash(feat) % 5))))
    events = _events(rows)
    targets = {s: float(rng.uniform(1.0, 9.0)) for s in range(1, m + 1)}
    return prepare_domain(events, targets), targets


class TestPipeline:
    def test_width_and_names(self, rng):
        prepared, _ = _prepared(rng)
        splits = split_and_scale(prepared, seed=3)
        n = len(prepared.input_names)
        assert splits.train.tensor.shape[2] == 2 * n + 1
        assert splits.train.feature_space.names == augmented_names(prepared.input_names)

    def test_indicator_consistency(self, rng):
        prepared, _ = _prepared(rng)
        n = len(prepared.input_names)
        splits = split_and_scale(prepared, seed=4)
        for ds in (splits.train, splits.val, splits.test):
            ind = ds.tensor[:, :, n:2 * n]
            assert set(np.unique(ind)).issubset({0.0, 1.0})

    def test_scaling_statistics_from_train_only(self, rng):
        prepared, _ = _prepared(rng, m=30)
        splits = split_and_scale(prepared, seed=5)
        tr, va, te = split_dataset(prepared.n_stays, seed=5)
        expected = compute_scaling(prepared.values[tr])
        np.testing.assert_array_equal(splits.scaling.feature_mean,
                                      expected.feature_mean)
        # corrupting validation rows must not change the stats
        prepared.values[va] *= 100.0
        splits2 = split_and_scale(prepared, seed=5)
        np.testing.assert_array_equal(splits2.scaling.feature_mean,
                                      expected.feature_mean)

    def test_train_features_standardized(self, rng):
        prepared, _ = _prepared(rng, m=40)
        splits = split_and_scale(prepared, seed=6)
        n = len(prepared.input_names)
        feats = splits.train.tensor[:, :, :n].reshape(-1, n)
        np.testing.assert_allclose(feats.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(feats.std(axis=0), 1.0, atol=1e-9)

    def test_los_floor_enforced(self, rng):
        events = _events([(s, 60.0 * h, "hr", float(h + s)) for s in range(1, 12)
                          for h in range(4)])
        targets = {s: 2.0 for s in range(1, 12)}
        targets[3] = 0.5
        with pytest.raises(ValidationError, match="at least 24h"):
            prepare_domain(events, targets)

    def test_missing_target_rejected(self, rng):
        events = _events([(s, 0.0, "hr", float(s)) for s in range(1, 12)]
                         + [(s, 90.0, "hr", float(s + 1)) for s in range(1, 12)])
        targets = {s: 2.0 for s in range(1, 11)}  # stay 11 missing
        with pytest.raises(ValidationError, match="stay 11"):
            prepare_domain(events, targets)

    def test_round_trip_save_load(self, tmp_path, rng):
        prepared, _ = _prepared(rng)
        save_prepared(prepared, tmp_path / "ds")
        back = load_prepared(tmp_path / "ds")
        assert back.domain == prepared.domain
        assert back.input_names == prepared.input_names
        np.testing.assert_array_equal(
            np.nan_to_num(back.values), np.nan_to_num(prepared.values))
        np.testing.assert_array_equal(back.targets, prepared.targets)

    def test_determinism(self, rng):
        prepared, _ = _prepared(rng)
        a = split_and_scale(prepared, seed=8)
        b = split_and_scale(prepared, seed=8)
        np.testing.assert_array_equal(a.train.tensor, b.train.tensor)
        np.testing.assert_array_equal(a.test.targets, b.test.targets)
