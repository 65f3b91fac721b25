import numpy as np
import pytest

from losxfer.dataprep import prepare_domain, resample_hourly
from losxfer.errors import ValidationError
from losxfer.synth import (DomainSpec, SynthConfig, config_from_record,
                           config_to_record, generate_domain, synth_prepared)

POOL = tuple(f"sig {i:02d}" for i in range(8))


def _config(**kw):
    defaults = dict(
        domains=(
            DomainSpec("src", n_stays=50, shared_features=POOL,
                       missing_rate=0.3, regime=None),
            DomainSpec("tgt", n_stays=45, shared_features=POOL[:5], n_private=2,
                       missing_rate=0.3, regime=1),
        ),
        source="src",
        seed=13,
    )
    defaults.update(kw)
    return SynthConfig(**defaults)


class TestConfigValidation:
    def test_unknown_source(self):
        with pytest.raises(ValidationError):
            _config(source="nope")

    def test_minimum_stays(self):
        with pytest.raises(ValidationError, match=">= 40"):
            _config(domains=(
                DomainSpec("src", n_stays=50, shared_features=POOL),
                DomainSpec("tiny", n_stays=10, shared_features=POOL[:2]),
            ))

    def test_must_share_a_feature_with_source(self):
        with pytest.raises(ValidationError, match="shares no feature"):
            _config(domains=(
                DomainSpec("src", n_stays=50, shared_features=POOL[:4]),
                DomainSpec("alien", n_stays=50, shared_features=("zz",)),
            ))

    def test_record_round_trip(self):
        config = _config()
        back = config_from_record(config_to_record(config))
        assert back == config


class TestGeneration:
    def test_zero_noise_zero_missingness_reconstructs_exactly(self):
        config = _config(
            feature_noise=0.0,
            duplicate_event_fraction=0.5,
            domains=(
                DomainSpec("src", n_stays=50, shared_features=POOL,
                           missing_rate=0.0, regime=None),
            ),
        )
        events, targets = generate_domain(config, "src")
        coll = resample_hourly(events)
        assert len(coll) == 50
        assert not any(g.mask.any() for g in coll.grids)
        # rebuild the deterministic latent->feature map and compare
        prepared = prepare_domain(events, targets)
        assert not np.isnan(prepared.values).any()
        assert not prepared.indicators.any()
        # duplicated events share the value, so the hourly mean is exact:
        # every (stay, hour, feature) cell must appear once or twice with
        # identical values
        rows = {}
        for s, o, f, v in zip(events.stay_ids, events.offsets,
                              events.features, events.values):
            rows.setdefault((int(s), int(o // 60), f), set()).add(float(v))
        assert all(len(vals) == 1 for vals in rows.values())

    def test_los_floor(self):
        for name in ("src", "tgt"):
            _, targets = generate_domain(_config(), name)
            assert min(targets.values()) >= 1.0

    def test_deterministic(self):
        a_events, a_targets = generate_domain(_config(), "tgt")
        b_events, b_targets = generate_domain(_config(), "tgt")
        np.testing.assert_array_equal(a_events.values, b_events.values)
        assert a_targets == b_targets

    def test_shared_feature_loadings_identical_across_domains(self):
        # same latent trajectory seed within a domain differs, but the
        # name-keyed loadings must agree: verified through the pipeline by
        # checking that both domains retain the shared names
        prepared = synth_prepared(_config())
        shared = set(POOL[:5])
        assert shared <= set(prepared["src"].input_names)
        assert shared <= set(prepared["tgt"].input_names)
        private = {f"tgt private {k:02d}" for k in range(2)}
        assert private <= set(prepared["tgt"].input_names)
        assert not (private & set(prepared["src"].input_names))

    def test_missingness_drives_indicator_density(self):
        config = _config(domains=(
            DomainSpec("src", n_stays=500, shared_features=POOL,
                       missing_rate=0.4, regime=None),
        ))
        prepared = synth_prepared(config)["src"]
        density = prepared.indicators.mean()
        assert abs(density - 0.4) < 0.05

    def test_pipeline_keeps_all_generated_features(self):
        prepared = synth_prepared(_config())
        assert len(prepared["src"].input_names) == len(POOL)
        assert len(prepared["tgt"].input_names) == 5 + 2
