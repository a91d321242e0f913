import dataclasses
import json

import numpy as np
import pytest

from promptmesh.core import (
    BROADCAST,
    TAG_BATCH_ORDER,
    TAG_POOL_SAMPLE,
    CommModel,
    ConfigError,
    FederationConfig,
    PromptSet,
    SelectionHistory,
    config_from_dict,
    config_from_profile,
    config_to_dict,
    derive_rng,
    load_config,
    validate_config,
)


class TestDeriveRng:
    def test_same_key_same_stream(self):
        a = derive_rng(7, 3, 11, TAG_BATCH_ORDER).random(16)
        b = derive_rng(7, 3, 11, TAG_BATCH_ORDER).random(16)
        assert np.array_equal(a, b)

    def test_each_component_changes_the_stream(self):
        base = derive_rng(7, 3, 11, TAG_BATCH_ORDER).random(16)
        for key in [
            (8, 3, 11, TAG_BATCH_ORDER),
            (7, 4, 11, TAG_BATCH_ORDER),
            (7, 3, 12, TAG_BATCH_ORDER),
            (7, 3, 11, TAG_POOL_SAMPLE),
        ]:
            assert not np.array_equal(derive_rng(*key).random(16), base)

    def test_negative_seed_is_accepted(self):
        # seeds are 64-bit values; negative ints map through the mask
        a = derive_rng(-12345, 0, 0, 1).random(4)
        b = derive_rng(-12345, 0, 0, 1).random(4)
        assert np.array_equal(a, b)

    def test_draw_order_does_not_couple_streams(self):
        # drawing from one stream must not advance another
        r1 = derive_rng(0, 1, 0, TAG_BATCH_ORDER)
        r2 = derive_rng(0, 2, 0, TAG_BATCH_ORDER)
        expected_r2 = derive_rng(0, 2, 0, TAG_BATCH_ORDER).random(8)
        r1.random(1000)
        assert np.array_equal(r2.random(8), expected_r2)


class TestValidateConfig:
    def test_desk_defaults_are_valid(self):
        assert validate_config(FederationConfig()) == []

    def test_paper_profile_is_valid(self):
        assert validate_config(config_from_profile("paper")) == []

    def test_oversized_shared_prompts(self):
        cfg = dataclasses.replace(FederationConfig(), shared_prompts=5)
        violations = validate_config(cfg)
        assert any("shared_prompts" in v for v in violations)

    def test_zero_recipients(self):
        cfg = dataclasses.replace(FederationConfig(), recipients_per_round=0)
        assert any("recipients_per_round" in v for v in validate_config(cfg))

    def test_recipients_above_peer_count(self):
        cfg = dataclasses.replace(FederationConfig(), recipients_per_round=8)
        assert any("recipients_per_round" in v for v in validate_config(cfg))

    def test_broadcast_sentinel_is_valid(self):
        cfg = dataclasses.replace(FederationConfig(), recipients_per_round=BROADCAST)
        assert validate_config(cfg) == []
        assert cfg.resolved_recipients == cfg.num_clients - 1

    def test_all_violations_reported_at_once(self):
        cfg = dataclasses.replace(
            FederationConfig(), temperature=0.0, rounds=0, selection_epsilon=0.0
        )
        violations = validate_config(cfg)
        assert len(violations) >= 3

    def test_image_dim_narrower_than_embedding(self):
        cfg = dataclasses.replace(FederationConfig(), image_dim=8)
        assert any("image_dim" in v for v in validate_config(cfg))

    def test_bad_comm_mode(self):
        cfg = dataclasses.replace(
            FederationConfig(), comm_model=CommModel(mode="zipped")
        )
        assert any("comm_model.mode" in v for v in validate_config(cfg))


class TestConfigSerialization:
    def test_unknown_key_is_an_error(self):
        with pytest.raises(ConfigError, match="sahred_prompts"):
            config_from_dict({"sahred_prompts": 2})

    def test_unknown_comm_model_key_is_an_error(self):
        with pytest.raises(ConfigError, match="comm_model"):
            config_from_dict({"comm_model": {"modee": "raw"}})

    def test_round_trip(self):
        cfg = dataclasses.replace(
            FederationConfig(), recipients_per_round=BROADCAST, seed=99
        )
        assert config_from_dict(config_to_dict(cfg)) == cfg

    def test_partial_dict_overrides_base(self):
        cfg = config_from_dict({"rounds": 7}, base=FederationConfig())
        assert cfg.rounds == 7
        assert cfg.num_clients == FederationConfig().num_clients

    def test_load_config_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"seed": 5, "comm_model": {"mode": "raw"}}))
        cfg = load_config(str(p))
        assert cfg.seed == 5
        assert cfg.comm_model.mode == "raw"

    def test_load_config_rejects_non_object(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(str(p))

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            config_from_profile("napkin")


class TestPromptSet:
    def test_requires_2d(self):
        with pytest.raises(ValueError):
            PromptSet(np.zeros(4), sources=[0])

    def test_source_count_must_match_slots(self):
        with pytest.raises(ValueError):
            PromptSet(np.zeros((4, 2)), sources=[0, 1])

    def test_rejects_non_finite(self):
        vecs = np.zeros((2, 2))
        vecs[1, 1] = np.inf
        with pytest.raises(ValueError):
            PromptSet(vecs, sources=[0, 0])

    def test_copy_is_independent(self):
        ps = PromptSet(np.ones((2, 3)), sources=[0, 1])
        cp = ps.copy()
        cp.vectors[0, 0] = 5.0
        cp.sources[0] = 9
        assert ps.vectors[0, 0] == 1.0
        assert ps.sources[0] == 0


class TestSelectionHistory:
    def test_fresh_is_all_zero(self):
        h = SelectionHistory.fresh(owner=2, num_clients=5)
        assert h.counts.sum() == 0

    def test_increment_and_peer_view(self):
        h = SelectionHistory.fresh(owner=0, num_clients=4)
        h.increment(2)
        h.increment(2)
        h.increment(3)
        assert h.peer_counts() == {1: 0, 2: 2, 3: 1}

    def test_self_selection_is_rejected(self):
        h = SelectionHistory.fresh(owner=1, num_clients=3)
        with pytest.raises(ValueError):
            h.increment(1)
