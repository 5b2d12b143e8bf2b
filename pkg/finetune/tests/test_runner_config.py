"""Manifest and phase config contracts: defaults, validation, round-trip."""

import dataclasses

import pytest

from finetune_runner import (
    DEFAULT_PHASE1,
    DEFAULT_PHASE2,
    DEFAULT_TEMPLATE,
    ConfigurationError,
    PhaseConfig,
    RunManifest,
    load_manifest,
    manifest_digest,
    save_manifest,
)


class TestPhaseConfig:
    def test_production_defaults(self):
        assert DEFAULT_PHASE1 == PhaseConfig(
            frozen_layers=8,
            learning_rate=1e-4,
            epochs=4,
            schedule="cosine",
            warmup_fraction=0.0,
            early_stop_patience=None,
        )
        assert DEFAULT_PHASE2 == PhaseConfig(
            frozen_layers=0,
            learning_rate=2e-5,
            epochs=9,
            schedule="cosine",
            warmup_fraction=0.06,
            early_stop_patience=10,
        )

    @pytest.mark.parametrize(
        "overrides",
        [
            {"frozen_layers": -1},
            {"frozen_layers": 13},
            {"frozen_layers": 1.0},
            {"learning_rate": 0.0},
            {"learning_rate": -1e-4},
            {"learning_rate": float("inf")},
            {"learning_rate": float("nan")},
            {"epochs": 0},
            {"epochs": 2.5},
            {"schedule": "linear"},
            {"warmup_fraction": 1.0},
            {"warmup_fraction": -0.01},
            {"early_stop_patience": 0},
            {"early_stop_patience": -3},
        ],
    )
    def test_rejects_bad_values(self, overrides):
        settings = dict(frozen_layers=8, learning_rate=1e-4, epochs=4)
        settings.update(overrides)
        with pytest.raises(ConfigurationError):
            PhaseConfig(**settings)

    def test_ablation_grid_is_expressible(self):
        digests = set()
        for frozen in (0, 6, 8):
            phase = dataclasses.replace(DEFAULT_PHASE1, frozen_layers=frozen)
            m = RunManifest(base_checkpoint="ckpt", phase1=phase)
            digests.add(manifest_digest(m))
        assert len(digests) == 3

    def test_dict_round_trip(self):
        phase = PhaseConfig(frozen_layers=6, learning_rate=3e-4, epochs=2, early_stop_patience=5)
        assert PhaseConfig.from_dict(phase.to_dict()) == phase

    def test_from_dict_rejects_unknown_and_missing_keys(self):
        good = DEFAULT_PHASE1.to_dict()
        with pytest.raises(ConfigurationError, match="unknown"):
            PhaseConfig.from_dict({**good, "momentum": 0.9})
        del good["epochs"]
        with pytest.raises(ConfigurationError, match="missing"):
            PhaseConfig.from_dict(good)


class TestRunManifest:
    def test_defaults_echo_production_settings(self):
        m = RunManifest(base_checkpoint="encoder-base")
        assert m.input_template == DEFAULT_TEMPLATE == "CVE Description: {text}"
        assert m.max_tokens == 384
        assert m.batch_size == 32
        assert m.label_smoothing == 0.1
        assert m.weight_decay == 0.01
        assert m.grad_clip == 1.0
        assert m.precision == "float32"
        assert m.expected_layers == 12
        assert m.seed == 20240601
        assert m.phase1 == DEFAULT_PHASE1
        assert m.phase2 == DEFAULT_PHASE2

    @pytest.mark.parametrize(
        "overrides",
        [
            {"base_checkpoint": ""},
            {"base_checkpoint": "   "},
            {"input_template": "no placeholder"},
            {"input_template": "{description}"},
            {"max_tokens": 4},
            {"max_tokens": 0},
            {"batch_size": 0},
            {"label_smoothing": 1.0},
            {"label_smoothing": -0.1},
            {"weight_decay": -0.01},
            {"grad_clip": 0.0},
            {"precision": "bfloat16"},
            {"expected_layers": 0},
            {"seed": -1},
        ],
    )
    def test_rejects_bad_values(self, overrides):
        settings = dict(base_checkpoint="ckpt")
        settings.update(overrides)
        with pytest.raises(ConfigurationError):
            RunManifest(**settings)

    def test_rejects_freeze_deeper_than_encoder(self):
        with pytest.raises(ConfigurationError, match="freezes 8"):
            RunManifest(base_checkpoint="ckpt", expected_layers=2)
        # Shrinking the freeze restores validity at the same depth.
        RunManifest(
            base_checkpoint="ckpt",
            expected_layers=2,
            phase1=dataclasses.replace(DEFAULT_PHASE1, frozen_layers=1),
        )

    def test_json_round_trip(self, tmp_path):
        m = RunManifest(
            base_checkpoint="ckpt",
            expected_layers=2,
            seed=7,
            phase1=dataclasses.replace(DEFAULT_PHASE1, frozen_layers=1),
        )
        path = save_manifest(m, tmp_path / "manifest.json")
        assert load_manifest(path) == m
        assert manifest_digest(load_manifest(path)) == manifest_digest(m)

    def test_from_dict_rejects_unknown_key_and_bad_schema(self):
        data = RunManifest(base_checkpoint="ckpt").to_dict()
        with pytest.raises(ConfigurationError, match="unknown"):
            RunManifest.from_dict({**data, "optimizer": "adamw"})
        with pytest.raises(ConfigurationError, match="schema_version"):
            RunManifest.from_dict({**data, "schema_version": 2})

    def test_load_manifest_rejects_invalid_json(self, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigurationError, match="invalid manifest JSON"):
            load_manifest(bad)

    def test_digest_tracks_every_field(self):
        base = RunManifest(base_checkpoint="ckpt")
        assert manifest_digest(base) == manifest_digest(RunManifest(base_checkpoint="ckpt"))
        for overrides in ({"seed": 8}, {"batch_size": 16}, {"label_smoothing": 0.2}):
            assert manifest_digest(dataclasses.replace(base, **overrides)) != manifest_digest(base)
