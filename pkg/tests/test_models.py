import hashlib

import pytest

from models import (ConfigError, InputError, MeshParseError, PipelineConfig, Prompt, Provenance, StageError,
                    prompt_seed)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

def test_json_round_trip_is_exact():
    config = PipelineConfig().with_overrides({'texture.floor': '0.25', 'light.direction': '[0, 0, 1]',
                                              'seed': '99', 'debug_dumps': 'yes'})
    again = PipelineConfig.from_json(config.to_json())
    assert again == config
    assert again.config_hash() == config.config_hash()
    assert again.light.direction == (0.0, 0.0, 1.0)
    assert again.debug_dumps is True


def test_overrides_coerce_to_the_declared_types():
    config = PipelineConfig().with_overrides({'rig.views': '6', 'texture.relaxation': 0.5,
                                              'light.ambient': '0.2,0.2,0.2', 'seed': 'none'})
    assert config.rig.views == 6
    assert config.texture.relaxation == 0.5
    assert config.light.ambient == (0.2, 0.2, 0.2)
    assert config.seed is None


@pytest.mark.parametrize('overrides', [
    {'texture.bogus': '1'},
    {'rig': '3'},
    {'rig.views': 'many'},
    {'rig.views': '2.5'},
    {'debug_dumps': 'maybe'},
    {'light.direction': '[1, 0]'},
])
def test_bad_overrides_are_config_errors(overrides):
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides(overrides)


@pytest.mark.parametrize('overrides', [
    {'texture.size': '1000'},
    {'texture.upscale': '3'},
    {'atlas.max_angle_deg': '90'},
    {'recon.resolution': '4'},
    {'rig.radius': '0.5'},
    {'backend.name': 'diffusion'},
    {'light.direction': '[0, 0, 2]'},
    {'workers': '0'},
])
def test_validation_rejects_out_of_range_values(overrides):
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides(overrides).validate()


def test_unknown_fields_in_json_are_rejected():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({'texture': {'size': 512, 'sharpness': 2}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_json('{not json')


def test_config_errors_are_input_errors():
    assert issubclass(ConfigError, InputError)
    assert issubclass(ConfigError, ValueError)


def test_hash_changes_with_any_field():
    base = PipelineConfig()
    assert base.config_hash() != base.with_overrides({'texture.floor': '0.11'}).config_hash()
    assert base.config_hash() == PipelineConfig().config_hash()


# ---------------------------------------------------------------------------
# Prompt and provenance
# ---------------------------------------------------------------------------

def test_prompt_seed_is_the_leading_eight_digest_bytes():
    expected = int.from_bytes(hashlib.sha256(b"red striped sphere").digest()[:8], 'big')
    assert prompt_seed("red striped sphere") == expected
    assert Prompt.from_text("red striped sphere").seed == expected
    assert Prompt.from_text("red striped sphere", seed=7).seed == 7


def test_empty_prompt_is_rejected():
    for text in (None, "", "   "):
        with pytest.raises(InputError):
            Prompt.from_text(text)


def test_determinism_hash_ignores_timings():
    a = Provenance(prompt="p", seed=1, config={}, config_hash="h", backend="procedural")
    b = Provenance(prompt="p", seed=1, config={}, config_hash="h", backend="procedural",
                   timings={'stage1.generate_views': 1.5})
    assert a.determinism_hash() == b.determinism_hash()
    b.notes.append("fallback")
    assert a.determinism_hash() != b.determinism_hash()
    assert Provenance.from_dict(b.to_dict()) == b


def test_error_messages_carry_their_context():
    assert str(MeshParseError("bad face", line=12)) == "line 12: bad face"
    err = StageError('fuse_partials', InputError("no partials"))
    assert str(err) == "fuse_partials: no partials"
    assert err.is_input_error
