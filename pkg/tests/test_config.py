import pytest

from mosaicgen.config import (
    CanvasConfig,
    PipelineConfig,
    apply_overrides,
    config_from_dict,
    load_config,
)
from mosaicgen.errors import ConfigError


def test_defaults_follow_generation_settings():
    config = PipelineConfig()
    assert config.guidance_scale == 7.5
    assert config.steps == 50
    assert config.canvas.jitter_ratio == 0.375
    assert (config.canvas.overlap_x, config.canvas.overlap_y) == (64, 48)
    assert config.canvas.object_count == 4
    assert config.images_per_category == 25
    assert config.scheduler_id == "lms"


def test_bad_jitter_ratio_names_field():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"canvas": {"jitter_ratio": 0.6}})
    assert "jitter_ratio" in exc.value.field


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"canvas": {"wobble": 3}})
    assert exc.value.field == "canvas.wobble"
    with pytest.raises(ConfigError):
        config_from_dict({"not_a_key": 1})


def test_layer_filter_spellings():
    for spelling, want in (("1/32", 32), ("1/16", 16), ("1/8", 8), (8, 8)):
        config = config_from_dict({"aggregation": {"layer_filter": spelling}})
        assert config.aggregation.layer_filter == want
    with pytest.raises(ConfigError):
        config_from_dict({"aggregation": {"layer_filter": "1/64"}})


def test_step_filter_spellings():
    assert config_from_dict({"aggregation": {"step_filter": "all"}}) \
        .aggregation.step_filter is None
    assert config_from_dict({"aggregation": {"step_filter": 10}}) \
        .aggregation.step_filter == 10
    with pytest.raises(ConfigError):
        config_from_dict({"aggregation": {"step_filter": 0}})


def test_random_object_count():
    config = config_from_dict({"canvas": {"object_count": "random"}})
    assert config.canvas.counts() == (1, 2, 4)
    with pytest.raises(ConfigError):
        config_from_dict({"canvas": {"object_count": 3}})


def test_yaml_round_trip(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(
        "canvas:\n  width: 512\n  height: 384\n  object_count: 1\n"
        "  overlap_x: 0\n  overlap_y: 0\n"
        "seed: 9\nsteps: 5\n",
        encoding="utf-8",
    )
    config = load_config(path)
    assert config.canvas.width == 512
    assert config.seed == 9
    assert config.steps == 5


def test_invalid_yaml_is_config_error(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("canvas: [unclosed", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_overrides_revalidate():
    config = PipelineConfig()
    updated = apply_overrides(config, seed=77, workers=2, output_dir="elsewhere")
    assert (updated.seed, updated.workers, updated.output_dir) == (77, 2, "elsewhere")
    with pytest.raises(ConfigError):
        apply_overrides(config, workers=0)


def test_digest_ignores_execution_placement():
    a = PipelineConfig(output_dir="x", workers=1)
    b = PipelineConfig(output_dir="y", workers=8)
    assert a.digest() == b.digest()
    c = PipelineConfig(seed=1)
    assert a.digest() != c.digest()


def test_canvas_config_spec_construction():
    canvas = CanvasConfig(width=512, height=384, object_count=1,
                          overlap_x=0, overlap_y=0)
    spec = canvas.spec_for(1)
    assert (spec.width, spec.height, spec.object_count) == (512, 384, 1)
