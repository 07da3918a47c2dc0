import pytest

from changekit.config import (
    RunConfig,
    apply_overrides,
    config_to_text,
    default_palette,
    load_config,
    parse_config_text,
)
from changekit.errors import ConfigError


def test_defaults():
    config = RunConfig()
    config.validate()
    assert config.corpus.dir_a == "A"
    assert config.corpus.palette.names == ("background", "road", "building")
    assert config.connectivity == "eight"
    assert config.precision == 2
    # auto epsilon = 2% of the larger image dimension
    assert config.epsilon_px() == pytest.approx(0.02 * 256)


def test_parse_basic_keys():
    config = parse_config_text(
        """
        # comment
        dir_a = imgs_t1
        image_width = 64
        image_height = 48
        seed = 9
        connectivity = four
        epsilon = 3.5
        skip_unchanged = true
        """
    )
    assert config.corpus.dir_a == "imgs_t1"
    assert config.corpus.image_width == 64
    assert config.seed == 9
    assert config.connectivity == "four"
    assert config.epsilon == 3.5
    assert config.epsilon_px() == 3.5
    assert config.skip_unchanged is True


def test_palette_from_config():
    config = parse_config_text(
        "palette.0 = background\npalette.100 = water\npalette.200,10,10 = building\n"
    )
    palette = config.corpus.palette
    assert palette.names == ("background", "water", "building")
    assert palette.gray == {0: 0, 100: 1}
    assert palette.rgb == {(200, 10, 10): 2}
    assert palette.change_categories == [(1, "water"), (2, "building")]


def test_palette_requires_background():
    with pytest.raises(ConfigError):
        parse_config_text("palette.100 = water\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("frobnicate = 1\n")


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        parse_config_text("seed = banana\n")
    with pytest.raises(ConfigError):
        parse_config_text("connectivity = six\n")
    with pytest.raises(ConfigError):
        parse_config_text("precision = 9\n")


def test_config_text_round_trip():
    config = parse_config_text(
        "seed = 4\nepsilon = 1.25\nprecision = 3\nprompt.binary = Changed? Please answer yes or no.\n"
    )
    assert parse_config_text(config_to_text(config)) == config
    # the auto-epsilon default survives a round trip too
    assert parse_config_text(config_to_text(RunConfig())) == RunConfig()


def test_apply_overrides_beats_file():
    config = parse_config_text("seed = 1\nimage_width = 64\n")
    updated = apply_overrides(config, seed=2, image_width=128, connectivity=None)
    assert updated.seed == 2
    assert updated.corpus.image_width == 128
    assert updated.connectivity == config.connectivity


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_default_palette_shape():
    palette = default_palette()
    assert palette.gray[0] == 0
    assert palette.name_of(0) == "background"
