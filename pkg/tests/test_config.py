import pytest

from config.run_config import RunConfig, defaults_text, parse_config, parse_config_text, to_ini
from config.settings import get_settings
from errors import InvalidValue, ParseError, ReportIoError, UnknownKey


def test_defaults_match_dataclasses():
    config = parse_config()
    assert config == RunConfig()
    assert config.experiment.epsilons == (0.25, 0.125, 0.0625)
    assert config.experiment.window is None
    assert "[geometry]" in defaults_text()


def test_user_values_overlay_defaults():
    config = parse_config_text("[geometry]\nshape = square\nsize = 0.2\n\n[experiment]\nepsilon = [1/2, 0.25]\n"
                               "window = 40\n")
    assert config.geometry.shape == "square"
    assert config.geometry.size == 0.2
    assert config.experiment.epsilon == (2, 4)
    assert config.experiment.window == 40.0
    assert config.solver == RunConfig().solver


def test_config_serialises_back():
    config = parse_config_text("[material]\nmatrix_voigt = [[4, 1, 0], [1, 4, 0], [0, 0, 2]]\n")
    assert parse_config_text(to_ini(config)) == config
    assert config.material.material_spec().matrix_tensor.to_voigt()[0, 0] == 4.0


def test_unknown_keys_carry_their_line():
    with pytest.raises(UnknownKey) as info:
        parse_config_text("[solver]\ntol = 1e-9\ncolour = blue\n")
    assert info.value.line == 3
    with pytest.raises(UnknownKey):
        parse_config_text("[plotting]\nx = 1\n")


@pytest.mark.parametrize("text", [
    "[geometry]\ncell_res = 2\n",
    "[geometry]\nshape = hexagon\n",
    "[solver]\nworkers = 0\n",
    "[experiment]\nepsilon = [0.3]\n",
    "[material]\ninclusion_lambda = -1\n",
    "[material]\nmatrix_voigt = [[1, 2], [3, 4]]\n",
])
def test_invalid_values(text):
    with pytest.raises(InvalidValue) as info:
        parse_config_text(text)
    assert info.value.line == 2


def test_bad_forcing_and_syntax():
    with pytest.raises(ParseError) as info:
        parse_config_text("[experiment]\nf1 = sin(y1\n")
    assert info.value.line == 2
    with pytest.raises(ParseError):
        parse_config_text("tol = 1\n")


def test_missing_config_file(tmp_path):
    with pytest.raises(ReportIoError):
        parse_config(tmp_path / "absent.ini")


def test_settings_overrides():
    settings = get_settings(workers=0, log_level="loud", out_dir="elsewhere")
    assert settings.workers == 1
    assert settings.log_level == "info"
    assert settings.out_dir == "elsewhere"


def test_zero_size_means_no_inclusion():
    config = parse_config_text("[geometry]\nsize = 0\n")
    assert config.geometry.size == 0.0
    assert config.geometry.cell_geometry().is_empty
    assert parse_config_text(to_ini(config)) == config
    with pytest.raises(InvalidValue) as info:
        parse_config_text("[geometry]\nsize = -0.1\n")
    assert info.value.line == 2
