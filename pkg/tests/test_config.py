"""Settings registry, config file parsing, snapshot hashing."""
import pytest

from speechmime.config import (coerce, config_hash, default_settings,
                               parse_config_file, read_settings,
                               resolve_settings, write_settings)
from speechmime.errors import ConfigError


def test_defaults_complete_and_typed():
    settings = default_settings()
    assert settings["corpus.n"] == 556
    assert settings["train.batch_size"] == 16
    assert settings["train.interleave_prob"] == 0.4
    assert isinstance(settings["pretrain.lr"], float)
    assert isinstance(settings["train.gate"], str)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="corpus.m"):
        coerce("corpus.m", "10")


def test_coerce_type_error_cites_key_and_value():
    with pytest.raises(ConfigError, match="corpus.n"):
        coerce("corpus.n", "many")
    assert coerce("corpus.n", "12") == 12
    assert coerce("pretrain.lr", "1e-3") == 1e-3
    assert coerce("train.gate", "example") == "example"


def test_parse_file_comments_and_blanks(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# toy run\n"
        "\n"
        "corpus.n = 80   # small\n"
        "train.interleave_prob=0.25\n"
    )
    settings = parse_config_file(path)
    assert settings == {"corpus.n": 80, "train.interleave_prob": 0.25}


def test_parse_file_bad_line_cites_lineno(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("corpus.n = 80\njust words\n")
    with pytest.raises(ConfigError, match=":2"):
        parse_config_file(path)


def test_resolution_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("corpus.n = 80\ntrain.seed = 5\n")
    settings = resolve_settings(path, {"train.seed": "9"})
    assert settings["corpus.n"] == 80
    assert settings["train.seed"] == 9  # override beats the file
    assert settings["pretrain.steps"] == 2500  # untouched default


def test_hash_stable_and_sensitive():
    a = default_settings()
    b = default_settings()
    assert config_hash(a) == config_hash(b)
    b["corpus.n"] = 100
    assert config_hash(a) != config_hash(b)
    assert len(config_hash(a)) == 16


def test_snapshot_round_trip_and_tamper(tmp_path):
    settings = resolve_settings(None, {"corpus.n": 64})
    path = tmp_path / "settings.json"
    write_settings(settings, path)
    assert read_settings(path) == settings
    text = path.read_text().replace('"corpus.n": 64', '"corpus.n": 65')
    path.write_text(text)
    with pytest.raises(ConfigError, match="hash mismatch"):
        read_settings(path)
