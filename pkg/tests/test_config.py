"""Config file parsing and layered option resolution."""
from __future__ import annotations

import pytest

from codol.config import (
    ConfigError,
    RunSettings,
    parse_config_text,
    resolve_config,
)


def test_parse_sections_and_types():
    doc = parse_config_text(
        """
        # run options
        [run]
        protocol = "single-source"   # trailing comment
        seeds = [0, 1, 2]
        workers = 4
        plots = false

        [train]
        lr = 5e-3
        tau = 0.5
        variant = "coop"
        """
    )
    assert doc["run"]["protocol"] == "single-source"
    assert doc["run"]["seeds"] == [0, 1, 2]
    assert doc["run"]["workers"] == 4
    assert doc["run"]["plots"] is False
    assert doc["train"]["lr"] == 5e-3
    assert doc["train"]["variant"] == "coop"


def test_parse_hash_inside_string():
    doc = parse_config_text('[run]\noutput = "out#1"  # comment\n')
    assert doc["run"]["output"] == "out#1"


def test_parse_empty_array():
    assert parse_config_text("[run]\nseeds = []\n")["run"]["seeds"] == []


@pytest.mark.parametrize(
    "text, message",
    [
        ("lr = 1\n", "outside any"),
        ("[train]\nlr = 1\nlr = 2\n", "duplicate key"),
        ("[run]\n[run]\n", "duplicate section"),
        ("[bad name]\nx = 1\n", "bad section name"),
        ("[run\nx = 1\n", "unterminated section"),
        ("[run]\nkey with space = 1\n", "bad key"),
        ("[run]\njust a line\n", "expected key = value"),
        ("[run]\nx = \n", "empty value"),
        ('[run]\nx = "open\n', "unterminated string"),
        ('[run]\nx = "a"b"\n', "stray quote"),
        ("[run]\nx = [1, 2\n", "unterminated array"),
        ("[run]\nx = maybe\n", "cannot parse"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config_text(text)


def test_defaults():
    rc = resolve_config({}, None, {})
    assert rc.run.protocol == "multi-source"
    assert rc.run.seeds == (0, 1, 2)
    assert rc.run.workers == 1
    assert rc.run.plots is True
    assert rc.train.variant == "codol"
    assert rc.train.lr == 0.002
    assert rc.train.backend == {"name": "toy"}
    assert rc.sources == {}


def test_file_layer(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        '[run]\nworkers = 2\n\n[dataset]\nmanifest = "data.json"\n'
        "\n[train]\nlr = 0.5\nepochs = 3\n\n[backend]\nseed = 7\n",
        encoding="utf-8",
    )
    rc = resolve_config({}, cfg, {})
    assert rc.run.workers == 2
    assert rc.run.manifest == "data.json"
    assert rc.train.lr == 0.5 and rc.train.epochs == 3
    assert rc.train.backend == {"name": "toy", "seed": 7}
    assert rc.sources["lr"] == "file"


def test_env_overrides_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[train]\nlr = 0.5\n", encoding="utf-8")
    env = {"CODOL_LR": "0.25", "CODOL_SEEDS": "3,4", "CODOL_PLOTS": "off",
           "CODOL_BACKEND": '{"seed": 9}'}
    rc = resolve_config({}, cfg, env)
    assert rc.train.lr == 0.25
    assert rc.run.seeds == (3, 4)
    assert rc.run.plots is False
    assert rc.train.backend["seed"] == 9
    assert rc.sources["lr"] == "env"


def test_cli_overrides_env(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[train]\nlr = 0.5\n", encoding="utf-8")
    env = {"CODOL_LR": "0.25"}
    rc = resolve_config({"lr": 0.125, "backend": '{"seed": 3}'}, cfg, env)
    assert rc.train.lr == 0.125
    assert rc.sources["lr"] == "cli"
    assert rc.train.backend["seed"] == 3
    # None means "flag not given" and must not override
    rc2 = resolve_config({"lr": None}, cfg, env)
    assert rc2.train.lr == 0.25


def test_unknown_keys_rejected(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[optimizer]\nlr = 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown section"):
        resolve_config({}, cfg, {})
    cfg.write_text("[train]\nlearning_rate = 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown key"):
        resolve_config({}, cfg, {})
    # keys cannot wander between sections
    cfg.write_text("[run]\nlr = 0.5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown key"):
        resolve_config({}, cfg, {})
    with pytest.raises(ConfigError, match="unknown option"):
        resolve_config({"warmup": 5}, None, {})


def test_type_checks(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text('[train]\nepochs = "ten"\n', encoding="utf-8")
    with pytest.raises(ConfigError, match="expected an integer"):
        resolve_config({}, cfg, {})
    cfg.write_text("[run]\nseeds = [1, true]\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="list of integers"):
        resolve_config({}, cfg, {})
    with pytest.raises(ConfigError, match="CODOL_EPOCHS"):
        resolve_config({}, None, {"CODOL_EPOCHS": "ten"})
    with pytest.raises(ConfigError, match="boolean"):
        resolve_config({}, None, {"CODOL_PLOTS": "maybe"})
    with pytest.raises(ConfigError, match="invalid JSON"):
        resolve_config({"backend": "{bad"}, None, {})
    with pytest.raises(ConfigError, match="JSON object"):
        resolve_config({"backend": "[1]"}, None, {})


def test_invalid_values_surface_as_config_errors():
    with pytest.raises(ConfigError, match="momentum"):
        resolve_config({"momentum": 1.5}, None, {})
    with pytest.raises(ConfigError, match="workers"):
        resolve_config({"workers": 0}, None, {})
    with pytest.raises(ConfigError):
        resolve_config({"variant": "vit"}, None, {})
    with pytest.raises(ConfigError, match="ctx_init"):
        resolve_config({"ctx_init": "ones"}, None, {})


def test_missing_config_file():
    with pytest.raises(ConfigError, match="not found"):
        resolve_config({}, "/nonexistent/path.cfg", {})


def test_run_settings_validation():
    with pytest.raises(ConfigError, match="seeds"):
        RunSettings(seeds=())
