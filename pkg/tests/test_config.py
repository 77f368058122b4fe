import json

import pytest

from aerobat.config import (ConfigError, config_hash, init_run_dir,
                            load_config, network_hash)


def test_defaults_load_and_self_validate():
    cfg = load_config()
    assert cfg["dynamics"]["mass"] == pytest.approx(0.46)
    assert cfg["task"]["horizon"] == 500
    assert cfg["ppo"]["n_envs"] == 128
    assert set(cfg["ppo"]["tasks"]) == {"hover", "rotate", "flip", "roll"}


def test_file_merge_and_unknown_key(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"dynamics": {"mass": 0.5}}))
    cfg = load_config(str(p))
    assert cfg["dynamics"]["mass"] == 0.5
    assert cfg["dynamics"]["gravity"] == 9.81   # untouched sibling survives

    p.write_text(json.dumps({"dynamics": {"masss": 0.5}}))
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(str(p))


def test_override_strings_and_dict():
    cfg = load_config(overrides=["ppo.lr=0.001", "network.backbone=mlp"])
    assert cfg["ppo"]["lr"] == 0.001
    assert cfg["network"]["backbone"] == "mlp"

    cfg = load_config(overrides={"ppo.n_envs": 4, "ppo.tasks": ["hover"]})
    assert cfg["ppo"]["n_envs"] == 4
    assert cfg["ppo"]["tasks"] == ["hover"]


def test_override_rejects_unknown_and_bad_types():
    with pytest.raises(ConfigError, match="unknown config key"):
        load_config(overrides=["ppo.does_not_exist=1"])
    with pytest.raises(ConfigError):
        load_config(overrides=['ppo.n_envs="many"'])
    with pytest.raises(ConfigError, match="positive"):
        load_config(overrides=["dynamics.mass=-1"])
    with pytest.raises(ConfigError):
        load_config(overrides=["network.backbone=transformer"])


def test_bad_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.json"))
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(str(p))


def test_config_hash_deterministic_and_sensitive():
    a = load_config()
    b = load_config()
    assert config_hash(a) == config_hash(b)
    c = load_config(overrides=["dynamics.mass=0.5"])
    assert config_hash(a) != config_hash(c)


def test_network_hash_tracks_architecture_only():
    base = load_config()
    same_training = load_config(overrides=["ppo.lr=0.001", "seed=7"])
    assert network_hash(base) == network_hash(same_training)
    for ov in ["network.backbone=mlp", "network.film=false",
               "network.multihead=false", "network.hidden_pairs=8"]:
        changed = load_config(overrides=[ov])
        assert network_hash(base) != network_hash(changed), ov


def test_init_run_dir(tmp_path):
    cfg = load_config()
    out = str(tmp_path / "run")
    init_run_dir(cfg, out)
    for sub in ("metrics", "checkpoints", "logs"):
        assert (tmp_path / "run" / sub).is_dir()
    snap = json.loads((tmp_path / "run" / "config.json").read_text())
    assert snap == cfg
    meta = json.loads((tmp_path / "run" / "meta.json").read_text())
    assert meta["config_hash"] == config_hash(cfg)
    assert meta["seed"] == cfg["seed"]

    (tmp_path / "run" / "junk.txt").write_text("x")
    with pytest.raises(ConfigError, match="not empty"):
        init_run_dir(cfg, out)
    init_run_dir(cfg, out, force=True)   # explicit reuse allowed
