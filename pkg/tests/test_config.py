import json

import pytest
from pydantic import ValidationError

from jekyll_hyde.config import ExperimentConfig, bundled_config_path, load_config


def test_bundled_configs_load():
    desk = load_config()
    assert (desk.scene.frames, desk.scene.width, desk.scene.height) == (64, 256, 256)
    assert desk.model.depth == 2 and desk.train.epochs == 40
    smoke = load_config(bundled_config_path("smoke"))
    assert smoke.hourglass().input_extent == (16, 16, 16)


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"scene": {"frames": 8, "colour": 3}}))
    with pytest.raises(ValidationError):
        load_config(path)


def test_geometry_checked_up_front():
    with pytest.raises(ValidationError, match="divisible"):
        ExperimentConfig.model_validate({"carve": {"N": 16, "W": 62, "H": 64}})


def test_bad_split_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"split": {"fractions": [0.5, 0.5, 0.5]}})


def test_hash_tracks_content_not_location(tmp_path):
    a = load_config()
    assert a.config_hash() == load_config().config_hash()
    assert load_config(workspace=tmp_path).config_hash() == a.config_hash()
    assert load_config(seed=8).config_hash() != a.config_hash()
    assert len(a.config_hash()) == 16


def test_seed_feeds_every_stage():
    cfg = load_config(seed=12)
    assert cfg.scene_spec().seed == 12 and cfg.train_config().seed == 12
