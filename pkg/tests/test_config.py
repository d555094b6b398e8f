import pytest

from dactext.config import RunConfig, RunConfigError


def _write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


def test_defaults_build():
    cfg = RunConfig().validate()
    assert cfg.synthetic_spec().n_docs == 2000
    assert cfg.train_config().abstention.budget == 0.5
    assert cfg.lime_config().kernel_width == pytest.approx(0.75 * 40 ** 0.5)


def test_unknown_key_and_section_rejected(tmp_path):
    with pytest.raises(RunConfigError, match="train.epoch"):
        RunConfig.from_file(_write(tmp_path, "[train]\nepoch = 3\n"))
    with pytest.raises(RunConfigError, match=r"\[optim\]"):
        RunConfig.from_file(_write(tmp_path, "[optim]\nlr = 1\n"))


def test_bad_value_names_field(tmp_path):
    cfg = RunConfig.from_file(_write(tmp_path, "[train]\nepochs = many\n"))
    with pytest.raises(RunConfigError, match="train.epochs"):
        cfg.validate()
    cfg = RunConfig.from_file(_write(tmp_path, "[synthetic]\nflip_rate = 2.0\n"))
    with pytest.raises(RunConfigError, match="flip_rate"):
        cfg.validate()


def test_per_task_values(tmp_path):
    cfg = RunConfig.from_file(_write(tmp_path, "[synthetic]\ntasks = site:4,behavior:3\n"
                                     "flip_rate = site:0.2,behavior:0.1\n[train]\nbudget.behavior = 0.05\n"))
    spec = cfg.synthetic_spec()
    assert spec.flip_for("site") == 0.2 and spec.flip_for("behavior") == 0.1
    tc = cfg.train_config(["site", "behavior"])
    assert tc.abstention_for("behavior").budget == 0.05 and tc.abstention_for("site").budget == 0.5
    with pytest.raises(RunConfigError, match="unknown task"):
        cfg.train_config(["site"])


def test_snapshot_round_trip(tmp_path):
    cfg = RunConfig.from_file(_write(tmp_path, "[synthetic]\nflip_rate = 0.2\n[run]\nseed = 9\n"))
    cfg.write_snapshot(tmp_path / "snap.ini")
    text = (tmp_path / "snap.ini").read_text()
    assert "flip_rate = 0.2" in text and "seed = 9" in text
    again = RunConfig.from_file(tmp_path / "snap.ini")
    assert again.to_ini() == text


def test_shipped_example_parses():
    import os
    path = os.path.join(os.path.dirname(__file__), "..", "configs", "example.ini")
    RunConfig.from_file(path).validate()
