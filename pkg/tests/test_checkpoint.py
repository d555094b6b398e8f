import numpy as np
import pytest

from dactext.checkpoint import (FormatError, ShapeError, TruncatedError, VersionError, load_checkpoint,
                                load_embeddings, load_into, read_tensors, save_checkpoint, save_embeddings,
                                write_tensors)


def test_round_trip_is_exact(tiny_model, tmp_path, rng):
    tiny_model.metadata["note"] = "x"
    path = tmp_path / "m.dac"
    save_checkpoint(tiny_model, path)
    back = load_checkpoint(path)
    for n, p in tiny_model.params.items():
        assert np.array_equal(p.value, back.params[n].value)
    assert back.metadata["note"] == "x"
    doc = rng.integers(2, 30, size=12)
    for a, b in zip(tiny_model.forward(doc), back.forward(doc)):
        assert np.array_equal(a, b)


def test_bytes_are_deterministic(tiny_model, tmp_path):
    save_checkpoint(tiny_model, tmp_path / "a.dac")
    save_checkpoint(tiny_model, tmp_path / "b.dac")
    assert (tmp_path / "a.dac").read_bytes() == (tmp_path / "b.dac").read_bytes()


def test_bad_magic_and_version(tmp_path):
    write_tensors(tmp_path / "t.dac", {"a": np.ones(2)}, {})
    raw = (tmp_path / "t.dac").read_bytes()
    (tmp_path / "m.dac").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(FormatError):
        read_tensors(tmp_path / "m.dac")
    (tmp_path / "v.dac").write_bytes(raw[:8] + (99).to_bytes(4, "little") + raw[12:])
    with pytest.raises(VersionError):
        read_tensors(tmp_path / "v.dac")


def test_truncation_detected(tmp_path):
    write_tensors(tmp_path / "t.dac", {"a": np.arange(10.0)}, {"k": 1})
    raw = (tmp_path / "t.dac").read_bytes()
    (tmp_path / "cut.dac").write_bytes(raw[:-5])
    with pytest.raises(TruncatedError):
        read_tensors(tmp_path / "cut.dac")


def test_shape_mismatch(tiny_model, tmp_path):
    save_checkpoint(tiny_model, tmp_path / "m.dac")
    with pytest.raises(ShapeError, match="vocab_size"):
        load_checkpoint(tmp_path / "m.dac", expect={"vocab_size": 31})
    from dactext.model import ModelConfig, model_init
    other = model_init(ModelConfig(**{**tiny_model.config.to_dict(), "embed_dim": 5}))
    with pytest.raises(ShapeError):
        load_into(other, tmp_path / "m.dac")


def test_embeddings_round_trip(tmp_path, rng):
    table = rng.normal(size=(7, 3))
    save_embeddings(tmp_path / "e.dac", table)
    assert np.array_equal(load_embeddings(tmp_path / "e.dac"), table)
