import struct

import numpy as np
import pytest

from transfornn.checkpoint import (
    MAGIC,
    decode_config,
    encode_config,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from transfornn.errors import (
    BadMagicError,
    CheckpointError,
    ShapeMismatchError,
    TruncatedCheckpointError,
    VersionError,
)
from transfornn.evaluation import perplexity
from transfornn.models import LanguageModel, ModelConfig


@pytest.fixture
def model():
    cfg = ModelConfig("transfornn", 15, d=8, n_layers=1, m_layers=2, heads=2, d_ff=12,
                      tied=False, seed=5, inference_mode="final")
    return LanguageModel(cfg)


def test_header_layout(model):
    blob = to_bytes(model)
    assert blob[:4] == MAGIC
    version, n = struct.unpack("<II", blob[4:12])
    assert version == 1
    text = blob[12:12 + n].decode()
    assert "family=transfornn" in text and "tied=false" in text
    name_len = struct.unpack("<H", blob[12 + n:14 + n])[0]
    assert blob[14 + n:14 + n + name_len] == b"embedding.weight"


def test_round_trip_is_exact(model, tmp_path):
    path = tmp_path / "m.tfrn"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    for (na, pa), (nb, pb) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    save_checkpoint(loaded, tmp_path / "again.tfrn")
    assert (tmp_path / "again.tfrn").read_bytes() == path.read_bytes()


def test_perplexity_survives_round_trip(model):
    corpus = np.random.default_rng(0).integers(0, 15, size=60)
    loaded = from_bytes(to_bytes(model))
    for mode in ("all", "final"):
        assert perplexity(loaded, corpus, mode, window=8) == perplexity(model, corpus, mode, window=8)


def test_bad_magic(model):
    with pytest.raises(BadMagicError):
        from_bytes(b"XXXX" + to_bytes(model)[4:])
    with pytest.raises(BadMagicError):
        from_bytes(b"TF")


def test_future_version(model):
    blob = bytearray(to_bytes(model))
    blob[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionError):
        from_bytes(bytes(blob))


@pytest.mark.parametrize("cut", [6, 40, -1, -500])
def test_truncation(model, cut):
    with pytest.raises(TruncatedCheckpointError):
        from_bytes(to_bytes(model)[:cut])


def test_missing_tensor_is_truncation(model):
    blob = to_bytes(model)
    last = model.named_parameters()
    *_, (name, p) = last
    record = 2 + len(name) + 1 + 8 * p.ndim + 4 * p.size
    with pytest.raises(TruncatedCheckpointError, match=name):
        from_bytes(blob[:-record])


def test_shape_disagreement(model):
    other = LanguageModel(model.config.replace(vocab_size=16))
    blob = to_bytes(other)
    # graft the smaller config onto the bigger tensors
    n_old = struct.unpack("<I", blob[8:12])[0]
    cfg = encode_config(model.config)
    forged = MAGIC + struct.pack("<II", 1, len(cfg)) + cfg + blob[12 + n_old:]
    with pytest.raises(ShapeMismatchError):
        from_bytes(forged)


def test_strict_config(model):
    good = encode_config(model.config)
    assert decode_config(good) == model.config
    for bad in (good + b"dropout=0.1\n", good + b"d=8\n", good.replace(b"tied=false", b"tied=maybe"),
                good.replace(b"heads=2", b"heads=3"), b"family=lstm\n"):
        with pytest.raises(CheckpointError):
            decode_config(bad)


def test_failed_load_leaves_no_model(model, tmp_path):
    path = tmp_path / "cut.tfrn"
    path.write_bytes(to_bytes(model)[:-3])
    result = None
    with pytest.raises(CheckpointError):
        result = load_checkpoint(path)
    assert result is None
