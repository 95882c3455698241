import numpy as np
import pytest

from oide_extractor.format import read_embeddings, write_embeddings, write_sidecar


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ids = np.arange(5, dtype=np.uint64)
    data = rng.standard_normal((5, 12)).astype(np.float32)
    path = tmp_path / "x.oide"
    write_embeddings(path, ids, data)
    back_ids, back = read_embeddings(path)
    assert np.array_equal(back_ids, ids)
    assert back.tobytes() == data.tobytes()


def test_crc_detects_corruption(tmp_path):
    path = tmp_path / "x.oide"
    write_embeddings(path, np.arange(3, dtype=np.uint64),
                     np.ones((3, 4), dtype=np.float32))
    blob = bytearray(path.read_bytes())
    blob[-10] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="CRC"):
        read_embeddings(path)


def test_rejects_non_finite(tmp_path):
    data = np.ones((2, 2), dtype=np.float32)
    data[0, 0] = np.nan
    with pytest.raises(ValueError):
        write_embeddings(tmp_path / "bad.oide", np.arange(2, dtype=np.uint64), data)


def test_sidecar_includes_warnings(tmp_path):
    path = tmp_path / "x.manifest"
    write_sidecar(path, {0: "a.png", 1: "b.png"}, ["c.png: broken"])
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# WARNING c.png")
    assert lines[1] == "0\ta.png"
