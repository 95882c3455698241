import struct
import zlib

import numpy as np
import pytest

from originid.embeddings import (
    EmbeddingSet,
    ProjectionMatrix,
    l2_normalize,
    load_embeddings,
    load_projection,
    project,
    read_manifest,
    save_embeddings,
    save_projection,
    write_manifest,
)
from originid.errors import (
    BadMagicError,
    ChecksumMismatchError,
    DegenerateVectorError,
    DimensionMismatchError,
    DuplicateIdError,
    FlagMismatchError,
    FormatError,
    NonFiniteValueError,
    TruncatedPayloadError,
    VersionMismatchError,
)


def make_set(rng, count=100, dim=64):
    return EmbeddingSet(
        ids=rng.permutation(count * 3)[:count].astype(np.uint64),
        dim=dim,
        data=rng.standard_normal((count, dim)).astype(np.float32),
    )


def raw_file(dim, ids, payload_f32, magic=b"OIDE", version=1, flags=0,
             count=None, crc=None):
    count = len(ids) if count is None else count
    payload = np.asarray(payload_f32, dtype="<f4").tobytes()
    crc = zlib.crc32(payload) & 0xFFFFFFFF if crc is None else crc
    blob = struct.pack("<4sHHIQ", magic, version, flags, dim, count)
    blob += np.asarray(ids, dtype="<u8").tobytes()
    blob += payload
    blob += struct.pack("<I", crc)
    return blob


class TestFileFormat:
    def test_single_row_round_trip(self, tmp_path):
        path = tmp_path / "one.oide"
        emb = EmbeddingSet(ids=np.array([7], dtype=np.uint64), dim=2,
                           data=np.array([[1.0, 0.0]], dtype=np.float32))
        save_embeddings(emb, path)
        back = load_embeddings(path)
        assert back.ids.tolist() == [7]
        assert back.dim == 2
        assert back.data.tolist() == [[1.0, 0.0]]

    def test_empty_set_valid(self, tmp_path):
        path = tmp_path / "empty.oide"
        emb = EmbeddingSet(ids=np.empty(0, dtype=np.uint64), dim=4,
                           data=np.empty((0, 4), dtype=np.float32))
        save_embeddings(emb, path)
        back = load_embeddings(path)
        assert len(back) == 0 and back.dim == 4

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        for trial in range(5):
            emb = make_set(rng, count=50 + trial, dim=16)
            path = tmp_path / f"rt{trial}.oide"
            save_embeddings(emb, path)
            assert load_embeddings(path) == emb

    def test_count_exceeds_payload(self, tmp_path):
        blob = raw_file(2, [1, 2, 3], np.zeros((2, 2)), count=3)
        path = tmp_path / "short.oide"
        path.write_bytes(blob)
        with pytest.raises(TruncatedPayloadError):
            load_embeddings(path)

    def test_flipped_payload_byte_detected(self, tmp_path):
        rng = np.random.default_rng(3)
        path = tmp_path / "crc.oide"
        save_embeddings(make_set(rng, count=10, dim=8), path)
        blob = bytearray(path.read_bytes())
        blob[-40] ^= 0x55    # inside the float payload
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumMismatchError):
            load_embeddings(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.oide"
        path.write_bytes(raw_file(2, [1], [[0.0, 1.0]], magic=b"NOPE"))
        with pytest.raises(BadMagicError):
            load_embeddings(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v9.oide"
        path.write_bytes(raw_file(2, [1], [[0.0, 1.0]], version=9))
        with pytest.raises(VersionMismatchError):
            load_embeddings(path)

    def test_non_finite_payload(self, tmp_path):
        path = tmp_path / "nan.oide"
        path.write_bytes(raw_file(2, [1], [[np.nan, 1.0]]))
        with pytest.raises(NonFiniteValueError):
            load_embeddings(path)

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / "dup.oide"
        path.write_bytes(raw_file(2, [5, 5], np.zeros((2, 2)) + 1.0))
        with pytest.raises(DuplicateIdError):
            load_embeddings(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "trail.oide"
        path.write_bytes(raw_file(2, [1], [[0.0, 1.0]]) + b"junk")
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_unwritable_path(self, tmp_path):
        emb = EmbeddingSet(ids=np.array([1], dtype=np.uint64), dim=1,
                           data=np.array([[2.0]], dtype=np.float32))
        with pytest.raises(OSError):
            save_embeddings(emb, tmp_path / "no" / "such" / "dir" / "x.oide")

    def test_projection_round_trip_and_flags(self, tmp_path):
        rng = np.random.default_rng(4)
        w = ProjectionMatrix(8, 3, rng.standard_normal((8, 3)).astype(np.float32))
        path = tmp_path / "w.oide"
        save_projection(w, path)
        back = load_projection(path)
        assert back.n == 8 and back.m == 3
        assert np.array_equal(back.data, w.data)
        with pytest.raises(FlagMismatchError):
            load_embeddings(path)

    def test_manifest_round_trip(self, tmp_path):
        path = tmp_path / "ids.manifest"
        entries = {0: "a.png", 3: "b/c.png"}
        write_manifest(path, entries)
        assert read_manifest(path) == entries


class TestInvariants:
    def test_row_count_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            EmbeddingSet(ids=np.array([1, 2], dtype=np.uint64), dim=2,
                         data=np.zeros((1, 2), dtype=np.float32))

    def test_duplicate_id_rejected(self):
        with pytest.raises(DuplicateIdError):
            EmbeddingSet(ids=np.array([1, 1], dtype=np.uint64), dim=2,
                         data=np.ones((2, 2), dtype=np.float32))

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteValueError):
            EmbeddingSet(ids=np.array([1], dtype=np.uint64), dim=2,
                         data=np.array([[1.0, np.inf]], dtype=np.float32))

    def test_projection_rank_bounds(self):
        with pytest.raises(DimensionMismatchError):
            ProjectionMatrix(2, 3, np.zeros((2, 3), dtype=np.float32))


class TestNormalize:
    def test_three_four_five(self):
        out = l2_normalize(np.array([3.0, 4.0], dtype=np.float32))
        np.testing.assert_allclose(out, [0.6, 0.8], atol=1e-7)

    def test_axis_vector(self):
        out = l2_normalize(np.array([0.0, 0.0, 5.0], dtype=np.float32))
        np.testing.assert_allclose(out, [0.0, 0.0, 1.0], atol=1e-7)

    def test_below_threshold(self):
        with pytest.raises(DegenerateVectorError):
            l2_normalize(np.array([1e-12, 0.0], dtype=np.float32))

    def test_scaling_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            v = rng.standard_normal(12).astype(np.float32)
            c = float(rng.uniform(0.1, 100.0))
            a = l2_normalize(v)
            b = l2_normalize((v.astype(np.float64) * c).astype(np.float32))
            np.testing.assert_allclose(a, b, atol=1e-6)

    def test_unit_norm_within_tolerance(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            v = rng.standard_normal(33).astype(np.float32) * rng.uniform(0.01, 10)
            assert abs(np.linalg.norm(l2_normalize(v).astype(np.float64)) - 1.0) < 1e-6


class TestProject:
    def test_identity_is_noop(self):
        rng = np.random.default_rng(8)
        emb = make_set(rng, count=20, dim=6)
        out = project(emb, ProjectionMatrix.identity(6), normalize=False)
        assert np.array_equal(out.data, emb.data)

    def test_hand_multiply(self):
        emb = EmbeddingSet(ids=np.array([0], dtype=np.uint64), dim=2,
                           data=np.array([[1.0, 2.0]], dtype=np.float32))
        w = ProjectionMatrix(2, 2, np.array([[1, 0], [0, 2]], dtype=np.float32))
        out = project(emb, w, normalize=False)
        assert out.data.tolist() == [[1.0, 4.0]]

    def test_zero_map_normalized_degenerate(self):
        rng = np.random.default_rng(9)
        emb = make_set(rng, count=3, dim=4)
        w = ProjectionMatrix(4, 2, np.zeros((4, 2), dtype=np.float32))
        with pytest.raises(DegenerateVectorError):
            project(emb, w, normalize=True)

    def test_dim_mismatch(self):
        rng = np.random.default_rng(10)
        emb = make_set(rng, count=3, dim=4)
        with pytest.raises(DimensionMismatchError):
            project(emb, ProjectionMatrix.identity(5))

    def test_linearity(self):
        rng = np.random.default_rng(12)
        dim, m = 24, 10
        w = ProjectionMatrix(dim, m, rng.standard_normal((dim, m)).astype(np.float32))
        x = rng.standard_normal((7, dim)).astype(np.float32)
        y = rng.standard_normal((7, dim)).astype(np.float32)
        a, b = 0.75, -1.5
        ids = np.arange(7, dtype=np.uint64)
        combined = EmbeddingSet(ids=ids, dim=dim, data=(a * x + b * y).astype(np.float32))
        px = project(EmbeddingSet(ids=ids, dim=dim, data=x), w).data.astype(np.float64)
        py = project(EmbeddingSet(ids=ids, dim=dim, data=y), w).data.astype(np.float64)
        pc = project(combined, w).data.astype(np.float64)
        np.testing.assert_allclose(pc, a * px + b * py, rtol=1e-5, atol=1e-5)
