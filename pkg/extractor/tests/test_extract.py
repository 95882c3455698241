import numpy as np
import pytest
from PIL import Image

from oide_extractor.cli import main as cli_main
from oide_extractor.encoder import EncoderConfig
from oide_extractor.format import read_embeddings
from oide_extractor.pipeline import MODEL_FAMILIES, ExtractJob, extract


class TestLatentGeometry:
    def test_sd2_family_dim(self):
        assert MODEL_FAMILIES["sd2-family"].latent_dim(256) == 4096

    def test_sd3_family_dim(self):
        assert MODEL_FAMILIES["sd3-family"].latent_dim(256) == 16384

    def test_downsample_factor(self):
        assert EncoderConfig().downsample_factor == 8


class TestExtract:
    def test_ten_image_fixture_valid_and_deterministic(self, tmp_path, image_dir,
                                                       sd2_weights):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{tag}.oide"
            report = extract(ExtractJob(image_dir=image_dir, model="sd2-family",
                                        weights=sd2_weights, output=out,
                                        batch_size=4))
            assert report.count == 10
            assert report.dim == 4096
            assert not report.skipped
            ids, data = read_embeddings(out)
            assert data.shape == (10, 4096)
            assert ids.tolist() == list(range(10))
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_manifest_maps_sorted_names(self, tmp_path, image_dir, sd2_weights):
        out = tmp_path / "m.oide"
        extract(ExtractJob(image_dir=image_dir, model="sd2-family",
                           weights=sd2_weights, output=out, batch_size=3))
        manifest = (tmp_path / "m.oide.manifest").read_text().splitlines()
        paths = [line.split("\t")[1] for line in manifest if not line.startswith("#")]
        assert paths == sorted(paths)
        assert len(paths) == 10

    def test_duplicate_image_identical_rows(self, tmp_path, sd2_weights):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 256, size=(80, 80, 3), dtype=np.uint8)
        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        Image.fromarray(arr).save(img_dir / "one.png")
        Image.fromarray(arr).save(img_dir / "two.png")
        out = tmp_path / "dup.oide"
        extract(ExtractJob(image_dir=img_dir, model="sd2-family",
                           weights=sd2_weights, output=out, batch_size=1))
        _, data = read_embeddings(out)
        assert np.array_equal(data[0], data[1])

    def test_corrupt_image_skipped_with_warning(self, tmp_path, image_dir,
                                                sd2_weights):
        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        for src in sorted(image_dir.iterdir()):
            (img_dir / src.name).write_bytes(src.read_bytes())
        (img_dir / "img_04x.png").write_bytes(b"this is not a png")
        out = tmp_path / "skip.oide"
        report = extract(ExtractJob(image_dir=img_dir, model="sd2-family",
                                    weights=sd2_weights, output=out, batch_size=4))
        assert report.count == 10   # ten good ones survive
        assert len(report.skipped) == 1
        manifest = (tmp_path / "skip.oide.manifest").read_text()
        assert "# WARNING" in manifest and "img_04x.png" in manifest
        ids, data = read_embeddings(out)
        assert data.shape[0] == 10

    def test_family_mismatch_rejected(self, tmp_path, image_dir, sd3_weights):
        with pytest.raises(ValueError, match="declares"):
            extract(ExtractJob(image_dir=image_dir, model="sd2-family",
                               weights=sd3_weights, output=tmp_path / "x.oide"))

    def test_sd3_family_dim_output(self, tmp_path, sd3_weights):
        rng = np.random.default_rng(5)
        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        arr = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        Image.fromarray(arr).save(img_dir / "a.png")
        out = tmp_path / "sd3.oide"
        report = extract(ExtractJob(image_dir=img_dir, model="sd3-family",
                                    weights=sd3_weights, output=out))
        assert report.dim == 16384

    def test_empty_dir_rejected(self, tmp_path, sd2_weights):
        empty = tmp_path / "none"
        empty.mkdir()
        with pytest.raises(ValueError, match="no images"):
            extract(ExtractJob(image_dir=empty, model="sd2-family",
                               weights=sd2_weights, output=tmp_path / "x.oide"))


class TestCli:
    def test_end_to_end(self, tmp_path, image_dir, sd2_weights, capsys):
        out = tmp_path / "cli.oide"
        rc = cli_main(["--images", str(image_dir), "--model", "sd2-family",
                       "--out", str(out), "--batch", "5",
                       "--weights", str(sd2_weights)])
        assert rc == 0
        assert "10 embeddings of dim 4096" in capsys.readouterr().out
        ids, data = read_embeddings(out)
        assert data.shape == (10, 4096)

    def test_missing_weights(self, tmp_path, image_dir, capsys):
        rc = cli_main(["--images", str(image_dir), "--model", "sd2-family",
                       "--out", str(tmp_path / "x.oide"),
                       "--weights", str(tmp_path / "nope.pt")])
        assert rc == 1
        assert "weights not found" in capsys.readouterr().err


class TestPrimaryEngineIntegration:
    def test_output_passes_engine_validation(self, tmp_path, image_dir, sd2_weights):
        originid = pytest.importorskip("originid")
        out = tmp_path / "engine.oide"
        extract(ExtractJob(image_dir=image_dir, model="sd2-family",
                           weights=sd2_weights, output=out, batch_size=10))
        emb = originid.load_embeddings(out)
        assert emb.dim == 4096
        assert len(emb) == 10
