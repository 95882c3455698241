"""Directory-of-images to embedding-file extraction."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .encoder import Encoder, EncoderConfig, load_checkpoint
from .format import write_embeddings, write_sidecar

RESOLUTION = 256

# Released autoencoder families and their latent geometry. The SD2-family
# encoder flattens to 4 * 32 * 32 = 4096 at 256x256; the SD3 family uses 16
# latent channels, giving 16384.
MODEL_FAMILIES = {
    "sd2-family": EncoderConfig(base_channels=128, ch_mult=(1, 2, 4, 4),
                                num_res_blocks=2, z_channels=4),
    "sd3-family": EncoderConfig(base_channels=128, ch_mult=(1, 2, 4, 4),
                                num_res_blocks=2, z_channels=16),
}

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff"}


@dataclass
class ExtractJob:
    image_dir: Path
    model: str
    weights: Path
    output: Path
    batch_size: int = 8
    device: str = "cpu"
    resolution: int = RESOLUTION
    manifest: Path | None = None

    def __post_init__(self):
        self.image_dir = Path(self.image_dir)
        self.weights = Path(self.weights)
        self.output = Path(self.output)
        if self.manifest is None:
            self.manifest = self.output.with_suffix(self.output.suffix + ".manifest")
        if self.model not in MODEL_FAMILIES:
            raise ValueError(f"unknown model {self.model!r}; "
                             f"choose from {sorted(MODEL_FAMILIES)}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class ExtractReport:
    count: int
    dim: int
    skipped: list = field(default_factory=list)


def _load_image(path: Path, resolution: int) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(rgb, dtype=np.float32) / 127.5 - 1.0
    return arr.transpose(2, 0, 1)   # (3, H, W)


def _check_family(encoder: Encoder, job: ExtractJob) -> None:
    family = MODEL_FAMILIES[job.model]
    if (encoder.cfg.z_channels != family.z_channels
            or encoder.cfg.downsample_factor != family.downsample_factor):
        raise ValueError(
            f"weights at {job.weights} produce "
            f"{encoder.cfg.latent_dim(job.resolution)}-dim latents but model "
            f"{job.model!r} declares {family.latent_dim(job.resolution)}")


def extract(job: ExtractJob) -> ExtractReport:
    """Encode every decodable image under job.image_dir, in file-name order.

    Ids are row positions in sorted-name order; the sidecar manifest maps
    them back to paths and records skipped files. Uses the encoder's
    distribution mean, so repeated runs produce identical bytes.
    """
    encoder = load_checkpoint(job.weights)
    _check_family(encoder, job)
    device = torch.device(job.device)
    encoder.to(device)

    paths = sorted(p for p in job.image_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ValueError(f"no images found under {job.image_dir}")

    rows = []
    entries: dict[int, str] = {}
    skipped: list[str] = []
    batch: list[np.ndarray] = []

    def flush():
        if not batch:
            return
        stacked = torch.from_numpy(np.stack(batch)).to(device)
        with torch.no_grad():
            latents = encoder(stacked)
        rows.append(latents.cpu().numpy().reshape(len(batch), -1))
        batch.clear()

    for path in paths:
        try:
            batch.append(_load_image(path, job.resolution))
        except (UnidentifiedImageError, OSError) as exc:
            skipped.append(f"{path}: {exc}")
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
            continue
        entries[len(entries)] = str(path)
        if len(batch) == job.batch_size:
            flush()
    flush()

    if not rows:
        raise ValueError(f"no decodable images under {job.image_dir}")
    data = np.concatenate(rows, axis=0).astype(np.float32)
    ids = np.arange(data.shape[0], dtype=np.uint64)
    write_embeddings(job.output, ids, data)
    write_sidecar(job.manifest, entries, skipped)
    return ExtractReport(count=data.shape[0], dim=data.shape[1], skipped=skipped)
