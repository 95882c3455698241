import numpy as np
import pytest
import torch
from PIL import Image

from oide_extractor.encoder import Encoder, EncoderConfig, save_checkpoint

# Reduced-width checkpoints keep CPU tests quick; latent geometry (channel
# count and downsample factor), which fixes the embedding dim, matches the
# full-size families exactly.


@pytest.fixture(scope="session")
def sd2_weights(tmp_path_factory):
    torch.manual_seed(0)
    encoder = Encoder(EncoderConfig(base_channels=16, ch_mult=(1, 2, 4, 4),
                                    num_res_blocks=1, z_channels=4))
    path = tmp_path_factory.mktemp("weights") / "sd2-family.pt"
    save_checkpoint(path, encoder)
    return path


@pytest.fixture(scope="session")
def sd3_weights(tmp_path_factory):
    torch.manual_seed(1)
    encoder = Encoder(EncoderConfig(base_channels=16, ch_mult=(1, 2, 4, 4),
                                    num_res_blocks=1, z_channels=16))
    path = tmp_path_factory.mktemp("weights") / "sd3-family.pt"
    save_checkpoint(path, encoder)
    return path


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(7)
    for i in range(10):
        arr = rng.integers(0, 256, size=(96, 128, 3), dtype=np.uint8)
        Image.fromarray(arr).save(root / f"img_{i:02d}.png")
    return root
