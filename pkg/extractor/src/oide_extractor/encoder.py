"""Latent-autoencoder encoder in the Stable Diffusion family layout.

Standard KL-autoencoder encoder: conv stem, residual stages with stride-2
downsampling between them, a middle stage with single-head self-attention,
and a 1x1 quantization conv emitting distribution moments. The latent used
for embeddings is the distribution mean (first half of the moments), which
makes extraction deterministic.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class EncoderConfig:
    base_channels: int = 128
    ch_mult: tuple = (1, 2, 4, 4)
    num_res_blocks: int = 2
    z_channels: int = 4

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.ch_mult) - 1)

    def latent_dim(self, resolution: int) -> int:
        side = resolution // self.downsample_factor
        return self.z_channels * side * side


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(32, channels), channels, eps=1e-6)


class ResnetBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.skip(x) + h


class AttnBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm = _norm(channels)
        self.q = nn.Conv2d(channels, channels, 1)
        self.k = nn.Conv2d(channels, channels, 1)
        self.v = nn.Conv2d(channels, channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        h = self.norm(x)
        b, c, height, width = h.shape
        q = self.q(h).reshape(b, c, height * width).permute(0, 2, 1)
        k = self.k(h).reshape(b, c, height * width)
        v = self.v(h).reshape(b, c, height * width)
        attn = torch.softmax(q @ k * (c ** -0.5), dim=-1)
        out = (v @ attn.permute(0, 2, 1)).reshape(b, c, height, width)
        return x + self.proj(out)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2)

    def forward(self, x):
        return self.conv(torch.nn.functional.pad(x, (0, 1, 0, 1)))


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        self.conv_in = nn.Conv2d(3, ch, 3, padding=1)

        stages = []
        c_cur = ch
        for level, mult in enumerate(cfg.ch_mult):
            c_out = ch * mult
            blocks = []
            for _ in range(cfg.num_res_blocks):
                blocks.append(ResnetBlock(c_cur, c_out))
                c_cur = c_out
            if level != len(cfg.ch_mult) - 1:
                blocks.append(Downsample(c_cur))
            stages.append(nn.Sequential(*blocks))
        self.down = nn.Sequential(*stages)

        self.mid = nn.Sequential(
            ResnetBlock(c_cur, c_cur), AttnBlock(c_cur), ResnetBlock(c_cur, c_cur))
        self.norm_out = _norm(c_cur)
        self.conv_out = nn.Conv2d(c_cur, 2 * cfg.z_channels, 3, padding=1)
        self.quant_conv = nn.Conv2d(2 * cfg.z_channels, 2 * cfg.z_channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Pixel batch in [-1, 1] -> latent mean (b, z, h/8, w/8)."""
        h = self.down(self.conv_in(x))
        h = self.mid(h)
        h = self.conv_out(torch.nn.functional.silu(self.norm_out(h)))
        moments = self.quant_conv(h)
        mean, _ = torch.chunk(moments, 2, dim=1)
        return mean


def save_checkpoint(path, encoder: Encoder) -> None:
    torch.save({"config": asdict(encoder.cfg),
                "state_dict": encoder.state_dict()}, path)


def load_checkpoint(path) -> Encoder:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    raw = blob["config"]
    cfg = EncoderConfig(base_channels=raw["base_channels"],
                        ch_mult=tuple(raw["ch_mult"]),
                        num_res_blocks=raw["num_res_blocks"],
                        z_channels=raw["z_channels"])
    encoder = Encoder(cfg)
    encoder.load_state_dict(blob["state_dict"])
    encoder.eval()
    return encoder
