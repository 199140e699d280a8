"""Background/foreground generator and image composition.

Layer schedule at 128x128 (``channels=512``)::

    G_bg        Linear-BN-GLU -> 512x4x4, 5 x [Up, Conv3, BN, GLU] -> 64x128x128,
                3 residual blocks, Conv3-Tanh -> background
    cond. aug.  Linear-BN-GLU on the one-hot code -> (mu, logvar), c' = mu + sigma*eps
    G_fg base   Linear-BN-GLU(z) -> 512x4x4, concat c' -> 5 up blocks -> 16x128x128,
                3 residual blocks
    G_fg mask   Conv3-BN-GLU -> 64 channels, Conv3-Sigmoid -> mask
    G_fg tex    concat one-hot code, Conv3-BN-GLU, 2 residual blocks, Conv3-BN-GLU,
                Conv3-Tanh -> texture

Smaller images drop trailing up blocks (one per halving) so the 4x4 seed is
kept. ``Conv3-BN-GLU`` convolutions emit twice the listed width; GLU halves it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .core import LatentCode, RunConfig

__all__ = [
    "BackgroundGenerator",
    "ComposedImage",
    "CondAugment",
    "FgCondition",
    "ForegroundGenerator",
    "Generator",
    "SceneComponents",
    "compose",
]


def conv3(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, 1, 1, bias=False)


def conv_bn_glu(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(conv3(cin, 2 * cout), nn.BatchNorm2d(2 * cout), nn.GLU(dim=1))


def up_block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), conv_bn_glu(cin, cout))


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.block = nn.Sequential(
            conv_bn_glu(channels, channels),
            conv3(channels, channels),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class LinearSeed(nn.Module):
    """Linear-BN-GLU projection of a vector onto a ``channels x 4 x 4`` map."""

    def __init__(self, din: int, channels: int):
        super().__init__()
        self.channels = channels
        self.fc = nn.Sequential(
            nn.Linear(din, 2 * channels * 16, bias=False),
            nn.BatchNorm1d(2 * channels * 16),
            nn.GLU(dim=1),
        )

    def forward(self, z):
        return self.fc(z).view(-1, self.channels, 4, 4)


def up_channels(width: int, final: int, stages: int) -> list[int]:
    """Output widths of the up blocks: halve from ``width`` down to ``final``."""
    out = [max(final, width // 2 ** (i + 1)) for i in range(stages)]
    out[-1] = final
    return out


def num_up_stages(image_size: int) -> int:
    stages = image_size.bit_length() - 3  # log2(size / 4)
    if stages < 1 or 4 * 2**stages != image_size:
        raise ValueError(f"image size must be a power of two >= 8, got {image_size}")
    return stages


@dataclass
class FgCondition:
    values: torch.Tensor
    mu: torch.Tensor
    sigma: torch.Tensor


class CondAugment(nn.Module):
    """Map a one-hot code to a Gaussian and draw ``c' = mu + sigma * eps``."""

    def __init__(self, num_codes: int, dim: int = 8):
        super().__init__()
        self.dim = dim
        self.fc = nn.Sequential(
            nn.Linear(num_codes, 4 * dim, bias=False),
            nn.BatchNorm1d(4 * dim),
            nn.GLU(dim=1),
        )

    def forward(self, onehot: torch.Tensor, eps: torch.Tensor | None = None,
                rng: torch.Generator | None = None) -> FgCondition:
        stats = self.fc(onehot)
        mu, logvar = stats[:, : self.dim], stats[:, self.dim :]
        sigma = torch.exp(0.5 * logvar)
        if eps is None:
            eps = torch.randn(mu.shape, generator=rng, dtype=mu.dtype).to(mu.device)
        return FgCondition(values=mu + sigma * eps, mu=mu, sigma=sigma)


class BackgroundGenerator(nn.Module):
    def __init__(self, d_z: int = 64, channels: int = 512, image_size: int = 128):
        super().__init__()
        final = max(8, channels // 8)
        widths = up_channels(channels, final, num_up_stages(image_size))
        self.seed = LinearSeed(d_z, channels)
        ups, cin = [], channels
        for w in widths:
            ups.append(up_block(cin, w))
            cin = w
        self.ups = nn.Sequential(*ups)
        self.res = nn.Sequential(*[ResBlock(final) for _ in range(3)])
        self.out = nn.Sequential(nn.Conv2d(final, 3, 3, 1, 1), nn.Tanh())

    def forward(self, z):
        return self.out(self.res(self.ups(self.seed(z))))


class ForegroundGenerator(nn.Module):
    def __init__(self, num_codes: int, d_z: int = 64, d_c: int = 8,
                 channels: int = 512, image_size: int = 128):
        super().__init__()
        feat = max(8, channels // 32)
        hidden = max(8, channels // 8)
        widths = up_channels(channels, feat, num_up_stages(image_size))
        self.seed = LinearSeed(d_z, channels)
        ups, cin = [], channels + d_c
        for w in widths:
            ups.append(up_block(cin, w))
            cin = w
        self.ups = nn.Sequential(*ups)
        self.res = nn.Sequential(*[ResBlock(feat) for _ in range(3)])
        self.mask_head = nn.Sequential(
            conv_bn_glu(feat, hidden),
            nn.Conv2d(hidden, 1, 3, 1, 1),
            nn.Sigmoid(),
        )
        self.texture_head = nn.Sequential(
            conv_bn_glu(feat + num_codes, feat),
            ResBlock(feat),
            ResBlock(feat),
            conv_bn_glu(feat, feat),
            nn.Conv2d(feat, 3, 3, 1, 1),
            nn.Tanh(),
        )

    def forward(self, z, onehot, cond_values):
        x = self.seed(z)
        c = cond_values[:, :, None, None].expand(-1, -1, 4, 4)
        feat = self.res(self.ups(torch.cat([x, c], dim=1)))
        mask = self.mask_head(feat)
        size = feat.shape[-1]
        code_map = onehot[:, :, None, None].expand(-1, -1, size, size)
        texture = self.texture_head(torch.cat([feat, code_map], dim=1))
        return mask, texture


@dataclass
class SceneComponents:
    background: torch.Tensor
    mask: torch.Tensor
    texture: torch.Tensor
    cond: FgCondition


@dataclass
class ComposedImage:
    image: torch.Tensor
    foreground_only: torch.Tensor
    warped_mask: torch.Tensor
    warped_texture: torch.Tensor


def compose(background: torch.Tensor, warped_mask: torch.Tensor, warped_texture: torch.Tensor,
            fill: float = 0.0) -> ComposedImage:
    """``image = bg * (1 - m) + t * m``; the foreground-only image uses a constant ``fill``."""
    if background.shape != warped_texture.shape or warped_mask.shape[-2:] != background.shape[-2:]:
        raise ValueError(
            f"shape mismatch: background {tuple(background.shape)}, mask {tuple(warped_mask.shape)}, "
            f"texture {tuple(warped_texture.shape)}"
        )
    if warped_mask.min() < 0 or warped_mask.max() > 1:
        raise ValueError("mask values must lie in [0, 1]")
    inv = 1 - warped_mask
    image = background * inv + warped_texture * warped_mask
    fg = warped_texture * warped_mask + fill * inv
    return ComposedImage(image=image, foreground_only=fg, warped_mask=warped_mask,
                         warped_texture=warped_texture)


class Generator(nn.Module):
    """Full generator: background from ``z``; mask and texture from ``(z, c)``."""

    def __init__(self, num_codes: int, d_z: int = 64, d_c: int = 8,
                 channels: int = 512, image_size: int = 128):
        super().__init__()
        self.num_codes = num_codes
        self.d_z = d_z
        self.d_c = d_c
        self.cond_aug = CondAugment(num_codes, d_c)
        self.background = BackgroundGenerator(d_z, channels, image_size)
        self.foreground = ForegroundGenerator(num_codes, d_z, d_c, channels, image_size)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> Generator:
        return cls(cfg.effective_clusters, cfg.d_z, cfg.d_c, cfg.gen_channels, cfg.image_size)

    def forward(self, z: torch.Tensor, code: LatentCode, eps: torch.Tensor | None = None,
                rng: torch.Generator | None = None) -> SceneComponents:
        cond = self.cond_aug(code.onehot.to(z.device), eps=eps, rng=rng)
        bg = self.background(z)
        mask, texture = self.foreground(z, code.onehot.to(z.device), cond.values)
        return SceneComponents(background=bg, mask=mask, texture=texture, cond=cond)
