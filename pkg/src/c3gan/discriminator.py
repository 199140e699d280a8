"""Dual-head discriminator and the centroid-based cluster posterior.

The shared encoder downsamples to ``512 x 4 x 4``; one head produces the
adversarial score ``r``, the other a ``d_h``-dimensional embedding ``h``.
A bias-carrying linear layer maps the one-hot codes to cluster centroids in
the embedding space, and the posterior over clusters is a temperature
softmax of cosine similarities between ``h`` and the centroids.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .core import RunConfig

__all__ = ["DegenerateEmbeddingError", "Discriminator", "DiscriminatorOutput", "cosine_similarity", "posterior"]

NORM_EPS = 1e-8


class DegenerateEmbeddingError(ArithmeticError):
    """An embedding or centroid has zero norm, so cosine similarity is undefined."""


@dataclass
class DiscriminatorOutput:
    r: torch.Tensor
    h: torch.Tensor


def _lrelu():
    return nn.LeakyReLU(0.2, inplace=True)


class Discriminator(nn.Module):
    def __init__(self, num_clusters: int, d_h: int = 512, channels: int = 512, image_size: int = 128):
        super().__init__()
        stages = image_size.bit_length() - 4  # stride-2 convs after the first
        if stages < 1 or 8 * 2**stages != image_size:
            raise ValueError(f"image size must be a power of two >= 16, got {image_size}")
        first = max(8, channels // 8)
        layers: list[nn.Module] = [nn.Conv2d(3, first, 4, 2, 1), _lrelu()]
        cin = first
        for _ in range(stages):
            cout = min(channels, cin * 2)
            layers += [nn.Conv2d(cin, cout, 4, 2, 1, bias=False), nn.BatchNorm2d(cout), _lrelu()]
            cin = cout
        layers += [nn.Conv2d(cin, channels, 3, 1, 1, bias=False), nn.BatchNorm2d(channels), _lrelu()]
        self.image_size = image_size
        self.base = nn.Sequential(*layers)
        self.adv_head = nn.Conv2d(channels, 1, 4, 4)
        self.sem_head = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1, bias=False),
            nn.BatchNorm2d(channels),
            _lrelu(),
            nn.Conv2d(channels, d_h, 4, 4),
        )
        self.centroid = nn.Linear(num_clusters, d_h)
        self.num_clusters = num_clusters

    @classmethod
    def from_config(cls, cfg: RunConfig) -> Discriminator:
        return cls(cfg.effective_clusters, cfg.d_h, cfg.disc_channels, cfg.image_size)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutput:
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2:] != (self.image_size, self.image_size):
            raise ValueError(f"expected images [B, 3, {self.image_size}, {self.image_size}], got {tuple(x.shape)}")
        feat = self.base(x)
        r = self.adv_head(feat).flatten(1).squeeze(1)
        h = self.sem_head(feat).flatten(1)
        return DiscriminatorOutput(r=r, h=h)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Semantic embedding ``h`` only (skips the adversarial head)."""
        return self.sem_head(self.base(x)).flatten(1)

    def centroids(self) -> torch.Tensor:
        """``[Y, d_h]`` matrix whose row ``y`` is the centroid layer applied to ``e_y``."""
        return self.centroid.weight.t() + self.centroid.bias

    def adversarial_parameters(self):
        return self.adv_head.parameters()

    def semantic_parameters(self):
        return self.sem_head.parameters()


def cosine_similarity(a: torch.Tensor, b: torch.Tensor, check: bool = True) -> torch.Tensor:
    """Pairwise cosine similarity ``[len(a), len(b)]``."""
    na = a.norm(dim=1, keepdim=True)
    nb = b.norm(dim=1, keepdim=True)
    if check and (bool((na == 0).any()) or bool((nb == 0).any())):
        raise DegenerateEmbeddingError("zero-norm vector in cosine similarity")
    return (a / (na + NORM_EPS)) @ (b / (nb + NORM_EPS)).t()


def logits(h: torch.Tensor, centroids: torch.Tensor, temperature: float) -> torch.Tensor:
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return cosine_similarity(h, centroids) / temperature


def posterior(h: torch.Tensor, centroids: torch.Tensor, temperature: float) -> torch.Tensor:
    """``q[b, y] = softmax_y(cos(h_b, l_y) / temperature)``.

    ``torch.softmax`` subtracts the row maximum, so large ``1/temperature``
    does not overflow.
    """
    return torch.softmax(logits(h, centroids, temperature), dim=1)
