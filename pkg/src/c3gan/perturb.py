"""Random affine perturbation of the foreground mask and texture.

The warp is applied as ``scale -> rotate about the image centre -> translate``
with translation expressed as a fraction of the full image width/height.
Pixels that fall outside the source frame read as zero, so a warped mask is
empty (pure background) near the borders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

__all__ = ["AffineParams", "PerturbPolicy", "affine_matrices", "policy_for", "sample_affine", "warp"]


@dataclass(frozen=True)
class PerturbPolicy:
    scale_range: tuple[float, float]
    rotation_range: tuple[float, float]
    translate_range: tuple[float, float]

    def __post_init__(self):
        for name in ("scale_range", "rotation_range", "translate_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} is empty: ({lo}, {hi})")
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")


_POLICIES = {
    "weak": PerturbPolicy((0.9, 1.1), (-2.0, 2.0), (-0.08, 0.08)),
    "strong": PerturbPolicy((0.8, 1.5), (-15.0, 15.0), (-0.15, 0.15)),
    "none": PerturbPolicy((1.0, 1.0), (0.0, 0.0), (0.0, 0.0)),
}


def policy_for(name: str) -> PerturbPolicy:
    """Return the ``weak`` or ``strong`` policy (``none`` is the identity)."""
    try:
        return _POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown perturbation policy {name!r}; expected 'weak' or 'strong'") from None


@dataclass(frozen=True)
class AffineParams:
    """Per-sample affine parameters, each a tensor of length ``B``.

    ``translate`` is ``[B, 2]`` holding (x, y) shifts as fractions of the
    image extent; ``rotation_deg`` is in degrees.
    """

    scale: torch.Tensor
    rotation_deg: torch.Tensor
    translate: torch.Tensor

    def __len__(self) -> int:
        return self.scale.shape[0]

    @classmethod
    def identity(cls, batch_size: int) -> AffineParams:
        return cls(torch.ones(batch_size), torch.zeros(batch_size), torch.zeros(batch_size, 2))


def _uniform(lo: float, hi: float, shape, rng: torch.Generator) -> torch.Tensor:
    return lo + (hi - lo) * torch.rand(shape, generator=rng, dtype=torch.float64)


def sample_affine(policy: PerturbPolicy, batch_size: int, rng: torch.Generator) -> AffineParams:
    scale = _uniform(*policy.scale_range, (batch_size,), rng)
    rot = _uniform(*policy.rotation_range, (batch_size,), rng)
    trans = _uniform(*policy.translate_range, (batch_size, 2), rng)
    return AffineParams(scale.float(), rot.float(), trans.float())


def affine_matrices(params: AffineParams, dtype=torch.float32) -> torch.Tensor:
    """Sampling matrices ``[B, 2, 3]`` for :func:`torch.nn.functional.affine_grid`.

    The forward map in normalised coordinates is ``p' = s R p + 2 t``;
    ``grid_sample`` needs its inverse, ``p = (s R)^-1 (p' - 2 t)``.
    """
    s = params.scale.to(torch.float64)
    a = params.rotation_deg.to(torch.float64) * (math.pi / 180.0)
    cos, sin = torch.cos(a), torch.sin(a)
    # inverse of s * [[cos, -sin], [sin, cos]]
    inv = torch.stack([torch.stack([cos, sin], -1), torch.stack([-sin, cos], -1)], -2) / s[:, None, None]
    shift = 2.0 * params.translate.to(torch.float64)
    offset = -(inv @ shift[:, :, None])
    return torch.cat([inv, offset], dim=2).to(dtype)


def warp(mask: torch.Tensor, texture: torch.Tensor, params: AffineParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Apply the same affine transform to mask and texture, per batch element.

    Bilinear sampling with zero fill outside the frame; differentiable with
    respect to both inputs (not with respect to the parameters).
    """
    if mask.shape[-2:] != texture.shape[-2:]:
        raise ValueError(f"mask {tuple(mask.shape)} and texture {tuple(texture.shape)} differ spatially")
    if len(params) != mask.shape[0]:
        raise ValueError(f"{len(params)} affine parameter sets for a batch of {mask.shape[0]}")
    # sampling runs in float64: in float32 the grid round trip alone costs
    # a few 1e-6 at 64 px, so even the identity would not reproduce its input
    theta = affine_matrices(params, dtype=torch.float64).to(mask.device)
    stacked = torch.cat([mask, texture], dim=1)
    grid = F.affine_grid(theta, list(stacked.shape), align_corners=False)
    out = F.grid_sample(stacked.double(), grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    out = out.to(mask.dtype)
    c = mask.shape[1]
    # bilinear weights can sum to 1 + eps in floating point
    return out[:, :c].clamp(0.0, 1.0), out[:, c:]
