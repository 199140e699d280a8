"""Image grids of generated samples.

Grids are tiled with 2-pixel separators. In every mode rows share the fixed
factor and columns vary the other one. Codes are rendered at the mean of
their conditioning Gaussian so that a row really does hold one code.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .core import LatentCode, make_rng, sample_noise
from .generator import Generator, compose

__all__ = ["MODES", "SEPARATOR", "make_grid", "render", "save_png", "tile", "write_grid"]

MODES = ("fixed_c_vary_z", "vary_c_fixed_z", "decomposed")
SEPARATOR = 2
PANELS = ("background", "mask", "foreground", "image")


@torch.no_grad()
def render(generator: Generator, z: torch.Tensor, index: torch.Tensor,
           eps: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
    """Unperturbed background, mask, masked foreground and composite.

    Uses running batch-norm statistics; ``eps=None`` renders each code at
    its conditioning mean.
    """
    was_training = generator.training
    generator.eval()
    try:
        code = LatentCode.from_index(index, generator.num_codes)
        if eps is None:
            eps = torch.zeros(len(index), generator.d_c)
        scene = generator(z, code, eps=eps.to(z.device))
        comp = compose(scene.background, scene.mask, scene.texture)
    finally:
        generator.train(was_training)
    return {
        "background": scene.background,
        "mask": scene.mask,
        "foreground": comp.foreground_only,
        "image": comp.image,
    }


def _to_uint8(images: torch.Tensor) -> np.ndarray:
    """``[N, C, H, W]`` in ``[-1, 1]`` (C = 1 or 3) -> ``uint8 [N, H, W, 3]``."""
    x = images.detach().cpu().float()
    if x.shape[1] == 1:
        x = x.expand(-1, 3, -1, -1)
    x = ((x.clamp(-1, 1) + 1) * 127.5).round().to(torch.uint8)
    return x.permute(0, 2, 3, 1).numpy()


def tile(images: torch.Tensor, rows: int, cols: int, sep: int = SEPARATOR, fill: int = 255) -> np.ndarray:
    """Row-major grid of ``rows * cols`` images with ``sep``-pixel gutters."""
    if images.shape[0] != rows * cols:
        raise ValueError(f"{images.shape[0]} images for a {rows}x{cols} grid")
    arr = _to_uint8(images)
    h, w = arr.shape[1:3]
    out = np.full((rows * h + (rows - 1) * sep, cols * w + (cols - 1) * sep, 3), fill, dtype=np.uint8)
    for k, img in enumerate(arr):
        r, c = divmod(k, cols)
        out[r * (h + sep):r * (h + sep) + h, c * (w + sep):c * (w + sep) + w] = img
    return out


def save_png(array: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path)
    return path


def make_grid(generator: Generator, mode: str, rows: int = 4, cols: int = 4, seed: int = 0) -> np.ndarray:
    """Build one grid for ``mode``.

    ``fixed_c_vary_z``: row ``r`` uses code ``r`` (mod the code count), the
    noise changes along columns. ``vary_c_fixed_z``: row ``r`` shares one
    noise vector, columns step through codes. ``decomposed``: one sample per
    row with background, mask, foreground and composite side by side
    (``cols`` is ignored).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    rng = make_rng(seed)
    y = generator.num_codes
    d_z = generator.d_z
    if mode == "fixed_c_vary_z":
        z = sample_noise(d_z, rows * cols, rng)
        index = torch.arange(rows).repeat_interleave(cols) % y
    elif mode == "vary_c_fixed_z":
        z = sample_noise(d_z, rows, rng).repeat_interleave(cols, dim=0)
        index = torch.arange(cols).repeat(rows) % y
    else:
        z = sample_noise(d_z, rows, rng)
        index = torch.randint(0, y, (rows,), generator=rng)
    out = render(generator, z, index)
    if mode != "decomposed":
        return tile(out["image"], rows, cols)
    panels = {k: out[k] for k in PANELS}
    panels["mask"] = panels["mask"] * 2 - 1
    stacked = torch.stack([panels[k].expand(-1, 3, -1, -1) for k in PANELS], dim=1)
    return tile(stacked.flatten(0, 1), rows, len(PANELS))


def write_grid(generator: Generator, mode: str, out_dir: str | Path, rows: int = 4, cols: int = 4,
               seed: int = 0) -> Path:
    grid = make_grid(generator, mode, rows, cols, seed)
    return save_png(grid, Path(out_dir) / f"{mode}.png")
