import numpy as np
import pytest
import torch

from c3gan.generator import Generator
from c3gan.visualize import make_grid, render, tile


def test_tile_layout():
    images = torch.stack([torch.full((3, 4, 4), v) for v in (-1.0, 0.0, 1.0, 0.5, -0.5, 0.25)])
    grid = tile(images, 2, 3)
    assert grid.shape == (2 * 4 + 2, 3 * 4 + 2 * 2, 3)
    assert np.all(grid[4:6] == 255) and np.all(grid[:, 4:6] == 255)
    assert grid[0, 0, 0] == 0 and grid[0, 6, 0] == 128 and grid[7, 0, 0] == 191


def test_tile_count_mismatch():
    with pytest.raises(ValueError):
        tile(torch.zeros(5, 3, 4, 4), 2, 3)


@pytest.fixture(scope="module")
def gen():
    torch.manual_seed(0)
    return Generator(num_codes=5, channels=32, image_size=32)


def test_render_deterministic_and_mode_preserving(gen):
    gen.train()
    z = torch.randn(3, 64, generator=torch.Generator().manual_seed(0))
    a = render(gen, z, torch.tensor([0, 1, 4]))
    b = render(gen, z, torch.tensor([0, 1, 4]))
    assert gen.training
    assert torch.equal(a["image"], b["image"])
    assert torch.allclose(a["image"], a["background"] * (1 - a["mask"]) + a["foreground"], atol=1e-6)


def test_rows_share_the_fixed_factor(gen):
    grid = make_grid(gen, "vary_c_fixed_z", rows=2, cols=3, seed=1)
    assert grid.shape == (2 * 32 + 2, 3 * 32 + 4, 3)
    with pytest.raises(ValueError):
        make_grid(gen, "mosaic")
