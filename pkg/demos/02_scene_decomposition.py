"""Generate, perturb and compose a scene with an untrained generator.

Writes ``decomposition.png`` (one row per sample: background, mask,
foreground, composite) and ``perturbed.png`` (the same foregrounds under the
weak and strong affine policies) to the directory given as argv[1]
(default: ./demo-out).
"""

import sys
from pathlib import Path

import torch

from c3gan.core import make_rng, sample_latent, sample_noise
from c3gan.generator import Generator, compose
from c3gan.perturb import policy_for, sample_affine, warp
from c3gan.visualize import make_grid, save_png, tile

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-out")
torch.manual_seed(0)
gen = Generator(num_codes=8, channels=64, image_size=64).eval()

save_png(make_grid(gen, "decomposed", rows=4), out / "decomposition.png")

rng = make_rng(0)
z = sample_noise(64, 4, rng)
code = sample_latent(8, 4, rng)
with torch.no_grad():
    scene = gen(z, code, eps=torch.zeros(4, 8))
    rows = [compose(scene.background, scene.mask, scene.texture).image]
    for name in ("weak", "strong"):
        wm, wt = warp(scene.mask, scene.texture, sample_affine(policy_for(name), 4, rng))
        rows.append(compose(scene.background, wm, wt).image)
save_png(tile(torch.cat(rows), 3, 4), out / "perturbed.png")
print(f"mean mask coverage at init: {scene.mask.mean():.3f}")
print(f"wrote {out / 'decomposition.png'} and {out / 'perturbed.png'}")
