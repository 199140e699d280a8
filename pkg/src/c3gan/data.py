"""Image datasets, two-view augmentation and the synthetic shapes set.

On disk a split is a directory holding image files plus ``manifest.tsv``,
one ``relative_path<TAB>class_id`` line per image (``-1`` = unlabeled).
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, ImageDraw

from .core import RealBatch
from .perturb import PerturbPolicy, affine_matrices, policy_for, sample_affine

__all__ = [
    "AugmentedPair",
    "DatasetError",
    "DatasetManifest",
    "ImageDataset",
    "SynthShapes",
    "augment_pair",
    "load_dataset",
    "read_manifest",
    "synth_shapes",
    "write_manifest",
    "write_synth",
]

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
MAX_FAILURE_RATE = 0.01


class DatasetError(Exception):
    def __init__(self, message: str, failures: Sequence[tuple[str, str]] = ()):
        self.failures = list(failures)
        super().__init__(message)


@dataclass
class DatasetManifest:
    root: Path | None
    entries: list[tuple[str, int]]
    split: str = "train"
    image_size: int = 64

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labeled(self) -> bool:
        return bool(self.entries) and all(c >= 0 for _, c in self.entries)

    @property
    def num_classes(self) -> int:
        ids = [c for _, c in self.entries if c >= 0]
        return max(ids) + 1 if ids else 0


def read_manifest(split_dir: str | Path, image_size: int = 64, split: str | None = None) -> DatasetManifest:
    split_dir = Path(split_dir)
    path = split_dir / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: no {MANIFEST_NAME} in {split_dir}")
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'path<TAB>class_id'")
        entries.append((parts[0], int(parts[1])))
    ids = sorted({c for _, c in entries if c >= 0})
    if ids and ids != list(range(len(ids))):
        raise DatasetError(f"{path}: class ids must be contiguous from 0, got {ids[:10]}...")
    return DatasetManifest(split_dir, entries, split or split_dir.name, image_size)


def write_manifest(manifest: DatasetManifest, split_dir: str | Path | None = None) -> Path:
    split_dir = Path(split_dir or manifest.root)
    split_dir.mkdir(parents=True, exist_ok=True)
    text = "".join(f"{p}\t{c}\n" for p, c in manifest.entries)
    out = split_dir / MANIFEST_NAME
    out.write_text(text, encoding="utf-8")
    return out


def center_square(img: Image.Image) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    return img.crop((left, top, left + side, top + side))


def load_image(path: str | Path, size: int) -> np.ndarray:
    """Decode to RGB, centre-crop to a square, resize; returns ``uint8 [size, size, 3]``."""
    with Image.open(path) as img:
        img = center_square(img.convert("RGB"))
        if img.size != (size, size):
            img = img.resize((size, size), Image.BICUBIC)
        return np.asarray(img, dtype=np.uint8)


def to_tensor(images: np.ndarray | torch.Tensor) -> torch.Tensor:
    """``uint8 [N, H, W, 3]`` -> float ``[N, 3, H, W]`` in ``[-1, 1]``."""
    x = torch.as_tensor(images)
    return x.permute(0, 3, 1, 2).float().div(127.5).sub(1.0)


class ImageDataset:
    """Decoded images held in memory with a seeded per-epoch shuffle.

    Training code only ever sees :meth:`images_for_step`; labels are
    reachable through :meth:`iter_epoch` and :attr:`labels` for evaluation.
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray | None = None,
                 paths: Sequence[str] | None = None, batch_size: int = 32, seed: int = 0):
        if len(images) == 0:
            raise ValueError("dataset is empty")
        self._images = torch.as_tensor(np.ascontiguousarray(images))
        self.labels = None if labels is None else torch.as_tensor(np.asarray(labels), dtype=torch.long)
        self.paths = list(paths) if paths is not None else [str(i) for i in range(len(images))]
        self.batch_size = batch_size
        self.seed = seed

    def __len__(self) -> int:
        return self._images.shape[0]

    @property
    def image_size(self) -> int:
        return self._images.shape[1]

    def epoch_order(self, epoch: int, seed: int | None = None) -> np.ndarray:
        seed = self.seed if seed is None else seed
        return np.random.default_rng([seed, epoch]).permutation(len(self))

    @property
    def steps_per_epoch(self) -> int:
        return self.steps_per_epoch_for(self.batch_size)

    def steps_per_epoch_for(self, batch_size: int) -> int:
        """Full batches per epoch (at least one)."""
        return max(1, len(self) // batch_size)

    def tensor(self, index=None) -> torch.Tensor:
        return to_tensor(self._images if index is None else self._images[index])

    def iter_epoch(self, epoch: int = 0, shuffle: bool = True) -> Iterator[RealBatch]:
        order = self.epoch_order(epoch) if shuffle else np.arange(len(self))
        for start in range(0, len(self), self.batch_size):
            idx = torch.as_tensor(order[start:start + self.batch_size])
            labels = None if self.labels is None else self.labels[idx]
            yield RealBatch(self.tensor(idx), labels)

    def __iter__(self) -> Iterator[RealBatch]:
        return self.iter_epoch(0)

    def images_for_step(self, step: int, batch_size: int | None = None, seed: int | None = None) -> torch.Tensor:
        """The training batch for global ``step`` (labels are not exposed)."""
        batch_size = min(batch_size or self.batch_size, len(self))
        epoch, pos = divmod(step, self.steps_per_epoch_for(batch_size))
        order = self.epoch_order(epoch, seed)
        idx = torch.as_tensor(order[pos * batch_size:(pos + 1) * batch_size])
        return self.tensor(idx)


def load_dataset(manifest: DatasetManifest, batch_size: int = 32, seed: int = 0,
                 workers: int = 4) -> ImageDataset:
    """Decode every manifest entry; tolerates up to 1% unreadable files."""
    root = Path(manifest.root) if manifest.root is not None else Path(".")

    def decode(entry):
        path = root / entry[0]
        try:
            return load_image(path, manifest.image_size), None
        except Exception as exc:  # noqa: BLE001 - any decode failure is recorded
            return None, (str(path), f"{type(exc).__name__}: {exc}")

    if not manifest.entries:
        raise ValueError("dataset is empty")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(decode, manifest.entries))
    failures = [err for _, err in results if err is not None]
    if len(failures) > MAX_FAILURE_RATE * len(results):
        raise DatasetError(f"{len(failures)} of {len(results)} images unreadable", failures)
    for path, err in failures:
        log.warning("skipping unreadable image %s: %s", path, err)
    keep = [i for i, (img, _) in enumerate(results) if img is not None]
    images = np.stack([results[i][0] for i in keep])
    labels = np.array([manifest.entries[i][1] for i in keep]) if manifest.labeled else None
    paths = [manifest.entries[i][0] for i in keep]
    return ImageDataset(images, labels, paths, batch_size=batch_size, seed=seed)


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentedPair:
    view_a: torch.Tensor
    view_b: torch.Tensor


def _homogeneous(theta: torch.Tensor) -> torch.Tensor:
    bottom = torch.tensor([0.0, 0.0, 1.0], dtype=theta.dtype).expand(theta.shape[0], 1, 3)
    return torch.cat([theta, bottom], dim=1)


def _augment_view(images: torch.Tensor, rng: torch.Generator, policy: PerturbPolicy,
                  crop_area: tuple[float, float], flip_prob: float) -> torch.Tensor:
    b = images.shape[0]
    lo, hi = crop_area
    area = lo + (hi - lo) * torch.rand(b, generator=rng, dtype=torch.float64)
    side = area.sqrt()
    centre = (1 - side)[:, None] * (2 * torch.rand(b, 2, generator=rng, dtype=torch.float64) - 1)
    flip = torch.rand(b, generator=rng, dtype=torch.float64) < flip_prob
    jitter = affine_matrices(sample_affine(policy, b, rng), dtype=torch.float64)

    # output coords -> undo jitter -> mirror -> crop window in the source
    crop = torch.zeros(b, 3, 3, dtype=torch.float64)
    crop[:, 0, 0] = side
    crop[:, 1, 1] = side
    crop[:, :2, 2] = centre
    crop[:, 2, 2] = 1
    mirror = torch.eye(3, dtype=torch.float64).repeat(b, 1, 1)
    mirror[:, 0, 0] = torch.where(flip, -1.0, 1.0)
    theta = (crop @ mirror @ _homogeneous(jitter))[:, :2]
    if torch.allclose(theta, torch.eye(3, dtype=theta.dtype)[:2].expand_as(theta), atol=0, rtol=0):
        return images.clone()
    grid = F.affine_grid(theta.to(images.dtype), list(images.shape), align_corners=False)
    return F.grid_sample(images, grid, mode="bilinear", padding_mode="reflection", align_corners=False)


def augment_pair(images: torch.Tensor | RealBatch, rng: torch.Generator,
                 policy: PerturbPolicy | str = "weak", crop_area: tuple[float, float] = (0.6, 1.0),
                 flip_prob: float = 0.5) -> AugmentedPair:
    """Two independent geometric views of each image (no colour changes).

    Each view is a random square crop covering ``crop_area`` of the frame,
    a horizontal flip with probability ``flip_prob`` and a small affine
    jitter drawn from ``policy``.
    """
    if isinstance(images, RealBatch):
        images = images.images
    if images.shape[0] < 1:
        raise ValueError("empty batch")
    if isinstance(policy, str):
        policy = policy_for(policy)
    a = _augment_view(images, rng, policy, crop_area, flip_prob)
    b = _augment_view(images, rng, policy, crop_area, flip_prob)
    return AugmentedPair(a, b)


# ---------------------------------------------------------------------------
# synthetic shapes

# (shape, RGB) per class; hue and outline both identify the class
CLASSES = [
    ("circle", (220, 40, 40)),
    ("triangle", (40, 190, 60)),
    ("square", (50, 80, 230)),
    ("star", (235, 215, 40)),
    ("diamond", (210, 50, 210)),
    ("cross", (40, 210, 215)),
    ("hexagon", (240, 140, 30)),
    ("pentagon", (130, 60, 200)),
]


@dataclass
class SynthShapes:
    images: np.ndarray  # uint8 [N, S, S, 3]
    labels: np.ndarray  # int [N]
    masks: np.ndarray  # bool [N, S, S], foreground support
    manifest: DatasetManifest = field(repr=False)

    def dataset(self, batch_size: int = 32, seed: int = 0) -> ImageDataset:
        return ImageDataset(self.images, self.labels, [p for p, _ in self.manifest.entries],
                            batch_size=batch_size, seed=seed)


def _shape_points(kind: str, cx: float, cy: float, r: float, angle: float) -> list[tuple[float, float]]:
    def ring(n, radii, offset=0.0):
        pts = []
        for i in range(n * len(radii)):
            a = angle + offset + 2 * math.pi * i / (n * len(radii))
            rad = r * radii[i % len(radii)]
            pts.append((cx + rad * math.cos(a), cy + rad * math.sin(a)))
        return pts

    if kind == "triangle":
        return ring(3, [1.0])
    if kind == "square":
        return ring(4, [0.9], math.pi / 4)
    if kind == "star":
        return ring(5, [1.0, 0.45])
    if kind == "diamond":
        pts = ring(4, [1.0])
        return [(cx + (x - cx) * (0.55 if i % 2 else 1.0), cy + (y - cy) * (0.55 if i % 2 else 1.0))
                for i, (x, y) in enumerate(pts)]
    if kind == "cross":
        return ring(4, [1.0, 0.42, 0.42, 1.0], -math.pi / 10)
    if kind == "hexagon":
        return ring(6, [0.95])
    if kind == "pentagon":
        return ring(5, [0.95])
    raise ValueError(kind)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(70, 170)
    tint = rng.normal(0, 12, size=3)
    cells = rng.integers(3, 7)
    coarse = rng.normal(0, 25, size=(cells, cells, 3)) + base + tint
    img = Image.fromarray(np.clip(coarse, 0, 255).astype(np.uint8)).resize((size, size), Image.BICUBIC)
    bg = np.asarray(img, dtype=np.float64)
    bg += rng.normal(0, 6, size=(size, size, 1))
    return bg


def _render(kind: str, colour, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    ss = 4  # supersampling factor
    big = size * ss
    r = rng.uniform(0.2, 0.32) * big
    margin = r * 0.8
    cx, cy = rng.uniform(margin, big - margin, size=2)
    angle = rng.uniform(0, 2 * math.pi)
    canvas = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(canvas)
    if kind == "circle":
        draw.ellipse([cx - r * 0.85, cy - r * 0.85, cx + r * 0.85, cy + r * 0.85], fill=255)
    else:
        draw.polygon(_shape_points(kind, cx, cy, r, angle), fill=255)
    alpha = np.asarray(canvas.resize((size, size), Image.BOX), dtype=np.float64)[..., None] / 255.0

    bg = _background(rng, size)
    shade = rng.uniform(0.85, 1.1)
    fg = np.asarray(colour, dtype=np.float64) * shade + rng.normal(0, 8, size=(size, size, 1))
    img = bg * (1 - alpha) + fg * alpha
    return np.clip(img, 0, 255).round().astype(np.uint8), alpha[..., 0] > 0.5


def synth_shapes(num_classes: int, n_per_class: int, image_size: int = 64,
                 rng: np.random.Generator | int = 0, split: str = "train") -> SynthShapes:
    """Labeled images of coloured shapes on textured backgrounds.

    Class ``i`` is a fixed (outline, hue) pair rendered at random position,
    scale and rotation. Output order is class-interleaved and deterministic
    for a given ``rng`` seed.
    """
    if not 2 <= num_classes <= len(CLASSES):
        raise ValueError(f"num_classes must be in [2, {len(CLASSES)}], got {num_classes}")
    if image_size not in (32, 64):
        raise ValueError(f"image_size must be 32 or 64, got {image_size}")
    rng = np.random.default_rng(rng)
    n = num_classes * n_per_class
    labels = np.tile(np.arange(num_classes), n_per_class)
    images = np.empty((n, image_size, image_size, 3), dtype=np.uint8)
    masks = np.empty((n, image_size, image_size), dtype=bool)
    for i, y in enumerate(labels):
        images[i], masks[i] = _render(*CLASSES[y], rng, image_size)
    entries = [(f"{i:06d}.png", int(y)) for i, y in enumerate(labels)]
    manifest = DatasetManifest(None, entries, split, image_size)
    return SynthShapes(images, labels, masks, manifest)


def write_synth(data: SynthShapes, split_dir: str | Path) -> DatasetManifest:
    split_dir = Path(split_dir)
    split_dir.mkdir(parents=True, exist_ok=True)
    for (name, _), img in zip(data.manifest.entries, data.images):
        Image.fromarray(img).save(split_dir / name)
    manifest = DatasetManifest(split_dir, data.manifest.entries, data.manifest.split, data.manifest.image_size)
    write_manifest(manifest, split_dir)
    data.manifest = manifest
    return manifest
