"""Alternating discriminator/generator optimisation and checkpointing.

Each iteration runs one discriminator update followed by one generator
update. Parameter groups are disjoint: the discriminator group (encoder,
both heads and the centroid layer) only moves in :meth:`Trainer.d_step`, the
generator group only in :meth:`Trainer.g_step`.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import struct
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .core import (
    LatentCode,
    RunConfig,
    make_rng,
    sample_latent,
    sample_noise,
    validate_config,
)
from .data import ImageDataset, augment_pair
from .discriminator import Discriminator, posterior
from .generator import ComposedImage, Generator, SceneComponents, compose
from .losses import (
    LossReport,
    TrainingDivergence,
    entropy_reg,
    hinge_d,
    hinge_g,
    img_contrastive,
    info_loss,
    mask_reg,
    total_objective,
    weighted_total,
)
from .perturb import policy_for, sample_affine, warp
from .visualize import render

__all__ = [
    "CheckpointError",
    "CheckpointIncompatible",
    "ChecksumError",
    "StepLog",
    "TrainState",
    "Trainer",
    "check_compatible",
    "latest_checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]

log = logging.getLogger(__name__)

PROBE_SIZE = 64


@dataclass
class StepLog:
    step: int
    epoch: int
    d: LossReport
    g: LossReport
    wall_ms: float
    grad_norms: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "d": self.d.to_dict(),
            "g": self.g.to_dict(),
            "wall_ms": self.wall_ms,
            "grad_norms": self.grad_norms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class TrainState:
    step: int
    epoch: int
    config: RunConfig
    generator: dict[str, torch.Tensor]
    discriminator: dict[str, torch.Tensor]
    opt_g: dict
    opt_d: dict
    rng_state: torch.Tensor
    probe: dict[str, torch.Tensor] = field(default_factory=dict)


def _grad_norm(params: Iterable[torch.nn.Parameter]) -> float:
    sq = [p.grad.detach().pow(2).sum() for p in params if p.grad is not None]
    return float(torch.stack(sq).sum().sqrt()) if sq else 0.0


class Trainer:
    """Owns both networks, their Adam optimisers and the run's random stream."""

    def __init__(self, config: RunConfig, device: str | torch.device = "cpu"):
        self.config = config
        self.device = torch.device(device)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.generator = Generator.from_config(config).to(self.device)
            self.discriminator = Discriminator.from_config(config).to(self.device)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=config.lr, betas=config.betas)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=config.lr, betas=config.betas)
        self.policy = policy_for(config.perturb_policy)
        self.rng = make_rng(config.seed)
        self.step = 0
        self.epoch = 0
        probe_rng = make_rng(config.seed + 1)
        self.probe = {
            "z": sample_noise(config.d_z, PROBE_SIZE, probe_rng),
            "index": sample_latent(config.effective_clusters, PROBE_SIZE, probe_rng).index,
            "eps": torch.randn(PROBE_SIZE, config.d_c, generator=probe_rng),
        }

    # -- sampling ---------------------------------------------------------

    def sample_fakes(self, batch_size: int) -> tuple[LatentCode, SceneComponents, ComposedImage]:
        cfg = self.config
        z = sample_noise(cfg.d_z, batch_size, self.rng).to(self.device)
        code = sample_latent(cfg.effective_clusters, batch_size, self.rng)
        scene = self.generator(z, code, rng=self.rng)
        params = sample_affine(self.policy, batch_size, self.rng)
        warped_mask, warped_texture = warp(scene.mask, scene.texture, params)
        return code, scene, compose(scene.background, warped_mask, warped_texture)

    # -- updates ----------------------------------------------------------

    def d_step(self, real: torch.Tensor) -> LossReport:
        """One discriminator update on a batch of real images (no labels)."""
        cfg = self.config
        w0, w1, w2, w3, _ = cfg.loss_weights
        tau = cfg.temperature
        D = self.discriminator
        real = real.to(self.device)
        self.generator.train()
        D.train()
        with torch.no_grad():
            code, _, fake = self.sample_fakes(real.shape[0])
        index = code.index.to(self.device)

        out_real = D(real)
        out_fake = D(fake.image)
        terms = {"adv_d": hinge_d(out_real.r, out_fake.r)}
        centroids = D.centroids()
        if w0 > 0:
            terms["info"] = info_loss(posterior(out_fake.h, centroids, tau), index)
        if w1 > 0:
            terms["info_fg"] = info_loss(posterior(D.embed(fake.foreground_only), centroids, tau), index)
        if w2 > 0:
            views = augment_pair(real, self.rng, self.policy)
            terms["img_cont"] = img_contrastive(D.embed(views.view_a), D.embed(views.view_b), tau)
        if w3 > 0:
            terms["entropy"] = entropy_reg(posterior(out_real.h, centroids, tau))

        report = total_objective(cfg.loss_weights, **terms)
        loss = weighted_total(cfg.loss_weights, **terms)
        self.opt_d.zero_grad(set_to_none=True)
        loss.backward()
        self._last_d_norm = _grad_norm(D.parameters())
        self.opt_d.step()
        return report

    def g_step(self) -> LossReport:
        """One generator update; discriminator weights are held fixed."""
        cfg = self.config
        w0, w1, _, _, w4 = cfg.loss_weights
        tau = cfg.temperature
        D = self.discriminator
        self.generator.train()
        D.train()
        D.requires_grad_(False)
        try:
            code, scene, fake = self.sample_fakes(cfg.batch_size)
            index = code.index.to(self.device)
            out = D(fake.image)
            terms = {"adv_g": hinge_g(out.r)}
            centroids = D.centroids()
            if w0 > 0:
                terms["info"] = info_loss(posterior(out.h, centroids, tau), index)
            if w1 > 0:
                terms["info_fg"] = info_loss(posterior(D.embed(fake.foreground_only), centroids, tau), index)
            if w4 > 0:
                terms["mask"] = mask_reg(scene.mask)
            report = total_objective(cfg.loss_weights, **terms)
            loss = weighted_total(cfg.loss_weights, **terms)
            self.opt_g.zero_grad(set_to_none=True)
            loss.backward()
        finally:
            D.requires_grad_(True)
        self._last_g_norm = _grad_norm(self.generator.parameters())
        self.opt_g.step()
        return report

    def train_step(self, real: torch.Tensor, steps_per_epoch: int = 1) -> StepLog:
        t0 = time.perf_counter()
        d_report = self.d_step(real)
        g_report = self.g_step()
        self.epoch = self.step // max(1, steps_per_epoch)
        entry = StepLog(
            step=self.step,
            epoch=self.epoch,
            d=d_report,
            g=g_report,
            wall_ms=1000.0 * (time.perf_counter() - t0),
            grad_norms={"discriminator": self._last_d_norm, "generator": self._last_g_norm},
        )
        self.step += 1
        return entry

    # -- probe rendering --------------------------------------------------

    def render(self, z: torch.Tensor, index: torch.Tensor, eps: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
        """Unperturbed components and composite, using running BN statistics."""
        return render(self.generator, z.to(self.device), index, eps)

    # -- state ------------------------------------------------------------

    def state(self) -> TrainState:
        return TrainState(
            step=self.step,
            epoch=self.epoch,
            config=self.config,
            generator=self.generator.state_dict(),
            discriminator=self.discriminator.state_dict(),
            opt_g=self.opt_g.state_dict(),
            opt_d=self.opt_d.state_dict(),
            rng_state=self.rng.get_state(),
            probe=dict(self.probe),
        )

    @classmethod
    def from_state(cls, state: TrainState, config: RunConfig | None = None,
                   device: str | torch.device = "cpu") -> Trainer:
        config = config or state.config
        trainer = cls(config, device)
        # discriminator first: a cluster-count change then names the centroid layer
        _check_shapes("discriminator", trainer.discriminator.state_dict(), state.discriminator)
        _check_shapes("generator", trainer.generator.state_dict(), state.generator)
        trainer.generator.load_state_dict(state.generator)
        trainer.discriminator.load_state_dict(state.discriminator)
        trainer.opt_g.load_state_dict(state.opt_g)
        trainer.opt_d.load_state_dict(state.opt_d)
        trainer.rng.set_state(state.rng_state)
        trainer.step = state.step
        trainer.epoch = state.epoch
        if state.probe:
            trainer.probe = dict(state.probe)
        return trainer

    def parameter_digest(self, which: str) -> str:
        module = {"generator": self.generator, "discriminator": self.discriminator}[which]
        h = hashlib.sha256()
        for name, p in module.named_parameters():
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"C3GANCKP"
VERSION = 1
_HEADER = struct.Struct("<8sIQ32s")


class CheckpointError(Exception):
    pass


class ChecksumError(CheckpointError):
    pass


class CheckpointIncompatible(CheckpointError):
    pass


_FRIENDLY = {"centroid": "psi_c"}


def _check_shapes(prefix: str, expected: dict, found: dict) -> None:
    for name, tensor in expected.items():
        label = f"{prefix}.{name}"
        layer = name.split(".")[0]
        if layer in _FRIENDLY:
            label = f"{_FRIENDLY[layer]} ({label})"
        if name not in found:
            raise CheckpointIncompatible(f"checkpoint is missing parameter {label}")
        if tuple(found[name].shape) != tuple(tensor.shape):
            raise CheckpointIncompatible(
                f"parameter {label} has shape {tuple(found[name].shape)}, expected {tuple(tensor.shape)}"
            )
    extra = set(found) - set(expected)
    if extra:
        raise CheckpointIncompatible(f"unexpected {prefix} parameters: {sorted(extra)[:5]}")


def save_checkpoint(state: TrainState | Trainer, path: str | Path) -> Path:
    """Write ``state`` atomically as a single checksummed file."""
    if isinstance(state, Trainer):
        state = state.state()
    payload = {
        "step": state.step,
        "epoch": state.epoch,
        "config": state.config.to_dict(),
        "generator": state.generator,
        "discriminator": state.discriminator,
        "opt_g": state.opt_g,
        "opt_d": state.opt_d,
        "rng_state": state.rng_state,
        "probe": state.probe,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    body = buf.getvalue()
    header = _HEADER.pack(MAGIC, VERSION, len(body), hashlib.sha256(body).digest())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(header)
        f.write(body)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path, config: RunConfig | None = None) -> TrainState:
    """Read and verify a checkpoint.

    If ``config`` is given, every stored parameter must match the shape the
    config implies; otherwise :class:`CheckpointIncompatible` names the first
    offending parameter.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ChecksumError(f"{path}: truncated header")
    magic, version, length, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointIncompatible(f"{path}: format version {version}, expected {VERSION}")
    body = data[_HEADER.size:]
    if len(body) != length or hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch (file truncated or corrupt)")
    payload = torch.load(io.BytesIO(body), map_location="cpu", weights_only=True)
    state = TrainState(
        step=payload["step"],
        epoch=payload["epoch"],
        config=validate_config(payload["config"]),
        generator=payload["generator"],
        discriminator=payload["discriminator"],
        opt_g=payload["opt_g"],
        opt_d=payload["opt_d"],
        rng_state=payload["rng_state"],
        probe=payload.get("probe", {}),
    )
    if config is not None:
        check_compatible(state, config)
    return state


def check_compatible(state: TrainState, config: RunConfig) -> None:
    """Raise :class:`CheckpointIncompatible` unless ``config`` implies the stored shapes."""
    with torch.random.fork_rng(devices=[]):
        g = Generator.from_config(config)
        d = Discriminator.from_config(config)
    # discriminator first: a cluster-count change then names the centroid layer
    _check_shapes("discriminator", d.state_dict(), state.discriminator)
    _check_shapes("generator", g.state_dict(), state.generator)


# ---------------------------------------------------------------------------
# training loop


def checkpoint_name(step: int) -> str:
    return f"ckpt-{step:07d}.ckpt"


def train(config: RunConfig, dataset: ImageDataset, steps: int | None = None,
          out_dir: str | Path | None = None, resume: str | Path | TrainState | None = None,
          on_step: Callable[[StepLog, Trainer], None] | None = None,
          device: str | torch.device = "cpu") -> tuple[Trainer, list[StepLog]]:
    """Run ``steps`` iterations (default ``config.steps``) of D then G updates.

    With ``out_dir``, appends one JSON line per step to ``log.jsonl`` and
    writes checkpoints every ``config.checkpoint_every`` steps and at the end.
    ``resume`` continues from a checkpoint with an identical random stream.
    """
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    total = config.steps if steps is None else steps
    if resume is not None:
        state = resume if isinstance(resume, TrainState) else load_checkpoint(resume, config)
        trainer = Trainer.from_state(state, config, device)
    else:
        trainer = Trainer(config, device)

    log_file = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(config.dumps(), encoding="utf-8")
        log_path = out_dir / "log.jsonl"
        kept = []
        if resume is not None and log_path.exists():
            kept = [ln for ln in log_path.read_text(encoding="utf-8").splitlines()
                    if ln.strip() and json.loads(ln)["step"] < trainer.step]
        log_path.write_text("".join(ln + "\n" for ln in kept), encoding="utf-8")
        log_file = open(log_path, "a", encoding="utf-8")

    steps_per_epoch = dataset.steps_per_epoch_for(config.batch_size)
    logs: list[StepLog] = []
    try:
        while trainer.step < total:
            real = dataset.images_for_step(trainer.step, config.batch_size, config.seed)
            try:
                entry = trainer.train_step(real, steps_per_epoch)
            except TrainingDivergence as exc:
                exc.step = trainer.step
                exc.last_log = logs[-1] if logs else None
                log.error("non-finite %s at step %d", exc.term, trainer.step)
                raise
            logs.append(entry)
            if log_file is not None:
                log_file.write(entry.to_json() + "\n")
                log_file.flush()
            if on_step is not None:
                on_step(entry, trainer)
            if out_dir is not None and (trainer.step % config.checkpoint_every == 0 or trainer.step == total):
                save_checkpoint(trainer, out_dir / "checkpoints" / checkpoint_name(trainer.step))
            if trainer.step % 100 == 0:
                log.info("step %d  d=%.4f  g=%.4f", trainer.step, entry.d.total, entry.g.total)
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None and not logs:
        save_checkpoint(trainer, Path(out_dir) / "checkpoints" / checkpoint_name(trainer.step))
    return trainer, logs


def latest_checkpoint(out_dir: str | Path) -> Path | None:
    found = sorted(Path(out_dir).glob("checkpoints/ckpt-*.ckpt"))
    return found[-1] if found else None
