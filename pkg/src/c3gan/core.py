"""Shared domain types, run configuration and generator-input sampling.

Images everywhere in the package are float tensors shaped ``[B, 3, H, W]``
with pixel values in ``[-1, 1]`` (the generator's tanh range).
"""

from __future__ import annotations

import dataclasses
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch

__all__ = [
    "ConfigError",
    "LatentCode",
    "RealBatch",
    "RunConfig",
    "load_config",
    "make_rng",
    "sample_latent",
    "sample_noise",
    "validate_config",
]


class ConfigError(ValueError):
    """Raised when a configuration map fails validation.

    ``violations`` holds ``(field, message)`` pairs, one per offending field.
    """

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        super().__init__("; ".join(f"{k}: {msg}" for k, msg in violations))

    @property
    def fields(self) -> list[str]:
        return [k for k, _ in self.violations]


def make_rng(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


@dataclass(frozen=True)
class LatentCode:
    """A batch of one-hot categorical codes.

    ``onehot`` is ``[B, Y]`` float with a single 1 per row, ``index`` the
    ``[B]`` integer position of that 1.
    """

    onehot: torch.Tensor
    index: torch.Tensor

    @property
    def num_categories(self) -> int:
        return self.onehot.shape[1]

    def __len__(self) -> int:
        return self.index.shape[0]

    @classmethod
    def from_index(cls, index: torch.Tensor, num_categories: int) -> LatentCode:
        index = torch.as_tensor(index, dtype=torch.long)
        if index.numel() and (index.min() < 0 or index.max() >= num_categories):
            raise ValueError(f"code index out of range [0, {num_categories})")
        onehot = torch.nn.functional.one_hot(index, num_categories).float()
        return cls(onehot=onehot, index=index)


def sample_latent(num_categories: int, batch_size: int, rng: torch.Generator) -> LatentCode:
    """Draw ``batch_size`` codes with indices i.i.d. uniform on ``[0, Y-1]``."""
    if num_categories < 2:
        raise ValueError(f"need at least 2 categories, got {num_categories}")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    index = torch.randint(0, num_categories, (batch_size,), generator=rng)
    return LatentCode.from_index(index, num_categories)


def sample_noise(dim: int, batch_size: int, rng: torch.Generator) -> torch.Tensor:
    """Standard normal noise of shape ``[batch_size, dim]``."""
    if dim < 1:
        raise ValueError(f"noise dimension must be positive, got {dim}")
    if batch_size < 1:
        raise ValueError(f"batch size must be positive, got {batch_size}")
    return torch.randn(batch_size, dim, generator=rng)


@dataclass(frozen=True)
class RealBatch:
    images: torch.Tensor
    labels: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.images.shape[0]


_POLICIES = ("weak", "strong")


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters for one training run.

    Defaults are the full-scale settings: temperature 0.1, loss weights
    (5, 1, 1, 0.1, 1) for (info, info_fg, img_cont, entropy, mask) and Adam
    with lr 2e-4, betas (0.5, 0.999). ``gen_channels``/``disc_channels`` are
    the widest feature maps of each network (512 at full scale) and may be
    reduced for small-image runs.
    """

    num_clusters: int = 200
    overcluster_factor: int = 3
    d_z: int = 64
    d_c: int = 8
    d_h: int = 512
    image_size: int = 128
    temperature: float = 0.1
    loss_weights: tuple[float, float, float, float, float] = (5.0, 1.0, 1.0, 0.1, 1.0)
    lr: float = 0.0002
    betas: tuple[float, float] = (0.5, 0.999)
    batch_size: int = 32
    perturb_policy: str = "weak"
    seed: int = 0
    gen_channels: int = 512
    disc_channels: int = 512
    steps: int = 1000
    checkpoint_every: int = 1000
    sample_every: int = 1000

    @property
    def effective_clusters(self) -> int:
        return self.num_clusters * self.overcluster_factor

    def replace(self, **changes: Any) -> RunConfig:
        return validate_config({**self.to_dict(), **changes})

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        d["betas"] = list(self.betas)
        return d

    def dumps(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(repr(float(x)) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_ALIASES = {"Y": "num_clusters", "tau": "temperature"}


def _parse_floats(value: Any, n: int) -> tuple[float, ...]:
    if isinstance(value, str):
        value = [v for v in value.replace("(", "").replace(")", "").split(",") if v.strip()]
    out = tuple(float(v) for v in value)
    if len(out) != n:
        raise ValueError(f"expected {n} numbers, got {len(out)}")
    return out


def _coerce(name: str, value: Any) -> Any:
    if name == "loss_weights":
        return _parse_floats(value, 5)
    if name == "betas":
        return _parse_floats(value, 2)
    if name == "perturb_policy":
        return str(value).strip()
    kind = _FIELDS[name].type
    if kind == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value}")
        if isinstance(value, str):
            return int(value.strip())
        return int(value)
    if kind == "float":
        return float(value)
    return value


def validate_config(raw: Mapping[str, Any] | None = None) -> RunConfig:
    """Build a fully defaulted :class:`RunConfig` from a key/value map.

    Values may be strings (as read from a config file). All problems are
    collected and raised together as a :class:`ConfigError`.
    """
    raw = dict(raw or {})
    values: dict[str, Any] = {}
    violations: list[tuple[str, str]] = []
    for key, value in raw.items():
        name = _ALIASES.get(key, key)
        if name not in _FIELDS:
            violations.append((key, "unknown key"))
            continue
        try:
            values[name] = _coerce(name, value)
        except (TypeError, ValueError) as exc:
            violations.append((name, f"cannot parse {value!r} ({exc})"))
    if violations:
        raise ConfigError(violations)

    cfg = RunConfig(**values)
    if not cfg.temperature > 0:
        violations.append(("temperature", "must be > 0"))
    if cfg.num_clusters < 2:
        violations.append(("num_clusters", "must be >= 2"))
    if cfg.overcluster_factor < 1:
        violations.append(("overcluster_factor", "must be >= 1"))
    for i, w in enumerate(cfg.loss_weights):
        if not w >= 0:
            violations.append(("loss_weights", f"weight {i} must be >= 0, got {w}"))
    for name in ("d_z", "d_c", "d_h", "batch_size", "gen_channels", "disc_channels",
                 "steps", "checkpoint_every", "sample_every"):
        if getattr(cfg, name) < 1:
            violations.append((name, "must be a positive integer"))
    size = cfg.image_size
    if size < 32 or size & (size - 1):
        violations.append(("image_size", "must be a power of two >= 32"))
    if cfg.perturb_policy not in _POLICIES:
        violations.append(("perturb_policy", f"must be one of {_POLICIES}"))
    if not cfg.lr > 0:
        violations.append(("lr", "must be > 0"))
    if not all(0 <= b < 1 for b in cfg.betas):
        violations.append(("betas", "must lie in [0, 1)"))
    if violations:
        raise ConfigError(violations)
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ConfigError([(f"line {lineno}", f"expected 'key = value', got {line!r}")])
        key = key.strip()
        if key in raw:
            raise ConfigError([(key, f"duplicate key on line {lineno}")])
        raw[key] = value.strip()
    return raw


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    raw.update(overrides or {})
    return validate_config(raw)
