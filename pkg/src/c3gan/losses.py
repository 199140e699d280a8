"""Training objectives.

All entropies are in nats. Logs are taken of values clamped at ``1e-12``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

from .discriminator import cosine_similarity

__all__ = [
    "LossReport",
    "TrainingDivergence",
    "entropy_reg",
    "hinge_d",
    "hinge_g",
    "img_contrastive",
    "info_loss",
    "mask_reg",
    "total_objective",
    "weighted_total",
]

LOG_EPS = 1e-12

# names of the regularizers multiplied by loss_weights[0..4]
WEIGHTED_TERMS = ("info", "info_fg", "img_cont", "entropy", "mask")


class TrainingDivergence(FloatingPointError):
    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        self.step: int | None = None
        self.last_log = None  # the final StepLog written before the failure
        super().__init__(f"non-finite loss term {term!r}: {value}")


def _log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x.clamp_min(LOG_EPS))


def hinge_d(r_real: torch.Tensor, r_fake: torch.Tensor) -> torch.Tensor:
    """``mean(relu(1 - r_real)) + mean(relu(1 + r_fake))``."""
    return F.relu(1 - r_real).mean() + F.relu(1 + r_fake).mean()


def hinge_g(r_fake: torch.Tensor) -> torch.Tensor:
    return (-r_fake).mean()


def info_loss(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Mean negative log posterior of the code each sample was generated from."""
    picked = q.gather(1, k.long().view(-1, 1)).squeeze(1)
    return -_log(picked).mean()


def img_contrastive(h: torch.Tensor, h2: torch.Tensor, temperature: float) -> torch.Tensor:
    """InfoNCE between two index-aligned views.

    Row ``b`` scores ``h[b]`` against every second-view embedding ``h2[j]``;
    the positive is ``j == b``.
    """
    if h.shape[0] < 2 or h2.shape[0] != h.shape[0]:
        raise ValueError(f"need two aligned batches of at least 2, got {h.shape[0]} and {h2.shape[0]}")
    sim = cosine_similarity(h, h2) / temperature
    target = torch.arange(h.shape[0], device=h.device)
    return F.cross_entropy(sim, target)


def entropy_reg(q: torch.Tensor) -> torch.Tensor:
    """Mean per-row entropy plus ``KL(mean row || uniform)``."""
    row_entropy = -(q * _log(q)).sum(dim=1).mean()
    q_bar = q.mean(dim=0)
    kl = (q_bar * (_log(q_bar) + math.log(q.shape[1]))).sum()
    return row_entropy + kl


def mask_reg(mask: torch.Tensor) -> torch.Tensor:
    """Push masks towards binary values covering 10%-90% of the frame."""
    m = mask.flatten(1)
    bin_entropy = -(m * _log(m) + (1 - m) * _log(1 - m)).mean(dim=1)
    coverage = m.mean(dim=1)
    return (bin_entropy + F.relu(0.1 - coverage) + F.relu(coverage - 0.9)).mean()


@dataclass
class LossReport:
    adv_d: float = 0.0
    adv_g: float = 0.0
    info: float = 0.0
    info_fg: float = 0.0
    img_cont: float = 0.0
    entropy: float = 0.0
    mask: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _value(x) -> float:
    return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)


def total_objective(weights: Sequence[float], adv_d=0.0, adv_g=0.0, info=0.0, info_fg=0.0,
                    img_cont=0.0, entropy=0.0, mask=0.0) -> LossReport:
    """Collect component losses and their weighted total.

    ``total = adv_d + adv_g + sum_i weights[i] * term_i`` over
    (info, info_fg, img_cont, entropy, mask). Raises
    :class:`TrainingDivergence` naming the first non-finite component.
    """
    parts = dict(adv_d=adv_d, adv_g=adv_g, info=info, info_fg=info_fg,
                 img_cont=img_cont, entropy=entropy, mask=mask)
    values = {k: _value(v) for k, v in parts.items()}
    for k, v in values.items():
        if not math.isfinite(v):
            raise TrainingDivergence(k, v)
    total = values["adv_d"] + values["adv_g"]
    for w, name in zip(weights, WEIGHTED_TERMS):
        total += w * values[name]
    return LossReport(**values, total=total)


def weighted_total(weights: Sequence[float], **terms: torch.Tensor) -> torch.Tensor:
    """Differentiable counterpart of :func:`total_objective` over the given terms.

    Terms whose weight is zero are still added (times zero) so that a NaN in
    any of them is not hidden.
    """
    unknown = set(terms) - set(WEIGHTED_TERMS) - {"adv_d", "adv_g"}
    if unknown:
        raise KeyError(f"unknown loss terms {sorted(unknown)}")
    weight_of = dict(zip(WEIGHTED_TERMS, weights))
    total = 0.0
    for name, value in terms.items():
        total = total + weight_of.get(name, 1.0) * value
    return total


LOSS_FIELDS = tuple(f.name for f in fields(LossReport))
