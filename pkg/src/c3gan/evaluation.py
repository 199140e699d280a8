"""Cluster assignment with the discriminator and Acc/NMI scoring."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .discriminator import posterior

__all__ = [
    "ClusterAssignment",
    "ContingencyTable",
    "assign",
    "contingency",
    "evaluate",
    "hungarian_accuracy",
    "nmi",
    "write_assignment",
]


@dataclass
class ClusterAssignment:
    cluster_ids: np.ndarray
    confidences: np.ndarray

    def __len__(self) -> int:
        return len(self.cluster_ids)


@dataclass
class ContingencyTable:
    counts: np.ndarray  # [num_clusters, num_classes]

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@torch.no_grad()
def assign(images: torch.Tensor, discriminator, temperature: float, batch_size: int = 256) -> ClusterAssignment:
    """Label each image with ``argmax_y q[y]`` using frozen normalisation statistics."""
    was_training = discriminator.training
    discriminator.eval()
    try:
        centroids = discriminator.centroids()
        ids, conf = [], []
        for start in range(0, images.shape[0], batch_size):
            h = discriminator.embed(images[start:start + batch_size])
            q = posterior(h, centroids, temperature)
            c, i = q.max(dim=1)
            ids.append(i)
            conf.append(c)
    finally:
        discriminator.train(was_training)
    if not ids:
        return ClusterAssignment(np.zeros(0, dtype=np.int64), np.zeros(0))
    return ClusterAssignment(torch.cat(ids).numpy(), torch.cat(conf).double().numpy())


def contingency(pred: Sequence[int], true: Sequence[int], num_clusters: int, num_classes: int) -> ContingencyTable:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    true = np.asarray(true, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise ValueError(f"{pred.size} predictions for {true.size} labels")
    if pred.size and (pred.min() < 0 or pred.max() >= num_clusters):
        raise ValueError(f"cluster id out of range [0, {num_clusters})")
    if true.size and (true.min() < 0 or true.max() >= num_classes):
        raise ValueError(f"class id out of range [0, {num_classes})")
    counts = np.zeros((num_clusters, num_classes), dtype=np.int64)
    np.add.at(counts, (pred, true), 1)
    return ContingencyTable(counts)


def _counts(table) -> np.ndarray:
    return np.asarray(table.counts if isinstance(table, ContingencyTable) else table)


def hungarian_accuracy(table: ContingencyTable | np.ndarray) -> float:
    """Accuracy under the best one-to-one matching of clusters to classes.

    With more clusters than classes the surplus clusters stay unmatched and
    their members count as errors (no many-to-one merging).
    """
    counts = _counts(table)
    n = counts.sum()
    if n == 0:
        raise ValueError("empty contingency table")
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum() / n)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def nmi(table: ContingencyTable | np.ndarray) -> float:
    """``I(P; T) / sqrt(H(P) H(T))`` in nats; 0 when either entropy is 0."""
    counts = _counts(table).astype(np.float64)
    n = counts.sum()
    if n == 0:
        raise ValueError("empty contingency table")
    joint = counts / n
    pp, pt = joint.sum(1), joint.sum(0)
    hp, ht = _entropy(pp), _entropy(pt)
    if hp == 0 or ht == 0:
        return 0.0
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / np.outer(pp, pt)[nz])).sum())
    return float(np.clip(mi / np.sqrt(hp * ht), 0.0, 1.0))


def evaluate(images: torch.Tensor, labels: Sequence[int], discriminator, temperature: float,
             num_classes: int | None = None, batch_size: int = 256) -> dict:
    """Assign and score; returns ``{acc, nmi, Y_eff, Y_true, n}``."""
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = int(num_classes or labels.max() + 1)
    result = assign(images, discriminator, temperature, batch_size)
    y_eff = int(discriminator.centroids().shape[0])
    table = contingency(result.cluster_ids, labels, y_eff, num_classes)
    return {
        "acc": hungarian_accuracy(table),
        "nmi": nmi(table),
        "Y_eff": y_eff,
        "Y_true": num_classes,
        "n": table.n,
    }


def write_scores(scores: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scores, indent=2) + "\n", encoding="utf-8")


def write_assignment(paths: Sequence[str], result: ClusterAssignment, path: str | Path) -> None:
    lines = (f"{p}\t{int(c)}\t{float(q):.6f}\n" for p, c, q in zip(paths, result.cluster_ids, result.confidences))
    Path(path).write_text("".join(lines), encoding="utf-8")
