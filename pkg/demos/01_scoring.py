"""Scoring a clustering: contingency table, Hungarian accuracy, NMI.

Runs in well under a second. Shows why overclustering needs care when
scoring: with more clusters than classes only one cluster per class can be
matched, so splitting a class costs accuracy but not NMI as much.
"""

import numpy as np

from c3gan.evaluation import contingency, hungarian_accuracy, nmi

rng = np.random.default_rng(0)
true = np.repeat(np.arange(4), 100)

# a clean clustering under a relabeling
perfect = (true + 1) % 4
table = contingency(perfect, true, 4, 4)
print("relabeled perfect clustering")
print(table.counts)
print(f"  acc {hungarian_accuracy(table):.3f}  nmi {nmi(table):.3f}\n")

# the same clustering with every class split evenly over two clusters
split = 2 * true + rng.integers(0, 2, size=true.size)
table = contingency(split, true, 8, 4)
print("each class split over two clusters (8 clusters)")
print(table.counts)
print(f"  acc {hungarian_accuracy(table):.3f}  nmi {nmi(table):.3f}\n")

# chance
noise = rng.integers(0, 4, size=true.size)
table = contingency(noise, true, 4, 4)
print(f"random labels: acc {hungarian_accuracy(table):.3f}  nmi {nmi(table):.3f}")
