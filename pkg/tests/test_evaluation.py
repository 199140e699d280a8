import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import normalized_mutual_info_score

from c3gan.discriminator import Discriminator
from c3gan.evaluation import (
    ClusterAssignment,
    assign,
    contingency,
    evaluate,
    hungarian_accuracy,
    nmi,
    write_assignment,
    write_scores,
)


class StubDiscriminator(torch.nn.Module):
    """Embeds each image as a fixed vector read from its first pixel."""

    def __init__(self, centroids: torch.Tensor):
        super().__init__()
        self.register_buffer("_centroids", centroids)

    def centroids(self):
        return self._centroids

    def embed(self, x):
        # channel 0 of pixel (0, 0) carries an integer key into a lookup table
        return self.table[x[:, 0, 0, 0].long()]


def perfect_stub(labels, num_classes, dim=8):
    centroids = torch.eye(dim)[:num_classes]
    stub = StubDiscriminator(centroids)
    stub.table = centroids
    images = torch.zeros(len(labels), 3, 2, 2)
    images[:, 0, 0, 0] = torch.as_tensor(labels, dtype=torch.float32)
    return stub, images


def brute_accuracy(counts):
    rows, cols = counts.shape
    n = counts.sum()
    best = 0
    if rows <= cols:
        for perm in itertools.permutations(range(cols), rows):
            best = max(best, sum(counts[r, perm[r]] for r in range(rows)))
    else:
        for perm in itertools.permutations(range(rows), cols):
            best = max(best, sum(counts[perm[c], c] for c in range(cols)))
    return best / n


def direct_nmi(counts):
    n = counts.sum()
    rows, cols = counts.shape
    pr = [counts[i].sum() / n for i in range(rows)]
    pc = [counts[:, j].sum() / n for j in range(cols)]
    mi = 0.0
    for i in range(rows):
        for j in range(cols):
            if counts[i, j]:
                pij = counts[i, j] / n
                mi += pij * math.log(pij / (pr[i] * pc[j]))
    hr = -sum(p * math.log(p) for p in pr if p > 0)
    hc = -sum(p * math.log(p) for p in pc if p > 0)
    if hr == 0 or hc == 0:
        return 0.0
    return mi / math.sqrt(hr * hc)


class TestContingency:
    def test_identity_labeling(self):
        labels = np.repeat(np.arange(3), 10)
        table = contingency(labels, labels, 3, 3)
        assert np.array_equal(table.counts, np.diag([10, 10, 10]))
        assert table.n == 30

    def test_empty(self):
        table = contingency([], [], 4, 3)
        assert table.n == 0 and table.counts.shape == (4, 3)

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            ye, yt = rng.integers(1, 7, size=2)
            n = int(rng.integers(0, 40))
            pred, true = rng.integers(0, ye, n), rng.integers(0, yt, n)
            oracle = np.zeros((ye, yt), dtype=np.int64)
            for p in range(ye):
                for t in range(yt):
                    oracle[p, t] = sum(1 for i in range(n) if pred[i] == p and true[i] == t)
            assert np.array_equal(contingency(pred, true, ye, yt).counts, oracle)

    @pytest.mark.parametrize("pred,true", [([3], [0]), ([0], [2]), ([-1], [0])])
    def test_out_of_range(self, pred, true):
        with pytest.raises(ValueError):
            contingency(pred, true, 3, 2)


class TestHungarian:
    def test_permuted_identity(self):
        assert hungarian_accuracy(np.eye(5, dtype=int)[[3, 0, 4, 1, 2]] * 7) == 1.0

    def test_flat_table(self):
        assert hungarian_accuracy(np.array([[5, 5], [5, 5]])) == 0.5

    def test_overclustering_is_injective(self):
        # two clusters of class 0: only one may be matched
        counts = np.array([[10, 0], [10, 0], [0, 10]])
        assert hungarian_accuracy(counts) == pytest.approx(20 / 30)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            hungarian_accuracy(np.zeros((3, 3)))

    def test_exhaustive_search(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            r, c = rng.integers(1, 6, size=2)
            counts = rng.integers(0, 20, size=(r, c))
            counts[0, 0] += 1
            assert hungarian_accuracy(counts) == pytest.approx(brute_accuracy(counts), abs=1e-12)

    def test_four_by_three(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            counts = rng.integers(0, 9, size=(4, 3)) + 1
            assert hungarian_accuracy(counts) == pytest.approx(brute_accuracy(counts), abs=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 10, size=(5, 4))
        counts[0, 0] += 1
        shuffled = counts[rng.permutation(5)][:, rng.permutation(4)]
        assert hungarian_accuracy(shuffled) == pytest.approx(hungarian_accuracy(counts), abs=1e-12)
        assert 1 / counts.sum() <= hungarian_accuracy(counts) <= 1


class TestNMI:
    def test_perfect(self):
        labels = np.repeat(np.arange(4), 5)
        assert nmi(contingency(labels, labels, 4, 4)) == pytest.approx(1.0, abs=1e-12)

    def test_independent(self):
        counts = np.outer([1, 2, 3], [4, 1, 5]) * 2
        assert abs(nmi(counts)) < 1e-12

    def test_single_cluster(self):
        assert nmi(np.array([[5, 5, 5]])) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            nmi(np.zeros((2, 2)))

    def test_direct_formula(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            counts = rng.integers(0, 15, size=(5, 5))
            counts[0, 0] += 1
            assert nmi(counts) == pytest.approx(direct_nmi(counts), abs=1e-10)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            pred, true = rng.integers(0, 6, 300), rng.integers(0, 4, 300)
            ref = normalized_mutual_info_score(true, pred, average_method="geometric")
            assert nmi(contingency(pred, true, 6, 4)) == pytest.approx(ref, abs=1e-10)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 10, size=(4, 6))
        counts[1, 2] += 1
        value = nmi(counts)
        assert 0 <= value <= 1
        assert nmi(counts.T) == pytest.approx(value, abs=1e-12)
        assert nmi(counts[rng.permutation(4)][:, rng.permutation(6)]) == pytest.approx(value, abs=1e-12)


class TestAssign:
    def test_centroid_row_three(self):
        centroids = torch.eye(6, 16)
        stub = StubDiscriminator(centroids)
        stub.table = centroids[3:4]
        result = assign(torch.zeros(2, 3, 2, 2), stub, 0.1)
        assert list(result.cluster_ids) == [3, 3]
        assert np.all(result.confidences > 0.999)

    def test_perfect_stub_scores_one(self):
        labels = np.repeat(np.arange(4), 25)
        stub, images = perfect_stub(labels, 4)
        scores = evaluate(images, labels, stub, 0.1, 4)
        assert scores["acc"] == 1.0
        assert scores["nmi"] == pytest.approx(1.0, abs=1e-12)
        assert set(scores) == {"acc", "nmi", "Y_eff", "Y_true", "n"}

    def test_random_stub_near_chance(self):
        g = torch.Generator().manual_seed(0)
        labels = np.tile(np.arange(4), 1000)
        stub = StubDiscriminator(torch.randn(4, 8, generator=g))
        stub.table = torch.randn(len(labels), 8, generator=g)
        images = torch.zeros(len(labels), 3, 2, 2)
        images[:, 0, 0, 0] = torch.arange(len(labels), dtype=torch.float32)
        scores = evaluate(images, labels, stub, 0.1, 4)
        assert 0.20 <= scores["acc"] <= 0.40

    def test_real_discriminator_properties(self):
        torch.manual_seed(0)
        disc = Discriminator(6, d_h=16, channels=32, image_size=32)
        disc.train()
        g = torch.Generator().manual_seed(1)
        x = torch.rand(8, 3, 32, 32, generator=g) * 2 - 1
        x = torch.cat([x, x[:2]])
        result = assign(x, disc, 0.1, batch_size=3)
        assert disc.training
        assert result.cluster_ids[8] == result.cluster_ids[0] and result.cluster_ids[9] == result.cluster_ids[1]
        assert np.all((result.confidences > 0) & (result.confidences <= 1))
        assert np.array_equal(assign(x, disc, 0.1).cluster_ids, result.cluster_ids)

    def test_scale_invariance(self):
        g = torch.Generator().manual_seed(2)
        centroids = torch.randn(5, 8, generator=g)
        table = torch.randn(50, 8, generator=g)
        images = torch.zeros(50, 3, 2, 2)
        images[:, 0, 0, 0] = torch.arange(50, dtype=torch.float32)
        stub = StubDiscriminator(centroids)
        stub.table = table
        base = assign(images, stub, 0.1).cluster_ids
        stub.table = table * (torch.rand(50, 1, generator=g) * 50 + 0.01)
        assert np.array_equal(assign(images, stub, 0.1).cluster_ids, base)

    def test_writers(self, tmp_path):
        import json

        write_scores({"acc": 0.5, "nmi": 0.1, "Y_eff": 8, "Y_true": 4, "n": 10}, tmp_path / "s.json")
        assert json.loads((tmp_path / "s.json").read_text())["Y_eff"] == 8
        write_assignment(["a.png", "b.png"], ClusterAssignment(np.array([1, 0]), np.array([0.9, 0.5])), tmp_path / "a.tsv")
        assert (tmp_path / "a.tsv").read_text().splitlines() == ["a.png\t1\t0.900000", "b.png\t0\t0.500000"]
