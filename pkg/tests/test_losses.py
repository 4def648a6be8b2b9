"""Contrastive similarity and NT-Xent loss oracles."""

import math

import numpy as np
import pytest

from sdclr import EmbeddingBatch, InvalidParameterError, block_pairs, ntxent_loss, similarity


def random_batch(rng, n, d):
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return EmbeddingBatch(vectors=z, pair_ids=block_pairs(n))


class TestSimilarity:
    def test_identical_unit_vectors(self):
        u = np.array([1.0, 0.0, 0.0])
        assert similarity(u, u, 1.0) == pytest.approx(math.e, rel=1e-12)

    def test_orthogonal(self):
        u = np.array([1.0, 0.0])
        v = np.array([0.0, 1.0])
        for tau in (0.1, 0.5, 2.0):
            assert similarity(u, v, tau) == pytest.approx(1.0, rel=1e-12)

    def test_random_hand_computed(self):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(8)
        v = rng.standard_normal(8)
        dot = math.fsum(float(a) * float(b) for a, b in zip(u, v))
        assert similarity(u, v, 0.5) == pytest.approx(math.exp(dot / 0.5), rel=1e-12)

    def test_invalid_tau(self):
        u = np.ones(3)
        with pytest.raises(InvalidParameterError):
            similarity(u, u, 0.0)
        with pytest.raises(InvalidParameterError):
            similarity(u, u, -1.0)


class TestNtxent:
    def test_identical_views_ln3(self):
        # 4 identical unit vectors (B=2): every similarity equal, two
        # negatives per anchor, so each term is -log(1/3)
        v = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (4, 1))
        batch = EmbeddingBatch(vectors=v, pair_ids=block_pairs(4))
        for tau in (0.1, 0.5, 1.0):
            loss, _ = ntxent_loss(batch, tau)
            assert loss == pytest.approx(math.log(3.0), abs=1e-9)

    def test_single_pair_degenerate(self):
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        batch = EmbeddingBatch(vectors=v, pair_ids=np.array([1, 0]))
        with pytest.warns(RuntimeWarning):
            loss, grads = ntxent_loss(batch, 0.5)
        assert loss == 0.0
        assert np.all(grads == 0)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            loss, _ = ntxent_loss(random_batch(rng, 8, 5), 0.5)
            assert loss >= 0.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        h = 1e-5
        for tau in (0.1, 0.5, 1.0):
            for _ in range(4):
                batch = random_batch(rng, 8, 4)
                loss, grads = ntxent_loss(batch, tau)
                z = batch.vectors.copy()
                for _ in range(6):
                    i = rng.integers(z.shape[0])
                    j = rng.integers(z.shape[1])
                    zp = z.copy(); zp[i, j] += h
                    zm = z.copy(); zm[i, j] -= h
                    lp, _ = ntxent_loss(EmbeddingBatch(zp, batch.pair_ids), tau)
                    lm, _ = ntxent_loss(EmbeddingBatch(zm, batch.pair_ids), tau)
                    fd = (lp - lm) / (2 * h)
                    rel = abs(fd - grads[i, j]) / max(abs(fd), abs(grads[i, j]), 1e-8)
                    assert rel < 1e-4

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        batch = random_batch(rng, 10, 6)
        loss, _ = ntxent_loss(batch, 0.5)
        perm = rng.permutation(10)
        inv = np.empty(10, dtype=np.int64)
        inv[perm] = np.arange(10)
        z2 = batch.vectors[perm]
        pairs2 = inv[batch.pair_ids[perm]]
        loss2, _ = ntxent_loss(EmbeddingBatch(z2, pairs2), 0.5)
        assert loss2 == pytest.approx(loss, rel=1e-12)

    def test_loss_decreases_with_positive_similarity(self):
        # two positive pairs built on orthogonal planes: rotating a pair
        # closer changes only its own positive similarity
        def batch_at(theta):
            v = np.zeros((4, 8))
            v[0, 0] = 1.0
            v[2, 0] = math.cos(theta); v[2, 1] = math.sin(theta)
            v[1, 4] = 1.0
            v[3, 4] = 1.0
            return EmbeddingBatch(vectors=v, pair_ids=np.array([2, 3, 0, 1]))

        losses = [ntxent_loss(batch_at(t), 0.5)[0]
                  for t in (1.2, 0.8, 0.4, 0.0)]  # positive dot increasing
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_pairing_validation(self):
        v = np.eye(4)
        with pytest.raises(InvalidParameterError):
            EmbeddingBatch(vectors=v, pair_ids=np.array([0, 1, 2, 3]))  # self-pairs
        with pytest.raises(InvalidParameterError):
            EmbeddingBatch(vectors=v, pair_ids=np.array([1, 2, 3, 0]))  # not a matching

    def test_norm_validation_helper(self):
        v = np.eye(4) * 1.5
        batch = EmbeddingBatch(vectors=v, pair_ids=block_pairs(4))
        with pytest.raises(InvalidParameterError):
            batch.validate_norms()
