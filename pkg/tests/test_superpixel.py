import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgseg import superpixel as SP
from sgseg.tensor import Tensor, ops

from oracles import (
    oracle_clustering,
    oracle_edge,
    oracle_hard,
    oracle_pool,
    oracle_smoothness,
    oracle_soft,
    rand_probs,
)


# -- network ---------------------------------------------------------------------


def test_spnn_shapes_and_normalization():
    net = SP.SuperpixelNet(8, 3, np.random.default_rng(0))
    img = np.random.default_rng(1).random((16, 16, 3))
    out = net(Tensor(img))
    assert out.assignment.shape == (16, 16, 8)
    assert out.recon.shape == (16, 16, 3)
    assert out.deep_features.shape == (16, 16, 512)
    np.testing.assert_allclose(out.assignment.data.sum(-1), 1.0, atol=1e-6)
    assert np.all((out.recon.data >= 0) & (out.recon.data <= 1))


def test_spnn_is_pure_in_eval_mode():
    net = SP.SuperpixelNet(4, 3, np.random.default_rng(0), width=1 / 8).eval()
    img = Tensor(np.random.default_rng(1).random((2, 8, 8, 3)))
    np.testing.assert_array_equal(net(img).assignment.data, net(img).assignment.data)


def test_spnn_rejects_small_or_mismatched_images():
    net = SP.SuperpixelNet(4, 3, np.random.default_rng(0), width=1 / 8)
    with pytest.raises(ValueError):
        net(Tensor(np.zeros((6, 6, 3))))
    with pytest.raises(ValueError):
        net(Tensor(np.zeros((8, 8, 4))))


# -- superpixelation -------------------------------------------------------------


def test_hard_superpixelate_two_regions():
    img = np.array([[[1.0], [1.0]], [[5.0], [5.0]]])
    P = SP.one_hot(np.array([[0, 0], [1, 1]]), 2)
    np.testing.assert_allclose(SP.hard_superpixelate(img, P), img)


def test_single_superpixel_gives_global_mean():
    rng = np.random.default_rng(0)
    img = rng.random((4, 5, 3))
    P = np.ones((4, 5, 1))
    expect = np.broadcast_to(img.mean((0, 1)), img.shape)
    np.testing.assert_allclose(SP.hard_superpixelate(img, P), expect, atol=1e-12)
    np.testing.assert_allclose(SP.soft_superpixelate(Tensor(img), Tensor(P)).data, expect, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_hard_superpixelate_matches_mask_oracle(seed):
    rng = np.random.default_rng(seed)
    img, P = rng.random((3, 3, 3)), rand_probs(rng, (3, 3, 3))
    np.testing.assert_allclose(SP.hard_superpixelate(img, P), oracle_hard(img, P), atol=1e-12)


def test_hard_assignment_ties_go_to_lower_index():
    P = np.full((1, 1, 3), 1 / 3)
    assert SP.hard_assignment(P)[0, 0] == 0


@pytest.mark.parametrize("seed", range(5))
def test_soft_superpixelate_matches_direct_sum(seed):
    rng = np.random.default_rng(seed)
    img, P = rng.random((2, 2, 3)), rand_probs(rng, (2, 2, 2))
    np.testing.assert_allclose(SP.soft_superpixelate(Tensor(img), Tensor(P)).data, oracle_soft(img, P), atol=1e-12)
    img, P = rng.random((4, 3, 3)), rand_probs(rng, (4, 3, 3))
    np.testing.assert_allclose(SP.soft_superpixelate(Tensor(img), Tensor(P)).data, oracle_soft(img, P), atol=1e-12)


def test_soft_equals_hard_for_one_hot_exactly():
    rng = np.random.default_rng(0)
    img = rng.random((6, 6, 3))
    P = SP.one_hot(rng.integers(0, 4, size=(6, 6)), 5)  # superpixel 4 empty
    soft = SP.soft_superpixelate(Tensor(img), Tensor(P)).data
    np.testing.assert_array_equal(soft, SP.hard_superpixelate(img, P))


def test_soft_approaches_hard_at_temperature_50():
    rng = np.random.default_rng(0)
    img = rng.random((8, 8, 3))
    labels = rng.integers(0, 4, size=(8, 8))
    P = ops.softmax(Tensor(50.0 * SP.one_hot(labels, 4)), -1).data
    diff = np.abs(SP.soft_superpixelate(Tensor(img), Tensor(P)).data - SP.hard_superpixelate(img, P))
    assert diff.max() < 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_pooling_matches_weighted_mean_oracle(seed):
    rng = np.random.default_rng(seed)
    F, P = rng.normal(size=(3, 3, 4)), rand_probs(rng, (3, 3, 2))
    cloud = SP.pool_superpixel_features(Tensor(F), Tensor(P))
    np.testing.assert_allclose(cloud.feats.data, oracle_pool(F, P), atol=1e-12)
    assert cloud.mass.data.sum() == pytest.approx(9.0, abs=1e-4)


def test_uniform_pooling_gives_global_mean_rows():
    F = np.random.default_rng(0).normal(size=(5, 4, 6))
    P = np.full((5, 4, 3), 1 / 3)
    feats = SP.pool_superpixel_features(Tensor(F), Tensor(P)).feats.data
    np.testing.assert_allclose(feats, np.broadcast_to(F.mean((0, 1)), (3, 6)), atol=1e-10)


def test_feature_map_column_order():
    img = np.random.default_rng(0).random((4, 6, 3))
    deep = np.zeros((4, 6, 2))
    F = SP.feature_map(Tensor(img), Tensor(deep)).data
    np.testing.assert_allclose(F[0, :, 0], np.linspace(0, 1, 6))  # x across columns
    np.testing.assert_allclose(F[:, 0, 1], np.linspace(0, 1, 4))  # y down rows
    np.testing.assert_array_equal(F[..., 2:5], img)


# -- losses ----------------------------------------------------------------------


def test_clustering_loss_analytic_values():
    P = np.full((4, 4, 4), 0.25)
    assert SP.clustering_loss(Tensor(P), lam=2.0).data == pytest.approx(-math.log(4), abs=1e-9)
    P = SP.one_hot(np.arange(16).reshape(4, 4) % 4, 4)
    assert SP.clustering_loss(Tensor(P), lam=2.0).data == pytest.approx(-2 * math.log(4), abs=1e-9)


@pytest.mark.parametrize("N", [2, 4, 8])
def test_clustering_minimum_is_balanced_hard(N):
    rng = np.random.default_rng(N)
    best = SP.clustering_loss(Tensor(SP.one_hot(np.arange(64).reshape(8, 8) % N, N)), 2.0).data
    assert best == pytest.approx(-2 * math.log(N), abs=1e-12)
    for _ in range(20):
        P = rand_probs(rng, (8, 8, N), temp=rng.uniform(0.5, 20))
        assert SP.clustering_loss(Tensor(P), 2.0).data >= best - 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_clustering_loss_matches_oracle(seed):
    P = rand_probs(np.random.default_rng(seed), (2, 2, 2))
    assert SP.clustering_loss(Tensor(P), 2.0).data == pytest.approx(oracle_clustering(P, 2.0), abs=1e-12)


def test_smoothness_hand_example_and_constant():
    img = np.zeros((1, 2, 3))
    P = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    assert SP.smoothness_loss(Tensor(P), Tensor(img)).data == pytest.approx(1.0)
    Pc = np.broadcast_to(rand_probs(np.random.default_rng(0), (1, 1, 3)), (4, 4, 3)).copy()
    assert SP.smoothness_loss(Tensor(Pc), Tensor(np.random.default_rng(1).random((4, 4, 3)))).data == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_smoothness_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    P, img = rand_probs(rng, (3, 3, 3)), rng.random((3, 3, 3))
    got = SP.smoothness_loss(Tensor(P), Tensor(img), sigma=10.0).data
    assert got == pytest.approx(oracle_smoothness(P, img, 10.0), abs=1e-12)


def test_smoothness_zero_iff_constant_on_2x2():
    img = Tensor(np.zeros((2, 2, 1)))
    for labels in np.ndindex(2, 2, 2, 2):
        P = SP.one_hot(np.array(labels).reshape(2, 2), 2)
        loss = SP.smoothness_loss(Tensor(P), img).data
        assert (loss == 0) == (len(set(labels)) == 1)


def test_recon_loss_values():
    rng = np.random.default_rng(0)
    I = rng.random((2, 2, 3))
    assert SP.recon_loss(Tensor(I), Tensor(I), Tensor(I)).data == 0.0
    z = np.zeros((3, 5, 3))
    assert SP.recon_loss(Tensor(z), Tensor(z + 1), Tensor(z)).data == pytest.approx(1.0)
    R, S = rng.random((2, 2, 3)), rng.random((2, 2, 3))
    expect = (((I - R) ** 2).sum() + ((I - S) ** 2).sum()) / 12
    assert SP.recon_loss(Tensor(I), Tensor(R), Tensor(S)).data == pytest.approx(expect, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_edge_loss_matches_oracle_and_is_nonnegative(seed):
    rng = np.random.default_rng(seed)
    I, R, S = rng.random((4, 4, 3)), rng.random((4, 4, 3)), rng.random((4, 4, 3))
    got = SP.edge_loss(Tensor(I), Tensor(R), Tensor(S)).data
    assert got == pytest.approx(oracle_edge(I, R, S), abs=1e-10)
    assert got >= 0
    assert SP.edge_loss(Tensor(I), Tensor(I), Tensor(I)).data == pytest.approx(0.0, abs=1e-15)


def test_spnn_loss_weighting():
    one = Tensor(np.array(1.0))
    assert SP.spnn_loss(one, one, one, one, 2.0, 5.0, 1.0).total.data == pytest.approx(9.0)
    c = Tensor(np.array(-0.7))
    assert SP.spnn_loss(c, one, one, one, 0.0, 0.0, 0.0).total.data == pytest.approx(-0.7)
    with pytest.raises(ValueError):
        SP.spnn_loss(one, one, one, one, -1.0, 5.0, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_soft_superpixelate_preserves_mean_color(H, W, N, seed):
    # sum over pixels of the soft image equals the sum of the image (mass conservation)
    rng = np.random.default_rng(seed)
    img, P = rng.random((H, W, 3)), rand_probs(rng, (H, W, N))
    soft = SP.soft_superpixelate(Tensor(img), Tensor(P)).data
    np.testing.assert_allclose(soft.sum((0, 1)), img.sum((0, 1)), rtol=1e-10)
