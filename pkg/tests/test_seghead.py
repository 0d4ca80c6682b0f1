import math

import numpy as np
import pytest

from sgseg import seghead as S
from sgseg.tensor import Tensor, ops

from oracles import oracle_mi, rand_probs


# -- rasterized convolution ------------------------------------------------------


def test_r1_mask_taps():
    m = S.Rasterization("r1").mask
    zero = {(1, 1), (1, 2), (2, 0), (2, 1), (2, 2)}
    for a in range(3):
        for b in range(3):
            assert m[a, b] == (0.0 if (a, b) in zero else 1.0)
    np.testing.assert_array_equal(S.Rasterization("r2").mask, np.rot90(m, 2))


def test_unknown_rasterization_rejected():
    with pytest.raises(ValueError):
        S.Rasterization("r3")
    with pytest.raises(ValueError):
        S.rasterized_conv(Tensor(np.ones((4, 4, 1))), Tensor(np.ones((3, 3, 1, 1))), "diag")


def test_constant_input_interior_value():
    out = S.rasterized_conv(Tensor(np.ones((5, 5, 1))), Tensor(np.ones((3, 3, 1, 1))), "r1").data
    assert out[2, 2, 0] == 4.0
    out = S.rasterized_conv(Tensor(np.ones((5, 5, 1))), Tensor(np.ones((3, 3, 1, 1))), "r2").data
    assert out[2, 2, 0] == 4.0


@pytest.mark.parametrize("r", ["r1", "r2"])
def test_rasterized_conv_equals_premasked_conv(r):
    rng = np.random.default_rng(0)
    x, w = rng.normal(size=(2, 6, 5, 3)), rng.normal(size=(3, 3, 3, 4))
    got = S.rasterized_conv(Tensor(x), Tensor(w), r).data
    ref = ops.conv2d(Tensor(x), Tensor(w * S.Rasterization(r).mask[:, :, None, None])).data
    np.testing.assert_array_equal(got, ref)


@pytest.mark.parametrize("r", ["r1", "r2"])
def test_causality_probe(r):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(7, 7, 2))
    w = rng.normal(size=(3, 3, 2, 3))
    i, j = 3, 3
    base = S.rasterized_conv(Tensor(x), Tensor(w), r).data[i, j]
    order = [(a, b) for a in range(7) for b in range(7)]
    if r == "r2":
        order = order[::-1]
    later = order[order.index((i, j)):]
    y = x.copy()
    for a, b in later:
        y[a, b] = rng.normal(size=2) * 100
    np.testing.assert_array_equal(S.rasterized_conv(Tensor(y), Tensor(w), r).data[i, j], base)


# -- segmentation CNN ------------------------------------------------------------


def test_cnn_shape_trace_and_normalization():
    cnn = S.SegmentationCNN(67, 3, 3, np.random.default_rng(0), width=0.25)
    x = Tensor(np.random.default_rng(1).random((32, 32, 67)))
    out = cnn(x, "r1")
    assert out.probs.shape == (32, 32, 3)
    assert out.recon.shape == (32, 32, 3)
    np.testing.assert_allclose(out.probs.data.sum(-1), 1.0, atol=1e-6)


def test_cnn_is_deterministic_per_rasterization():
    cnn = S.SegmentationCNN(5, 3, 3, np.random.default_rng(0), width=1 / 16).eval()
    x = Tensor(np.random.default_rng(1).random((1, 8, 8, 5)))
    a, b = cnn(x, "r1"), cnn(x, "r1")
    np.testing.assert_array_equal(a.probs.data, b.probs.data)
    assert not np.array_equal(a.probs.data, cnn(x, "r2").probs.data)


def test_cnn_rejects_odd_extent_and_single_class():
    cnn = S.SegmentationCNN(3, 2, 3, np.random.default_rng(0), width=1 / 16)
    with pytest.raises(ValueError):
        cnn(Tensor(np.zeros((7, 8, 3))), "r1")
    with pytest.raises(ValueError):
        S.SegmentationCNN(3, 1, 3)


# -- mutual information ----------------------------------------------------------


def test_mi_of_identical_balanced_one_hot_is_ln2():
    m = np.zeros((4, 4, 2))
    m[:2, :, 0] = 1
    m[2:, :, 1] = 1
    assert S.mutual_information(Tensor(m), Tensor(m)).data == pytest.approx(math.log(2), abs=1e-9)
    assert S.mi_loss(Tensor(m), Tensor(m)).data == pytest.approx(-math.log(2), abs=1e-9)


def test_mi_of_uniform_predictions_is_zero():
    m = np.full((4, 4, 3), 1 / 3)
    assert S.mutual_information(Tensor(m), Tensor(m)).data == pytest.approx(0.0, abs=1e-12)


def test_mi_of_independent_hard_maps_is_zero():
    # every combination of classes appears equally often -> J is a product
    a = np.repeat(np.arange(3), 3)
    b = np.tile(np.arange(3), 3)
    m1 = np.eye(3)[a].reshape(3, 3, 3)
    m2 = np.eye(3)[b].reshape(3, 3, 3)
    assert S.mutual_information(Tensor(m1), Tensor(m2)).data == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_mi_matches_loop_oracle_and_bounds(seed):
    rng = np.random.default_rng(seed)
    m1, m2 = rand_probs(rng, (4, 4, 3)), rand_probs(rng, (4, 4, 3))
    mi, h_row, h_col = oracle_mi(m1, m2)
    got = S.mutual_information(Tensor(m1), Tensor(m2)).data
    assert got == pytest.approx(mi, abs=1e-10)
    assert -1e-12 <= got <= min(h_row, h_col) + 1e-12 <= math.log(3) + 1e-12
    swapped = S.mi_loss(Tensor(m2), Tensor(m1)).data
    assert swapped == pytest.approx(-got, abs=1e-12)


def test_mi_rejects_bad_shapes():
    with pytest.raises(ValueError):
        S.mi_loss(Tensor(np.ones((2, 2, 1))), Tensor(np.ones((2, 2, 1))))
    with pytest.raises(ValueError):
        S.mi_loss(Tensor(np.ones((2, 2, 3))), Tensor(np.ones((2, 3, 3))))


# -- reconstruction and total ----------------------------------------------------


def test_cnn_recon_loss_values():
    rng = np.random.default_rng(0)
    I = rng.random((4, 4, 3))
    assert S.cnn_recon_loss(Tensor(I), Tensor(I), Tensor(I)).data == 0.0
    assert S.cnn_recon_loss(Tensor(I), Tensor(I + 1), Tensor(I - 1)).data == pytest.approx(2.0)
    a, b = rng.random((4, 4, 3)), rng.random((4, 4, 3))
    expect = sum((a[idx] - I[idx]) ** 2 + (b[idx] - I[idx]) ** 2 for idx in np.ndindex(I.shape)) / I.size
    assert S.cnn_recon_loss(Tensor(I), Tensor(a), Tensor(b)).data == pytest.approx(expect, abs=1e-12)


def test_cnn_loss_sum_and_parts():
    assert S.cnn_loss(0.0, 0.0).total.data == 0.0
    loss = S.cnn_loss(-0.5, 0.2)
    assert loss.total.data == pytest.approx(-0.3)
    assert sum(loss.parts().values()) == pytest.approx(float(loss.total.data))
