import logging
import math

import numpy as np
import pytest

from sgseg import ConfigError, TrainConfig, generate_synthetic, parse_config, preset, train
from sgseg.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from sgseg.config import emit_config, parse_config_text
from sgseg.optim import Adam, adam_update
from sgseg.tensor import Tensor
from sgseg.train import TrainingDiverged, batch_losses, build_model, epoch_means, total_loss


def tiny_config(**kw):
    base = dict(n_superpixels=4, knn_k=2, n_classes=2, image_size=8, width=1 / 32, batch_size=2,
                pretrain_epochs=1, total_epochs=2, lr_spnn=1e-3, lr_gnn=1e-3, lr_cnn=1e-3, dtype="float64")
    base.update(kw)
    return preset("synthetic", **base)


@pytest.fixture(scope="module")
def toy_images():
    return generate_synthetic(2, size=8, classes=2, seed=0).images


# -- Adam ------------------------------------------------------------------------


def scripted_adam(theta, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(theta)
    return trace


def test_adam_first_step_is_lr():
    p = np.array([0.0])
    adam_update(p, np.array([1.0]), np.zeros(1), np.zeros(1), 1, 0.01)
    assert p[0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_leaves_params():
    p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    opt = Adam({"g": ([("p", p)], 0.1)})
    for _ in range(5):
        p.grad = np.zeros(2)
        opt.step()
    np.testing.assert_array_equal(p.data, [1.5, -2.0])


def test_adam_matches_scripted_trace_on_quadratic():
    p = Tensor(np.array(1.0), requires_grad=True)
    opt = Adam({"g": ([("p", p)], 0.1)})
    got = []
    for _ in range(5):
        opt.zero_grad()
        (p * p).backward()
        opt.step()
        got.append(float(p.data))
    np.testing.assert_allclose(got, scripted_adam(1.0, lambda t: 2 * t, 0.1, 5), atol=1e-12, rtol=0)


def test_adam_nan_gradient_aborts_before_any_change():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam({"x": ([("a", a)], 0.1), "y": ([("b", b)], 0.1)})
    a.grad, b.grad = np.array([1.0]), np.array([np.nan])
    with pytest.raises(FloatingPointError, match="b"):
        opt.step()
    assert a.data[0] == 1.0 and b.data[0] == 2.0
    assert opt.steps == {"x": 0, "y": 0}


def test_adam_step_counters_per_group():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam({"x": ([("a", a)], 0.1), "y": ([("b", b)], 0.1)})
    a.grad = b.grad = np.array([1.0])
    opt.step(["x"])
    opt.step()
    assert opt.steps == {"x": 2, "y": 1}


# -- losses ----------------------------------------------------------------------


def test_total_loss_sums_parts():
    assert float(total_loss({}).data) == 0.0
    parts = {k: Tensor(np.array(v)) for k, v in zip(("spnn", "gnn", "cnn"), (1.0, 2.0, 3.0))}
    assert float(total_loss(parts).data) == 6.0


def test_batch_loss_equals_logged_parts(toy_images):
    cfg = tiny_config()
    model = build_model(cfg)
    loss = batch_losses(model, cfg, toy_images, "joint")
    assert loss.parts["total"] == pytest.approx(loss.parts["spnn"] + loss.parts["gnn"] + loss.parts["cnn"])
    assert loss.parts["cnn"] == pytest.approx(loss.parts["mi"] + loss.parts["cnn_recon"])
    assert loss.logged_sum() == pytest.approx(loss.parts["total"])


# -- schemes ---------------------------------------------------------------------


def test_disjoint_freezes_spnn(toy_images):
    cfg = tiny_config(scheme="disjoint", total_epochs=3)
    snaps = {}

    def cb(epoch, phase, model, history):
        snaps[epoch] = (phase, {k: v.copy() for k, v in model.state_dict().items() if k.startswith("spnn.")})

    ckpt, _ = train(cfg, toy_images, callback=cb)
    assert [snaps[e][0] for e in range(3)] == ["spnn", "frozen", "frozen"]
    for e in (1, 2):
        for k, v in snaps[0][1].items():
            np.testing.assert_array_equal(snaps[e][1][k], v, err_msg=k)
    others = [k for k in ckpt.weights if k.startswith("cnn.")]
    assert others


def test_pretrain_then_e2e_updates_everything(toy_images):
    cfg = tiny_config(total_epochs=2)
    before = build_model(cfg).state_dict()
    ckpt, _ = train(cfg, toy_images)
    for prefix in ("spnn.", "gnn.", "cnn."):
        changed = [k for k in before if k.startswith(prefix) and not np.array_equal(before[k], ckpt.weights[k])]
        assert changed, prefix
    assert ckpt.history["history.epoch"].tolist() == [0, 1]
    assert len(epoch_means(ckpt.history)) == 2


def test_end_to_end_is_joint_from_start(toy_images):
    phases = []
    train(tiny_config(scheme="end_to_end"), toy_images, callback=lambda e, p, m, h: phases.append(p))
    assert phases == ["joint", "joint"]


@pytest.mark.parametrize("components", ["cnn", "spnn"])
def test_ablation_components_train(toy_images, components):
    ckpt, model = train(tiny_config(components=components), toy_images)
    assert (model.gnn is None) and ((model.spnn is None) == (components == "cnn"))
    assert np.all(np.isfinite(ckpt.history["history.total"]))


def test_identical_runs_are_bit_identical(toy_images):
    a, _ = train(tiny_config(), toy_images)
    b, _ = train(tiny_config(), toy_images)
    for k in a.history:
        np.testing.assert_array_equal(a.history[k], b.history[k])
    for k in a.weights:
        np.testing.assert_array_equal(a.weights[k], b.weights[k])


def test_divergence_aborts_with_last_good_checkpoint(toy_images):
    bad = toy_images.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train(tiny_config(), bad)
    assert info.value.checkpoint.weights


def test_train_rejects_bad_input(toy_images):
    with pytest.raises(ValueError):
        train(tiny_config(), toy_images[:0])
    with pytest.raises(ValueError):
        train(tiny_config(), toy_images[..., :2])


# -- checkpoint ------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path, toy_images):
    ckpt, _ = train(tiny_config(), toy_images)
    save_checkpoint(ckpt, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert back.config == ckpt.config
    assert set(back.arrays()) == set(ckpt.arrays())
    for k, v in ckpt.arrays().items():
        assert back.arrays()[k].dtype == v.dtype
        np.testing.assert_array_equal(back.arrays()[k], v)
    assert (tmp_path / "c.ckpt").read_bytes()[:6] == b"SGSEG1"


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"NOTACHECKPOINT")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x")
    (tmp_path / "y").write_bytes(b"SGSEG1\x05")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "y")


# -- config ----------------------------------------------------------------------


def test_presets_carry_published_values():
    c = preset("coco-stuff")
    assert (c.lr_spnn, c.lr_gnn, c.lr_cnn, c.batch_size, c.n_superpixels, c.knn_k) == (1e-5, 5e-4, 5e-6, 64, 200, 20)
    p = preset("potsdam3")
    assert (p.alpha, p.beta, p.gamma, p.in_channels, p.n_classes) == (1.0, 5.0, 0.5, 4, 3)
    assert TrainConfig().pretrain_epochs == 10 and TrainConfig().scheme == "pretrain_then_e2e"


def test_empty_config_file_gives_default(tmp_path):
    (tmp_path / "c.cfg").write_text("# nothing\n\n")
    assert parse_config(tmp_path / "c.cfg") == preset()


def test_emit_parse_round_trip():
    for name in ("coco-stuff", "potsdam", "synthetic"):
        cfg = preset(name, seed=3, augment=True, width=0.3)
        assert parse_config_text(emit_config(cfg)) == cfg


def test_bad_lines_cite_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("seed = 1\nnot a pair\n")
    with pytest.raises(ConfigError, match="line 3"):
        parse_config_text("\n\nbogus = 1\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("batch_size = 0\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("seed = 1.5\n")
    with pytest.raises(ConfigError):
        preset("imagenet")


def test_out_of_range_lr_warns(caplog):
    with caplog.at_level(logging.WARNING):
        preset("coco-stuff", lr_cnn=1e-2).validate()
    assert "search space" in caplog.text
