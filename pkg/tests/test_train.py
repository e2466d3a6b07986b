"""Metrics, the Adam loop, determinism guarantees and the ablation grid."""

import numpy as np
import pytest

from hsinet.data import extract_patches, make_synthetic, stratified_split
from hsinet.errors import ConfigError, DataError, NumericError
from hsinet.metrics import confusion_matrix, metrics_from_confusion
from hsinet.network import ModelConfig, Network
from hsinet.tensor import Tensor, reduce_sum
from hsinet.train import (
    ABLATION_CASES,
    AdamOptimizer,
    TrainConfig,
    ablate,
    evaluate,
    train,
)

import oracles


def tiny_patchset(separation=6.0, fraction=0.1, seed=0):
    cube, raster = make_synthetic(height=16, width=16, bands=8, classes=4,
                                  separation=separation, noise=1.0, seed=seed)
    patchset = extract_patches(cube.values, raster, patch=5)
    return stratified_split(patchset, fraction, seed)


def tiny_model(seed=0, **overrides):
    base = dict(classes=4, bands=8, patch=5, s=4, d=8, groups=2, heads=2, encoders=1)
    base.update(overrides)
    return Network(ModelConfig(**base), seed=seed)


def snapshot(net):
    return {name: p.data.copy() for name, p in net.named_parameters()}


# -- confusion matrix and metrics ---------------------------------------------------


def test_confusion_matrix_counts_match_oracle():
    rng = np.random.default_rng(0)
    true = rng.integers(0, 5, size=200)
    pred = rng.integers(0, 5, size=200)
    cm = confusion_matrix(true, pred, 5)
    assert cm.sum() == 200
    for t in range(5):
        for p in range(5):
            assert cm[t, p] == np.sum((true == t) & (pred == p))


def test_confusion_matrix_rejects_bad_input():
    with pytest.raises(DataError, match="length"):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(DataError, match="outside"):
        confusion_matrix([0, 2], [0, 1], 2)
    with pytest.raises(DataError, match="zero"):
        confusion_matrix([], [], 2)


def test_metrics_match_oracle_on_random_labels():
    rng = np.random.default_rng(1)
    true = rng.integers(0, 4, size=300)
    pred = rng.integers(0, 4, size=300)
    report = metrics_from_confusion(confusion_matrix(true, pred, 4))
    oa, aa, kappa = oracles.metrics_naive(true, pred, 4)
    assert report.oa == pytest.approx(oa, abs=1e-12)
    assert report.aa == pytest.approx(aa, abs=1e-12)
    assert report.kappa == pytest.approx(kappa, abs=1e-12)


def test_metrics_two_class_worked_example():
    report = metrics_from_confusion(np.array([[50, 10], [5, 35]]))
    assert report.oa == pytest.approx(0.85)
    # chance agreement (60*55 + 40*45)/100^2 = 0.51
    assert report.kappa == pytest.approx(0.34 / 0.49, abs=1e-9)
    assert report.aa == pytest.approx((50 / 60 + 35 / 40) / 2, abs=1e-12)


def test_metrics_perfect_diagonal():
    report = metrics_from_confusion(np.diag([7, 3, 11]))
    assert report.oa == 1.0
    assert report.aa == 1.0
    assert report.kappa == 1.0
    np.testing.assert_array_equal(report.per_class, [1.0, 1.0, 1.0])


def test_kappa_below_one_with_any_confusion():
    report = metrics_from_confusion(np.array([[9, 1], [0, 10]]))
    assert report.kappa < 1.0


def test_chance_level_predictions_give_near_zero_kappa():
    rng = np.random.default_rng(2)
    true = rng.integers(0, 2, size=10_000)
    pred = rng.integers(0, 2, size=10_000)
    report = metrics_from_confusion(confusion_matrix(true, pred, 2))
    assert abs(report.kappa) < 0.05


def test_empty_class_row_yields_nan_recall():
    cm = np.array([[5, 0, 0], [1, 4, 0], [0, 0, 0]])
    report = metrics_from_confusion(cm)
    assert np.isnan(report.per_class[2])
    assert report.aa == pytest.approx((1.0 + 0.8) / 2)
    assert report.to_dict()["per_class"][2] is None


def test_single_cell_diagonal_matrix_is_perfect():
    report = metrics_from_confusion(np.array([[9, 0], [0, 0]]))
    assert report.oa == 1.0
    assert report.kappa == 1.0


# -- optimizer ----------------------------------------------------------------------


def test_adam_minimizes_quadratic():
    x = Tensor(np.array([5.0], dtype=np.float32), requires_grad=True)
    opt = AdamOptimizer([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        gap = x - 3.0
        loss = reduce_sum(gap * gap)
        loss.backward()
        opt.step()
    assert abs(float(x.data[0]) - 3.0) < 1e-3


def test_adam_first_step_has_unit_scale():
    # bias correction makes the very first update ~lr * sign(gradient)
    x = Tensor(np.array([1.0, -2.0], dtype=np.float64), requires_grad=True)
    opt = AdamOptimizer([x], lr=0.01)
    x.grad = np.array([4.0, -0.5])
    opt.step()
    np.testing.assert_allclose(x.data, [1.0 - 0.01, -2.0 + 0.01], atol=1e-8)


def test_adam_leaves_gradless_params_alone():
    a = Tensor(np.array([1.0]), requires_grad=True)
    b = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamOptimizer([a, b], lr=0.5)
    a.grad = np.array([1.0])
    opt.step()
    assert float(b.data[0]) == 2.0
    assert float(a.data[0]) != 1.0


def test_zero_grad_clears_all():
    a = Tensor(np.array([1.0]), requires_grad=True)
    a.grad = np.array([3.0])
    AdamOptimizer([a], lr=0.1).zero_grad()
    assert a.grad is None


# -- config -------------------------------------------------------------------------


def test_train_config_accepts_zero_lr():
    TrainConfig(lr=0.0).validate()


@pytest.mark.parametrize(
    "overrides,fragment",
    [
        (dict(lr=-1e-3), "learning rate"),
        (dict(batch_size=0), "batch"),
        (dict(epochs=0), "epoch"),
        (dict(beta1=1.0), "moment"),
        (dict(beta2=0.0), "moment"),
    ],
)
def test_train_config_validation(overrides, fragment):
    with pytest.raises(ConfigError, match=fragment):
        TrainConfig(**overrides).validate()


def test_train_config_from_dict_rejects_unknown():
    with pytest.raises(ConfigError, match="momentum"):
        TrainConfig.from_dict({"lr": 0.1, "momentum": 0.9})


# -- training loop ------------------------------------------------------------------


def test_history_shape_and_fields():
    patchset = tiny_patchset()
    net = tiny_model()
    history = train(net, patchset, TrainConfig(lr=1e-3, batch_size=8, epochs=2, seed=0))
    assert [h["epoch"] for h in history] == [0, 1]
    for record in history:
        assert set(record) == {"epoch", "loss", "train_oa", "seconds"}
        assert np.isfinite(record["loss"])
        assert 0.0 <= record["train_oa"] <= 1.0
        assert record["seconds"] >= 0.0


def test_zero_lr_keeps_trainable_parameters_bitwise():
    patchset = tiny_patchset()
    net = tiny_model()
    before = snapshot(net)
    train(net, patchset, TrainConfig(lr=0.0, batch_size=8, epochs=2, seed=0))
    for name, p in net.named_parameters():
        np.testing.assert_array_equal(p.data, before[name], err_msg=name)


def test_zero_lr_still_tracks_batch_statistics():
    # running moments follow the data stream even when no step is taken
    patchset = tiny_patchset()
    net = tiny_model()
    buffers_before = {name: b.data.copy() for name, b in net.named_buffers()}
    train(net, patchset, TrainConfig(lr=0.0, batch_size=8, epochs=1, seed=0))
    changed = any(
        not np.array_equal(b.data, buffers_before[name]) for name, b in net.named_buffers()
    )
    assert changed


def test_training_is_bitwise_deterministic():
    patchset = tiny_patchset()
    config = TrainConfig(lr=1e-3, batch_size=8, epochs=2, seed=5)
    net_a, net_b = tiny_model(seed=1), tiny_model(seed=1)
    hist_a = train(net_a, patchset, config)
    hist_b = train(net_b, patchset, config)
    assert [h["loss"] for h in hist_a] == [h["loss"] for h in hist_b]
    state_a, state_b = snapshot(net_a), snapshot(net_b)
    for name in state_a:
        np.testing.assert_array_equal(state_a[name], state_b[name], err_msg=name)


def test_shuffle_seed_changes_loss_curve():
    patchset = tiny_patchset()
    hist_a = train(tiny_model(seed=1), patchset, TrainConfig(lr=1e-3, batch_size=8, epochs=1, seed=0))
    hist_b = train(tiny_model(seed=1), patchset, TrainConfig(lr=1e-3, batch_size=8, epochs=1, seed=9))
    assert hist_a[0]["loss"] != hist_b[0]["loss"]


def test_loss_falls_on_separable_data():
    patchset = tiny_patchset(separation=6.0)
    net = tiny_model()
    history = train(net, patchset, TrainConfig(lr=3e-3, batch_size=8, epochs=5, seed=0))
    assert history[-1]["loss"] < history[0]["loss"]


def test_non_finite_loss_names_the_batch():
    patchset = tiny_patchset()
    net = tiny_model()
    weight = net.head.fc.weight
    weight.data = np.full_like(weight.data, np.inf)
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericError, match="epoch 0.*batch 0"):
            train(net, patchset, TrainConfig(lr=1e-3, batch_size=8, epochs=1, seed=0))


def test_train_requires_a_split():
    cube, raster = make_synthetic(height=8, width=8, bands=8, classes=4, seed=0)
    patchset = extract_patches(cube.values, raster, patch=5)  # never split
    with pytest.raises(DataError, match="train"):
        train(tiny_model(), patchset, TrainConfig(epochs=1))


def test_on_epoch_callback_streams_history():
    patchset = tiny_patchset()
    seen = []
    history = train(tiny_model(), patchset, TrainConfig(lr=1e-3, batch_size=8, epochs=2, seed=0),
                    on_epoch=seen.append)
    assert seen == history


# -- evaluation ---------------------------------------------------------------------


def test_evaluate_defaults_to_test_split():
    patchset = tiny_patchset()
    cm, report = evaluate(tiny_model(), patchset)
    assert cm.sum() == len(patchset.test_indices)
    rebuilt = metrics_from_confusion(cm)
    assert report.oa == rebuilt.oa and report.kappa == rebuilt.kappa


def test_evaluate_explicit_indices():
    patchset = tiny_patchset()
    idx = patchset.train_indices
    cm, _ = evaluate(tiny_model(), patchset, indices=idx)
    assert cm.sum() == len(idx)


def test_evaluate_empty_split_raises():
    cube, raster = make_synthetic(height=8, width=8, bands=8, classes=4, seed=0)
    patchset = extract_patches(cube.values, raster, patch=5)
    with pytest.raises(DataError, match="empty"):
        evaluate(tiny_model(), patchset)


# -- ablation grid ------------------------------------------------------------------


def test_ablation_grid_is_the_published_six_cases():
    assert ABLATION_CASES == {
        1: ("naive", "off", "off"),
        2: ("on", "off", "off"),
        3: ("on", "off", "on"),
        4: ("on", "on", "off"),
        5: ("naive", "on", "on"),
        6: ("on", "on", "on"),
    }


def test_ablate_selected_cases():
    patchset = tiny_patchset()
    model_cfg = ModelConfig(classes=4, bands=8, patch=5, s=4, d=8, groups=2, heads=2, encoders=1)
    results = ablate(model_cfg, TrainConfig(lr=1e-3, batch_size=8, epochs=1, seed=0),
                     patchset, cases=[6, 1])
    assert [r["case"] for r in results] == [1, 6]
    for r in results:
        assert (r["tbfe"], r["hpa"], r["cff"]) == ABLATION_CASES[r["case"]]
        assert 0.0 <= r["oa"] <= 1.0
        assert -1.0 <= r["kappa"] <= 1.0


def test_ablate_is_deterministic():
    patchset = tiny_patchset()
    model_cfg = ModelConfig(classes=4, bands=8, patch=5, s=4, d=8, groups=2, heads=2, encoders=1)
    tc = TrainConfig(lr=1e-3, batch_size=8, epochs=1, seed=0)
    a = ablate(model_cfg, tc, patchset, cases=[2], model_seed=3)
    b = ablate(model_cfg, tc, patchset, cases=[2], model_seed=3)
    assert a == b
