import math

import numpy as np
import pytest

from cfkgr.models import ModelConfig, SparseGrad, init_model
from cfkgr.trainer import (OptimizerState, TrainConfig, TrainingDiverged, TrainingStats, apply_update,
                           candidate_lists, corrupt, corrupt_ids, loss_and_grad, train)

from conftest import make_kg

KINDS = ["TransE", "ComplEx", "RESCAL", "TuckER"]


def toy_model(kind, reciprocal=False, reg="none", freq=False):
    cfg = ModelConfig(kind=kind, entity_dim=3, relation_dim=2 if kind == "TuckER" else None,
                      reciprocal=reciprocal, regularization=reg, reg_entity=0.03, reg_relation=0.05,
                      frequency_weighting=freq)
    return init_model(cfg, 5, 3, seed=11)


def fd_check(model, lists, stats, step=1e-5):
    cfg = TrainConfig(negatives_per_direction=lists.shape[1] - 1)
    rng = np.random.default_rng(0)
    _, grad = loss_and_grad(model, None, cfg, rng, stats, lists=lists)
    dense = grad.to_dense(model)
    worst = 0.0
    for name, arr in model.parameters().items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up, _ = loss_and_grad(model, None, cfg, rng, stats, lists=lists)
            arr[idx] = orig - step
            down, _ = loss_and_grad(model, None, cfg, rng, stats, lists=lists)
            arr[idx] = orig
            num[idx] = (up - down) / (2 * step)
        scale = max(np.abs(num).max(), np.abs(dense[name]).max(), 1e-12)
        worst = max(worst, np.abs(num - dense[name]).max() / scale)
    return worst


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("reg", ["none", "l1", "l2", "l3"])
@pytest.mark.parametrize("reciprocal", [False, True])
def test_gradient_matches_finite_differences(kind, reg, reciprocal):
    model = toy_model(kind, reciprocal, reg, freq=(reg == "l2"))
    positives = np.array([(0, 1, 2), (3, 0, 4), (1, 2, 0)])
    lists = candidate_lists(model, positives, TrainConfig(negatives_per_direction=3),
                            np.random.default_rng(5))
    stats = TrainingStats(np.arange(1.0, 6.0), np.arange(1.0, 1.0 + model.relation.shape[0]))
    assert fd_check(model, lists, stats) < 1e-5


def test_loss_of_uniform_scores_is_log_list_size():
    model = toy_model("ComplEx")
    model.entity[:] = 0.0
    lists = candidate_lists(model, np.array([(0, 1, 2)]), TrainConfig(negatives_per_direction=4),
                            np.random.default_rng(0))
    loss, _ = loss_and_grad(model, None, TrainConfig(negatives_per_direction=4),
                            np.random.default_rng(0), lists=lists)
    assert loss == pytest.approx(math.log(5))


def test_candidate_list_layout():
    model = toy_model("ComplEx", reciprocal=True)
    pos = np.array([(0, 1, 2), (3, 2, 4)])
    lists = candidate_lists(model, pos, TrainConfig(negatives_per_direction=6), np.random.default_rng(0))
    assert lists.shape == (4, 7, 3)
    np.testing.assert_array_equal(lists[:2, 0], pos)
    # reciprocal head lists: (t, r + |R|, h') with the positive first
    np.testing.assert_array_equal(lists[2:, 0], [(2, 4, 0), (4, 5, 3)])
    assert (lists[:2, 1:, 2] != pos[:, [2]]).all()
    assert (lists[2:, 1:, 2] != pos[:, [0]]).all()


def test_corrupt_ids_uniform_and_excludes_original():
    rng = np.random.default_rng(0)
    orig = np.full(1, 3)
    draws = corrupt_ids(orig, 60000, 7, rng).ravel()
    assert 3 not in draws
    counts = np.bincount(draws, minlength=7)
    expect = 60000 / 6
    chi2 = sum((c - expect) ** 2 / expect for i, c in enumerate(counts) if i != 3)
    assert chi2 < 20.5  # 5 dof, p ~ 0.001


def test_corrupt_pool():
    rng = np.random.default_rng(0)
    out = corrupt((0, 1, 2), "tail", 50, [2, 5, 6], rng)
    assert {t.tail for t in out} <= {5, 6}
    with pytest.raises(ValueError):
        corrupt((0, 1, 2), "tail", 1, [2], rng)


def dense_adagrad(param, grads, lr, eps=1e-10):
    acc = np.zeros_like(param)
    for g in grads:
        acc += g * g
        param = param - lr * g / (np.sqrt(acc) + eps)
    return param


def test_sparse_adagrad_matches_dense_reference():
    model = toy_model("ComplEx")
    rng = np.random.default_rng(1)
    start = model.entity.copy()
    state = OptimizerState("Adagrad")
    grads = []
    for _ in range(4):
        rows = np.unique(rng.integers(0, 5, size=3))
        g = rng.normal(size=(len(rows), model.entity.shape[1]))
        full = np.zeros_like(model.entity)
        full[rows] = g
        grads.append(full)
        apply_update(model, state, SparseGrad(rows, g, np.empty(0, np.int64), np.empty((0, 6))), 0.1)
    np.testing.assert_allclose(model.entity, dense_adagrad(start, grads, 0.1), rtol=1e-12)


def test_adam_first_step_is_lr_times_sign():
    model = toy_model("TransE")
    before = model.relation.copy()
    state = OptimizerState("Adam")
    g = np.array([[0.3, -2.0, 1e-3]])
    apply_update(model, state, SparseGrad(np.empty(0, np.int64), np.empty((0, 3)), np.array([1]), g), 0.01)
    np.testing.assert_allclose(model.relation[1] - before[1], -0.01 * np.sign(g[0]), rtol=1e-4)
    np.testing.assert_array_equal(model.relation[[0, 2]], before[[0, 2]])


def test_training_is_deterministic_and_reduces_loss():
    triples = [(i, i % 2, (i + 1) % 8) for i in range(8)] + [(i, 2, (i + 3) % 8) for i in range(8)]
    kg = make_kg(triples)
    mc = ModelConfig(kind="ComplEx", entity_dim=8)
    tc = TrainConfig(epochs=30, batch_size=4, negatives_per_direction=5, seed=2)
    a = train(kg, mc, tc)
    b = train(kg, mc, tc)
    assert a.model.digest() == b.model.digest()
    assert a.trace[-1]["mean_loss"] < a.trace[0]["mean_loss"]
    assert a.model.meta["train"]["optimizer"] == "Adagrad"


def test_divergence_is_reported():
    kg = make_kg([(0, 0, 1), (1, 0, 2)])
    mc = ModelConfig(kind="RESCAL", entity_dim=2)
    tc = TrainConfig(epochs=5, batch_size=2, learning_rate=1e200, optimizer="Adam")
    with pytest.raises(TrainingDiverged) as info:
        train(kg, mc, tc)
    assert info.value.triples


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(negatives_per_direction=0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="SGD")
