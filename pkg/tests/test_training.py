import numpy as np
import numpy.testing as npt
import pytest

from kinverify.comparator import (
    Activation,
    ComparatorConfig,
    SharingMode,
    forward,
    init_params,
)
from kinverify.model_io import serialize_model
from kinverify.training import (
    AdamState,
    TrainConfig,
    adam_step,
    backward,
    bce_loss,
    finite_difference_grads,
    gradcheck,
    l2_penalty,
    train,
    train_attention,
)

TINY = ComparatorConfig(input_dim=8, hidden=3, dropout_p=0.0, relations=("BB", "FD", "GMGS"))


def rand_params(config, seed, spread=0.3):
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    for key in params.values:
        params.values[key] = params.values[key] + spread * rng.standard_normal(
            params.values[key].shape
        )
    return params


def test_bce_loss_values():
    loss, grad = bce_loss(np.array([0.0]), np.array([1.0]))
    assert loss[0] == pytest.approx(np.log(2.0))
    assert grad[0] == pytest.approx(-0.5)
    loss, grad = bce_loss(np.array([0.0]), np.array([0.0]))
    assert loss[0] == pytest.approx(np.log(2.0))
    assert grad[0] == pytest.approx(0.5)
    loss, grad = bce_loss(np.array([50.0]), np.array([1.0]))
    assert 0.0 <= loss[0] < 1e-20
    assert abs(grad[0]) < 1e-20
    loss, grad = bce_loss(np.array([-800.0, 800.0]), np.array([1.0, 0.0]))
    assert np.isfinite(loss).all() and np.isfinite(grad).all()


def test_l2_penalty():
    params = init_params(TINY, seed=0)
    for key in params.values:
        params.values[key][:] = 0.0
    loss, grads = l2_penalty(params, 2e-4)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads.values())

    params.values["expert0.W1"][0, 0] = 3.0
    loss, grads = l2_penalty(params, 2e-4)
    assert loss == pytest.approx(1.8e-3)
    assert grads["expert0.W1"][0, 0] == pytest.approx(1.2e-3)

    params.values["expert0.b1"][0] = 2.0
    with_biases, _ = l2_penalty(params, 2e-4, include_biases=True)
    without, grads = l2_penalty(params, 2e-4, include_biases=False)
    assert with_biases == pytest.approx(without + 2e-4 * 4.0)
    assert np.all(grads["expert0.b1"] == 0.0)


def test_backward_gradient_zero_structure():
    rng = np.random.default_rng(5)
    params = rand_params(TINY, seed=1)
    fc = rng.standard_normal((1, 8))

    # first expert selected: only expert 0 touched
    _, trace = forward(params, fc)
    grads = backward(trace, params, np.array([0]), np.array([1.0]))
    for i in (1, 2):
        for part in ("W1", "b1", "W2", "b2"):
            assert np.all(grads[f"expert{i}.{part}"] == 0.0)
    assert np.any(grads["expert0.W1"] != 0.0)

    # last expert selected: all W2/b2 below zero, every W1 may be nonzero
    _, trace = forward(params, fc)
    grads = backward(trace, params, np.array([2]), np.array([0.0]))
    for i in (0, 1):
        assert np.all(grads[f"expert{i}.W2"] == 0.0)
        assert np.all(grads[f"expert{i}.b2"] == 0.0)
    for i in (0, 1, 2):
        assert np.any(grads[f"expert{i}.W1"] != 0.0)


def test_gradcheck_all_modes_fast():
    import time

    start = time.time()
    err = gradcheck(seed=0)
    elapsed = time.time() - start
    assert err < 1e-6
    assert elapsed < 10.0  # generous here; the acceptance suite pins < 1 s per mode set


def test_gradcheck_tanh_specifically():
    err = gradcheck(seed=3, activations=(Activation.TANH,), sharing_modes=(SharingMode.PER_EXPERT,))
    assert err < 1e-6


def test_gradcheck_detects_corrupted_gradient():
    rng = np.random.default_rng(0)
    params = rand_params(TINY, seed=2)
    fc = rng.standard_normal((2, 8))
    rel = np.array([0, 2])
    targets = np.array([1.0, 0.0])
    _, trace = forward(params, fc)
    analytic = backward(trace, params, rel, targets)
    analytic["expert0.W1"] = analytic["expert0.W1"] + 0.05  # fault injection
    numeric = finite_difference_grads(params, fc, rel, targets)
    worst = 0.0
    for key in analytic:
        denom = np.maximum(1.0, np.maximum(np.abs(analytic[key]), np.abs(numeric[key])))
        worst = max(worst, float(np.max(np.abs(analytic[key] - numeric[key]) / denom)))
    assert worst > 1e-2


def test_backward_matches_fd_with_dropout_mask():
    config = ComparatorConfig(input_dim=8, hidden=3, dropout_p=0.3, relations=("BB", "FD"))
    params = rand_params(config, seed=11)
    rng = np.random.default_rng(1)
    fc = rng.standard_normal((3, 8))
    rel = np.array([0, 1, 1])
    targets = np.array([1.0, 0.0, 1.0])
    _, trace = forward(params, fc, mode="train", rng=rng)
    analytic = backward(trace, params, rel, targets)
    numeric = finite_difference_grads(
        params, fc, rel, targets, dropout_scale=trace.dropout_scale
    )
    for key in analytic:
        denom = np.maximum(1.0, np.maximum(np.abs(analytic[key]), np.abs(numeric[key])))
        assert float(np.max(np.abs(analytic[key] - numeric[key]) / denom)) < 1e-6


def test_adam_first_step_magnitude():
    params = init_params(TINY, seed=0)
    state = AdamState.init_like(params)
    grads = {k: np.zeros_like(v) for k, v in params.values.items()}
    grads["expert0.b2"][0] = 0.3
    before = params.values["expert0.b2"][0]
    w_before = params.values["expert0.W1"].copy()
    adam_step(params, grads, state, lr=0.001)
    update = before - params.values["expert0.b2"][0]
    assert update == pytest.approx(0.001 * 0.3 / (0.3 + 1e-8))
    npt.assert_array_equal(params.values["expert0.W1"], w_before)  # zero grad: unchanged
    assert state.t == 1


def test_adam_zero_gradient_never_moves():
    params = init_params(TINY, seed=0)
    reference = {k: v.copy() for k, v in params.values.items()}
    state = AdamState.init_like(params)
    zero = {k: np.zeros_like(v) for k, v in params.values.items()}
    for _ in range(5):
        adam_step(params, zero, state, lr=0.01)
    for key in reference:
        npt.assert_array_equal(params.values[key], reference[key])


def test_train_zero_epochs_returns_init(tiny_world):
    world = tiny_world
    config = ComparatorConfig(input_dim=2 * world.store.dim, hidden=4)
    params, history = train(
        world.store,
        world.kin_pairs["train"],
        world.eval_pairs["val"],
        config,
        TrainConfig(epochs=0, seed=7),
    )
    assert history == []
    reference = init_params(config, 7)
    for key in reference.values:
        npt.assert_array_equal(params.values[key], reference.values[key])


def test_train_lr_schedule_and_history(tiny_world):
    world = tiny_world
    config = ComparatorConfig(input_dim=2 * world.store.dim, hidden=4)
    tcfg = TrainConfig(epochs=4, batch_size=64, seed=3)
    _, history = train(
        world.store, world.kin_pairs["train"], world.eval_pairs["val"], config, tcfg
    )
    assert [h.lr for h in history] == [0.001, 0.001, 0.0005, 0.0005]
    assert [h.epoch for h in history] == [1, 2, 3, 4]
    assert all(np.isfinite(h.train_loss) for h in history)
    assert all(0.0 <= h.val_macro_acc <= 1.0 for h in history)


def test_train_determinism_bytes(tiny_world):
    world = tiny_world
    config = ComparatorConfig(input_dim=2 * world.store.dim, hidden=4)
    tcfg = TrainConfig(epochs=2, batch_size=64, seed=3)
    a, _ = train(world.store, world.kin_pairs["train"], world.eval_pairs["val"], config, tcfg)
    b, _ = train(world.store, world.kin_pairs["train"], world.eval_pairs["val"], config, tcfg)
    assert serialize_model(a) == serialize_model(b)


def test_l2_raises_loss(tiny_world):
    world = tiny_world
    config = ComparatorConfig(input_dim=2 * world.store.dim, hidden=4)
    base = TrainConfig(epochs=1, batch_size=64, seed=3, l2_lambda=0.0)
    reg = TrainConfig(epochs=1, batch_size=64, seed=3, l2_lambda=2e-4)
    _, h0 = train(world.store, world.kin_pairs["train"], world.eval_pairs["val"], config, base)
    _, h1 = train(world.store, world.kin_pairs["train"], world.eval_pairs["val"], config, reg)
    assert h1[0].train_loss > h0[0].train_loss


def test_epoch_nonkin_sets_differ(tiny_world):
    from kinverify.data import augment_symmetric, resample_nonkin

    world = tiny_world
    aug = augment_symmetric(world.kin_pairs["train"])
    first = set(resample_nonkin(aug, world.store, 3, 1).pairs)
    second = set(resample_nonkin(aug, world.store, 3, 2).pairs)
    overlap = len(first & second) / len(first)
    assert overlap < 0.5


def test_train_attention_freezes_experts(tiny_world):
    world = tiny_world
    config = ComparatorConfig(input_dim=2 * world.store.dim, hidden=4)
    tcfg = TrainConfig(epochs=1, batch_size=64, seed=3)
    params, _ = train(world.store, world.kin_pairs["train"], world.eval_pairs["val"], config, tcfg)
    fc = np.concatenate(
        [world.store.matrix[0], world.store.matrix[1]]
    )
    before, _ = forward(params, fc)

    trained = train_attention(params, world.store, world.kin_pairs["train"], tcfg)
    assert trained.has_attention
    after, _ = forward(trained, fc)
    npt.assert_array_equal(before, after)  # expert path bit-identical

    # zero-epoch head training keeps the uniform head
    untouched = train_attention(params, world.store, world.kin_pairs["train"], TrainConfig(epochs=0, seed=3))
    assert np.all(untouched.values["attention.W"] == 0.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_initial=0.0)
    assert TrainConfig().lr_for_epoch(2) == 0.001
    assert TrainConfig().lr_for_epoch(3) == 0.0005
