import numpy as np
import pytest

from nn.layers import (
    BATCHNORM,
    DENSE,
    OUTPUT,
    RELU,
    LayerSpec,
    block_names,
    decayed_blocks,
    plan_layers,
    fashion_specs,
    with_dropout_rate,
)
from nn.model import GradientSet, check_model, init_model
from nn.network import EVAL, Mode, backward, cross_entropy, forward, predict, sgd_step, update_running_stats
from nn import ops
from nn.ops import maxpool_forward
from utils.errors import LabelError, ShapeError
from utils.verification import (
    FD_EPS_SMOOTH,
    SMALL_INPUT,
    SMALL_SPECS,
    SMOOTH_SPECS,
    gradient_close,
    gradient_errors,
    small_dataset,
    small_model,
)


def test_fashion_architecture_shapes():
    plans = plan_layers(fashion_specs())
    assert plans[0].out_shape == (25, 25, 64)
    assert plans[2].out_shape == (21, 21, 16)
    assert plans[4].out_shape == (10, 10, 16)
    assert plans[10].out_shape == (2, 2, 16)
    assert plans[12].param_shapes == ((64, 128), (128,))
    assert plans[-1].out_shape == (10,)
    assert len(plans) == 16


def test_block_names_and_decay():
    names = block_names(fashion_specs())
    assert names[:2] == ["conv1.weight", "conv1.bias"]
    assert names[-2:] == ["output.weight", "output.bias"]
    assert decayed_blocks(fashion_specs()) == (True, False) * 6

    bn_names = block_names(fashion_specs(batchnorm=True))
    assert "bn1.gamma" in bn_names and "bn5.beta" in bn_names
    assert not any(flag for name, flag in zip(bn_names, decayed_blocks(fashion_specs(batchnorm=True)))
                   if name.startswith("bn"))


def test_invalid_architectures():
    with pytest.raises(ShapeError):
        plan_layers((LayerSpec(OUTPUT, units=10), LayerSpec(RELU)))
    with pytest.raises(ShapeError):
        plan_layers((LayerSpec(DENSE, units=0), LayerSpec(OUTPUT, units=10)), (4,))
    with pytest.raises(ShapeError):
        plan_layers((LayerSpec("softmax"), LayerSpec(OUTPUT, units=10)), (4,))
    with pytest.raises(ShapeError):
        plan_layers(fashion_specs(), (8, 8, 1))


def test_init_model_is_deterministic():
    a = init_model(fashion_specs(), 3)
    b = init_model(fashion_specs(), 3)
    assert a.equals(b)
    assert not a.equals(init_model(fashion_specs(), 4))
    check_model(a)
    assert all(not p.any() for name, p in zip(a.block_names, a.params) if name.endswith(".bias"))
    bound = 1 / np.sqrt(4 * 4 * 1)
    assert np.abs(a.params[0]).max() <= bound


def test_batchnorm_model_buffers():
    model = init_model(fashion_specs(batchnorm=True), 0)
    assert len(model.buffers) == 10
    assert np.all(model.buffers[1] == 1.0)
    check_model(model)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    model = small_model(seed)
    data = small_dataset(2, seed)
    for name, analytic, numeric in gradient_errors(model, data.images.astype(np.float64), data.labels, seed):
        assert gradient_close(analytic, numeric), f"{name}: {analytic} vs {numeric}"


def test_batchnorm_gradient():
    specs = (LayerSpec("conv2d", units=2, kernel_size=3), LayerSpec(BATCHNORM), LayerSpec(RELU),
             LayerSpec(DENSE, units=6), LayerSpec(BATCHNORM), LayerSpec(RELU), LayerSpec(OUTPUT, units=10))
    model = init_model(specs, 1, SMALL_INPUT, dtype=np.float64)
    data = small_dataset(4, 1)
    for name, analytic, numeric in gradient_errors(model, data.images.astype(np.float64), data.labels, 1):
        assert gradient_close(analytic, numeric), f"{name}: {analytic} vs {numeric}"


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_coarse_differences_without_relu(seed):
    model = small_model(seed, specs=SMOOTH_SPECS)
    data = small_dataset(2, seed)
    images = data.images.astype(np.float64)
    for name, analytic, numeric in gradient_errors(model, images, data.labels, seed, eps=FD_EPS_SMOOTH):
        assert gradient_close(analytic, numeric), f"{name}: {analytic} vs {numeric}"


def test_two_identical_samples_give_the_single_sample_gradient():
    model = small_model(0, specs=with_dropout_rate(SMALL_SPECS, 0.0))
    data = small_dataset(1, 0)
    single = data.images.astype(np.float64)
    pair = np.concatenate([single, single])
    one = backward(model, forward(model, single), data.labels)
    two = backward(model, forward(model, pair), np.concatenate([data.labels, data.labels]))
    for a, b in zip(one.grads, two.grads):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("rate", [0.25, 0.5])
def test_dropout_zeroes_the_expected_fraction(rate):
    n, draws = 1000, 50
    zeros = sum(
        int((ops.dropout_mask(np.random.default_rng(s), (n,), rate, np.dtype(np.float32)) == 0).sum())
        for s in range(draws)
    )
    total = n * draws
    assert abs(zeros - rate * total) < 3 * np.sqrt(total * rate * (1 - rate))


def test_zero_dropout_training_matches_eval():
    model = init_model(with_dropout_rate(fashion_specs(), 0.0), 0)
    images = np.random.default_rng(0).random((4, 28, 28, 1)).astype(np.float32)
    np.testing.assert_array_equal(forward(model, images, Mode.training(3)).logits, forward(model, images).logits)


def test_batchnorm_of_constant_batch_is_beta():
    x = np.full((4, 3), 2.0, dtype=np.float32)
    beta = np.array([0.1, 0.2, 0.3], dtype=np.float32)
    y, _ = ops.batchnorm_forward(x, np.ones(3, np.float32), beta, np.zeros(3, np.float32),
                                 np.ones(3, np.float32), train=True)
    np.testing.assert_allclose(y, np.broadcast_to(beta, y.shape), atol=1e-6)


def test_batchnorm_keeps_normalized_batch():
    z = np.random.default_rng(0).normal(size=(64, 3)).astype(np.float32)
    z = (z - z.mean(axis=0)) / z.std(axis=0)
    y, _ = ops.batchnorm_forward(z, np.ones(3, np.float32), np.zeros(3, np.float32), np.zeros(3, np.float32),
                                 np.ones(3, np.float32), train=True)
    np.testing.assert_allclose(y, z, atol=1e-4)


def test_eval_mode_is_deterministic_and_dropout_free(tiny_model, tiny_data):
    a = forward(tiny_model, tiny_data.images).probs
    b = forward(tiny_model, tiny_data.images, EVAL).probs
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)


def test_training_masks_depend_only_on_seed(tiny_model, tiny_data):
    first = forward(tiny_model, tiny_data.images, Mode.training(5)).probs
    again = forward(tiny_model, tiny_data.images, Mode.training(5)).probs
    other = forward(tiny_model, tiny_data.images, Mode.training(6)).probs
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)


def test_item_keyed_masks_are_chunk_independent(tiny_model, tiny_data):
    keys = np.arange(len(tiny_data)) + 7
    whole = forward(tiny_model, tiny_data.images, Mode.monte_carlo(3, keys)).probs
    parts = np.concatenate([
        forward(tiny_model, tiny_data.images[:15], Mode.monte_carlo(3, keys[:15])).probs,
        forward(tiny_model, tiny_data.images[15:], Mode.monte_carlo(3, keys[15:])).probs,
    ])
    np.testing.assert_allclose(whole, parts, rtol=1e-12)


def test_forward_rejects_bad_shape(tiny_model):
    with pytest.raises(ShapeError):
        forward(tiny_model, np.zeros((2, 5, 5, 1)))


def test_cross_entropy_clamps_and_validates_labels():
    probs = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert cross_entropy(probs, [1, 0]) == pytest.approx((-np.log(1e-12) - np.log(0.5)) / 2)
    with pytest.raises(LabelError):
        cross_entropy(probs, [0, 2])


def test_maxpool_routes_ties_to_first():
    x = np.ones((1, 2, 2, 1))
    _, arg = maxpool_forward(x, 2)
    assert arg.ravel()[0] == 0


def test_sgd_step_decays_weights_only(tiny_model):
    zero = GradientSet(tuple(np.zeros_like(p) for p in tiny_model.params))
    stepped = sgd_step(tiny_model, zero, lr=0.1, weight_decay=0.5)
    for name, before, after in zip(tiny_model.block_names, tiny_model.params, stepped.params):
        if name.endswith(".weight"):
            np.testing.assert_allclose(after, before * (1 - 0.05))
        else:
            np.testing.assert_array_equal(after, before)


def test_sgd_step_accepts_descent_directions(tiny_model, tiny_data):
    trace = forward(tiny_model, tiny_data.images, Mode.training(0))
    grads = backward(tiny_model, trace, tiny_data.labels)
    a = sgd_step(tiny_model, grads, 0.1)
    b = sgd_step(tiny_model, grads.as_descent(), 0.1)
    assert a.equals(b)


def test_sgd_step_validates(tiny_model):
    zero = GradientSet(tuple(np.zeros_like(p) for p in tiny_model.params))
    with pytest.raises(ValueError):
        sgd_step(tiny_model, zero, lr=0.0)
    with pytest.raises(ValueError):
        sgd_step(tiny_model, zero, lr=0.1, weight_decay=-1)
    with pytest.raises(ShapeError):
        sgd_step(tiny_model, GradientSet(zero.grads[:-1]), lr=0.1)


def test_batchnorm_running_stats_update():
    model = init_model(fashion_specs(batchnorm=True), 0)
    images = np.random.default_rng(0).random((4, 28, 28, 1)).astype(np.float32)
    trace = forward(model, images, Mode.training(0))
    updated = update_running_stats(model, trace)
    assert not np.array_equal(updated.buffers[0], model.buffers[0])
    eval_trace = forward(model, images)
    assert update_running_stats(model, eval_trace) is model


def test_batchnorm_rejects_single_item_batch():
    model = init_model(fashion_specs(batchnorm=True), 0)
    with pytest.raises(ShapeError):
        forward(model, np.zeros((1, 28, 28, 1), dtype=np.float32), Mode.training(0))


def test_predict_chunks_match_single_pass(tiny_model, tiny_data):
    np.testing.assert_allclose(
        predict(tiny_model, tiny_data.images, chunk=7),
        forward(tiny_model, tiny_data.images).probs,
        rtol=1e-12,
    )


def test_penultimate_activations_present(tiny_model, tiny_data):
    trace = forward(tiny_model, tiny_data.images)
    assert trace.penultimate.shape == (len(tiny_data), 8)
    assert SMALL_SPECS[-2].kind == RELU
    assert (trace.penultimate >= 0).all()
