import math

import numpy as np
import pytest

from analytics.metrics import (
    accuracy,
    activation_affinity,
    activation_heatmap,
    block_divergence,
    cosine_similarity,
    evaluate,
    layer_divergence,
    mc_accuracy,
)
from data.dataset import Dataset
from nn.network import forward
from utils.errors import SamplingError, ShapeError
from utils.verification import SMALL_INPUT, small_dataset, small_model


def constant_class_model(label: int):
    """Модель, у которой выход зависит только от смещения последнего слоя"""
    model = small_model(0)
    params = [np.zeros_like(p) for p in model.params]
    params[-1][label] = 5.0
    return model.with_params(params)


def balanced(per_class: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(10), per_class)
    return Dataset(rng.random((len(labels), *SMALL_INPUT)).astype(np.float32), labels)


def test_constant_class_accuracy_is_tenth():
    data = balanced(7, 0)
    acc, hist = evaluate(constant_class_model(3), data)
    assert acc == pytest.approx(0.1)
    assert hist.tolist() == [0, 0, 0, 7, 0, 0, 0, 0, 0, 0]


@pytest.mark.parametrize("seed", range(3))
def test_accuracy_matches_loop_oracle(seed):
    model = small_model(seed)
    data = small_dataset(53, seed)
    probs = forward(model, data.images).probs
    correct = sum(int(np.argmax(probs[i]) == data.labels[i]) for i in range(len(data)))
    assert accuracy(model, data, chunk=10) == correct / len(data)
    acc, hist = evaluate(model, data, chunk=10)
    assert hist.sum() == round(acc * len(data))


def test_accuracy_on_empty_set_fails():
    with pytest.raises(SamplingError):
        accuracy(small_model(0), Dataset.empty(SMALL_INPUT))


def test_mc_accuracy_is_seeded():
    model = small_model(1)
    data = small_dataset(30, 1)
    value = mc_accuracy(model, data, r=3, seed=2)
    assert 0.0 <= value <= 1.0
    assert value == mc_accuracy(model, data, r=3, seed=2)


def test_block_divergence_values():
    a = np.arange(1.0, 10.0).reshape(3, 3)
    assert block_divergence(a, a) == 0.0
    assert block_divergence(2 * a, a) == pytest.approx(0.5)
    b = a[::-1]
    oracle = math.sqrt(((a - b) ** 2).sum()) / math.sqrt((a ** 2).sum())
    assert block_divergence(a, b) == pytest.approx(oracle)
    assert block_divergence(7 * a, 7 * b) == pytest.approx(oracle)
    assert block_divergence(np.zeros(4), np.ones(4)) is None


def test_layer_divergence_reports_undefined_blocks():
    model = small_model(0)
    zeroed = model.with_params([np.zeros_like(p) if name.endswith(".bias") else p
                                for name, p in zip(model.block_names, model.params)])
    report = layer_divergence(zeroed, model)
    values = report.as_dict()
    assert values["conv1.bias"] is None
    assert values["conv1.weight"] == 0.0


def test_layer_divergence_rejects_incongruent_models():
    other = small_model(0)
    other = other.with_params(other.params[:-1])
    with pytest.raises(ShapeError):
        layer_divergence(small_model(0), other)


def test_heatmap_of_zero_images_has_identical_nonnegative_rows():
    samples = Dataset(np.zeros((5, *SMALL_INPUT), dtype=np.float32), np.full(5, 4))
    heatmap = activation_heatmap(small_model(2), samples, 4)
    assert heatmap.shape == (5, 8)
    assert (heatmap >= 0).all()
    np.testing.assert_array_equal(heatmap, np.repeat(heatmap[:1], 5, axis=0))


def test_heatmap_validates_samples():
    with pytest.raises(SamplingError):
        activation_heatmap(small_model(0), small_dataset(0, 0), 1)
    with pytest.raises(SamplingError):
        activation_heatmap(small_model(0), Dataset(np.zeros((2, *SMALL_INPUT)), np.array([1, 2])), 1)


def test_affinity_and_cosine():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 2], [2, 4]) == pytest.approx(1.0)
    assert cosine_similarity([0, 0], [1, 1]) == 0.0
    samples = Dataset(small_dataset(6, 3).images, np.full(6, 2))
    model = small_model(3)
    assert activation_affinity(model, model, samples, 2) == pytest.approx(1.0)
