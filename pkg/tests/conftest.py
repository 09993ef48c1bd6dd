import numpy as np
import pytest

from data.dataset import Dataset
from federation.experiment import ExperimentConfig
from utils.verification import small_dataset, small_model


def synthetic_fashion(per_class: int, seed: int, offset: int = 0) -> Dataset:
    """28×28 изображения, в которых класс c закодирован яркой полосой в строках 2c+4 и 2c+5"""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(10), per_class)
    rng.shuffle(labels)
    images = rng.random((len(labels), 28, 28, 1)).astype(np.float32) * 0.2
    for row, label in enumerate(labels):
        images[row, 2 * label + 4:2 * label + 6, :, 0] += 0.8
    return Dataset(images, labels.astype(np.int64), np.arange(len(labels), dtype=np.int64) + offset)


@pytest.fixture
def tiny_model():
    return small_model(0)


@pytest.fixture
def tiny_data():
    return small_dataset(40, 0)


@pytest.fixture(scope="session")
def fashion_like():
    """(train, test): по 60 и 20 примеров каждого класса"""
    return synthetic_fashion(60, 1), synthetic_fashion(20, 2, offset=100000)


@pytest.fixture
def reduced_config():
    return ExperimentConfig(
        epochs=1,
        frequency=2,
        acquisitions=2,
        acquisition_size=20,
        batch_size=10,
        initial_size=20,
        initial_epochs=1,
        validation_size=50,
        pool_size=60,
        replay_per_class=1,
        mc_passes=2,
        eval_batch=100,
        name="reduced",
    )
