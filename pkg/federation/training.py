"""Локальное обучение устройства и начальное обучение сервера"""
import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from data.dataset import Dataset
from nn.layers import LayerSpec, decayed_blocks, fashion_specs
from nn.model import GradientSet, Model, init_model
from nn.network import ForwardTrace, Mode, backward, cross_entropy, forward, sgd_step, update_running_stats
from utils.errors import SamplingError
from utils.seeds import STREAM_INIT, STREAM_INITIAL_TRAIN, derive_seed, make_rng

logger = logging.getLogger(__name__)


def model_specs(config) -> Tuple[LayerSpec, ...]:
    return fashion_specs(batchnorm=config.batchnorm)


def local_train(model: Model, chunk: Dataset, epochs: int, config, seed: int) -> Model:
    """E полных проходов по chunk мини-батчами batch_size.

    Порядок примеров перемешивается в каждой эпохе генератором (seed, эпоха),
    маска dropout шага выводится из (seed, эпоха, шаг). Батчи получаются
    делением перемешанного порядка на ceil(n / batch_size) почти равных частей.
    """
    if len(chunk) == 0:
        raise SamplingError("локальное обучение на пустом наборе")
    if epochs < 0:
        raise ValueError("число эпох не может быть отрицательным")
    if epochs == 0:
        return model

    n = len(chunk)
    sections = math.ceil(n / config.batch_size)
    for epoch in range(epochs):
        order = make_rng(seed, epoch).permutation(n)
        losses = []
        for step, batch_indices in enumerate(np.array_split(order, sections)):
            batch = chunk.subset(batch_indices)
            mode = Mode.training(derive_seed(seed, epoch, step))
            trace = forward(model, batch.images, mode)
            grads = backward(model, trace, batch.labels)
            model = sgd_step(model, grads, config.lr, config.weight_decay)
            model = update_running_stats(model, trace)
            if logger.isEnabledFor(logging.DEBUG):
                losses.append(cross_entropy(trace.probs, batch.labels))
        if losses:
            logger.debug(f"Эпоха {epoch + 1}/{epochs}: средняя потеря {np.mean(losses):.4f} на {n} примерах")
    return model


def train_initial(server_data: Dataset, config, model: Optional[Model] = None) -> Model:
    """W^0: инициализация из сида и E эпох на m примерах сервера"""
    if model is None:
        model = init_model(model_specs(config), derive_seed(config.seed, STREAM_INIT))
    epochs = config.effective_initial_epochs
    if len(server_data) == 0:
        logger.warning("Начальный набор пуст, W0 остаётся инициализированной моделью")
        return model
    model = local_train(model, server_data, epochs, config, derive_seed(config.seed, STREAM_INITIAL_TRAIN))
    logger.info(f"Начальная модель обучена: {len(server_data)} примеров, {epochs} эпох")
    return model


def descent_direction(model: Model, batch: Dataset, weight_decay: float, seed: int) -> Tuple[GradientSet, ForwardTrace]:
    """Направление спуска -(g + lambda * w) на одном батче в режиме обучения.

    Шаг sgd_step с тем же сидом маски даёт ровно W + lr * направление.
    """
    if len(batch) == 0:
        raise SamplingError("градиент на пустом наборе")
    trace = forward(model, batch.images, Mode.training(seed))
    grads = backward(model, trace, batch.labels)
    decay = decayed_blocks(model.specs, model.input_shape)
    directions = []
    for g, p, decayed in zip(grads.grads, model.params, decay):
        t = p.dtype.type
        full = g + t(weight_decay) * p if decayed and weight_decay else g
        directions.append(-full)
    return GradientSet(tuple(directions), descent=True), trace


def device_gradient(model: Model, chunks: Sequence[Dataset], config, seed: int) -> Tuple[GradientSet, Tuple[np.ndarray, ...]]:
    """Градиент устройства для агрегации градиентов: один батч из всех данных раунда.

    Возвращает направление спуска в точке широковещательной модели и
    скользящие статистики после этого батча.
    """
    data = Dataset.empty()
    for chunk in chunks:
        data = data.concat(chunk)
    if len(data) == 0:
        zero = GradientSet(tuple(np.zeros_like(p) for p in model.params), descent=True)
        return zero, model.buffers
    direction, trace = descent_direction(model, data, config.weight_decay, seed)
    return direction, update_running_stats(model, trace).buffers
