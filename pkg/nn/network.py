"""Прямой и обратный проходы по модели, SGD с weight decay"""
from dataclasses import dataclass, field
from typing import Any, List, Optional, Sequence

import numpy as np

from nn import ops
from nn.layers import (
    BATCHNORM,
    CONV2D,
    DENSE,
    DROPOUT,
    MAXPOOL,
    OUTPUT,
    RELU,
    decayed_blocks,
    penultimate_index,
)
from nn.model import GradientSet, Model
from utils.errors import LabelError, ShapeError


@dataclass(frozen=True)
class Mode:
    """Режим прохода.

    train=False - оценка, dropout тождественен, batchnorm на скользящих средних.
    train=True - маски dropout являются чистой функцией mask_seed; если заданы
    item_keys, маска каждого примера зависит только от (mask_seed, ключ примера),
    и результат не зависит от разбиения входа на части.
    """
    train: bool = False
    mask_seed: int = 0
    item_keys: Optional[tuple] = None
    frozen_norm: bool = False

    @classmethod
    def eval(cls) -> "Mode":
        return cls(train=False)

    @classmethod
    def training(cls, mask_seed: int, item_keys: Optional[Sequence[int]] = None) -> "Mode":
        keys = None if item_keys is None else tuple(int(k) for k in item_keys)
        return cls(train=True, mask_seed=int(mask_seed), item_keys=keys)

    @classmethod
    def monte_carlo(cls, mask_seed: int, item_keys: Optional[Sequence[int]] = None) -> "Mode":
        """Стохастический dropout при batchnorm на скользящих средних"""
        keys = None if item_keys is None else tuple(int(k) for k in item_keys)
        return cls(train=True, mask_seed=int(mask_seed), item_keys=keys, frozen_norm=True)


EVAL = Mode.eval()


@dataclass(eq=False)
class ForwardTrace:
    mode: Mode
    activations: List[np.ndarray]
    caches: List[Any]
    logits: np.ndarray
    probs: np.ndarray
    penultimate: Optional[np.ndarray]
    batch_stats: List[tuple] = field(default_factory=list)


def _layer_mask(mode: Mode, layer_index: int, item_shape, n: int, rate: float, dtype) -> Optional[np.ndarray]:
    if rate == 0.0:
        return None
    if mode.item_keys is None:
        rng = np.random.default_rng([mode.mask_seed & 0xFFFFFFFF, layer_index])
        return ops.dropout_mask(rng, (n, *item_shape), rate, dtype)
    if len(mode.item_keys) != n:
        raise ShapeError("число ключей примеров не совпадает с размером батча")
    masks = np.empty((n, *item_shape), dtype=dtype)
    for row, key in enumerate(mode.item_keys):
        rng = np.random.default_rng([mode.mask_seed & 0xFFFFFFFF, key & 0xFFFFFFFF, layer_index])
        masks[row] = ops.dropout_mask(rng, item_shape, rate, dtype)
    return masks


def forward(model: Model, batch: np.ndarray, mode: Mode = EVAL) -> ForwardTrace:
    """Прямой проход; batch формы N×H×W×C со значениями в [0, 1]"""
    batch = np.asarray(batch)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(model.input_shape):
        raise ShapeError(f"ожидался батч N×{'×'.join(map(str, model.input_shape))}, получено {batch.shape}")
    dtype = model.dtype
    x = batch.astype(dtype, copy=False)
    n = x.shape[0]
    norm_train = mode.train and not mode.frozen_norm

    activations = [x]
    caches: List[Any] = []
    batch_stats = []
    penultimate_at = penultimate_index(model.specs)
    penultimate = None

    for plan in model.plans:
        spec = plan.spec
        cache = None
        if spec.kind == CONV2D:
            weight, bias = model.params[plan.param_offset:plan.param_offset + 2]
            x = ops.conv2d_forward(x, weight, bias)
        elif spec.kind == RELU:
            x = np.maximum(x, dtype.type(0))
        elif spec.kind == MAXPOOL:
            x, cache = ops.maxpool_forward(x, spec.kernel_size)
        elif spec.kind == DROPOUT:
            if mode.train:
                cache = _layer_mask(mode, plan.index, plan.in_shape, n, spec.dropout_rate, dtype)
                if cache is not None:
                    x = x * cache
        elif spec.kind in (DENSE, OUTPUT):
            weight, bias = model.params[plan.param_offset:plan.param_offset + 2]
            x = ops.dense_forward(x, weight, bias)
        elif spec.kind == BATCHNORM:
            gamma, beta = model.params[plan.param_offset:plan.param_offset + 2]
            running_mean, running_var = model.buffers[plan.buffer_offset:plan.buffer_offset + 2]
            x, cache = ops.batchnorm_forward(x, gamma, beta, running_mean, running_var, norm_train)
            if norm_train:
                batch_stats.append((cache[2], cache[3]))
        caches.append(cache)
        activations.append(x)
        if plan.index == penultimate_at:
            penultimate = x.reshape(n, -1)

    logits = x
    probs = ops.softmax(logits)
    return ForwardTrace(
        mode=mode,
        activations=activations,
        caches=caches,
        logits=logits,
        probs=probs,
        penultimate=penultimate,
        batch_stats=batch_stats,
    )


def _check_labels(labels: np.ndarray, n: int, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"ожидалось {n} меток, получено {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise LabelError(f"метка вне диапазона [0, {classes - 1}]")
    return labels.astype(np.int64, copy=False)


def cross_entropy(probs: np.ndarray, labels: Sequence[int]) -> float:
    """Средняя кросс-энтропия -log p[label] с ограничением p >= 1e-12"""
    probs = np.asarray(probs)
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(np.mean(-ops.safe_log(picked.astype(np.float64))))


def backward(model: Model, trace: ForwardTrace, labels: Sequence[int]) -> GradientSet:
    """Градиенты средней кросс-энтропии по всем блокам параметров.

    Маски dropout берутся из trace, поэтому backward согласован с тем
    прямым проходом, который его породил.
    """
    n = trace.probs.shape[0]
    labels = _check_labels(labels, n, trace.probs.shape[1])
    grad = trace.probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= grad.dtype.type(n)

    grads: List[Optional[np.ndarray]] = [None] * len(model.params)
    for plan in reversed(model.plans):
        spec = plan.spec
        idx = plan.index
        x_in = trace.activations[idx]
        cache = trace.caches[idx]
        need_input_grad = idx > 0
        if spec.kind in (DENSE, OUTPUT):
            weight = model.params[plan.param_offset]
            grad, dweight, dbias = ops.dense_backward(x_in, weight, grad, need_input_grad)
            grads[plan.param_offset] = dweight
            grads[plan.param_offset + 1] = dbias
        elif spec.kind == CONV2D:
            weight = model.params[plan.param_offset]
            grad, dweight, dbias = ops.conv2d_backward(x_in, weight, grad, need_input_grad)
            grads[plan.param_offset] = dweight
            grads[plan.param_offset + 1] = dbias
        elif spec.kind == RELU:
            grad = grad * (trace.activations[idx + 1] > 0)
        elif spec.kind == MAXPOOL:
            grad = ops.maxpool_backward(grad, cache, x_in.shape, spec.kernel_size)
        elif spec.kind == DROPOUT:
            if cache is not None:
                grad = grad * cache
        elif spec.kind == BATCHNORM:
            gamma = model.params[plan.param_offset]
            grad, dgamma, dbeta = ops.batchnorm_backward(grad, gamma, cache, trace.mode.train and not trace.mode.frozen_norm)
            grads[plan.param_offset] = dgamma
            grads[plan.param_offset + 1] = dbeta
        if grad is None:
            break

    return GradientSet(tuple(g.astype(p.dtype, copy=False) for g, p in zip(grads, model.params)))


def sgd_step(model: Model, grads: GradientSet, lr: float, weight_decay: float = 0.0) -> Model:
    """w <- w - lr * (g + lambda * w); weight decay только для весов, не для смещений"""
    if lr <= 0:
        raise ValueError("lr должен быть положительным")
    if weight_decay < 0:
        raise ValueError("weight_decay не может быть отрицательным")
    if not grads.congruent(model):
        raise ShapeError("градиенты не соответствуют формам модели")
    if grads.descent:
        grads = GradientSet(tuple(-g for g in grads.grads))

    decay = decayed_blocks(model.specs, model.input_shape)
    new_params = []
    for p, g, decayed in zip(model.params, grads.grads, decay):
        t = p.dtype.type
        step = g + t(weight_decay) * p if decayed and weight_decay else g
        new_params.append((p - t(lr) * step).astype(p.dtype, copy=False))
    return model.with_params(new_params)


def update_running_stats(model: Model, trace: ForwardTrace, momentum: float = ops.BN_MOMENTUM) -> Model:
    """Обновление скользящих статистик batchnorm по статистикам батча из trace"""
    if not model.buffers or not trace.batch_stats:
        return model
    buffers = list(model.buffers)
    stats = iter(trace.batch_stats)
    for plan in model.plans:
        if plan.spec.kind != BATCHNORM:
            continue
        mean, var = next(stats)
        offset = plan.buffer_offset
        t = buffers[offset].dtype.type
        buffers[offset] = (t(momentum) * buffers[offset] + t(1 - momentum) * mean).astype(buffers[offset].dtype)
        buffers[offset + 1] = (t(momentum) * buffers[offset + 1] + t(1 - momentum) * var).astype(buffers[offset].dtype)
    return model.with_params(model.params, buffers)


def predict(model: Model, images: np.ndarray, chunk: int = 500) -> np.ndarray:
    """Вероятности классов в режиме оценки для большого набора, по частям"""
    parts = [forward(model, images[start:start + chunk]).probs
             for start in range(0, len(images), chunk)]
    if not parts:
        return np.zeros((0, model.specs[-1].units), dtype=model.dtype)
    return np.concatenate(parts)
