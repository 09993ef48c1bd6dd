"""Ядра слоёв на numpy: прямой и обратный проходы.

Тензоры изображений хранятся в порядке N×H×W×C, ядра свёрток - k×k×C_in×C_out.
Все функции сохраняют dtype входа.
"""
from typing import Optional, Tuple

import numpy as np

from utils.errors import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LOG_CLAMP = 1e-12


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Свёртка с шагом 1 без паддинга: сумма k*k матричных умножений сдвинутых окон"""
    n, h, w, c = x.shape
    k = weight.shape[0]
    out_channels = weight.shape[3]
    ho, wo = h - k + 1, w - k + 1
    out = np.empty((n * ho * wo, out_channels), dtype=np.result_type(x, weight))
    out[:] = bias
    for i in range(k):
        for j in range(k):
            patch = x[:, i:i + ho, j:j + wo, :].reshape(-1, c)
            out += patch @ weight[i, j]
    return out.reshape(n, ho, wo, out_channels)


def conv2d_backward(x: np.ndarray, weight: np.ndarray, dout: np.ndarray,
                    need_input_grad: bool = True) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    n, h, w, c = x.shape
    k = weight.shape[0]
    out_channels = weight.shape[3]
    ho, wo = h - k + 1, w - k + 1
    dout2 = dout.reshape(-1, out_channels)

    dweight = np.empty_like(weight)
    for i in range(k):
        for j in range(k):
            patch = x[:, i:i + ho, j:j + wo, :].reshape(-1, c)
            dweight[i, j] = patch.T @ dout2
    dbias = dout2.sum(axis=0)

    dx = None
    if need_input_grad:
        dx = np.zeros_like(x)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + ho, j:j + wo, :] += (dout2 @ weight[i, j].T).reshape(n, ho, wo, c)
    return dx, dweight, dbias


def _pool_patches(x: np.ndarray, size: int) -> np.ndarray:
    n, h, w, c = x.shape
    ho, wo = h // size, w // size
    cropped = x[:, :ho * size, :wo * size, :]
    return cropped.reshape(n, ho, size, wo, size, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, size * size)


def maxpool_forward(x: np.ndarray, size: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """Max-пулинг с шагом size; при равенстве выбирается первый максимум окна"""
    patches = _pool_patches(x, size)
    arg = patches.argmax(axis=-1)
    out = np.take_along_axis(patches, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout: np.ndarray, arg: np.ndarray, in_shape: Tuple[int, ...], size: int = 2) -> np.ndarray:
    n, h, w, c = in_shape
    ho, wo = dout.shape[1], dout.shape[2]
    dpatches = np.zeros((n, ho, wo, c, size * size), dtype=dout.dtype)
    np.put_along_axis(dpatches, arg[..., None], dout[..., None], axis=-1)
    dcrop = dpatches.reshape(n, ho, wo, c, size, size).transpose(0, 1, 4, 2, 5, 3).reshape(n, ho * size, wo * size, c)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, :ho * size, :wo * size, :] = dcrop
    return dx


def dropout_mask(rng: np.random.Generator, shape: Tuple[int, ...], rate: float, dtype) -> np.ndarray:
    """Маска inverted dropout: сохранённые значения масштабируются на 1/(1-rate)"""
    if rate >= 1.0:
        return np.zeros(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1) @ weight + bias


def dense_backward(x: np.ndarray, weight: np.ndarray, dout: np.ndarray,
                   need_input_grad: bool = True) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    flat = x.reshape(x.shape[0], -1)
    dweight = flat.T @ dout
    dbias = dout.sum(axis=0)
    dx = (dout @ weight.T).reshape(x.shape) if need_input_grad else None
    return dx, dweight, dbias


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray, train: bool):
    """Нормализация по всем осям, кроме канальной (последней).

    В режиме обучения используются статистики батча, в режиме оценки -
    скользящие средние. Возвращает (y, cache), cache = (xhat, inv_std, mean, var).
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batchnorm в режиме обучения требует батч не меньше 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(BN_EPS))
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    return y.astype(x.dtype, copy=False), (xhat, inv_std, mean, var)


def batchnorm_backward(dout: np.ndarray, gamma: np.ndarray, cache, train: bool):
    xhat, inv_std, _, _ = cache
    axes = tuple(range(dout.ndim - 1))
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, LOG_CLAMP))
