"""Модель как упорядоченный набор блоков параметров"""
from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np

from nn.layers import (
    BATCHNORM,
    INPUT_SHAPE,
    LayerSpec,
    block_names,
    plan_layers,
)
from utils.errors import ShapeError

DTYPE = np.float32


@dataclass(frozen=True, eq=False)
class Model:
    specs: Tuple[LayerSpec, ...]
    params: Tuple[np.ndarray, ...]
    buffers: Tuple[np.ndarray, ...] = ()
    input_shape: Tuple[int, ...] = INPUT_SHAPE

    @property
    def plans(self):
        return plan_layers(self.specs, self.input_shape)

    @property
    def block_names(self):
        return block_names(self.specs, self.input_shape)

    @property
    def dtype(self):
        return self.params[0].dtype if self.params else DTYPE

    def with_params(self, params: Sequence[np.ndarray], buffers: Sequence[np.ndarray] = None) -> "Model":
        return replace(
            self,
            params=tuple(params),
            buffers=self.buffers if buffers is None else tuple(buffers),
        )

    def astype(self, dtype) -> "Model":
        """Копия модели в другом типе (float64 используется для проверки градиентов)"""
        return replace(
            self,
            params=tuple(p.astype(dtype) for p in self.params),
            buffers=tuple(b.astype(dtype) for b in self.buffers),
        )

    def copy(self) -> "Model":
        return replace(
            self,
            params=tuple(p.copy() for p in self.params),
            buffers=tuple(b.copy() for b in self.buffers),
        )

    def congruent(self, other: "Model") -> bool:
        if len(self.params) != len(other.params) or len(self.buffers) != len(other.buffers):
            return False
        return all(a.shape == b.shape for a, b in zip(self.params + self.buffers, other.params + other.buffers))

    def equals(self, other: "Model") -> bool:
        """Побитовое совпадение параметров и буферов"""
        return self.congruent(other) and all(
            np.array_equal(a, b) for a, b in zip(self.params + self.buffers, other.params + other.buffers)
        )


@dataclass(frozen=True, eq=False)
class GradientSet:
    """Градиенты по блокам параметров.

    По умолчанию хранит градиенты функции потерь; as_descent() возвращает
    направления спуска (с обратным знаком), которые складывает агрегация
    градиентов.
    """
    grads: Tuple[np.ndarray, ...]
    descent: bool = False

    def as_descent(self) -> "GradientSet":
        if self.descent:
            return self
        return GradientSet(tuple(-g for g in self.grads), descent=True)

    def congruent(self, model: Model) -> bool:
        return len(self.grads) == len(model.params) and all(
            g.shape == p.shape for g, p in zip(self.grads, model.params)
        )

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in self.grads)))


def expected_shapes(specs: Tuple[LayerSpec, ...], input_shape: Tuple[int, ...] = INPUT_SHAPE):
    params, buffers = [], []
    for plan in plan_layers(tuple(specs), tuple(input_shape)):
        params += list(plan.param_shapes)
        if plan.spec.kind == BATCHNORM:
            buffers += [plan.out_shape[-1:], plan.out_shape[-1:]]
    return params, buffers


def init_model(specs: Sequence[LayerSpec], seed: int, input_shape: Tuple[int, ...] = INPUT_SHAPE,
               dtype=DTYPE) -> Model:
    """Инициализация: веса ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], смещения нулевые.

    Для batchnorm: gamma=1, beta=0, скользящие среднее 0 и дисперсия 1.
    """
    specs = tuple(specs)
    plans = plan_layers(specs, tuple(input_shape))
    rng = np.random.default_rng(seed)
    params = []
    buffers = []
    for plan in plans:
        if not plan.param_shapes:
            continue
        weight_shape, bias_shape = plan.param_shapes
        if plan.spec.kind == BATCHNORM:
            params.append(np.ones(weight_shape, dtype=dtype))
            params.append(np.zeros(bias_shape, dtype=dtype))
            buffers.append(np.zeros(weight_shape, dtype=dtype))
            buffers.append(np.ones(weight_shape, dtype=dtype))
            continue
        fan_in = int(np.prod(weight_shape[:-1]))
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=weight_shape).astype(dtype))
        params.append(np.zeros(bias_shape, dtype=dtype))
    return Model(specs=specs, params=tuple(params), buffers=tuple(buffers), input_shape=tuple(input_shape))


def check_model(model: Model):
    """Проверка, что формы блоков соответствуют архитектуре"""
    params, buffers = expected_shapes(model.specs, model.input_shape)
    if [p.shape for p in model.params] != [tuple(s) for s in params]:
        raise ShapeError("формы параметров не соответствуют архитектуре")
    if [b.shape for b in model.buffers] != [tuple(s) for s in buffers]:
        raise ShapeError("формы буферов не соответствуют архитектуре")
