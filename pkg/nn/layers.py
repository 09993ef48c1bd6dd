"""Описание слоёв сети и распространение форм"""
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

from utils.errors import ShapeError

CONV2D = "conv2d"
RELU = "relu"
MAXPOOL = "maxpool"
DROPOUT = "dropout"
DENSE = "dense"
BATCHNORM = "batchnorm"
OUTPUT = "softmax-output"

KINDS = frozenset({CONV2D, RELU, MAXPOOL, DROPOUT, DENSE, BATCHNORM, OUTPUT})
PARAMETERIZED = frozenset({CONV2D, DENSE, BATCHNORM, OUTPUT})

INPUT_SHAPE = (28, 28, 1)
NUM_CLASSES = 10


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    kernel_size: int = 0
    dropout_rate: float = 0.0


@dataclass(frozen=True)
class LayerPlan:
    """Слой с выведенными формами входа/выхода и номерами блоков параметров"""
    index: int
    spec: LayerSpec
    in_shape: Tuple[int, ...]
    out_shape: Tuple[int, ...]
    param_shapes: Tuple[Tuple[int, ...], ...]
    param_offset: int
    buffer_offset: int
    name: str


def conv(units: int, kernel: int) -> LayerSpec:
    return LayerSpec(CONV2D, units=units, kernel_size=kernel)


def dense(units: int) -> LayerSpec:
    return LayerSpec(DENSE, units=units)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec(DROPOUT, dropout_rate=rate)


RELU_SPEC = LayerSpec(RELU)
POOL_SPEC = LayerSpec(MAXPOOL, kernel_size=2)
BATCHNORM_SPEC = LayerSpec(BATCHNORM)


def fashion_specs(batchnorm: bool = False) -> Tuple[LayerSpec, ...]:
    """Архитектура из 16 слоёв; при batchnorm=True нормализация вставляется
    после каждой свёртки и скрытого полносвязного слоя, перед ReLU"""
    bn = (BATCHNORM_SPEC,) if batchnorm else ()
    return (
        conv(64, 4), *bn, RELU_SPEC,
        conv(16, 5), *bn, RELU_SPEC,
        POOL_SPEC,
        dropout(0.25),
        conv(32, 4), *bn, RELU_SPEC,
        conv(16, 4), *bn, RELU_SPEC,
        POOL_SPEC,
        dropout(0.25),
        dense(128), *bn, RELU_SPEC,
        dropout(0.5),
        LayerSpec(OUTPUT, units=NUM_CLASSES),
    )


def with_dropout_rate(specs: Sequence[LayerSpec], rate: float) -> Tuple[LayerSpec, ...]:
    return tuple(LayerSpec(DROPOUT, dropout_rate=rate) if s.kind == DROPOUT else s for s in specs)


def _validate_spec(index: int, spec: LayerSpec):
    if spec.kind not in KINDS:
        raise ShapeError(f"слой {index}: неизвестный тип {spec.kind!r}")
    if spec.kind in (CONV2D, DENSE, OUTPUT) and spec.units <= 0:
        raise ShapeError(f"слой {index}: число каналов/узлов должно быть положительным")
    if spec.kind in (CONV2D, MAXPOOL) and spec.kernel_size <= 0:
        raise ShapeError(f"слой {index}: размер ядра должен быть положительным")
    if spec.kind == DROPOUT and not 0.0 <= spec.dropout_rate <= 1.0:
        raise ShapeError(f"слой {index}: вероятность dropout вне [0, 1]")


@lru_cache(maxsize=64)
def plan_layers(specs: Tuple[LayerSpec, ...], input_shape: Tuple[int, ...] = INPUT_SHAPE) -> Tuple[LayerPlan, ...]:
    """Распространение форм: свёртки с шагом 1 без паддинга, пулинг с шагом 2
    (нечётные размеры округляются вниз)"""
    if not specs:
        raise ShapeError("пустая архитектура")
    if specs[-1].kind != OUTPUT or any(s.kind == OUTPUT for s in specs[:-1]):
        raise ShapeError("выходной слой должен быть последним и единственным")

    plans: List[LayerPlan] = []
    shape = tuple(input_shape)
    param_offset = 0
    buffer_offset = 0
    counters = {CONV2D: 0, DENSE: 0, BATCHNORM: 0}

    for index, spec in enumerate(specs):
        _validate_spec(index, spec)
        params: Tuple[Tuple[int, ...], ...] = ()
        buffers = 0
        name = spec.kind

        if spec.kind == CONV2D:
            if len(shape) != 3:
                raise ShapeError(f"слой {index}: свёртка ожидает вход H×W×C, получено {shape}")
            h, w, c = shape
            k = spec.kernel_size
            out = (h - k + 1, w - k + 1, spec.units)
            params = ((k, k, c, spec.units), (spec.units,))
            counters[CONV2D] += 1
            name = f"conv{counters[CONV2D]}"
        elif spec.kind == MAXPOOL:
            if len(shape) != 3:
                raise ShapeError(f"слой {index}: пулинг ожидает вход H×W×C, получено {shape}")
            h, w, c = shape
            out = (h // spec.kernel_size, w // spec.kernel_size, c)
        elif spec.kind in (DENSE, OUTPUT):
            fan_in = 1
            for d in shape:
                fan_in *= d
            out = (spec.units,)
            params = ((fan_in, spec.units), (spec.units,))
            if spec.kind == DENSE:
                counters[DENSE] += 1
                name = f"dense{counters[DENSE]}"
            else:
                name = "output"
        elif spec.kind == BATCHNORM:
            channels = shape[-1]
            out = shape
            params = ((channels,), (channels,))
            buffers = 2
            counters[BATCHNORM] += 1
            name = f"bn{counters[BATCHNORM]}"
        else:
            out = shape

        if any(d <= 0 for d in out):
            raise ShapeError(f"слой {index} ({spec.kind}): неположительный размер {out} при входе {shape}")

        plans.append(LayerPlan(
            index=index,
            spec=spec,
            in_shape=shape,
            out_shape=out,
            param_shapes=params,
            param_offset=param_offset,
            buffer_offset=buffer_offset,
            name=name,
        ))
        param_offset += len(params)
        buffer_offset += buffers
        shape = out

    return tuple(plans)


def block_names(specs: Tuple[LayerSpec, ...], input_shape: Tuple[int, ...] = INPUT_SHAPE) -> List[str]:
    """Имена блоков параметров в порядке архитектуры: conv1.weight, conv1.bias, ..."""
    names = []
    for plan in plan_layers(specs, input_shape):
        if plan.spec.kind == BATCHNORM:
            names += [f"{plan.name}.gamma", f"{plan.name}.beta"]
        elif plan.param_shapes:
            names += [f"{plan.name}.weight", f"{plan.name}.bias"]
    return names


def decayed_blocks(specs: Tuple[LayerSpec, ...], input_shape: Tuple[int, ...] = INPUT_SHAPE) -> Tuple[bool, ...]:
    """Флаги блоков, к которым применяется weight decay (только веса свёрток и полносвязных слоёв)"""
    flags = []
    for plan in plan_layers(specs, input_shape):
        if plan.spec.kind in (CONV2D, DENSE, OUTPUT):
            flags += [True, False]
        elif plan.spec.kind == BATCHNORM:
            flags += [False, False]
    return tuple(flags)


def penultimate_index(specs: Tuple[LayerSpec, ...]) -> Optional[int]:
    """Индекс последнего ReLU перед выходным слоем"""
    for index in range(len(specs) - 1, -1, -1):
        if specs[index].kind == RELU:
            return index
    return None
