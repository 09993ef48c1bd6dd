"""Разбиение и выборки: шарды Type I, пулы Type II, буфер повторения"""
import logging
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence, Tuple, Union

import numpy as np

from data.dataset import NUM_CLASSES, Dataset, Pool, ReplayBuffer, Shard
from utils.errors import PartitionError, SamplingError

logger = logging.getLogger(__name__)

DEFAULT_ASSIGNMENT: Tuple[Tuple[int, ...], ...] = ((0, 1), (2, 3), (4, 5, 6), (7, 8, 9))

Assignment = Union[Mapping[int, Iterable[int]], Sequence[Iterable[int]]]


def normalize_assignment(assignment: Assignment) -> Dict[int, FrozenSet[int]]:
    """Приведение к виду {устройство: классы} с проверкой, что это разбиение {0..9}.

    Последовательность групп нумеруется с 1 (D1, D2, ...).
    """
    if isinstance(assignment, Mapping):
        groups = {int(device): frozenset(int(c) for c in classes) for device, classes in assignment.items()}
    else:
        groups = {device: frozenset(int(c) for c in classes) for device, classes in enumerate(assignment, start=1)}

    seen: set = set()
    for device, classes in groups.items():
        if not classes:
            raise PartitionError(f"устройству D{device} не назначено ни одного класса")
        outside = [c for c in classes if not 0 <= c < NUM_CLASSES]
        if outside:
            raise PartitionError(f"D{device}: классы вне диапазона {sorted(outside)}")
        overlap = seen & classes
        if overlap:
            raise PartitionError(f"классы {sorted(overlap)} назначены нескольким устройствам")
        seen |= classes
    missing = set(range(NUM_CLASSES)) - seen
    if missing:
        raise PartitionError(f"классы {sorted(missing)} не назначены ни одному устройству")
    return dict(sorted(groups.items()))


def partition_type1(train: Dataset, assignment: Assignment = DEFAULT_ASSIGNMENT) -> List[Shard]:
    """Каждый шард получает все примеры своих классов и ничего больше"""
    groups = normalize_assignment(assignment)
    shards = []
    for device, classes in groups.items():
        indices = np.flatnonzero(np.isin(train.labels, sorted(classes)))
        shards.append(Shard(device_id=device, allowed_classes=classes, data=train.subset(indices)))
        logger.debug(f"D{device}: классы {sorted(classes)}, {len(indices)} примеров")
    return shards


def split_validation(train: Dataset, size: int, seed: int) -> Tuple[Dataset, Dataset]:
    """Отделение валидационной части; порядок оставшихся примеров сохраняется"""
    if not 0 <= size <= len(train):
        raise SamplingError(f"размер валидации {size} вне [0, {len(train)}]")
    perm = np.random.default_rng(seed).permutation(len(train))
    validation = np.sort(perm[:size])
    rest = np.sort(perm[size:])
    return train.subset(rest), train.subset(validation)


def quarter_split(train: Dataset, parts: int, seed: int) -> List[Dataset]:
    """Почти IID части: перемешивание и раздача по кругу"""
    if parts <= 0:
        raise PartitionError("число частей должно быть положительным")
    perm = np.random.default_rng(seed).permutation(len(train))
    return [train.subset(perm[p::parts]) for p in range(parts)]


def _source(source: Union[Shard, Dataset]) -> Dataset:
    return source.data if isinstance(source, Shard) else source


def random_sample(source: Union[Shard, Dataset], n: int = 400, seed: int = 0) -> Dataset:
    """n примеров равномерно без возвращения"""
    data = _source(source)
    if n < 0 or n > len(data):
        raise SamplingError(f"запрошено {n} примеров, доступно {len(data)}")
    perm = np.random.default_rng(seed).permutation(len(data))
    return data.subset(perm[:n])


def build_pool(source: Union[Shard, Dataset], pool_size: int = 4000, seed: int = 0, device_id: int = 0) -> Pool:
    data = _source(source)
    if pool_size < 0 or pool_size > len(data):
        raise SamplingError(f"размер пула {pool_size} больше источника ({len(data)})")
    sample = random_sample(data, pool_size, seed)
    return Pool(device_id=device_id, data=sample, acquired_mask=np.zeros(pool_size, dtype=bool))


def build_replay(train: Dataset, per_class: int = 5, seed: int = 0) -> ReplayBuffer:
    """Сбалансированный буфер: ровно per_class примеров каждого класса"""
    if per_class < 0:
        raise SamplingError("per_class не может быть отрицательным")
    rng = np.random.default_rng(seed)
    chosen = []
    for label in range(NUM_CLASSES):
        indices = np.flatnonzero(train.labels == label)
        if len(indices) < per_class:
            raise SamplingError(f"класс {label}: нужно {per_class} примеров, есть {len(indices)}")
        chosen.append(rng.choice(indices, size=per_class, replace=False))
    return ReplayBuffer(train.subset(np.concatenate(chosen).astype(np.int64)))
