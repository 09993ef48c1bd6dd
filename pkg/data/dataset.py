"""Наборы данных: Dataset, Shard, Pool, ReplayBuffer"""
from dataclasses import dataclass, replace
from typing import FrozenSet, Optional

import numpy as np

from utils.errors import ShapeError

NUM_CLASSES = 10


@dataclass(frozen=True, eq=False)
class Dataset:
    """Изображения N×28×28×1 в [0, 1], метки 0-9 и идентификаторы примеров.

    item_ids - индексы примеров в исходном файле, по ним проверяется
    непересечение шардов и пулов.
    """
    images: np.ndarray
    labels: np.ndarray
    item_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ShapeError(f"изображений {len(self.images)}, меток {len(self.labels)}")
        if self.item_ids is None:
            object.__setattr__(self, "item_ids", np.arange(len(self.labels), dtype=np.int64))
        elif len(self.item_ids) != len(self.labels):
            raise ShapeError("число идентификаторов не совпадает с числом примеров")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise ShapeError(f"метки вне диапазона [0, {NUM_CLASSES - 1}]")

    def __len__(self):
        return len(self.labels)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.item_ids[indices])

    def concat(self, other: "Dataset") -> "Dataset":
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return Dataset(
            np.concatenate([self.images, other.images]),
            np.concatenate([self.labels, other.labels]),
            np.concatenate([self.item_ids, other.item_ids]),
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def of_class(self, label: int) -> "Dataset":
        return self.subset(np.flatnonzero(self.labels == label))

    @classmethod
    def empty(cls, image_shape=(28, 28, 1)) -> "Dataset":
        return cls(
            np.zeros((0, *image_shape), dtype=np.float32),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )


@dataclass(frozen=True, eq=False)
class Shard:
    device_id: int
    allowed_classes: FrozenSet[int]
    data: Dataset

    def __len__(self):
        return len(self.data)


@dataclass(frozen=True, eq=False)
class Pool:
    """Пул кандидатов для активного обучения.

    acquired_mask принадлежит одному устройству; каждая выборка возвращает
    новый Pool с обновлённой маской.
    """
    device_id: int
    data: Dataset
    acquired_mask: np.ndarray

    def __len__(self):
        return len(self.data)

    @property
    def available(self) -> np.ndarray:
        """Индексы ещё не выбранных примеров пула по возрастанию"""
        return np.flatnonzero(~self.acquired_mask)

    def mark_acquired(self, indices) -> "Pool":
        mask = self.acquired_mask.copy()
        mask[np.asarray(indices, dtype=np.int64)] = True
        return replace(self, acquired_mask=mask)


@dataclass(frozen=True, eq=False)
class ReplayBuffer:
    """Фиксированный сбалансированный набор, общий для всех устройств"""
    data: Dataset

    def __len__(self):
        return len(self.data)
