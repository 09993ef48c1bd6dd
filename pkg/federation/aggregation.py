"""Стратегии агрегации: AveFL, OptFL, MixFL и агрегация градиентов"""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from analytics.metrics import accuracy
from data.dataset import Dataset
from nn.model import GradientSet, Model
from utils.errors import AggregationError, ShapeError

logger = logging.getLogger(__name__)

WEIGHT_TOLERANCE = 1e-6

Scorer = Callable[[Model], float]
Selection = Union[Dataset, Scorer]


def as_scorer(selection: Selection) -> Scorer:
    """Набор данных превращается в оценку точностью в режиме оценки"""
    if isinstance(selection, Dataset):
        return lambda model: accuracy(model, selection)
    return selection


@dataclass(frozen=True)
class AggregationWeights:
    alphas: Tuple[float, ...]

    def __post_init__(self):
        if not self.alphas:
            raise AggregationError("список весов пуст")
        if any(a < 0 or not np.isfinite(a) for a in self.alphas):
            raise AggregationError(f"веса должны быть неотрицательными: {self.alphas}")
        total = float(np.sum(np.asarray(self.alphas, dtype=np.float64)))
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise AggregationError(f"сумма весов {total:.8f} отличается от 1")

    @classmethod
    def uniform(cls, n: int) -> "AggregationWeights":
        if n <= 0:
            raise AggregationError("нужна хотя бы одна модель")
        return cls(tuple(1.0 / n for _ in range(n)))

    def __len__(self):
        return len(self.alphas)


@dataclass(frozen=True, eq=False)
class AggregationOutcome:
    """Результат раунда агрегации; для MixFL - обе оценки и выбранная ветвь"""
    model: Model
    strategy: str
    chosen_index: Optional[int] = None
    ave_score: Optional[float] = None
    opt_score: Optional[float] = None


def _resolve_weights(n: int, weights: Optional[AggregationWeights]) -> AggregationWeights:
    weights = weights or AggregationWeights.uniform(n)
    if len(weights) != n:
        raise AggregationError(f"весов {len(weights)}, моделей {n}")
    return weights


def _check_congruent(models: Sequence[Model]):
    if not models:
        raise AggregationError("список моделей пуст")
    head = models[0]
    for index, model in enumerate(models[1:], start=2):
        if model.specs != head.specs or not head.congruent(model):
            raise ShapeError(f"модель {index} несовместима по формам с моделью 1")


def _weighted_sum(blocks: Sequence[np.ndarray], alphas: Sequence[float]) -> np.ndarray:
    total = np.zeros(blocks[0].shape, dtype=np.float64)
    for block, alpha in zip(blocks, alphas):
        if alpha:
            total += alpha * block.astype(np.float64)
    return total


def ave_fl(models: Sequence[Model], weights: Optional[AggregationWeights] = None) -> Model:
    """Поэлементная выпуклая комбинация блоков; скользящие статистики усредняются так же"""
    models = list(models)
    _check_congruent(models)
    weights = _resolve_weights(len(models), weights)
    head = models[0]
    params = [
        _weighted_sum([m.params[b] for m in models], weights.alphas).astype(head.params[b].dtype)
        for b in range(len(head.params))
    ]
    buffers = [
        _weighted_sum([m.buffers[b] for m in models], weights.alphas).astype(head.buffers[b].dtype)
        for b in range(len(head.buffers))
    ]
    return head.with_params(params, buffers)


def _argmax_lowest(scores: Sequence[float]) -> int:
    best = 0
    for index, score in enumerate(scores):
        if score > scores[best]:
            best = index
    return best


def opt_select(models: Sequence[Model], selection: Selection) -> Tuple[int, List[float]]:
    """Индекс модели с наибольшей оценкой; при равенстве - меньший индекс"""
    scorer = as_scorer(selection)
    models = list(models)
    if not models:
        raise AggregationError("список моделей пуст")
    scores = [float(scorer(m)) for m in models]
    return _argmax_lowest(scores), scores


def opt_fl(models: Sequence[Model], selection: Selection) -> Model:
    index, scores = opt_select(models, selection)
    logger.debug(f"OptFL: оценки {[round(s, 4) for s in scores]}, выбрано D{index + 1}")
    return list(models)[index]


def mix_outcome(models: Sequence[Model], selection: Selection,
                weights: Optional[AggregationWeights] = None) -> AggregationOutcome:
    """Лучший из кандидатов AveFL и OptFL; при равенстве побеждает AveFL"""
    scorer = as_scorer(selection)
    models = list(models)
    averaged = ave_fl(models, weights)
    index, scores = opt_select(models, scorer)
    ave_score = float(scorer(averaged))
    opt_score = scores[index]
    if ave_score >= opt_score:
        return AggregationOutcome(averaged, "ave", None, ave_score, opt_score)
    return AggregationOutcome(models[index], "opt", index, ave_score, opt_score)


def mix_fl(models: Sequence[Model], selection: Selection,
           weights: Optional[AggregationWeights] = None) -> Model:
    return mix_outcome(models, selection, weights).model


def aggregate(strategy: str, models: Sequence[Model], scorer: Optional[Selection] = None,
              weights: Optional[AggregationWeights] = None) -> AggregationOutcome:
    if strategy == "ave":
        return AggregationOutcome(ave_fl(models, weights), "ave")
    if scorer is None:
        raise AggregationError(f"стратегии {strategy} нужна функция оценки")
    if strategy == "opt":
        index, scores = opt_select(models, scorer)
        return AggregationOutcome(list(models)[index], "opt", index, None, scores[index])
    if strategy == "mix":
        return mix_outcome(models, scorer, weights)
    raise AggregationError(f"неизвестная стратегия {strategy}")


def aggregate_gradients(w0: Model, grads: Sequence[GradientSet], weights: Optional[AggregationWeights] = None,
                        beta: float = 0.01, buffers: Optional[Sequence[Sequence[np.ndarray]]] = None) -> Model:
    """W = W0 + beta * sum_i alpha_i * G_i, где G_i - направления спуска.

    Градиенты функции потерь переводятся в направления спуска автоматически.
    buffers - скользящие статистики устройств, они усредняются с теми же весами.
    """
    grads = [g.as_descent() for g in grads]
    if not grads:
        raise AggregationError("список градиентов пуст")
    if beta <= 0:
        raise AggregationError("beta должна быть положительной")
    weights = _resolve_weights(len(grads), weights)
    for index, g in enumerate(grads, start=1):
        if not g.congruent(w0):
            raise ShapeError(f"градиент устройства {index} несовместим с W0")

    params = []
    for b, p in enumerate(w0.params):
        step = _weighted_sum([g.grads[b] for g in grads], weights.alphas)
        params.append((p.astype(np.float64) + beta * step).astype(p.dtype))

    new_buffers = None
    if buffers and w0.buffers:
        new_buffers = [
            _weighted_sum([device[b] for device in buffers], weights.alphas).astype(w0.buffers[b].dtype)
            for b in range(len(w0.buffers))
        ]
    return w0.with_params(params, new_buffers)
