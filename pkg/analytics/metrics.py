"""Измерения: точность, гистограммы по классам, дивергенция весов, активации"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from bayes.acquisition import mc_predict
from data.dataset import NUM_CLASSES, Dataset
from nn.model import Model
from nn.network import forward, predict
from utils.errors import SamplingError, ShapeError

logger = logging.getLogger(__name__)

EVAL_CHUNK = 500


@dataclass(frozen=True)
class DivergenceReport:
    """Относительная дивергенция по блокам; None - блок устройства нулевой нормы"""
    names: Tuple[str, ...]
    values: Tuple[Optional[float], ...]

    def as_dict(self) -> Dict[str, Optional[float]]:
        return dict(zip(self.names, self.values))


@dataclass
class RoundMetrics:
    round_index: int
    device_accuracies: Dict[int, float]
    ensemble_accuracy: float
    strategy_chosen: Optional[str]
    divergences: Dict[int, DivergenceReport]
    device_histograms: Dict[int, np.ndarray]
    ensemble_histogram: np.ndarray
    acquisitions_consumed: int
    acquisition_histograms: Dict[int, List[np.ndarray]] = field(default_factory=dict)


def predictions(model: Model, dataset: Dataset, chunk: int = EVAL_CHUNK) -> np.ndarray:
    if len(dataset) == 0:
        raise SamplingError("точность на пустом наборе не определена")
    return predict(model, dataset.images, chunk).argmax(axis=1)


def evaluate(model: Model, dataset: Dataset, chunk: int = EVAL_CHUNK) -> Tuple[float, np.ndarray]:
    """Точность и гистограмма верно классифицированных примеров за один проход"""
    correct = predictions(model, dataset, chunk) == dataset.labels
    histogram = np.bincount(dataset.labels[correct], minlength=NUM_CLASSES).astype(np.int64)
    return float(correct.mean()), histogram


def accuracy(model: Model, dataset: Dataset, chunk: int = EVAL_CHUNK) -> float:
    """Доля верных argmax-предсказаний в режиме оценки"""
    return float(np.mean(predictions(model, dataset, chunk) == dataset.labels))


def per_class_histogram(model: Model, dataset: Dataset, chunk: int = EVAL_CHUNK) -> np.ndarray:
    return evaluate(model, dataset, chunk)[1]


def mc_accuracy(model: Model, dataset: Dataset, r: int, seed: int) -> float:
    """Точность по среднему r стохастических проходов"""
    if len(dataset) == 0:
        raise SamplingError("точность на пустом наборе не определена")
    dist = mc_predict(model, dataset.images, r, seed, item_keys=dataset.item_ids)
    return float(np.mean(dist.mean_probs.argmax(axis=1) == dataset.labels))


def block_divergence(device_block: np.ndarray, ensemble_block: np.ndarray) -> Optional[float]:
    """|W_i - W_ens| / |W_i| по норме Фробениуса"""
    device64 = device_block.astype(np.float64)
    denominator = np.linalg.norm(device64.ravel())
    if denominator == 0.0:
        return None
    return float(np.linalg.norm((device64 - ensemble_block.astype(np.float64)).ravel()) / denominator)


def layer_divergence(device_model: Model, ensemble_model: Model) -> DivergenceReport:
    if not device_model.congruent(ensemble_model):
        raise ShapeError("модели устройства и ансамбля несовместимы по формам")
    values = tuple(block_divergence(d, e) for d, e in zip(device_model.params, ensemble_model.params))
    names = tuple(device_model.block_names)
    undefined = [name for name, value in zip(names, values) if value is None]
    if undefined:
        logger.warning(f"Дивергенция не определена для блоков с нулевой нормой: {', '.join(undefined)}")
    return DivergenceReport(names=names, values=values)


def activation_heatmap(model: Model, samples: Dataset, label: int) -> np.ndarray:
    """Строки - активации предпоследнего слоя (после ReLU) для примеров класса label"""
    if len(samples) == 0:
        raise SamplingError("нет примеров для тепловой карты")
    if np.any(samples.labels != label):
        raise SamplingError(f"все примеры тепловой карты должны быть класса {label}")
    trace = forward(model, samples.images)
    if trace.penultimate is None:
        raise ShapeError("в архитектуре нет предпоследнего ReLU")
    return trace.penultimate


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denominator = np.linalg.norm(a) * np.linalg.norm(b)
    if denominator == 0.0:
        return 0.0
    return float(a @ b / denominator)


def activation_affinity(model: Model, reference: Model, samples: Dataset, label: int) -> float:
    """Косинусная близость средних строк тепловых карт двух моделей"""
    return cosine_similarity(
        activation_heatmap(model, samples, label).mean(axis=0),
        activation_heatmap(reference, samples, label).mean(axis=0),
    )
