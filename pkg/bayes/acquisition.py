"""Байесовское приближение через MC dropout и выборка из пула по энтропии"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from data.dataset import Dataset, Pool
from nn.model import Model
from nn.network import Mode, forward
from nn.ops import safe_log
from utils.errors import PoolDepletedError, SamplingError
from utils.seeds import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_PASSES = 16
# Фиксированный размер части пула; маски зависят от индекса примера, а не от части
MC_CHUNK = 256


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    mean_probs: np.ndarray
    log_mean: np.ndarray


@dataclass(frozen=True, eq=False)
class AcquisitionResult:
    selected: Dataset
    scores: np.ndarray
    pool_after: Pool
    pool_indices: np.ndarray


def mc_predict(model: Model, inputs: np.ndarray, r: int = DEFAULT_PASSES, seed: int = 0,
               item_keys: Optional[Sequence[int]] = None, chunk: int = MC_CHUNK) -> PredictiveDistribution:
    """Среднее r стохастических проходов.

    Сид маски прохода g выводится из (seed, g), маска примера - из (сид прохода,
    ключ примера), так что результат не зависит от размера части.
    """
    if r < 1:
        raise SamplingError("число проходов r должно быть не меньше 1")
    inputs = np.asarray(inputs)
    n = len(inputs)
    keys = np.arange(n, dtype=np.int64) if item_keys is None else np.asarray(item_keys, dtype=np.int64)
    if len(keys) != n:
        raise SamplingError("число ключей не совпадает с числом примеров")

    total = np.zeros((n, model.specs[-1].units), dtype=np.float64)
    for g in range(r):
        pass_seed = derive_seed(seed, g)
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            mode = Mode.monte_carlo(pass_seed, keys[start:stop])
            total[start:stop] += forward(model, inputs[start:stop], mode).probs
    mean = (total / r).astype(model.dtype)
    return PredictiveDistribution(mean_probs=mean, log_mean=safe_log(mean))


def predictive_entropy(dist: PredictiveDistribution) -> np.ndarray:
    """S = -sum_c p_c * log p_c для каждого примера, в натах"""
    p = dist.mean_probs.astype(np.float64)
    return -(p * dist.log_mean.astype(np.float64)).sum(axis=1)


def _check_available(pool: Pool, k: int) -> np.ndarray:
    if k < 0:
        raise SamplingError("k не может быть отрицательным")
    available = pool.available
    if len(available) < k:
        raise PoolDepletedError(
            f"D{pool.device_id}: в пуле осталось {len(available)} примеров, запрошено {k}"
        )
    return available


def _result(pool: Pool, chosen: np.ndarray, scores: np.ndarray) -> AcquisitionResult:
    chosen = np.asarray(chosen, dtype=np.int64)
    return AcquisitionResult(
        selected=pool.data.subset(chosen),
        scores=np.asarray(scores, dtype=np.float64),
        pool_after=pool.mark_acquired(chosen),
        pool_indices=chosen,
    )


def acquire_topk(model: Model, pool: Pool, k: int, r: int = DEFAULT_PASSES, seed: int = 0) -> AcquisitionResult:
    """Top-k невыбранных примеров по энтропии; при равенстве - меньший индекс пула"""
    available = _check_available(pool, k)
    if k == 0:
        return _result(pool, available[:0], np.zeros(0))

    dist = mc_predict(model, pool.data.images[available], r, seed, item_keys=available)
    entropy = predictive_entropy(dist)
    order = np.lexsort((available, -entropy))[:k]
    chosen = available[order]
    scores = entropy[order]
    logger.debug(
        f"D{pool.device_id}: выбрано {k} из {len(available)}, энтропия {scores[-1]:.4f}..{scores[0]:.4f}"
    )
    return _result(pool, chosen, scores)


def acquire_random(pool: Pool, k: int, seed: int = 0, model: Optional[Model] = None,
                   r: int = DEFAULT_PASSES) -> AcquisitionResult:
    """Равномерная выборка без возвращения; энтропии считаются только для журнала"""
    available = _check_available(pool, k)
    picked = np.random.default_rng(seed).permutation(available)[:k]
    if model is not None and k:
        dist = mc_predict(model, pool.data.images[picked], r, seed, item_keys=picked)
        scores = predictive_entropy(dist)
        logger.debug(
            f"D{pool.device_id}: случайно выбрано {k} из {len(available)}, "
            f"энтропия {scores.min():.4f}..{scores.max():.4f}"
        )
    else:
        scores = np.zeros(k)
    order = np.argsort(-scores, kind="stable")
    return _result(pool, picked[order], scores[order])
