"""Быстрые встроенные проверки свойств (команда verify)"""
import logging
import math
import tempfile
from dataclasses import dataclass
from itertools import product
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from analytics.metrics import accuracy, block_divergence, layer_divergence
from bayes.acquisition import PredictiveDistribution, acquire_topk, mc_predict, predictive_entropy
from data.dataset import Dataset, Pool
from federation.aggregation import AggregationWeights, aggregate_gradients, ave_fl, mix_outcome, opt_select
from federation.training import descent_direction
from nn.checkpoint import load_checkpoint, save_checkpoint
from nn.layers import DROPOUT, OUTPUT, RELU, LayerSpec, conv, dense, fashion_specs
from nn.model import Model, init_model
from nn.network import Mode, backward, cross_entropy, forward, sgd_step
from nn.ops import safe_log
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)

SMALL_INPUT = (6, 6, 1)
SMALL_SPECS: Tuple[LayerSpec, ...] = (
    conv(3, 3), LayerSpec(RELU), LayerSpec(DROPOUT, dropout_rate=0.25),
    dense(8), LayerSpec(RELU), LayerSpec(OUTPUT, units=10),
)
# Тот же экземпляр без ReLU, функция потерь гладкая
SMOOTH_SPECS: Tuple[LayerSpec, ...] = tuple(s for s in SMALL_SPECS if s.kind != RELU)

FD_EPS = 1e-5
FD_EPS_SMOOTH = 1e-3
FD_PROBES = 8


@dataclass
class CheckResult:
    name: str
    ok: bool
    message: str


def small_model(seed: int, dtype=np.float64, specs: Tuple[LayerSpec, ...] = SMALL_SPECS) -> Model:
    """Модель 1 свёртка + 1 полносвязный слой со случайными (ненулевыми) смещениями"""
    model = init_model(specs, seed, SMALL_INPUT, dtype=dtype)
    rng = np.random.default_rng(seed + 1000)
    params = [p if p.ndim > 1 else rng.uniform(-0.1, 0.1, p.shape).astype(dtype) for p in model.params]
    return model.with_params(params)


def small_dataset(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, *SMALL_INPUT)).astype(np.float32), rng.integers(0, 10, n))


def gradient_errors(model: Model, images: np.ndarray, labels: np.ndarray, seed: int,
                    probes: int = FD_PROBES, eps: float = FD_EPS) -> List[Tuple[str, float, float]]:
    """(блок, аналитика, центральная разность) для probes случайных координат каждого блока"""
    mode = Mode.training(seed)
    analytic = backward(model, forward(model, images, mode), labels)
    rng = np.random.default_rng(seed)
    names = model.block_names
    out = []
    for b, block in enumerate(model.params):
        for flat in rng.choice(block.size, size=min(probes, block.size), replace=False):
            index = np.unravel_index(flat, block.shape)
            losses = []
            for sign in (1, -1):
                shifted = [p.copy() for p in model.params]
                shifted[b][index] += sign * eps
                probe = model.with_params(shifted)
                losses.append(cross_entropy(forward(probe, images, mode).probs, labels))
            numeric = (losses[0] - losses[1]) / (2 * eps)
            out.append((names[b], float(analytic.grads[b][index]), float(numeric)))
    return out


def gradient_close(analytic: float, numeric: float) -> bool:
    diff = abs(analytic - numeric)
    scale = max(abs(analytic), abs(numeric), 1e-12)
    return diff / scale < 1e-2 or diff < 1e-4


def check_gradients(seeds: int = 5) -> Tuple[bool, str]:
    """Центральные разности: шаг 1e-3 на гладком экземпляре, 1e-5 на экземпляре с ReLU"""
    worst = None
    variants = ((SMOOTH_SPECS, FD_EPS_SMOOTH), (SMALL_SPECS, FD_EPS))
    for (specs, eps), seed in product(variants, range(seeds)):
        model = small_model(seed, specs=specs)
        data = small_dataset(2, seed)
        for name, a, n in gradient_errors(model, data.images.astype(np.float64), data.labels, seed, eps=eps):
            if not gradient_close(a, n):
                return False, f"сид {seed}, шаг {eps:g}, блок {name}: аналитика {a:.6g}, разность {n:.6g}"
            diff = abs(a - n)
            worst = diff if worst is None else max(worst, diff)
    return True, f"{seeds} сидов, максимальное расхождение {worst:.2e}"


def check_aggregation_identity(trials: int = 10, devices: int = 4, lr: float = 0.05,
                               weight_decay: float = 1e-4) -> Tuple[bool, str]:
    """AveFL моделей после одного шага из общего W0 совпадает с агрегацией градиентов"""
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng(trial)
        w0 = small_model(trial)
        alphas = rng.dirichlet(np.ones(devices))
        alphas = alphas / alphas.sum()
        updated, directions = [], []
        for device in range(devices):
            batch = small_dataset(5, 100 * trial + device)
            seed = 10 * trial + device
            direction, trace = descent_direction(w0, batch, weight_decay, seed)
            updated.append(sgd_step(w0, backward(w0, trace, batch.labels), lr, weight_decay))
            directions.append(direction)
        weights = AggregationWeights(tuple(float(a) for a in alphas))
        by_weights = ave_fl(updated, weights)
        by_gradients = aggregate_gradients(w0, directions, weights, lr)
        for a, b in zip(by_weights.params, by_gradients.params):
            if not np.allclose(a, b, rtol=1e-6, atol=1e-12):
                return False, f"попытка {trial}: расхождение {np.max(np.abs(a - b)):.3e}"
            worst = max(worst, float(np.max(np.abs(a - b))))
    return True, f"{trials} попыток, максимальное расхождение {worst:.2e}"


def check_strategy_contracts(trials: int = 20) -> Tuple[bool, str]:
    for trial in range(trials):
        models = [small_model(100 + 4 * trial + i) for i in range(4)]
        validation = small_dataset(30, trial)

        same = ave_fl([models[0]] * 3)
        if not ulp_close(same, models[0]):
            return False, f"попытка {trial}: AveFL одинаковых моделей изменил модель"

        index, scores = opt_select(models, validation)
        best = max(scores)
        if scores[index] != best or any(s == best for s in scores[:index]):
            return False, f"попытка {trial}: OptFL выбрал D{index + 1} при оценках {scores}"

        outcome = mix_outcome(models, validation)
        if accuracy(outcome.model, validation) != max(outcome.ave_score, outcome.opt_score):
            return False, f"попытка {trial}: точность MixFL не равна максимуму кандидатов"
        if outcome.ave_score == outcome.opt_score and outcome.strategy != "ave":
            return False, f"попытка {trial}: при равенстве MixFL должен выбрать AveFL"
    return True, f"{trials} попыток"


def ulp_close(a: Model, b: Model, ulps: int = 2) -> bool:
    """Совпадение параметров с точностью до нескольких ulp"""
    for x, y in zip(a.params, b.params):
        tolerance = ulps * np.finfo(y.dtype).eps * np.abs(y)
        if np.any(np.abs(x - y) > tolerance):
            return False
    return True


def brute_force_topk(entropy: np.ndarray, available: np.ndarray, k: int) -> np.ndarray:
    ranked = sorted(zip(available.tolist(), entropy.tolist()), key=lambda pair: (-pair[1], pair[0]))
    return np.array([index for index, _ in ranked[:k]], dtype=np.int64)


def check_entropy(seeds: int = 10) -> Tuple[bool, str]:
    uniform = np.full((1, 10), 0.1)
    value = predictive_entropy(PredictiveDistribution(uniform, safe_log(uniform)))[0]
    if abs(value - math.log(10)) > 1e-6:
        return False, f"энтропия равномерного распределения {value:.8f}"
    one_hot = np.eye(10)[:1]
    value = predictive_entropy(PredictiveDistribution(one_hot, safe_log(one_hot)))[0]
    if abs(value) > 1e-6:
        return False, f"энтропия вырожденного распределения {value:.8f}"

    for seed in range(seeds):
        model = small_model(seed, dtype=np.float32)
        data = small_dataset(100, seed)
        pool = Pool(device_id=1, data=data, acquired_mask=np.random.default_rng(seed).random(100) < 0.2)
        available = pool.available
        k = min(10, len(available))
        result = acquire_topk(model, pool, k, r=4, seed=seed)
        entropy = predictive_entropy(mc_predict(model, data.images[available], 4, seed, item_keys=available))
        if entropy.min() < -1e-9 or entropy.max() > math.log(10) + 1e-6:
            return False, f"сид {seed}: энтропия вне [0, ln 10]"
        expected = brute_force_topk(entropy, available, k)
        if not np.array_equal(result.pool_indices, expected):
            return False, f"сид {seed}: top-k не совпал с перебором"
    return True, f"{seeds} пулов по 100 примеров"


def check_divergence(trials: int = 10) -> Tuple[bool, str]:
    rng = np.random.default_rng(0)
    model = small_model(0)
    zero = layer_divergence(model, model)
    if any(v != 0.0 for v in zero.values):
        return False, "дивергенция модели с самой собой не равна 0"
    doubled = model.with_params([2 * p for p in model.params])
    half = layer_divergence(doubled, model)
    if any(abs(v - 0.5) > 1e-12 for v in half.values):
        return False, f"для удвоенной модели получено {half.values}"
    for trial in range(trials):
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        oracle = math.sqrt(sum((a[i, j] - b[i, j]) ** 2 for i in range(3) for j in range(3))) / math.sqrt(
            sum(a[i, j] ** 2 for i in range(3) for j in range(3))
        )
        value = block_divergence(a, b)
        if abs(value - oracle) > 1e-6:
            return False, f"попытка {trial}: {value} вместо {oracle}"
        scaled = block_divergence(3.5 * a, 3.5 * b)
        if abs(scaled - value) > 1e-9:
            return False, f"попытка {trial}: нет инвариантности к масштабу"
    return True, f"{trials} случайных блоков 3×3"


def check_checkpoint(path: Optional[str] = None) -> Tuple[bool, str]:
    """Чтение указанного чекпоинта либо запись и чтение свежей модели"""
    if path:
        errors = []
        for batchnorm in (False, True):
            template = init_model(fashion_specs(batchnorm), 0)
            try:
                load_checkpoint(path, template)
                return True, f"{path} прочитан (batchnorm={batchnorm})"
            except (CheckpointError, OSError) as e:
                errors.append(str(e))
        return False, "; ".join(errors)

    model = small_model(7, dtype=np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        target = Path(tmp) / "model.flck"
        save_checkpoint(model, target)
        if not load_checkpoint(target, model).equals(model):
            return False, "прочитанная модель отличается от записанной"
        target.write_bytes(target.read_bytes()[:-3])
        try:
            load_checkpoint(target, model)
        except CheckpointError:
            return True, "запись, чтение и обнаружение порчи"
    return False, "усечённый чекпоинт прочитан без ошибки"


def run_verification(checkpoint: Optional[str] = None) -> List[CheckResult]:
    checks: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
        ("gradient", check_gradients),
        ("aggregation-identity", check_aggregation_identity),
        ("strategy-contracts", check_strategy_contracts),
        ("entropy-acquisition", check_entropy),
        ("divergence", check_divergence),
        ("checkpoint", lambda: check_checkpoint(checkpoint)),
    ]
    results = []
    for name, check in checks:
        try:
            ok, message = check()
        except Exception as e:
            ok, message = False, f"{type(e).__name__}: {e}"
        results.append(CheckResult(name, ok, message))
        if ok:
            logger.info(f"✅ {name}: {message}")
        else:
            logger.error(f"❌ {name}: {message}")
    return results
