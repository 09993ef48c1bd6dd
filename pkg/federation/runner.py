"""Раунды федерации: Type I, Type II и последовательное обучение без агрегации"""
import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from analytics.metrics import RoundMetrics, evaluate, layer_divergence, mc_accuracy
from bayes.acquisition import acquire_random, acquire_topk
from data.dataset import Dataset, Pool, ReplayBuffer, Shard
from data.partition import build_pool, build_replay, partition_type1, quarter_split, random_sample, split_validation
from federation.aggregation import AggregationOutcome, AggregationWeights, aggregate, aggregate_gradients
from federation.experiment import SEQUENTIAL, TYPE1, TYPE2, ExperimentConfig
from federation.training import device_gradient, local_train, train_initial
from nn.checkpoint import save_checkpoint
from nn.model import GradientSet, Model
from utils.errors import ConfigError
from utils.formatters import ENSEMBLE, SEQUENTIAL as SEQUENTIAL_LABEL, format_accuracy, format_histogram, \
    format_round_summary, write_metrics_csv
from utils.manifest import RunManifest, RunPaths, utc_now
from utils.seeds import (
    STREAM_DEVICE,
    STREAM_INITIAL_SAMPLE,
    STREAM_POOL,
    STREAM_QUARTERS,
    STREAM_REPLAY,
    STREAM_SELECTION,
    STREAM_SEQUENTIAL,
    STREAM_VALIDATION,
    SUB_ACQUIRE,
    SUB_SAMPLE,
    SUB_TRAIN,
    derive_seed,
)

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class DeviceUpdate:
    """Что устройство возвращает серверу по итогам раунда"""
    device_id: int
    model: Model
    gradient: Optional[GradientSet] = None
    buffers: Optional[Sequence[np.ndarray]] = None
    pool: Optional[Pool] = None
    acquisition_histograms: List[np.ndarray] = field(default_factory=list)
    consumed: int = 0


@dataclass(eq=False)
class RunResult:
    config: ExperimentConfig
    history: List[RoundMetrics]
    global_model: Model
    device_models: Dict[int, Model]
    checkpoints: Dict[int, Dict[str, Path]] = field(default_factory=dict)

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].ensemble_accuracy

    @property
    def block_names(self) -> List[str]:
        return list(self.global_model.block_names)


def sample_chunks(shard: Shard, count: int, size: int, seed: int) -> List[Dataset]:
    """count выборок по size примеров без возвращения внутри вызова"""
    if count == 0:
        return []
    drawn = random_sample(shard, count * size, derive_seed(seed, SUB_SAMPLE))
    return [drawn.subset(part) for part in np.array_split(np.arange(len(drawn)), count)]


def apply_direction(model: Model, gradient: GradientSet, config: ExperimentConfig,
                    buffers: Optional[Sequence[np.ndarray]] = None) -> Model:
    """Локальная модель устройства в режиме градиентов: W0 + lr * G"""
    return aggregate_gradients(model, [gradient], AggregationWeights((1.0,)), config.lr,
                               [buffers] if buffers is not None else None)


def train_chunks(model: Model, chunks: Sequence[Dataset], config: ExperimentConfig, seed: int,
                 device_id: int) -> Model:
    for index, chunk in enumerate(chunks):
        if len(chunk) == 0:
            logger.warning(f"D{device_id}: пустая выборка {index + 1}, обучение пропущено")
            continue
        model = local_train(model, chunk, config.epochs, config, derive_seed(seed, SUB_TRAIN, index))
    return model


def type1_device_round(model: Model, shard: Shard, config: ExperimentConfig, seed: int) -> DeviceUpdate:
    """Раунд устройства Type I: свежие случайные выборки из своего шарда"""
    chunks = sample_chunks(shard, config.acquisitions_per_round, config.acquisition_size, seed)
    histograms = [chunk.class_counts() for chunk in chunks]
    if config.aggregate_mode == "gradients":
        gradient, buffers = device_gradient(model, chunks, config, derive_seed(seed, SUB_TRAIN))
        return DeviceUpdate(shard.device_id, apply_direction(model, gradient, config, buffers), gradient, buffers,
                            acquisition_histograms=histograms, consumed=len(chunks))
    model = train_chunks(model, chunks, config, seed, shard.device_id)
    return DeviceUpdate(shard.device_id, model, acquisition_histograms=histograms, consumed=len(chunks))


def type2_device_round(model: Model, pool: Pool, replay: ReplayBuffer, config: ExperimentConfig,
                       seed: int) -> DeviceUpdate:
    """Раунд устройства Type II.

    Каждая выборка делается текущей локальной моделью, обучение идёт на
    выборке вместе с буфером повторения, после чего выборка отбрасывается.
    """
    histograms = []
    gathered = []
    for index in range(config.acquisitions_per_round):
        acquire_seed = derive_seed(seed, SUB_ACQUIRE, index)
        if config.acquisition == "random":
            result = acquire_random(pool, config.acquisition_size, acquire_seed, model, config.mc_passes)
        else:
            result = acquire_topk(model, pool, config.acquisition_size, config.mc_passes, acquire_seed)
        pool = result.pool_after
        histograms.append(result.selected.class_counts())
        if len(result.selected) == 0:
            logger.warning(f"D{pool.device_id}: пустая выборка {index + 1}, обучение пропущено")
            continue
        logger.debug(f"D{pool.device_id}: выборка {index + 1} по классам {format_histogram(histograms[-1])}")
        chunk = result.selected.concat(replay.data)
        if config.aggregate_mode == "gradients":
            gathered.append(chunk)
            continue
        model = local_train(model, chunk, config.epochs, config, derive_seed(seed, SUB_TRAIN, index))

    if config.aggregate_mode == "gradients":
        gradient, buffers = device_gradient(model, gathered, config, derive_seed(seed, SUB_TRAIN))
        return DeviceUpdate(pool.device_id, apply_direction(model, gradient, config, buffers), gradient, buffers,
                            pool, histograms, config.acquisitions_per_round)
    return DeviceUpdate(pool.device_id, model, pool=pool, acquisition_histograms=histograms,
                        consumed=config.acquisitions_per_round)


class FederationRunner:
    """Сервер симуляции.

    Устройства раунда выполняются параллельно в пуле потоков, агрегация -
    барьер. Работа устройства зависит только от широковещательной модели,
    данных устройства и заранее выведенных сидов, поэтому результат не
    зависит от числа потоков.
    """

    def __init__(self, config: ExperimentConfig, train: Dataset, test: Dataset, threads: int = 1,
                 paths: Optional[RunPaths] = None, registry=None, checksums: Optional[Dict[str, str]] = None):
        self.config = config
        self.train = train
        self.test = test
        self.threads = max(1, int(threads))
        self.paths = paths
        self.registry = registry
        self.checksums = checksums or {}
        self.weights = AggregationWeights(config.weights)
        self._executor: Optional[ThreadPoolExecutor] = None
        self.rest, self.validation = split_validation(
            train, config.validation_size, derive_seed(config.seed, STREAM_VALIDATION)
        )
        self.checkpoints: Dict[int, Dict[str, Path]] = {}

    # --- инфраструктура ---------------------------------------------------

    async def _call(self, func, *args):
        loop = asyncio.get_running_loop()
        if self._executor is None:
            return func(*args)
        return await loop.run_in_executor(self._executor, partial(func, *args))

    def _selection(self) -> Dataset:
        if self.config.selection_set == "test":
            return self.test
        if len(self.validation) == 0:
            raise ConfigError("validation_size", f"стратегии {self.config.strategy} нужна непустая валидация")
        return self.validation

    def _scorer(self, round_index: int):
        selection = self._selection()
        if not self.config.selection_mc:
            return selection
        seed = derive_seed(self.config.seed, STREAM_SELECTION, round_index)
        return lambda model: mc_accuracy(model, selection, self.config.mc_passes, seed)

    def _save(self, round_index: int, model_id: str, model: Model):
        if not (self.paths and self.config.checkpoints):
            return
        path = save_checkpoint(model, self.paths.checkpoint(round_index, model_id))
        self.checkpoints.setdefault(round_index, {})[model_id] = path

    async def _measure(self, round_index: int, device_models: Dict[int, Model], ensemble: Model,
                       strategy: Optional[str], consumed: int,
                       acquisition_histograms: Optional[Dict[int, List[np.ndarray]]] = None) -> RoundMetrics:
        ids = sorted(device_models)
        results = await asyncio.gather(
            *(self._call(evaluate, device_models[i], self.test, self.config.eval_batch) for i in ids),
            self._call(evaluate, ensemble, self.test, self.config.eval_batch),
        )
        ensemble_accuracy, ensemble_histogram = results[-1]
        return RoundMetrics(
            round_index=round_index,
            device_accuracies={i: acc for i, (acc, _) in zip(ids, results)},
            ensemble_accuracy=ensemble_accuracy,
            strategy_chosen=strategy,
            divergences={i: layer_divergence(device_models[i], ensemble) for i in ids},
            device_histograms={i: hist for i, (_, hist) in zip(ids, results)},
            ensemble_histogram=ensemble_histogram,
            acquisitions_consumed=consumed,
            acquisition_histograms=acquisition_histograms or {},
        )

    async def _record(self, run_id, metrics: RoundMetrics, label: str = ENSEMBLE):
        logger.info(format_round_summary(metrics, label))
        if self.registry is not None:
            await self.registry.record_round(run_id, metrics, label)

    async def _initial_model(self) -> Model:
        cfg = self.config
        server_data = random_sample(self.rest, cfg.initial_size, derive_seed(cfg.seed, STREAM_INITIAL_SAMPLE))
        return await self._call(train_initial, server_data, cfg)

    async def _aggregate(self, global_model: Model, updates: List[DeviceUpdate], round_index: int) -> AggregationOutcome:
        cfg = self.config
        if cfg.aggregate_mode == "gradients":
            buffers = [u.buffers for u in updates] if global_model.buffers else None
            model = aggregate_gradients(global_model, [u.gradient for u in updates], self.weights, cfg.lr, buffers)
            return AggregationOutcome(model, "ave")
        scorer = None if cfg.strategy == "ave" else self._scorer(round_index)
        return await self._call(aggregate, cfg.strategy, [u.model for u in updates], scorer, self.weights)

    # --- режимы -----------------------------------------------------------

    async def _federate(self, run_id, jobs_for_round, after_round=None) -> RunResult:
        """Общий цикл: раунд 0 - начальная модель, затем F раундов рассылки и агрегации"""
        cfg = self.config
        global_model = await self._initial_model()
        device_ids = list(range(1, cfg.devices + 1))
        device_models = {i: global_model for i in device_ids}
        history = [await self._measure(0, device_models, global_model, None, 0)]
        self._save(0, ENSEMBLE, global_model)
        await self._record(run_id, history[0])

        consumed = 0
        for round_index in range(1, cfg.rounds + 1):
            logger.info(f"🔄 Раунд {round_index}/{cfg.rounds}: рассылка модели {len(device_ids)} устройствам")
            updates = await asyncio.gather(*(
                self._call(job) for job in jobs_for_round(round_index, global_model)
            ))
            updates = sorted(updates, key=lambda u: u.device_id)
            if after_round is not None:
                after_round(updates)

            outcome = await self._aggregate(global_model, updates, round_index)
            global_model = outcome.model
            if outcome.ave_score is not None or outcome.opt_score is not None:
                logger.info(
                    f"Раунд {round_index}: стратегия {outcome.strategy}, "
                    f"ave {format_accuracy(outcome.ave_score)}, opt {format_accuracy(outcome.opt_score)}"
                )
            consumed += updates[0].consumed if updates else 0
            device_models = {u.device_id: u.model for u in updates}
            metrics = await self._measure(
                round_index, device_models, global_model,
                outcome.strategy if cfg.strategy == "mix" else cfg.strategy, consumed,
                {u.device_id: u.acquisition_histograms for u in updates},
            )
            history.append(metrics)
            for device_id, model in device_models.items():
                self._save(round_index, f"D{device_id}", model)
            self._save(round_index, ENSEMBLE, global_model)
            await self._record(run_id, metrics)

        return RunResult(cfg, history, global_model, device_models, self.checkpoints)

    async def run_type1(self, run_id=None) -> RunResult:
        cfg = self.config
        shards = partition_type1(self.rest, cfg.device_classes)
        for shard in shards:
            logger.info(f"D{shard.device_id}: классы {sorted(shard.allowed_classes)}, {len(shard)} примеров")

        def jobs(round_index: int, global_model: Model):
            return [
                partial(type1_device_round, global_model, shard, cfg,
                        derive_seed(cfg.seed, STREAM_DEVICE, shard.device_id, round_index))
                for shard in shards
            ]

        return await self._federate(run_id, jobs)

    async def run_type2(self, run_id=None) -> RunResult:
        cfg = self.config
        quarters = quarter_split(self.rest, cfg.devices, derive_seed(cfg.seed, STREAM_QUARTERS))
        pools = {
            i: build_pool(quarter, cfg.pool_size, derive_seed(cfg.seed, STREAM_POOL, i), device_id=i)
            for i, quarter in enumerate(quarters, start=1)
        }
        replay = build_replay(self.rest, cfg.replay_per_class, derive_seed(cfg.seed, STREAM_REPLAY))
        needed = cfg.acquisitions * cfg.acquisition_size
        logger.info(
            f"Пулы по {cfg.pool_size} примеров, буфер повторения {len(replay)}, "
            f"выборка {cfg.acquisition} ({needed} примеров на устройство за запуск)"
        )

        def jobs(round_index: int, global_model: Model):
            return [
                partial(type2_device_round, global_model, pools[i], replay, cfg,
                        derive_seed(cfg.seed, STREAM_DEVICE, i, round_index))
                for i in sorted(pools)
            ]

        def keep_pools(updates: List[DeviceUpdate]):
            for update in updates:
                pools[update.device_id] = update.pool
                for histogram in update.acquisition_histograms:
                    logger.info(f"D{update.device_id}: выборка по классам {format_histogram(histogram)}")

        return await self._federate(run_id, jobs, keep_pools)

    async def run_sequential_baseline(self, run_id=None) -> RunResult:
        """Одна модель обучается на шардах по очереди, без агрегации"""
        cfg = self.config
        shards = partition_type1(self.rest, cfg.device_classes)
        model = await self._initial_model()
        history = [await self._measure(0, {}, model, None, 0)]
        self._save(0, SEQUENTIAL_LABEL, model)
        await self._record(run_id, history[0], SEQUENTIAL_LABEL)

        consumed = 0
        for stage, shard in enumerate(shards, start=1):
            seed = derive_seed(cfg.seed, STREAM_SEQUENTIAL, stage)
            chunks = sample_chunks(shard, cfg.acquisitions, cfg.acquisition_size, seed)
            logger.info(f"Этап {stage}: классы {sorted(shard.allowed_classes)}, {len(chunks)} выборок")
            model = await self._call(train_chunks, model, chunks, cfg, seed, shard.device_id)
            consumed += len(chunks)
            metrics = await self._measure(stage, {}, model, None, consumed)
            history.append(metrics)
            self._save(stage, SEQUENTIAL_LABEL, model)
            await self._record(run_id, metrics, SEQUENTIAL_LABEL)

        last = shards[-1].allowed_classes if shards else frozenset()
        histogram = history[-1].ensemble_histogram
        total = int(histogram.sum())
        share = int(histogram[sorted(last)].sum()) / total if total else 0.0
        logger.info(
            f"Последовательное обучение: итоговая точность {format_accuracy(history[-1].ensemble_accuracy)}, "
            f"доля верных ответов в классах {sorted(last)}: {format_accuracy(share)}"
        )
        return RunResult(cfg, history, model, {}, self.checkpoints)

    # --- полный запуск ----------------------------------------------------

    async def execute(self, run_id=None) -> RunResult:
        """Запуск режима из конфигурации без записи артефактов"""
        self._executor = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="device")
        try:
            if self.config.regime == TYPE1:
                return await self.run_type1(run_id)
            if self.config.regime == TYPE2:
                return await self.run_type2(run_id)
            if self.config.regime == SEQUENTIAL:
                return await self.run_sequential_baseline(run_id)
            raise ConfigError("regime", f"неизвестный режим {self.config.regime}")
        finally:
            self._executor.shutdown(wait=True)
            self._executor = None

    async def run(self) -> RunResult:
        """Запуск с артефактами: метрики, чекпоинты, манифест и запись в реестр"""
        cfg = self.config
        if cfg.strategy != "ave" and cfg.aggregate_mode == "weights":
            self._selection()
        manifest = RunManifest(
            name=cfg.name,
            config_text=cfg.to_text(),
            config=cfg.as_dict(),
            dataset_checksums=dict(self.checksums),
            started_at=utc_now(),
        )
        if self.paths:
            self.paths.ensure()
        run_id = await self.registry.start_run(cfg) if self.registry is not None else None
        logger.info(f"▶️ Запуск {cfg.name}: {cfg.regime}, {cfg.label}, стратегия {cfg.strategy}, потоков {self.threads}")

        try:
            result = await self.execute(run_id)
        except Exception:
            if self.registry is not None:
                await self.registry.finish_run(run_id, "failed")
            raise

        manifest_path = None
        if self.paths:
            label = SEQUENTIAL_LABEL if cfg.regime == SEQUENTIAL else ENSEMBLE
            metrics_path = write_metrics_csv(self.paths.metrics_csv, result.history, result.block_names, label)
            manifest.metrics_files.append(metrics_path.relative_to(self.paths.root).as_posix())
            for round_index, models in sorted(result.checkpoints.items()):
                for model_id, path in models.items():
                    manifest.add_checkpoint(round_index, model_id, Path(path).relative_to(self.paths.root).as_posix())
            manifest.final_accuracy = result.final_accuracy
            manifest.status = "finished"
            manifest.ended_at = utc_now()
            manifest_path = str(manifest.write(self.paths.manifest))

        if self.registry is not None:
            await self.registry.finish_run(run_id, "finished", result.final_accuracy, manifest_path)
        logger.info(f"✅ Запуск {cfg.name} завершён: итоговая точность {format_accuracy(result.final_accuracy)}")
        return result
