"""Пересчёт аналитики запуска по чекпоинтам из манифеста"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from analytics.metrics import activation_heatmap, cosine_similarity, evaluate, layer_divergence
from data.dataset import NUM_CLASSES, Dataset
from federation.experiment import parse_config_text
from federation.training import model_specs
from nn.checkpoint import load_checkpoint
from nn.model import Model, init_model
from utils.errors import SamplingError
from utils.formatters import ENSEMBLE, write_matrix_csv, write_table_csv
from utils.manifest import RunManifest, RunPaths

logger = logging.getLogger(__name__)

HEATMAP_CLASS = 1
HEATMAP_SAMPLES = 10


@dataclass
class AnalysisReport:
    output_dir: Path
    files: List[Path] = field(default_factory=list)
    affinities: Dict[str, float] = field(default_factory=dict)


def heatmap_samples(test: Dataset, label: int = HEATMAP_CLASS, count: int = HEATMAP_SAMPLES) -> Dataset:
    """Первые count тестовых примеров класса label"""
    members = test.of_class(label)
    if len(members) < count:
        raise SamplingError(f"в тестовом наборе {len(members)} примеров класса {label}, нужно {count}")
    return members.subset(np.arange(count))


def _load_round(root: Path, models: Dict[str, str], template: Model) -> Dict[str, Model]:
    return {model_id: load_checkpoint(root / path, template) for model_id, path in sorted(models.items())}


def analyze_run(manifest_path: Union[str, Path], test: Dataset, label: int = HEATMAP_CLASS,
                samples: int = HEATMAP_SAMPLES) -> AnalysisReport:
    """Дивергенции, гистограммы и тепловые карты по сохранённым моделям.

    Пишет в analysis/: divergence.csv, histograms.csv, heatmap_<модель>.csv
    для последнего раунда и affinity.csv с косинусной близостью средней
    строки каждой модели к ансамблю.
    """
    manifest_path = Path(manifest_path)
    manifest = RunManifest.load(manifest_path)
    paths = RunPaths(manifest_path.parent)
    config = parse_config_text(manifest.config_text)
    template = init_model(model_specs(config), 0)
    report = AnalysisReport(paths.analysis_dir)

    if not manifest.checkpoints:
        raise SamplingError(f"{manifest_path}: в манифесте нет чекпоинтов")

    divergence_rows = []
    histogram_rows = []
    block_names = template.block_names
    last = manifest.last_round()
    last_models: Dict[str, Model] = {}
    for round_key in sorted(manifest.checkpoints, key=int):
        models = _load_round(paths.root, manifest.checkpoints[round_key], template)
        ensemble = models.get(ENSEMBLE)
        for model_id, model in models.items():
            _, histogram = evaluate(model, test, config.eval_batch)
            histogram_rows.append([round_key, model_id, *[int(c) for c in histogram]])
            if ensemble is not None and model_id != ENSEMBLE:
                values = layer_divergence(model, ensemble).values
                divergence_rows.append(
                    [round_key, model_id, *["NA" if v is None else f"{v:.8g}" for v in values]]
                )
        if int(round_key) == last:
            last_models = models
        logger.info(f"Раунд {round_key}: обработано моделей {len(models)}")

    report.files.append(write_table_csv(
        paths.analysis_dir / "divergence.csv", ["round", "model_id", *block_names], divergence_rows
    ))
    report.files.append(write_table_csv(
        paths.analysis_dir / "histograms.csv",
        ["round", "model_id", *[f"correct_{c}" for c in range(NUM_CLASSES)]],
        histogram_rows,
    ))

    chosen = heatmap_samples(test, label, samples)
    heatmaps = {}
    for model_id, model in last_models.items():
        heatmaps[model_id] = activation_heatmap(model, chosen, label)
        units = heatmaps[model_id].shape[1]
        report.files.append(write_matrix_csv(
            paths.analysis_dir / f"heatmap_{model_id}.csv", heatmaps[model_id],
            [f"unit_{u}" for u in range(units)],
        ))

    if ENSEMBLE in heatmaps:
        reference = heatmaps[ENSEMBLE].mean(axis=0)
        for model_id, heatmap in heatmaps.items():
            if model_id != ENSEMBLE:
                report.affinities[model_id] = cosine_similarity(heatmap.mean(axis=0), reference)
        report.files.append(write_table_csv(
            paths.analysis_dir / "affinity.csv", ["model_id", "cosine_to_ensemble"],
            [[model_id, f"{value:.6f}"] for model_id, value in report.affinities.items()],
        ))
        logger.info(
            "Близость к ансамблю для класса "
            f"{label}: " + ", ".join(f"{m} {v:.4f}" for m, v in report.affinities.items())
        )

    logger.info(f"Анализ записан в {paths.analysis_dir}")
    return report
