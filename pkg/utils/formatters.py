import csv
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from analytics.metrics import DivergenceReport, RoundMetrics
from data.dataset import NUM_CLASSES

logger = logging.getLogger(__name__)

ENSEMBLE = "ensemble"
SEQUENTIAL = "sequential"
UNDEFINED = "NA"


def format_accuracy(value: Optional[float]) -> str:
    """Точность в процентах: 0.4712 -> '47.12%'"""
    if value is None:
        return "-"
    return f"{value * 100:.2f}%"


def format_histogram(histogram: Sequence[int]) -> str:
    return " ".join(f"{label}:{int(count)}" for label, count in enumerate(histogram))


def format_round_summary(metrics: RoundMetrics, ensemble_label: str = ENSEMBLE) -> str:
    """Строка журнала по итогам раунда"""
    devices = " | ".join(
        f"D{device_id} {format_accuracy(acc)}" for device_id, acc in sorted(metrics.device_accuracies.items())
    )
    chosen = f" ({metrics.strategy_chosen})" if metrics.strategy_chosen else ""
    head = f"Раунд {metrics.round_index}: "
    if devices:
        head += f"{devices} | "
    return f"{head}{ensemble_label} {format_accuracy(metrics.ensemble_accuracy)}{chosen}"


def metrics_header(block_names: Sequence[str]) -> List[str]:
    return (["round", "model_id", "accuracy"]
            + [f"div_{name}" for name in block_names]
            + [f"correct_{label}" for label in range(NUM_CLASSES)])


def _divergence_cells(report: Optional[DivergenceReport], width: int) -> List[str]:
    if report is None:
        return [""] * width
    return [UNDEFINED if value is None else f"{value:.8g}" for value in report.values]


def metrics_rows(metrics: RoundMetrics, block_names: Sequence[str], ensemble_label: str = ENSEMBLE) -> List[List[str]]:
    """Строки устройств по возрастанию номера, затем строка ансамбля"""
    rows = []
    width = len(block_names)
    for device_id in sorted(metrics.device_accuracies):
        rows.append(
            [str(metrics.round_index), f"D{device_id}", f"{metrics.device_accuracies[device_id]:.6f}"]
            + _divergence_cells(metrics.divergences.get(device_id), width)
            + [str(int(c)) for c in metrics.device_histograms[device_id]]
        )
    rows.append(
        [str(metrics.round_index), ensemble_label, f"{metrics.ensemble_accuracy:.6f}"]
        + [""] * width
        + [str(int(c)) for c in metrics.ensemble_histogram]
    )
    return rows


def write_metrics_csv(path, history: Iterable[RoundMetrics], block_names: Sequence[str],
                      ensemble_label: str = ENSEMBLE) -> Path:
    """CSV метрик: заголовок и по строке на (раунд, модель)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(metrics_header(block_names))
        for metrics in history:
            writer.writerows(metrics_rows(metrics, block_names, ensemble_label))
    logger.info(f"Метрики записаны: {path}")
    return path


def write_matrix_csv(path, matrix: np.ndarray, header: Optional[Sequence[str]] = None) -> Path:
    """Матрица (тепловая карта) как CSV без индексов строк"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(
        path,
        np.asarray(matrix, dtype=np.float64),
        fmt="%.6f",
        delimiter=",",
        header=",".join(header) if header else "",
        comments="",
    )
    return path


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(header))
        writer.writerows([list(row) for row in rows])
    return path


def format_sweep_summary(results: Dict[str, Sequence[float]]) -> str:
    """Сводка серии запусков: метка конфигурации -> точности по сидам"""
    lines = ["📊 Итоги серии:"]
    for label, values in results.items():
        values = list(values)
        mean = float(np.mean(values)) if values else float("nan")
        spread = " ".join(format_accuracy(v) for v in values)
        lines.append(f"  {label}: среднее {format_accuracy(mean)} [{spread}]")
    return "\n".join(lines)
