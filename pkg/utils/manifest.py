import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Union

import pytz

from config import Config

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
METRICS_NAME = "metrics.csv"


def utc_now() -> str:
    return datetime.now(pytz.utc).isoformat(timespec="seconds")


class RunPaths:
    """Раскладка каталога запуска"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    @classmethod
    def for_run(cls, name: str, runs_dir: Union[str, Path] = None) -> "RunPaths":
        return cls(Path(runs_dir or Config.RUNS_DIR) / name)

    @property
    def metrics_csv(self) -> Path:
        return self.root / METRICS_NAME

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def manifest(self) -> Path:
        return self.root / MANIFEST_NAME

    @property
    def analysis_dir(self) -> Path:
        return self.root / "analysis"

    def checkpoint(self, round_index: int, model_id: str) -> Path:
        return self.checkpoints_dir / f"round_{round_index:03d}_{model_id}.flck"

    def ensure(self):
        self.root.mkdir(parents=True, exist_ok=True)
        self.checkpoints_dir.mkdir(exist_ok=True)


@dataclass
class RunManifest:
    """Всё, что нужно для побитового повторения запуска"""
    name: str
    config_text: str
    config: Dict
    dataset_checksums: Dict[str, str]
    started_at: str
    ended_at: Optional[str] = None
    status: str = "running"
    metrics_files: List[str] = field(default_factory=list)
    # round -> model_id -> путь
    checkpoints: Dict[str, Dict[str, str]] = field(default_factory=dict)
    final_accuracy: Optional[float] = None
    tool_version: str = Config.TOOL_VERSION

    def add_checkpoint(self, round_index: int, model_id: str, path: Union[str, Path]):
        self.checkpoints.setdefault(str(round_index), {})[model_id] = str(path)

    def last_round(self) -> Optional[int]:
        if not self.checkpoints:
            return None
        return max(int(r) for r in self.checkpoints)

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, indent=2, sort_keys=True)

    def write(self, path: Union[str, Path]) -> Path:
        """Атомарная запись: временный файл и os.replace"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as handle:
            handle.write(self.to_json())
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
        logger.info(f"Манифест записан: {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunManifest":
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
        return cls(**data)
