"""Конфигурация эксперимента: плоский формат key=value"""
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from data.partition import DEFAULT_ASSIGNMENT
from utils.errors import ConfigError
from utils.validators import ExperimentConfigValidator, NameValidator

logger = logging.getLogger(__name__)

TYPE1 = "type1"
TYPE2 = "type2"
SEQUENTIAL = "sequential"
REGIMES = (TYPE1, TYPE2, SEQUENTIAL)
REGIME_ALIASES = {"sequential-baseline": SEQUENTIAL, "sequential_baseline": SEQUENTIAL}

STRATEGIES = ("ave", "opt", "mix")
AGGREGATE_MODES = ("weights", "gradients")
ACQUISITION_FUNCTIONS = ("entropy", "random")
SELECTION_SETS = ("validation", "test")


@dataclass(frozen=True)
class ExperimentConfig:
    regime: str = TYPE1
    devices: int = 4
    epochs: int = 45
    frequency: int = 10
    acquisitions: int = 10
    acquisition_size: int = 400
    batch_size: int = 50
    lr: float = 0.01
    weight_decay: float = 1e-4
    mc_passes: int = 16
    strategy: str = "ave"
    aggregate_mode: str = "weights"
    batchnorm: bool = False
    seed: int = 0
    initial_size: int = 400
    initial_epochs: Optional[int] = None
    acquisition: str = "entropy"
    pool_size: int = 4000
    replay_per_class: int = 5
    validation_size: int = 5000
    selection_set: str = "validation"
    selection_mc: bool = False
    device_classes: Tuple[Tuple[int, ...], ...] = DEFAULT_ASSIGNMENT
    alphas: Optional[Tuple[float, ...]] = None
    eval_batch: int = 500
    checkpoints: bool = True
    name: str = "run"

    @property
    def rounds(self) -> int:
        return self.frequency

    @property
    def acquisitions_per_round(self) -> int:
        return self.acquisitions // self.frequency

    @property
    def effective_initial_epochs(self) -> int:
        return self.epochs if self.initial_epochs is None else self.initial_epochs

    @property
    def weights(self) -> Tuple[float, ...]:
        return self.alphas or tuple(1.0 / self.devices for _ in range(self.devices))

    @property
    def label(self) -> str:
        """Краткая метка вида E45F10"""
        return f"E{self.epochs}F{self.frequency}"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, name=f"{self.name}_s{seed}")

    def as_dict(self) -> Dict:
        data = asdict(self)
        data["device_classes"] = [list(g) for g in self.device_classes]
        data["alphas"] = list(self.alphas) if self.alphas else None
        return data

    def to_text(self) -> str:
        """Канонический текст конфигурации: по одной паре на строку"""
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if f.name == "device_classes":
                value = ";".join(",".join(str(c) for c in g) for g in value)
            elif f.name == "alphas":
                value = ";".join(repr(a) for a in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


KEY_ALIASES = {"n_devices": "devices", "lambda": "weight_decay", "k": "acquisition_size", "r": "mc_passes",
               "m": "initial_size", "batch": "batch_size"}

INT_KEYS = {
    "devices": 1, "epochs": 0, "frequency": 1, "acquisitions": 0, "acquisition_size": 0, "batch_size": 1,
    "mc_passes": 1, "seed": 0, "initial_size": 0, "initial_epochs": 0, "pool_size": 0, "replay_per_class": 0,
    "validation_size": 0, "eval_batch": 1,
}
FLOAT_KEYS = {"lr": True, "weight_decay": False}
BOOL_KEYS = {"batchnorm", "selection_mc", "checkpoints"}
CHOICE_KEYS = {
    "regime": REGIMES, "strategy": STRATEGIES, "aggregate_mode": AGGREGATE_MODES,
    "acquisition": ACQUISITION_FUNCTIONS, "selection_set": SELECTION_SETS,
}


def _parse_value(key: str, raw: str):
    validator = ExperimentConfigValidator
    if key in INT_KEYS:
        ok, value, message = validator.validate_int(raw, INT_KEYS[key])
    elif key in FLOAT_KEYS:
        ok, value, message = validator.validate_float(raw, positive=FLOAT_KEYS[key])
    elif key in BOOL_KEYS:
        ok, value, message = validator.validate_bool(raw)
    elif key in CHOICE_KEYS:
        raw = REGIME_ALIASES.get(raw.strip().lower(), raw) if key == "regime" else raw
        ok, value, message = validator.validate_choice(raw, CHOICE_KEYS[key])
    elif key == "device_classes":
        ok, value, message = validator.validate_device_classes(raw)
    elif key == "alphas":
        ok, value, message = validator.validate_alphas(raw)
    elif key == "name":
        ok, value, message = True, NameValidator.validate_run_name(raw), "OK"
    else:
        raise ConfigError(key, "неизвестный ключ")
    if not ok:
        raise ConfigError(key, message)
    return value


def _pairs(text: str):
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        # "epochs=45, frequency=10"; запятые внутри device_classes относятся к значению
        items = []
        for chunk in line.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            if "=" in chunk or not items:
                items.append(chunk)
            else:
                items[-1] += "," + chunk
        for item in items:
            if "=" not in item:
                raise ConfigError(item, f"строка {line_no}: ожидалось key=value")
            key, raw = item.split("=", 1)
            yield key.strip().lower(), raw.strip()


def validate_config(config: ExperimentConfig) -> ExperimentConfig:
    ok, message = ExperimentConfigValidator.validate_frequency(config.frequency, config.acquisitions)
    if not ok:
        raise ConfigError("frequency", message)
    if config.regime in (TYPE1, SEQUENTIAL) and len(config.device_classes) != config.devices:
        raise ConfigError(
            "device_classes", f"групп классов {len(config.device_classes)}, устройств {config.devices}"
        )
    if config.alphas is not None and len(config.alphas) != config.devices:
        raise ConfigError("alphas", f"весов {len(config.alphas)}, устройств {config.devices}")
    if config.strategy != "ave" and config.aggregate_mode == "gradients":
        raise ConfigError("aggregate_mode", "агрегация градиентов поддерживается только для strategy=ave")
    return config


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for key, raw in _pairs(text):
        key = KEY_ALIASES.get(key, key)
        if key in values:
            raise ConfigError(key, "ключ указан дважды")
        values[key] = _parse_value(key, raw)
    return validate_config(ExperimentConfig(**values))


def parse_config(source: Union[str, Path]) -> ExperimentConfig:
    """Чтение конфигурации из файла; пустой файл даёт конфигурацию по умолчанию"""
    path = Path(source)
    config = parse_config_text(path.read_text(encoding="utf-8"))
    logger.info(f"Конфигурация {path}: {config.regime}, {config.label}, стратегия {config.strategy}")
    return config
