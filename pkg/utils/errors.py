"""Иерархия ошибок симулятора.

ConfigError соответствует коду выхода 1, остальные SimulatorError - коду 2.
"""
from typing import Optional


class SimulatorError(Exception):
    """Базовая ошибка симулятора"""


class ConfigError(SimulatorError):
    """Ошибка конфигурации эксперимента, всегда с именем ключа"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ShapeError(SimulatorError, ValueError):
    pass


class CheckpointError(SimulatorError):
    pass


class IdxFormatError(SimulatorError):
    """Ошибка формата IDX-файла"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class BadMagicError(IdxFormatError):
    pass


class TruncatedPayloadError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class PartitionError(SimulatorError, ValueError):
    pass


class SamplingError(SimulatorError, ValueError):
    pass


class PoolDepletedError(SamplingError):
    pass


class AggregationError(SimulatorError, ValueError):
    pass


class DataFetchError(SimulatorError):
    pass


class LabelError(SimulatorError, ValueError):
    pass
