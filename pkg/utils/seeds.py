"""Детерминированное получение дочерних сидов из мастер-сида.

Каждый поток случайности (инициализация, выборка, маски dropout, ...) получает
собственный сид из пары (мастер-сид, ключи потока), поэтому результат не
зависит от порядка выполнения устройств.
"""
import numpy as np

# Идентификаторы потоков
STREAM_INIT = 1
STREAM_VALIDATION = 2
STREAM_INITIAL_SAMPLE = 3
STREAM_INITIAL_TRAIN = 4
STREAM_QUARTERS = 5
STREAM_POOL = 6
STREAM_REPLAY = 7
STREAM_DEVICE = 8
STREAM_SEQUENTIAL = 9
STREAM_SELECTION = 10

# Внутри потока устройства
SUB_SAMPLE = 1
SUB_TRAIN = 2
SUB_ACQUIRE = 3


def derive_seed(base: int, *keys: int) -> int:
    """Сид для подпотока (base, *keys) в диапазоне uint32"""
    sequence = np.random.SeedSequence([int(base) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def make_rng(base: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *keys))
