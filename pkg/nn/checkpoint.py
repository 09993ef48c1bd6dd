"""Чекпоинты моделей в формате FLCK.

Формат: b"FLCK", версия u16, число блоков u16, затем для каждого блока:
ранг u8, размеры u32 (little-endian), значения f32 (little-endian).
Блоки параметров идут в порядке архитектуры, за ними буферы batchnorm.
"""
import logging
import os
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from nn.model import Model, expected_shapes
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"FLCK"
VERSION = 1


def encode_blocks(blocks: List[np.ndarray]) -> bytes:
    if len(blocks) > 0xFFFF:
        raise CheckpointError("слишком много блоков для формата FLCK")
    parts = [MAGIC, struct.pack("<HH", VERSION, len(blocks))]
    for block in blocks:
        if block.ndim > 0xFF:
            raise CheckpointError("ранг блока не помещается в u8")
        parts.append(struct.pack("<B", block.ndim))
        parts.append(struct.pack(f"<{block.ndim}I", *block.shape))
        parts.append(np.ascontiguousarray(block, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_blocks(payload: bytes) -> List[np.ndarray]:
    if payload[:4] != MAGIC:
        raise CheckpointError("неверная сигнатура чекпоинта")
    if len(payload) < 8:
        raise CheckpointError("обрезанный заголовок чекпоинта")
    version, count = struct.unpack_from("<HH", payload, 4)
    if version != VERSION:
        raise CheckpointError(f"неподдерживаемая версия чекпоинта {version}")

    offset = 8
    blocks = []
    for index in range(count):
        if offset + 1 > len(payload):
            raise CheckpointError(f"блок {index}: обрезанные данные")
        (rank,) = struct.unpack_from("<B", payload, offset)
        offset += 1
        if offset + 4 * rank > len(payload):
            raise CheckpointError(f"блок {index}: обрезанные размеры")
        dims = struct.unpack_from(f"<{rank}I", payload, offset)
        offset += 4 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        if offset + 4 * size > len(payload):
            raise CheckpointError(f"блок {index}: обрезанные значения")
        values = np.frombuffer(payload, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        blocks.append(values.astype(np.float32).reshape(dims))
    if offset != len(payload):
        raise CheckpointError("лишние байты в конце чекпоинта")
    return blocks


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    """Запись чекпоинта через временный файл и атомарную замену"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + ".tmp")
    tmp_path.write_bytes(encode_blocks(list(model.params) + list(model.buffers)))
    os.replace(tmp_path, path)
    logger.debug(f"Чекпоинт записан: {path}")
    return path


def load_checkpoint(path: Union[str, Path], template: Model) -> Model:
    """Чтение чекпоинта в модель с архитектурой template"""
    path = Path(path)
    try:
        blocks = decode_blocks(path.read_bytes())
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from e
    params_shapes, buffer_shapes = expected_shapes(template.specs, template.input_shape)
    shapes = [tuple(s) for s in params_shapes + buffer_shapes]
    if [b.shape for b in blocks] != shapes:
        raise CheckpointError(f"{path}: формы блоков не соответствуют архитектуре")
    n_params = len(params_shapes)
    return template.with_params(blocks[:n_params], blocks[n_params:])
