"""Чтение файлов в формате IDX (в том числе сжатых gzip)"""
import gzip
import hashlib
import logging
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from data.dataset import Dataset
from utils.errors import BadMagicError, CountMismatchError, TruncatedPayloadError

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
GZIP_PREFIX = b"\x1f\x8b"


def read_bytes(path: Union[str, Path]) -> bytes:
    """Содержимое файла; gzip определяется по префиксу 0x1f8b"""
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_PREFIX:
        return gzip.decompress(raw)
    return raw


def file_checksum(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def parse_images(payload: bytes, path: str = None) -> np.ndarray:
    if len(payload) < 16:
        raise TruncatedPayloadError("заголовок изображений короче 16 байт", path)
    magic, count, rows, cols = struct.unpack(">IIII", payload[:16])
    if magic != IMAGES_MAGIC:
        raise BadMagicError(f"ожидалась сигнатура 0x{IMAGES_MAGIC:08x}, получено 0x{magic:08x}", path)
    expected = count * rows * cols
    if len(payload) - 16 < expected:
        raise TruncatedPayloadError(f"ожидалось {expected} байт пикселей, найдено {len(payload) - 16}", path)
    pixels = np.frombuffer(payload, dtype=np.uint8, count=expected, offset=16)
    return pixels.reshape(count, rows, cols, 1)


def parse_labels(payload: bytes, path: str = None) -> np.ndarray:
    if len(payload) < 8:
        raise TruncatedPayloadError("заголовок меток короче 8 байт", path)
    magic, count = struct.unpack(">II", payload[:8])
    if magic != LABELS_MAGIC:
        raise BadMagicError(f"ожидалась сигнатура 0x{LABELS_MAGIC:08x}, получено 0x{magic:08x}", path)
    if len(payload) - 8 < count:
        raise TruncatedPayloadError(f"ожидалось {count} меток, найдено {len(payload) - 8}", path)
    return np.frombuffer(payload, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> Dataset:
    """Загрузка пары IDX-файлов, пиксели делятся на 255"""
    images = parse_images(read_bytes(images_path), str(images_path))
    labels = parse_labels(read_bytes(labels_path), str(labels_path))
    if len(images) != len(labels):
        raise CountMismatchError(
            f"в заголовке изображений {len(images)}, в заголовке меток {len(labels)}", str(labels_path)
        )
    logger.info(f"Загружено {len(labels)} примеров из {images_path}")
    return Dataset(
        images=images.astype(np.float32) / np.float32(255.0),
        labels=labels.astype(np.int64),
    )


FASHION_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


def _resolve(data_dir: Path, filename: str) -> Path:
    """Допускаются как сжатые, так и распакованные файлы"""
    path = data_dir / filename
    if path.exists():
        return path
    plain = data_dir / filename[:-3]
    return plain if plain.exists() else path


def fashion_paths(data_dir: Union[str, Path]) -> dict:
    data_dir = Path(data_dir)
    return {key: _resolve(data_dir, name) for key, name in FASHION_FILES.items()}


def load_fashion(data_dir: Union[str, Path]) -> Tuple[Dataset, Dataset]:
    """Обучающая и тестовая выборки Fashion-MNIST"""
    paths = fashion_paths(data_dir)
    train = load_idx(paths["train_images"], paths["train_labels"])
    test = load_idx(paths["test_images"], paths["test_labels"])
    return train, test


def fashion_checksums(data_dir: Union[str, Path]) -> dict:
    return {path.name: file_checksum(path) for path in fashion_paths(data_dir).values() if path.exists()}
