"""Загрузка четырёх файлов Fashion-MNIST с проверкой размеров"""
import logging
from pathlib import Path
from typing import Dict, Optional, Union

import requests

from config import Config
from data.idx import FASHION_FILES
from utils.errors import DataFetchError

logger = logging.getLogger(__name__)

# Опубликованные размеры сжатых файлов в байтах
PUBLISHED_SIZES = {
    "train-images-idx3-ubyte.gz": 26421880,
    "train-labels-idx1-ubyte.gz": 29515,
    "t10k-images-idx3-ubyte.gz": 4422102,
    "t10k-labels-idx1-ubyte.gz": 5148,
}


def _download(url: str, target: Path, timeout: int):
    tmp = target.with_suffix(target.suffix + ".part")
    try:
        with requests.get(url, stream=True, timeout=timeout) as resp:
            resp.raise_for_status()
            with open(tmp, "wb") as fh:
                for chunk in resp.iter_content(chunk_size=1 << 16):
                    fh.write(chunk)
    except requests.RequestException as e:
        tmp.unlink(missing_ok=True)
        raise DataFetchError(f"не удалось скачать {url}: {e}") from e
    tmp.replace(target)


def fetch_fashion(data_dir: Union[str, Path] = None, base_url: Optional[str] = None,
                  force: bool = False) -> Dict[str, Path]:
    """Скачать недостающие файлы и проверить их размеры"""
    data_dir = Path(data_dir or Config.DATA_DIR)
    base_url = base_url or Config.FASHION_MNIST_URL
    if not base_url.endswith("/"):
        base_url += "/"
    data_dir.mkdir(parents=True, exist_ok=True)

    paths = {}
    for key, filename in FASHION_FILES.items():
        target = data_dir / filename
        expected = PUBLISHED_SIZES[filename]
        if target.exists() and not force and target.stat().st_size == expected:
            logger.info(f"✅ {filename} уже загружен")
        else:
            logger.info(f"Скачиваю {filename}...")
            _download(base_url + filename, target, Config.FETCH_TIMEOUT)
        size = target.stat().st_size
        if size != expected:
            raise DataFetchError(f"{target}: размер {size} байт, ожидалось {expected}")
        paths[key] = target
    logger.info(f"Данные Fashion-MNIST готовы в {data_dir}")
    return paths
