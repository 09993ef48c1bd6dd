# config.py - настройки окружения симулятора
import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Каталог с IDX-файлами Fashion-MNIST
    DATA_DIR = os.getenv("FLSIM_DATA_DIR", "datasets/fashion")

    # Куда складываем метрики, чекпоинты и манифесты
    RUNS_DIR = os.getenv("FLSIM_RUNS_DIR", "runs")

    DATABASE_URL = os.getenv("DATABASE_URL", "sqlite+aiosqlite:///runs.db")
    DATABASE_TIMEOUT = int(os.getenv("DATABASE_TIMEOUT", "60"))

    LOG_FILE = os.getenv("FLSIM_LOG_FILE", "flsim.log")

    FASHION_MNIST_URL = os.getenv(
        "FASHION_MNIST_URL",
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"
    )
    FETCH_TIMEOUT = int(os.getenv("FLSIM_FETCH_TIMEOUT", "120"))

    threads_str = os.getenv("FLSIM_THREADS", "1").strip()
    THREADS = int(threads_str) if threads_str.isdigit() and int(threads_str) > 0 else 1

    TOOL_VERSION = "1.0.0"
