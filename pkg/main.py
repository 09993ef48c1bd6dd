import argparse
import asyncio
import logging
import sys
from dataclasses import replace
from typing import List, Optional

import uvloop

from analytics.analysis import analyze_run
from config import Config
from data.fetch import fetch_fashion
from data.idx import fashion_checksums, load_fashion
from database.database import run_registry
from federation.experiment import parse_config
from federation.runner import FederationRunner
from utils.errors import ConfigError, SimulatorError
from utils.formatters import format_accuracy, format_sweep_summary
from utils.manifest import RunPaths
from utils.verification import run_verification

asyncio.set_event_loop_policy(uvloop.EventLoopPolicy())

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VERIFICATION = 3


def setup_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(Config.LOG_FILE),
            logging.StreamHandler()
        ]
    )


def parse_seeds(raw: Optional[str]) -> Optional[List[int]]:
    """'0,1,2' или '0-4'"""
    if not raw:
        return None
    seeds = []
    for part in raw.split(","):
        part = part.strip()
        if "-" in part:
            start, stop = part.split("-", 1)
            if not (start.isdigit() and stop.isdigit()) or int(stop) < int(start):
                raise ConfigError("seeds", f"неверный диапазон {part!r}")
            seeds.extend(range(int(start), int(stop) + 1))
        elif part.isdigit():
            seeds.append(int(part))
        else:
            raise ConfigError("seeds", f"неверный сид {part!r}")
    return seeds


async def fetch_data(args) -> int:
    fetch_fashion(args.data_dir, args.url, force=args.force)
    return EXIT_OK


async def run_experiments(args) -> int:
    configs = []
    for path in args.configs:
        config = parse_config(path)
        if args.name and len(args.configs) == 1:
            config = replace(config, name=args.name)
        seeds = parse_seeds(args.seeds)
        configs.extend([config.with_seed(s) for s in seeds] if seeds else [config])

    data_dir = args.data_dir or Config.DATA_DIR
    logger.info(f"Загрузка Fashion-MNIST из {data_dir}...")
    train, test = load_fashion(data_dir)
    checksums = fashion_checksums(data_dir)
    logger.info(f"Обучающих примеров {len(train)}, тестовых {len(test)}")

    registry = None if args.no_registry else run_registry
    threads = args.threads or Config.THREADS
    results = {}
    try:
        for config in configs:
            paths = RunPaths.for_run(config.name, args.out)
            runner = FederationRunner(config, train, test, threads=threads, paths=paths,
                                      registry=registry, checksums=checksums)
            result = await runner.run()
            results.setdefault(f"{config.regime} {config.label} {config.strategy}", []).append(result.final_accuracy)
    finally:
        if registry is not None:
            await registry.close()

    if len(configs) > 1:
        logger.info(format_sweep_summary(results))
    return EXIT_OK


async def verify(args) -> int:
    results = run_verification(args.checkpoint)
    failed = [r.name for r in results if not r.ok]
    if failed:
        logger.error(f"Проверки не пройдены: {', '.join(failed)}")
        return EXIT_VERIFICATION
    logger.info(f"Все проверки пройдены ({len(results)})")
    return EXIT_OK


async def analyze(args) -> int:
    _, test = load_fashion(args.data_dir or Config.DATA_DIR)
    report = analyze_run(args.manifest, test, args.label, args.samples)
    logger.info(f"Записано файлов: {len(report.files)}")
    return EXIT_OK


async def list_runs(args) -> int:
    try:
        for run in await run_registry.list_runs(args.limit):
            logger.info(
                f"#{run.id} {run.name}: {run.regime}/{run.strategy}, сид {run.seed}, {run.status}, "
                f"точность {format_accuracy(run.final_accuracy)}, {run.manifest_path or '-'}"
            )
    finally:
        await run_registry.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flsim",
        description="Детерминированный симулятор федеративного обучения на Fashion-MNIST",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="отладочный журнал")
    sub = parser.add_subparsers(dest="command", required=True)

    fetch = sub.add_parser("fetch-data", help="скачать Fashion-MNIST")
    fetch.add_argument("--data-dir", default=None)
    fetch.add_argument("--url", default=None, help="базовый адрес зеркала")
    fetch.add_argument("--force", action="store_true", help="скачать заново")
    fetch.set_defaults(handler=fetch_data)

    run = sub.add_parser("run", help="запустить эксперименты по файлам конфигурации")
    run.add_argument("configs", nargs="+", help="файлы key=value")
    run.add_argument("--threads", type=int, default=None, help="потоков для устройств")
    run.add_argument("--seeds", default=None, help="сиды, например 0,1,2 или 0-4")
    run.add_argument("--out", default=None, help="каталог запусков")
    run.add_argument("--name", default=None, help="имя запуска (для одного файла)")
    run.add_argument("--data-dir", default=None)
    run.add_argument("--no-registry", action="store_true", help="не писать в реестр запусков")
    run.set_defaults(handler=run_experiments)

    check = sub.add_parser("verify", help="быстрые проверки свойств")
    check.add_argument("--checkpoint", default=None, help="проверить чтение этого чекпоинта")
    check.set_defaults(handler=verify)

    report = sub.add_parser("analyze", help="пересчитать аналитику по манифесту")
    report.add_argument("manifest")
    report.add_argument("--label", type=int, default=1, help="класс для тепловых карт")
    report.add_argument("--samples", type=int, default=10, help="число примеров тепловой карты")
    report.add_argument("--data-dir", default=None)
    report.set_defaults(handler=analyze)

    runs = sub.add_parser("runs", help="последние запуски из реестра")
    runs.add_argument("--limit", type=int, default=20)
    runs.set_defaults(handler=list_runs)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        logger.error("❌ --threads должен быть положительным")
        return EXIT_VALIDATION
    try:
        return asyncio.run(args.handler(args))
    except ConfigError as e:
        logger.error(f"❌ Ошибка конфигурации: {e}")
        return EXIT_VALIDATION
    except SimulatorError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_RUNTIME
    except OSError as e:
        logger.error(f"❌ Ошибка ввода-вывода {e.filename or ''}: {e.strerror or e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
