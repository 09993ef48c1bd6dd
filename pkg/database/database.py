from sqlalchemy.ext.asyncio import AsyncSession, create_async_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy import select, text
from contextlib import asynccontextmanager
from datetime import datetime
from typing import AsyncGenerator, List, Optional
from config import Config
from .models import Base, ExperimentRun, RoundResult
import logging

logger = logging.getLogger(__name__)


class RunRegistry:
    """Реестр запусков: что запускалось, с какой конфигурацией и чем закончилось.

    Ошибки реестра не прерывают эксперимент: методы записи логируют их
    и возвращают None.
    """

    def __init__(self, url: str = None, timeout: int = None):
        self.url = url or Config.DATABASE_URL
        self.engine = create_async_engine(
            self.url,
            echo=False,
            connect_args={
                "check_same_thread": False,
                "timeout": timeout or Config.DATABASE_TIMEOUT,
            },
            pool_pre_ping=True,
        )
        self.session_factory = sessionmaker(
            self.engine,
            class_=AsyncSession,
            expire_on_commit=False,
            autocommit=False,
            autoflush=False
        )
        self._ready = False

    async def init_db(self):
        """Создание таблиц и настройка SQLite"""
        async with self.engine.begin() as conn:
            await conn.run_sync(Base.metadata.create_all)

        async with self.engine.connect() as conn:
            await conn.execute(text("PRAGMA journal_mode=WAL"))
            await conn.execute(text("PRAGMA synchronous=NORMAL"))
            await conn.execute(text("PRAGMA busy_timeout=5000"))
            await conn.execute(text("PRAGMA foreign_keys=ON"))
            await conn.commit()

        self._ready = True
        logger.info(f"Реестр запусков инициализирован: {self.url}")

    @asynccontextmanager
    async def get_db(self) -> AsyncGenerator[AsyncSession, None]:
        """Сессия БД с commit/rollback"""
        if not self._ready:
            await self.init_db()
        session = self.session_factory()
        try:
            yield session
            await session.commit()
        except Exception as e:
            await session.rollback()
            logger.error(f"Ошибка в сессии БД: {e}")
            raise
        finally:
            await session.close()

    async def start_run(self, config) -> Optional[int]:
        try:
            async with self.get_db() as session:
                run = ExperimentRun(
                    name=config.name,
                    regime=config.regime,
                    strategy=config.strategy,
                    seed=config.seed,
                    config_text=config.to_text(),
                )
                session.add(run)
                await session.flush()
                logger.info(f"Запуск {config.name} зарегистрирован под номером {run.id}")
                return run.id
        except Exception as e:
            logger.error(f"Не удалось зарегистрировать запуск {config.name}: {e}")
            return None

    async def record_round(self, run_id: Optional[int], metrics, ensemble_label: str = "ensemble"):
        if run_id is None:
            return
        try:
            async with self.get_db() as session:
                for device_id, acc in sorted(metrics.device_accuracies.items()):
                    result = RoundResult(run_id=run_id, round_index=metrics.round_index,
                                         model_id=f"D{device_id}", accuracy=acc)
                    result.histogram_list = metrics.device_histograms.get(device_id)
                    session.add(result)
                result = RoundResult(run_id=run_id, round_index=metrics.round_index, model_id=ensemble_label,
                                     accuracy=metrics.ensemble_accuracy, strategy_chosen=metrics.strategy_chosen)
                result.histogram_list = metrics.ensemble_histogram
                session.add(result)
        except Exception as e:
            logger.error(f"Не удалось записать раунд {metrics.round_index} запуска {run_id}: {e}")

    async def finish_run(self, run_id: Optional[int], status: str, final_accuracy: float = None,
                         manifest_path: str = None):
        if run_id is None:
            return
        try:
            async with self.get_db() as session:
                run = await session.get(ExperimentRun, run_id)
                if not run:
                    logger.warning(f"Запуск {run_id} не найден в реестре")
                    return
                run.status = status
                run.final_accuracy = final_accuracy
                run.manifest_path = manifest_path
                run.ended_at = datetime.utcnow()
            logger.info(f"Запуск {run_id} завершён со статусом {status}")
        except Exception as e:
            logger.error(f"Не удалось завершить запуск {run_id}: {e}")

    async def list_runs(self, limit: int = 20) -> List[ExperimentRun]:
        async with self.get_db() as session:
            result = await session.execute(
                select(ExperimentRun).order_by(ExperimentRun.started_at.desc()).limit(limit)
            )
            return list(result.scalars().all())

    async def round_results(self, run_id: int) -> List[RoundResult]:
        async with self.get_db() as session:
            result = await session.execute(
                select(RoundResult).where(RoundResult.run_id == run_id)
                .order_by(RoundResult.round_index, RoundResult.id)
            )
            return list(result.scalars().all())

    async def close(self):
        await self.engine.dispose()


# Глобальный экземпляр
run_registry = RunRegistry()
