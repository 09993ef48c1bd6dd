from sqlalchemy import Column, Integer, String, Float, DateTime, ForeignKey, Text, Index
from sqlalchemy.orm import declarative_base, relationship
from datetime import datetime
import json

Base = declarative_base()

class ExperimentRun(Base):
    __tablename__ = 'experiment_runs'

    id = Column(Integer, primary_key=True)
    name = Column(String(100), nullable=False, index=True)
    regime = Column(String(20), nullable=False)
    strategy = Column(String(10), nullable=False)
    seed = Column(Integer, nullable=False, default=0)
    config_text = Column(Text, nullable=False)
    status = Column(String(20), default='running')
    final_accuracy = Column(Float, nullable=True)
    manifest_path = Column(String(500), nullable=True)
    started_at = Column(DateTime, default=datetime.utcnow)
    ended_at = Column(DateTime, nullable=True)

    # Связи
    rounds = relationship("RoundResult", back_populates="run", order_by="RoundResult.round_index",
                          cascade="all, delete-orphan")

    __table_args__ = (
        Index('ix_runs_status', 'status'),
        Index('ix_runs_started_at', 'started_at'),
    )

class RoundResult(Base):
    __tablename__ = 'round_results'

    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey('experiment_runs.id'), nullable=False)
    round_index = Column(Integer, nullable=False)
    model_id = Column(String(20), nullable=False)
    accuracy = Column(Float, nullable=False)
    strategy_chosen = Column(String(10), nullable=True)
    histogram = Column(Text)
    created_at = Column(DateTime, default=datetime.utcnow)

    # Связи
    run = relationship("ExperimentRun", back_populates="rounds")

    __table_args__ = (
        Index('ix_rounds_run_round', 'run_id', 'round_index'),
    )

    @property
    def histogram_list(self):
        """Гистограмма верно классифицированных по классам из JSON строки"""
        if not self.histogram:
            return []
        try:
            return json.loads(self.histogram)
        except ValueError:
            return []

    @histogram_list.setter
    def histogram_list(self, value):
        self.histogram = json.dumps([int(v) for v in value]) if value is not None else None
