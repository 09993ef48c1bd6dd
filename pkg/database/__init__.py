from .database import RunRegistry, run_registry
from .models import Base, ExperimentRun, RoundResult

__all__ = ['Base', 'ExperimentRun', 'RoundResult', 'RunRegistry', 'run_registry']
