from .aggregation import AggregationWeights, aggregate_gradients, ave_fl, mix_fl, opt_fl
from .experiment import ExperimentConfig, parse_config, parse_config_text
from .runner import FederationRunner, RunResult
from .training import local_train, train_initial

__all__ = [
    'AggregationWeights', 'aggregate_gradients', 'ave_fl', 'mix_fl', 'opt_fl',
    'ExperimentConfig', 'parse_config', 'parse_config_text',
    'FederationRunner', 'RunResult',
    'local_train', 'train_initial',
]
