from .acquisition import (
    AcquisitionResult,
    PredictiveDistribution,
    acquire_random,
    acquire_topk,
    mc_predict,
    predictive_entropy,
)

__all__ = [
    'AcquisitionResult', 'PredictiveDistribution',
    'acquire_random', 'acquire_topk', 'mc_predict', 'predictive_entropy',
]
