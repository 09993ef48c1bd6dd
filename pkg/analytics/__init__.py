from .metrics import (
    DivergenceReport,
    RoundMetrics,
    accuracy,
    activation_affinity,
    activation_heatmap,
    cosine_similarity,
    evaluate,
    layer_divergence,
    per_class_histogram,
)

__all__ = [
    'DivergenceReport', 'RoundMetrics',
    'accuracy', 'activation_affinity', 'activation_heatmap', 'cosine_similarity',
    'evaluate', 'layer_divergence', 'per_class_histogram',
]
