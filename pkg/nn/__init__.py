from .layers import LayerSpec, fashion_specs
from .model import GradientSet, Model, init_model
from .network import EVAL, ForwardTrace, Mode, backward, cross_entropy, forward, sgd_step

__all__ = [
    'LayerSpec', 'fashion_specs',
    'GradientSet', 'Model', 'init_model',
    'EVAL', 'ForwardTrace', 'Mode', 'backward', 'cross_entropy', 'forward', 'sgd_step',
]
