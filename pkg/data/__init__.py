from .dataset import Dataset, Pool, ReplayBuffer, Shard
from .idx import load_fashion, load_idx
from .partition import (
    build_pool,
    build_replay,
    partition_type1,
    quarter_split,
    random_sample,
    split_validation,
)

__all__ = [
    'Dataset', 'Pool', 'ReplayBuffer', 'Shard',
    'load_fashion', 'load_idx',
    'build_pool', 'build_replay', 'partition_type1', 'quarter_split', 'random_sample', 'split_validation',
]
