from .models import GCN, GraphSAGE, build_model, exact_backward, normalize_adjacency
from .policy import (
    BackwardEngine,
    BackwardPolicy,
    LayerCache,
    OperatorStats,
    SampledBackward,
    TopKBackward,
    cached_sliced_operator,
    refresh_allocation,
    switch_active,
)
from .training import TrainResult, TrainingError, train

__all__ = [
    "GCN",
    "GraphSAGE",
    "build_model",
    "exact_backward",
    "normalize_adjacency",
    "BackwardEngine",
    "BackwardPolicy",
    "LayerCache",
    "OperatorStats",
    "SampledBackward",
    "TopKBackward",
    "cached_sliced_operator",
    "refresh_allocation",
    "switch_active",
    "TrainResult",
    "TrainingError",
    "train",
]
