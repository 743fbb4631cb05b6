"""Interpretable graph similarity via learned one-to-one node alignment."""

__version__ = "0.1.0"

from .graph import Graph, GraphPair, DatasetSplit  # noqa: E402
from .ged import exact_ged, brute_force_ged  # noqa: E402
from .model import GNAModel, GnaConfig, AlignmentReport  # noqa: E402
from .trainer import TrainConfig, train  # noqa: E402

__all__ = [
    "Graph", "GraphPair", "DatasetSplit", "exact_ged", "brute_force_ged",
    "GNAModel", "GnaConfig", "AlignmentReport", "TrainConfig", "train", "__version__",
]
