"""Price-aware session-based recommendation on a heterogeneous hypergraph."""

from .dataset import ItemCatalog, PriceStats, Session, SplitDataset
from .hypergraph import HeteroHypergraph, NodeRef, NodeType, build
from .model import CoHHNRecommender, Hyperparams, init_params

__all__ = [
    "CoHHNRecommender",
    "HeteroHypergraph",
    "Hyperparams",
    "ItemCatalog",
    "NodeRef",
    "NodeType",
    "PriceStats",
    "Session",
    "SplitDataset",
    "build",
    "init_params",
]

__version__ = "0.1.0"
