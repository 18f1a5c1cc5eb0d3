"""Multilevel graph embedding on multicore CPUs.

Graphs are coarsened into a hierarchy, embedded from the coarsest level
down, and optionally trained part by part under a memory budget.
"""

__version__ = "0.1.0"

from ._jit import JIT_ENABLED
from .coarsening import CoarseningConfig, CoarseningResult, Heuristics, LevelMapping, coarsen
from .evaluation import auc_roc, eval_link_prediction, eval_node_classification
from .executor import embed_partitioned
from .formats import read_gemb, write_gemb
from .graph import Graph, load_csr, load_edge_list, save_csr, split_link_pred
from .partition import PartitionConfig, kernel_order, make_partition
from .presets import PRESETS
from .sampling import WalkConfig
from .trainer import TrainConfig, calculate_epochs, embed_multilevel, train_level, update_embed

__all__ = [
    "JIT_ENABLED", "CoarseningConfig", "CoarseningResult", "Heuristics", "LevelMapping", "coarsen",
    "auc_roc", "eval_link_prediction", "eval_node_classification", "embed_partitioned",
    "read_gemb", "write_gemb", "Graph", "load_csr", "load_edge_list", "save_csr",
    "split_link_pred", "PartitionConfig", "kernel_order", "make_partition", "PRESETS",
    "WalkConfig", "TrainConfig", "calculate_epochs", "embed_multilevel", "train_level",
    "update_embed",
]
