"""HyperGT: a dense transformer over hypergraph nodes and hyperedges."""

from .data import Dataset, SplitSpec, generate_planted, load_dataset, make_splits
from .hypergraph import (
    Hypergraph,
    StarExpansion,
    load_hypergraph,
    save_hypergraph,
    star_expand,
    transition_matrix,
    validate,
)
from .losses import classification_loss, structure_loss, total_loss
from .model import ForwardTrace, HyperGT, HyperGTConfig, forward, predict
from .training import RunResult, TrainConfig, evaluate, multi_seed_run, train

__version__ = "0.1.0"
