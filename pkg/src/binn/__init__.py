"""Behavior-intensive neural networks for next-item recommendation."""

__version__ = "0.1.0"

from .core import Corpus, Interaction, InteractionSequence, ItemVocab, read_log, write_log
from .datagen import SynthConfig, generate
from .embed import EmbedConfig, EmbeddingSpace, train_witem2vec
from .evaluation import ItemKNN, SPop, cold_start_eval, evaluate
from .ingest import preprocess, split_by_time
from .model import BinnConfig, BinnModel

__all__ = [
    "BinnConfig", "BinnModel", "Corpus", "EmbedConfig", "EmbeddingSpace", "Interaction",
    "InteractionSequence", "ItemKNN", "ItemVocab", "SPop", "SynthConfig", "cold_start_eval",
    "evaluate", "generate", "preprocess", "read_log", "split_by_time", "train_witem2vec", "write_log",
]
