"""Reference model server for the entailment-tree toolkit wire protocol."""

from .scoring import CheckerModel, ScorerModel
from .seq2seq import GeneratorModel, load_pairs, train_reasoner
from .server import ServerConfig, create_app

__version__ = "0.1.0"

__all__ = [
    "CheckerModel",
    "GeneratorModel",
    "ScorerModel",
    "ServerConfig",
    "create_app",
    "load_pairs",
    "train_reasoner",
    "__version__",
]
