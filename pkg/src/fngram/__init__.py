"""Desk-scale future n-gram sequence-to-sequence toolkit."""

from importlib import resources

from .model import ModelConfig, ProphetModel
from .tensor import Tensor

__all__ = ["ModelConfig", "ProphetModel", "Tensor", "data_path"]
__version__ = "0.1.0"


def data_path(name: str):
    """Path to a bundled file (``toy_corpus.txt``, ``toy.cfg``)."""
    return resources.files(__package__) / "data" / name
