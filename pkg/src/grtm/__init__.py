"""Gaussian relational topic model: link prediction from shared images."""

from grtm.errors import ContractError, FormatError, GRTMError, NumericError
from grtm.inference import FitConfig, fit
from grtm.model import Corpus, FittedModel, Hyperparams, LinkModel, LinkSet, TopicParams, VariationalState

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "Corpus",
    "FitConfig",
    "FittedModel",
    "FormatError",
    "GRTMError",
    "Hyperparams",
    "LinkModel",
    "LinkSet",
    "NumericError",
    "TopicParams",
    "VariationalState",
    "fit",
]
