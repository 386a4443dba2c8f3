"""GMM posterior embeddings for unsupervised binary hashing."""

from .dataset import FeatureMatrix, SplitSpec, load, save, split
from .errors import ConfigError, DataError, FormatError, GembError, NumericalError, ShapeError
from .evaluation import EvalReport, RetrievalIndex, evaluate
from .gemb import GembModel, embed, fit_gemb, power_normalize
from .gmm import CovarianceKind, EmConfig, GmmModel, bic, fit_gmm, log_likelihood, posteriors
from .hashing import BinaryCodes, encode, fit_itq, fit_lsh, hamming_distance
from .pca import PcaModel, fit_pca, project

__version__ = "0.1.0"

__all__ = [
    "BinaryCodes", "ConfigError", "CovarianceKind", "DataError", "EmConfig", "EvalReport", "FeatureMatrix",
    "FormatError", "GembError", "GembModel", "GmmModel", "NumericalError", "PcaModel", "RetrievalIndex",
    "ShapeError", "SplitSpec", "bic", "embed", "encode", "evaluate", "fit_gemb", "fit_gmm", "fit_itq",
    "fit_lsh", "fit_pca", "hamming_distance", "load", "log_likelihood", "posteriors", "power_normalize",
    "project", "save", "split",
]
