"""Unsupervised anomaly segmentation by per-location Gaussian modeling.

Feature maps from a frozen CNN are modeled with one Gaussian per spatial
location; anomaly scores are Mahalanobis distances computed in a low-rank
embedded space, which keeps the per-location factorizations at k x k instead
of F x F.  Haar-distributed semi-orthogonal embeddings make the embedded
distance an unbiased stand-in for the full one.
"""

from . import bench, cli, embedding, errors, features, gaussian, linalg, metrics, verify
from .embedding import (
    EmbeddingGrid,
    EmbeddingMatrix,
    STRATEGIES,
    gaussian_random,
    random_selection,
    semi_orthogonal,
)
from .errors import SomdError
from .gaussian import (
    GaussianModel,
    RunConfig,
    fit,
    load_model,
    mahalanobis_sq,
    save_model,
    score_image,
    score_images,
)
from .metrics import EvalResult, connected_components, evaluate, pro_score, roc_auc
from .verify import VerifyReport, run_suite, spectra_experiment

__version__ = "0.1.0"

__all__ = [
    "EmbeddingGrid",
    "EmbeddingMatrix",
    "EvalResult",
    "GaussianModel",
    "RunConfig",
    "STRATEGIES",
    "SomdError",
    "VerifyReport",
    "bench",
    "cli",
    "connected_components",
    "embedding",
    "errors",
    "evaluate",
    "features",
    "fit",
    "gaussian",
    "gaussian_random",
    "linalg",
    "load_model",
    "mahalanobis_sq",
    "metrics",
    "pro_score",
    "random_selection",
    "roc_auc",
    "run_suite",
    "save_model",
    "score_image",
    "score_images",
    "semi_orthogonal",
    "spectra_experiment",
    "verify",
    "__version__",
]
