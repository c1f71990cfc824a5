"""Reference completion methods compared against the graph autoencoder."""

import numpy as np

from .factorization import FactorModel, fit_nmf, fit_svd_mf
from .knn import KnnModel, fit_knn_cf, knn_complete, pearson_similarity
from .kriging import Variogram, fit_variogram, krige, krige_column, kriging_complete


def global_mean_complete(obs) -> np.ndarray:
    """Every entry set to the mean of the known entries."""
    known = obs.values[obs.mask]
    return np.full(obs.shape, float(known.mean()) if len(known) else 0.0)


__all__ = [
    "FactorModel", "KnnModel", "Variogram",
    "fit_knn_cf", "fit_nmf", "fit_svd_mf", "fit_variogram",
    "global_mean_complete", "knn_complete", "krige", "krige_column", "kriging_complete",
    "pearson_similarity",
]
