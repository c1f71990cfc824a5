"""Neighbourhood collaborative filtering over locations.

Locations play the role of items: two locations are similar when their
co-observed timeslots correlate. A missing entry is the target location's
mean plus the similarity-weighted mean deviation of its most similar
locations observed in the same slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def pearson_similarity(values, mask, min_overlap: int = 3) -> np.ndarray:
    """Pairwise Pearson correlation over co-observed columns.

    Pairs with fewer than ``min_overlap`` shared columns, or with zero
    variance on the overlap, get NaN.
    """
    m = np.asarray(mask, dtype=np.float64)
    x = np.where(mask, values, 0.0)
    n = m @ m.T
    sx = x @ m.T
    sy = sx.T
    sxx = (x * x) @ m.T
    syy = sxx.T
    sxy = x @ x.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sxy - sx * sy / n
        vx = sxx - sx * sx / n
        vy = syy - sy * sy / n
        sim = cov / np.sqrt(vx * vy)
    tol = 1e-12 * np.maximum(1.0, np.abs(sxx) + np.abs(syy))
    sim[(n < min_overlap) | (vx <= tol) | (vy <= tol)] = np.nan
    return np.clip(sim, -1.0, 1.0)


@dataclass
class KnnModel:
    similarity: np.ndarray
    row_means: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    k: int

    def predict(self) -> np.ndarray:
        n, t = self.values.shape
        dev = np.where(self.mask, self.values - self.row_means[:, None], 0.0)
        sim = np.where(np.isfinite(self.similarity) & (self.similarity > 0), self.similarity, 0.0)
        np.fill_diagonal(sim, 0.0)
        out = np.repeat(self.row_means[:, None], t, axis=1)
        for j in range(t):
            obs_rows = np.flatnonzero(self.mask[:, j])
            if len(obs_rows) == 0:
                continue
            s = sim[:, obs_rows]
            if len(obs_rows) > self.k:
                top = np.argsort(-s, axis=1, kind="stable")[:, :self.k]
                keep = np.zeros(s.shape, dtype=bool)
                np.put_along_axis(keep, top, True, axis=1)
                s = np.where(keep, s, 0.0)
            wsum = s.sum(axis=1)
            num = s @ dev[obs_rows, j]
            ok = wsum > 0
            out[ok, j] += num[ok] / wsum[ok]
        return out


def fit_knn_cf(obs, k: int = 40, min_overlap: int = 3) -> KnnModel:
    """Fit the neighbourhood model; locations without data fall back to the global mean."""
    mask = obs.mask
    values = obs.values
    counts = mask.sum(axis=1)
    known = values[mask]
    global_mean = float(known.mean()) if len(known) else 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        row_means = np.where(counts > 0, np.where(mask, values, 0.0).sum(axis=1) / counts, global_mean)
    sim = pearson_similarity(values, mask, min_overlap)
    return KnnModel(sim, row_means, np.asarray(values), np.asarray(mask), k)


def knn_complete(obs, k: int = 40, min_overlap: int = 3) -> np.ndarray:
    return fit_knn_cf(obs, k, min_overlap).predict()
