"""Ordinary kriging with linear or exponential semivariograms.

Variograms are fitted per timeslot on the empirical semivariogram (15
equal-width lag bins up to half the largest pairwise distance). The
exponential model is ``n + s (1 - exp(-h / a))`` with no factor-3 practical
range convention, so ``a`` is the e-folding distance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from ..errors import InputError
from ..geo import haversine_array

log = logging.getLogger(__name__)

N_BINS = 15
MIN_FIT_POINTS = 5
MIN_KRIGE_POINTS = 2
RIDGE = 1e-10


@dataclass(frozen=True)
class Variogram:
    kind: str
    nugget: float = 0.0
    slope: float = 0.0
    sill: float = 0.0
    range: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "exponential"):
            raise InputError(f"unknown variogram kind {self.kind!r}")
        if self.nugget < 0 or self.slope < 0 or self.sill < 0 or not self.range > 0:
            raise InputError(f"invalid variogram parameters {self}")

    def __call__(self, h):
        h = np.asarray(h, dtype=np.float64)
        if self.kind == "linear":
            return self.nugget + self.slope * h
        return self.nugget + self.sill * (1.0 - np.exp(-h / self.range))


def _coords(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return points.astype(np.float64).reshape(-1, 2)
    return np.array([[p.lat, p.lon] for p in points], dtype=np.float64).reshape(-1, 2)


def _distance_matrix(a, b) -> np.ndarray:
    return haversine_array(a[:, 0:1], a[:, 1:2], b[None, :, 0], b[None, :, 1])


def empirical_semivariogram(coords, values, n_bins: int = N_BINS):
    """Bin centres, semivariances and pair counts; empty bins are dropped."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64)
    d = _distance_matrix(coords, coords)
    iu = np.triu_indices(len(values), k=1)
    h = d[iu]
    g = 0.5 * (values[iu[0]] - values[iu[1]]) ** 2
    max_lag = 0.5 * h.max() if len(h) else 0.0
    if max_lag <= 0:
        return np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64)
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    inside = h <= max_lag
    which = np.clip(np.searchsorted(edges, h[inside], side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    sums = np.bincount(which, weights=g[inside], minlength=n_bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    ok = counts > 0
    return centres[ok], sums[ok] / counts[ok], counts[ok]


def _range_grid(lags: np.ndarray) -> np.ndarray:
    lo = max(lags.min(), 1.0) / 4.0
    hi = lags.max() * 4.0
    return np.geomspace(lo, hi, 40)


def fit_variogram(points, values, kind: str) -> Variogram | None:
    """Least-squares variogram fit; ``None`` signals too few points.

    ``points`` is a sequence of GeoPoints or an (n, 2) [lat, lon] array.
    Non-negativity of nugget, slope and sill is enforced with NNLS.
    """
    coords = _coords(points)
    values = np.asarray(values, dtype=np.float64)
    if len(values) < MIN_FIT_POINTS:
        return None
    lags, gamma, _ = empirical_semivariogram(coords, values)
    if len(lags) == 0 or np.allclose(gamma, 0.0):
        return Variogram(kind)
    if kind == "linear":
        coef, _ = nnls(np.column_stack([np.ones_like(lags), lags]), gamma)
        return Variogram("linear", nugget=float(coef[0]), slope=float(coef[1]))
    if kind != "exponential":
        raise InputError(f"unknown variogram kind {kind!r}")
    best = None
    for a in _range_grid(lags):
        basis = np.column_stack([np.ones_like(lags), 1.0 - np.exp(-lags / a)])
        coef, resid = nnls(basis, gamma)
        if best is None or resid < best[0]:
            best = (resid, a, coef)
    _, a, coef = best
    return Variogram("exponential", nugget=float(coef[0]), sill=float(max(coef[1], 1e-12)), range=float(a))


def krige(known_coords, known_values, target_coords, variogram: Variogram) -> np.ndarray:
    """Ordinary kriging predictions (Lagrange-multiplier form).

    The semivariance at zero separation is taken as 0, so a target that
    coincides with a sample reproduces it exactly.
    """
    kc = np.asarray(known_coords, dtype=np.float64).reshape(-1, 2)
    kv = np.asarray(known_values, dtype=np.float64)
    tc = np.asarray(target_coords, dtype=np.float64).reshape(-1, 2)
    n = len(kv)
    if n < MIN_KRIGE_POINTS:
        fill = kv.mean() if n else 0.0
        return np.full(len(tc), fill)
    if len(tc) == 0:
        return np.zeros(0)
    d = _distance_matrix(kc, kc)
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = np.where(d > 0, variogram(d), 0.0)
    a[:n, n] = 1.0
    a[n, :n] = 1.0
    dt = _distance_matrix(kc, tc)
    b = np.ones((n + 1, len(tc)))
    b[:n] = np.where(dt > 0, variogram(dt), 0.0)
    try:
        w = np.linalg.solve(a, b)
        if not np.isfinite(w).all():
            raise np.linalg.LinAlgError("non-finite kriging weights")
    except np.linalg.LinAlgError:
        a[np.arange(n), np.arange(n)] += RIDGE
        w = np.linalg.lstsq(a, b, rcond=None)[0]
    return kv @ w[:n]


def krige_column(known, targets, variogram: Variogram | None) -> np.ndarray:
    """Kriging for one timeslot; ``known`` is a list of (GeoPoint, value).

    Falls back to the column mean when fewer than two samples exist or no
    variogram could be fitted.
    """
    kc = _coords([p for p, _ in known])
    kv = np.array([v for _, v in known], dtype=np.float64)
    tc = _coords(targets)
    if variogram is None or len(kv) < MIN_KRIGE_POINTS:
        return np.full(len(tc), kv.mean() if len(kv) else 0.0)
    return krige(kc, kv, tc, variogram)


def kriging_complete(obs, kind: str) -> np.ndarray:
    """Complete every column of ``obs`` independently by ordinary kriging."""
    coords = obs.coords()
    n, t = obs.shape
    out = np.empty((n, t))
    known_all = obs.values[obs.mask]
    global_mean = float(known_all.mean()) if len(known_all) else 0.0
    fallbacks = 0
    for j in range(t):
        rows = np.flatnonzero(obs.mask[:, j])
        vals = obs.values[rows, j]
        if len(rows) == 0:
            out[:, j] = global_mean
            fallbacks += 1
            continue
        vg = fit_variogram(coords[rows], vals, kind)
        if vg is None:
            out[:, j] = vals.mean()
            fallbacks += 1
            continue
        out[:, j] = krige(coords[rows], vals, coords, vg)
    if fallbacks:
        log.debug("kriging-%s: %d of %d columns used mean fallback", kind, fallbacks, t)
    return out
