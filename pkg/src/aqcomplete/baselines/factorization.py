"""Latent-factor completion: biased SGD factorization and masked NMF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DivergedTrainingError, InputError


@dataclass
class FactorModel:
    row_factors: np.ndarray
    col_factors: np.ndarray
    row_bias: np.ndarray
    col_bias: np.ndarray
    global_mean: float = 0.0

    def predict(self) -> np.ndarray:
        return (self.global_mean + self.row_bias[:, None] + self.col_bias[None, :]
                + self.row_factors @ self.col_factors.T)


@np.errstate(over="ignore", invalid="ignore")
def fit_svd_mf(obs, k: int = 20, reg: float = 0.02, lr: float = 0.005, epochs: int = 100,
               seed: int = 0, init_sd: float = 0.1) -> FactorModel:
    """Biased matrix factorization trained by per-entry SGD over shuffled known entries.

    Minimises ``sum (x - mu - b_i - c_j - u_i.v_j)^2 + reg * (b_i^2 + c_j^2 + |u_i|^2 + |v_j|^2)``.
    """
    rows, cols = np.nonzero(obs.mask)
    if len(rows) == 0:
        raise InputError("no known entries to factorize")
    n, t = obs.shape
    vals = obs.values[rows, cols]
    rng = np.random.default_rng(seed)
    mu = float(vals.mean())
    u = rng.normal(0.0, init_sd, (n, k))
    v = rng.normal(0.0, init_sd, (t, k))
    bu = np.zeros(n)
    bv = np.zeros(t)
    order = np.arange(len(rows))
    for epoch in range(epochs):
        rng.shuffle(order)
        for e in order:
            i, j = rows[e], cols[e]
            ui, vj = u[i], v[j]
            err = vals[e] - (mu + bu[i] + bv[j] + ui @ vj)
            bu[i] += lr * (err - reg * bu[i])
            bv[j] += lr * (err - reg * bv[j])
            u[i] = ui + lr * (err * vj - reg * ui)
            v[j] = vj + lr * (err * ui - reg * vj)
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise DivergedTrainingError(f"svd factorization diverged at epoch {epoch}", epoch)
    return FactorModel(u, v, bu, bv, mu)


def masked_sq_error(x, w, l, f) -> float:
    return float((w * (x - l @ f.T) ** 2).sum())


def fit_nmf(obs, k: int = 15, epochs: int = 200, seed: int = 0, eps: float = 1e-12,
            history: list | None = None) -> FactorModel:
    """Non-negative factorization of the known entries by weighted multiplicative updates.

    Each update is the Lee-Seung rule with the 0/1 mask as weights, so the
    masked squared error never increases. Pass a list as ``history`` to
    record the objective after every epoch.
    """
    w = obs.mask.astype(np.float64)
    x = np.where(obs.mask, obs.values, 0.0)
    if (x < 0).any():
        raise InputError("NMF needs non-negative known entries")
    if not obs.mask.any():
        raise InputError("no known entries to factorize")
    n, t = x.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(x[obs.mask].mean() / k) if x.any() else 1.0
    l = rng.uniform(0.01, 1.0, (n, k)) * scale
    f = rng.uniform(0.01, 1.0, (t, k)) * scale
    wx = w * x
    if history is not None:
        history.append(masked_sq_error(x, w, l, f))
    for _ in range(epochs):
        l *= (wx @ f) / ((w * (l @ f.T)) @ f + eps)
        f *= (wx.T @ l) / ((w.T * (f @ l.T)) @ l + eps)
        if history is not None:
            history.append(masked_sq_error(x, w, l, f))
    return FactorModel(l, f, np.zeros(n), np.zeros(t), 0.0)
