"""Variational graph autoencoder for matrix completion on a location graph.

Architecture
------------
Each node's input row is its (standardized, zero-filled) time series
concatenated with its min-max scaled coordinates. Two independent GCN
stacks map it to the posterior mean ``mu`` (ReLU hidden layers, linear
output) and standard deviation ``sigma`` (ReLU hidden layers, sigmoid
output). A sample ``Z = mu + sigma * eps`` is decoded by a linear GCN layer
into the completed matrix.

Training minimises::

    MAE on known entries (raw units)
    + kl_weight    * KL(q(z|x) || N(0, I))
    + smooth_weight * sum_ij sum_{0<|j-k|<=w} exp(-|j-k|) (X~_ij - X~_ik)^2

with full-batch gradient steps; ``Z = mu`` at inference.
"""

from __future__ import annotations

import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import DivergedTrainingError, InputError
from .ingest import ObservationMatrix

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "aqcomplete-avgae-checkpoint/1"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class AvgaeConfig:
    latent_dim: int = 512
    encoder_layers: int = 4
    decoder_layers: int = 1
    learning_rate: float = 0.005
    kl_weight: float = 0.1
    smooth_weight: float = 0.8
    smooth_window: int = 3
    dropout: float = 0.4
    epochs: int = 2000
    patience: int = 200
    seed: int = 0
    smoothness_reduction: str = "mean"
    standardize_values: bool = True
    validation_fraction: float = 0.1
    optimizer: str = "gd"
    dropout_placement: str = "hidden"

    def validate(self, n_slots: int | None = None):
        if self.latent_dim < 1 or self.encoder_layers < 1 or self.decoder_layers < 1:
            raise InputError("latent_dim, encoder_layers and decoder_layers must be >= 1")
        if self.learning_rate < 0 or self.kl_weight < 0 or self.smooth_weight < 0:
            raise InputError("learning_rate, kl_weight and smooth_weight must be >= 0")
        if not 0 <= self.dropout < 1:
            raise InputError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.smoothness_reduction not in ("mean", "sum"):
            raise InputError(f"smoothness_reduction must be 'mean' or 'sum', got {self.smoothness_reduction!r}")
        if self.dropout_placement not in ("hidden", "all"):
            raise InputError(f"dropout_placement must be 'hidden' or 'all', got {self.dropout_placement!r}")
        if self.optimizer not in ("gd", "adam"):
            raise InputError(f"optimizer must be 'gd' or 'adam', got {self.optimizer!r}")
        if self.epochs < 0 or self.patience < 1:
            raise InputError("epochs must be >= 0 and patience >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise InputError("validation_fraction must be in [0, 1)")
        if self.smooth_window < 1:
            raise InputError("smooth_window must be >= 1")
        if n_slots is not None and self.smooth_weight > 0 and not self.smooth_window < n_slots:
            raise InputError(f"smooth_window {self.smooth_window} must be < T = {n_slots}")
        return self

    @classmethod
    def from_dict(cls, doc: dict) -> "AvgaeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown AVGAE config keys: {', '.join(sorted(unknown))}")
        return cls(**doc).validate()


@dataclass
class Scaling:
    """Affine maps applied to the inputs and undone on the outputs."""

    value_mean: float = 0.0
    value_scale: float = 1.0
    coord_min: tuple[float, float] = (0.0, 0.0)
    coord_span: tuple[float, float] = (1.0, 1.0)

    @classmethod
    def fit(cls, obs: ObservationMatrix, mask, standardize: bool) -> "Scaling":
        coords = obs.coords()
        lo = coords.min(axis=0)
        span = coords.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        mean, scale = 0.0, 1.0
        if standardize:
            known = obs.values[mask]
            mean = float(known.mean())
            sd = float(known.std())
            scale = sd if sd > 1e-12 else 1.0
        return cls(mean, scale, tuple(map(float, lo)), tuple(map(float, span)))

    def input_matrix(self, obs: ObservationMatrix, mask) -> np.ndarray:
        """``[X_std || S_scaled]`` with unknown entries of X set to 0."""
        x = np.where(mask, (obs.values - self.value_mean) / self.value_scale, 0.0)
        s = (obs.coords() - np.asarray(self.coord_min)) / np.asarray(self.coord_span)
        return np.hstack([x, s])


@dataclass
class AvgaeParams:
    mu_weights: list[np.ndarray]
    sigma_weights: list[np.ndarray]
    decoder_weights: list[np.ndarray]
    scaling: Scaling = field(default_factory=Scaling)

    @property
    def n_slots(self) -> int:
        return self.decoder_weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [*self.mu_weights, *self.sigma_weights, *self.decoder_weights]

    def copy(self) -> "AvgaeParams":
        return AvgaeParams([w.copy() for w in self.mu_weights], [w.copy() for w in self.sigma_weights],
                           [w.copy() for w in self.decoder_weights], self.scaling)


@dataclass
class LatentState:
    mu: nc.Tensor
    sigma: nc.Tensor
    z: nc.Tensor
    eps: np.ndarray | None


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(n_slots: int, config: AvgaeConfig, rng: np.random.Generator,
                scaling: Scaling | None = None) -> AvgaeParams:
    d = config.latent_dim
    enc_widths = [n_slots + 2] + [d] * config.encoder_layers
    dec_widths = [d] * config.decoder_layers + [n_slots]

    def stack(widths):
        return [glorot_uniform(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
    return AvgaeParams(stack(enc_widths), stack(enc_widths), stack(dec_widths), scaling or Scaling())


# -- model pieces -------------------------------------------------------------------

def gcn_layer(p, h, w, activation=nc.identity, drop_mask=None, rate: float = 0.0) -> nc.Tensor:
    """``activation(P @ dropout(H) @ W)``."""
    h = nc.dropout(h, drop_mask, rate)
    if h.cols != nc.constant(w).rows:
        raise nc.DimensionError(f"gcn_layer: input {h.shape} and weight {nc.constant(w).shape} are not aligned")
    return activation(nc.propagate(p, nc.matmul(h, w)))


def _gcn_stack(p, h, weights, last_activation, masks, rate):
    for k, w in enumerate(weights):
        act = last_activation if k == len(weights) - 1 else nc.relu
        h = gcn_layer(p, h, w, act, None if masks is None else masks[k], rate)
    return h


def encode(x_in, p, mu_weights, sigma_weights, masks=None, rate: float = 0.0):
    """Posterior parameters ``(mu, sigma)`` from two independent GCN stacks.

    ``masks`` is ``None`` at inference or a pair of per-layer dropout mask
    lists (one per branch).
    """
    x_in = nc.constant(x_in)
    mu_masks, sigma_masks = (None, None) if masks is None else masks
    mu = _gcn_stack(p, x_in, mu_weights, nc.identity, mu_masks, rate)
    sigma = _gcn_stack(p, x_in, sigma_weights, nc.sigmoid, sigma_masks, rate)
    return mu, sigma


def reparameterize(mu, sigma, noise) -> nc.Tensor:
    """``Z = mu + sigma * eps``; ``noise`` is eps itself, a seed or a Generator.

    eps enters the tape as a constant, so gradients reach ``mu`` and
    ``sigma`` only.
    """
    mu, sigma = nc.constant(mu), nc.constant(sigma)
    if isinstance(noise, np.ndarray):
        eps = noise
    else:
        eps = np.random.default_rng(noise).standard_normal(mu.shape)
    return nc.add(mu, nc.mul(sigma, eps))


def decode(z, p, decoder_weights, scaling: Scaling | None = None, masks=None, rate: float = 0.0):
    """Completed matrix in raw units (standardized units if ``scaling`` is None)."""
    out = _gcn_stack(p, nc.constant(z), decoder_weights, nc.identity, masks, rate)
    if scaling is None:
        return out
    return nc.add_scalar(nc.scale(out, scaling.value_scale), scaling.value_mean)


def kl_divergence(mu, sigma) -> nc.Tensor:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over latent dims, averaged over nodes."""
    mu, sigma = nc.constant(mu), nc.constant(sigma)
    if (sigma.value <= 0).any():
        raise InputError("sigma must be strictly positive")
    n, d = mu.shape
    total = nc.sub(nc.add(nc.sum_(nc.square(mu)), nc.sum_(nc.square(sigma))),
                   nc.scale(nc.sum_(nc.log(sigma)), 2.0))
    return nc.scale(nc.add_scalar(total, -n * d), 0.5 / n)


def _lag_operator(n_slots: int, window: int):
    """Column-difference matrix and pair weights for all lags within ``window``.

    Returns ``(D, weights, count)``: ``X @ D`` holds ``X_j - X_{j+l}`` for
    every lag ``l``, ``weights`` is the matching column of ``2 e^-l`` (each
    unordered pair stands for both orderings) and ``count`` is the number of
    ordered pairs per row.
    """
    cols, weights = [], []
    count = 0
    for lag in range(1, min(window, n_slots - 1) + 1):
        m = n_slots - lag
        d = np.zeros((n_slots, m))
        d[np.arange(m), np.arange(m)] = 1.0
        d[np.arange(m) + lag, np.arange(m)] = -1.0
        cols.append(d)
        weights.append(np.full(m, 2.0 * math.exp(-lag)))
        count += 2 * m
    if not cols:
        return np.zeros((n_slots, 0)), np.zeros((0, 1)), 0
    return np.hstack(cols), np.concatenate(weights)[:, None], count


def smoothness_penalty(x_tilde, window: int, reduction: str = "mean") -> nc.Tensor:
    """Exponentially weighted squared differences between nearby timeslots."""
    x_tilde = nc.constant(x_tilde)
    if reduction not in ("mean", "sum"):
        raise InputError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    diff_op, weights, count = _lag_operator(x_tilde.cols, window)
    if count == 0:
        return nc.Tensor([[0.0]])
    total = nc.sum_(nc.matmul(nc.square(nc.matmul(x_tilde, diff_op)), weights))
    if reduction == "mean":
        return nc.scale(total, 1.0 / (count * x_tilde.rows))
    return total


def loss(x, train_mask, x_tilde, mu, sigma, beta: float, gamma: float, window: int,
         reduction: str = "mean", smooth_input=None):
    """Total objective and its three components (as floats).

    ``smooth_input`` lets the smoothness term run on a rescaled copy of the
    reconstruction (the trainer passes the standardized output); it defaults
    to ``x_tilde``.
    """
    train_mask = np.asarray(train_mask, dtype=bool)
    if not train_mask.any():
        raise InputError("training mask is empty")
    x_tilde = nc.constant(x_tilde)
    target = np.asarray(x, dtype=np.float64)[train_mask].reshape(1, -1)
    recon = nc.mean(nc.abs_(nc.sub(nc.masked_select(x_tilde, train_mask), target)))
    total = recon
    parts = {"reconstruction": recon.item(), "kl": 0.0, "smoothness": 0.0}
    if beta:
        kl = kl_divergence(mu, sigma)
        total = nc.add(total, nc.scale(kl, beta))
        parts["kl"] = kl.item()
    if gamma:
        smooth = smoothness_penalty(x_tilde if smooth_input is None else smooth_input, window, reduction)
        total = nc.add(total, nc.scale(smooth, gamma))
        parts["smoothness"] = smooth.item()
    parts["loss"] = total.item()
    return total, parts


def temporal_roughness(x) -> float:
    """Sum of squared first differences along time."""
    x = np.asarray(x, dtype=np.float64)
    return float((np.diff(x, axis=1) ** 2).sum())


# -- training ---------------------------------------------------------------------

@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    def append(self, **row):
        self.rows.append(row)

    def to_csv(self) -> str:
        cols = ["epoch", "loss", "reconstruction", "kl", "smoothness", "val_mae"]
        lines = [",".join(cols)]
        for r in self.rows:
            lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


class _Adam:
    def __init__(self, shapes, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for w, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            w -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def split_validation(mask, fraction: float, rng: np.random.Generator):
    """Carve ``fraction`` of the known entries out for early stopping."""
    idx = np.flatnonzero(mask)
    n_val = int(math.floor(fraction * len(idx)))
    fit = np.array(mask, dtype=bool)
    val = np.zeros_like(fit)
    if n_val == 0 or n_val == len(idx):
        return fit, val
    pick = rng.permutation(idx)[:n_val]
    fit.flat[pick] = False
    val.flat[pick] = True
    return fit, val


def _draw_masks(params: AvgaeParams, n: int, rate: float, rng, placement: str):
    """Per-layer dropout masks; ``hidden`` skips the model input and the latent sample."""
    def branch(weights, skip_first):
        return [None if (skip_first and k == 0) else nc.dropout_mask(rng, (n, w.shape[0]), rate)
                for k, w in enumerate(weights)]
    hidden_only = placement == "hidden"
    return (branch(params.mu_weights, hidden_only), branch(params.sigma_weights, hidden_only),
            branch(params.decoder_weights, hidden_only))


def _forward(params: AvgaeParams, x_in, p, train_rng=None, rate=0.0, eps=None, masks=None,
             placement="hidden"):
    """One pass through the model; sampling and dropout only when ``train_rng`` is set."""
    mu_w = [nc.Tensor(w, requires_grad=True) for w in params.mu_weights]
    sg_w = [nc.Tensor(w, requires_grad=True) for w in params.sigma_weights]
    de_w = [nc.Tensor(w, requires_grad=True) for w in params.decoder_weights]
    n = x_in.shape[0]
    if masks is None and train_rng is not None and rate > 0:
        masks = _draw_masks(params, n, rate, train_rng, placement)
    enc_masks = None if masks is None else masks[:2]
    mu, sigma = encode(x_in, p, mu_w, sg_w, enc_masks, rate)
    if eps is None and train_rng is not None:
        eps = train_rng.standard_normal(mu.shape)
    z = mu if eps is None else reparameterize(mu, sigma, eps)
    out_std = decode(z, p, de_w, None, None if masks is None else masks[2], rate)
    sc = params.scaling
    out_raw = nc.add_scalar(nc.scale(out_std, sc.value_scale), sc.value_mean)
    return LatentState(mu, sigma, z, eps), out_std, out_raw, mu_w + sg_w + de_w


def objective(params: AvgaeParams, x_in, p, values, fit_mask, config: AvgaeConfig,
              train_rng=None, eps=None, masks=None):
    """Build the full training loss; returns (loss tensor, parts, parameter tensors)."""
    latent, out_std, out_raw, tensors = _forward(params, x_in, p, train_rng, config.dropout, eps, masks,
                                                 config.dropout_placement)
    total, parts = loss(values, fit_mask, out_raw, latent.mu, latent.sigma, config.kl_weight,
                        config.smooth_weight, config.smooth_window, config.smoothness_reduction,
                        smooth_input=out_std)
    return total, parts, tensors


def _predict(params: AvgaeParams, x_in, p) -> np.ndarray:
    h = nc.constant(x_in)
    for k, w in enumerate(params.mu_weights):
        act = nc.identity if k == len(params.mu_weights) - 1 else nc.relu
        h = gcn_layer(p, h, w, act)
    out = decode(h, p, params.decoder_weights, params.scaling)
    return out.value


# Overflow surfaces as NonFiniteError -> DivergedTrainingError, so numpy's own warnings are muted.
@np.errstate(over="ignore", invalid="ignore")
def train(obs: ObservationMatrix, p, config: AvgaeConfig, progress=None):
    """Fit the model on the known entries of ``obs``.

    A ``validation_fraction`` share of the known entries is withheld (from
    both the loss and the input) to drive early stopping; the parameters
    with the best validation MAE are returned together with the log.
    """
    n, t = obs.shape
    config.validate(t)
    if p.n != n:
        raise InputError(f"operator has {p.n} nodes but observations have {n} rows")
    if obs.n_known == 0:
        raise InputError("no known entries to train on")
    seq = np.random.SeedSequence(config.seed)
    init_rng, split_rng, train_rng = (np.random.default_rng(s) for s in seq.spawn(3))

    fit_mask, val_mask = split_validation(obs.mask, config.validation_fraction, split_rng)
    scaling = Scaling.fit(obs, fit_mask, config.standardize_values)
    x_in = scaling.input_matrix(obs, fit_mask)
    params = init_params(t, config, init_rng, scaling)
    has_val = bool(val_mask.any())
    val_truth = obs.values[val_mask]

    opt = _Adam([w.shape for w in params.arrays()], config.learning_rate) if config.optimizer == "adam" else None
    history = TrainingLog()
    best = params.copy()
    best_score = math.inf
    since_best = 0
    for epoch in range(config.epochs):
        try:
            total, parts, tensors = objective(params, x_in, p, obs.values, fit_mask, config, train_rng)
            nc.backward(total)
            grads = [tt.grad if tt.grad is not None else np.zeros(tt.shape) for tt in tensors]
            if not all(np.isfinite(g).all() for g in grads):
                raise nc.NonFiniteError("non-finite gradient")
            if opt is not None:
                opt.step(params.arrays(), grads)
            else:
                for w, g in zip(params.arrays(), grads):
                    w -= config.learning_rate * g
            pred = _predict(params, x_in, p)
        except nc.NonFiniteError as exc:
            raise DivergedTrainingError(f"training diverged at epoch {epoch}: {exc}", epoch) from exc
        val_mae = float(np.abs(pred[val_mask] - val_truth).mean()) if has_val else parts["reconstruction"]
        history.append(epoch=epoch, loss=parts["loss"], reconstruction=parts["reconstruction"],
                       kl=parts["kl"], smoothness=parts["smoothness"], val_mae=val_mae)
        if progress is not None:
            progress(epoch, parts, val_mae)
        if val_mae < best_score:
            best_score = val_mae
            best = params.copy()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    return best, history


def infer(params: AvgaeParams, obs: ObservationMatrix, p) -> np.ndarray:
    """Deterministic completion (``Z = mu``, no dropout) of every entry."""
    n, t = obs.shape
    if t != params.n_slots:
        raise InputError(f"model was trained on T = {params.n_slots} slots, got T = {t}")
    if p.n != n:
        raise InputError(f"operator has {p.n} nodes but observations have {n} rows")
    x_in = params.scaling.input_matrix(obs, obs.mask)
    try:
        return _predict(params, x_in, p)
    except nc.NonFiniteError as exc:
        raise DivergedTrainingError(f"non-finite activations at inference: {exc}") from exc


# -- checkpoints ------------------------------------------------------------------

def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a, dtype=np.float64), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, params: AvgaeParams, config: AvgaeConfig, history: TrainingLog | None = None):
    """Zip archive of a JSON header plus one ``.npy`` per weight matrix.

    Member timestamps are pinned so identical runs give identical bytes.
    """
    groups = {"mu": params.mu_weights, "sigma": params.sigma_weights, "decoder": params.decoder_weights}
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(config),
        "scaling": asdict(params.scaling),
        "weights": {g: [list(w.shape) for w in ws] for g, ws in groups.items()},
        "best_epoch": None if history is None else history.best_epoch,
        "log": None if history is None else history.rows,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def put(name, data):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
        put("header.json", json.dumps(header, indent=1, sort_keys=True))
        for g, ws in groups.items():
            for k, w in enumerate(ws):
                put(f"{g}_{k}.npy", _npy_bytes(w))


def load_checkpoint(path):
    """Returns ``(params, config, log_rows)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise InputError(f"unsupported checkpoint format {header.get('format')!r}")
            groups = {}
            for g, shapes in header["weights"].items():
                ws = []
                for k, shape in enumerate(shapes):
                    w = np.lib.format.read_array(io.BytesIO(zf.read(f"{g}_{k}.npy")), allow_pickle=False)
                    if list(w.shape) != shape:
                        raise InputError(f"checkpoint weight {g}_{k} has shape {w.shape}, header says {shape}")
                    ws.append(w)
                groups[g] = ws
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    sc = header["scaling"]
    scaling = Scaling(sc["value_mean"], sc["value_scale"], tuple(sc["coord_min"]), tuple(sc["coord_span"]))
    params = AvgaeParams(groups["mu"], groups["sigma"], groups["decoder"], scaling)
    config = AvgaeConfig.from_dict(header["config"])
    return params, config, header.get("log") or []


def save_training_log(path, history: TrainingLog):
    Path(path).write_text(history.to_csv(), encoding="utf-8")
