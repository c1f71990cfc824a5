"""Random-holdout benchmark over the known entries of an observation matrix.

Each repeat splits the known entries into training and test sets, fits
every method on the training view (test entries are hidden by mask only)
and scores the predictions on the test entries.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import avgae
from .baselines import fit_nmf, fit_svd_mf, global_mean_complete, knn_complete, kriging_complete
from .errors import DivergedTrainingError, InputError
from .ingest import ObservationMatrix

log = logging.getLogger(__name__)

REPORT_FORMAT = "aqcomplete-report/1"
MIN_KNOWN = 10

# Published figures on a private urban dataset; kept as context only.
PUBLISHED_REFERENCE = {
    "note": "published AVGAE results on a private mobile-sensing dataset; not reproducible here",
    "rows": [
        {"method": "avgae", "pollutant": "NO2", "unit": "ppb", "mae": 14.92, "rmse": 24.33},
        {"method": "avgae", "pollutant": "PM2.5", "unit": "ug/m3", "mae": 2.56, "rmse": 6.42},
    ],
}


class MethodError(RuntimeError):
    """A completion method failed; ``method`` names it."""

    def __init__(self, method: str, cause: BaseException):
        super().__init__(f"method {method!r} failed: {cause}")
        self.method = method


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    n_repeats: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise InputError(f"train_fraction must be in (0, 1), got {self.train_fraction}")
        if self.n_repeats < 1:
            raise InputError(f"n_repeats must be >= 1, got {self.n_repeats}")


def split(mask, spec: SplitSpec, repeat_index: int):
    """Partition the known entries into ``(train_mask, test_mask)``.

    The training share is ``floor(train_fraction * |known|)``; the
    partition depends only on ``(spec.seed, repeat_index)``.
    """
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if len(idx) < MIN_KNOWN:
        raise InputError(f"need at least {MIN_KNOWN} known entries to split, got {len(idx)}")
    rng = np.random.default_rng([spec.seed, repeat_index])
    perm = rng.permutation(idx)
    n_train = int(math.floor(spec.train_fraction * len(idx)))
    train = np.zeros(mask.size, dtype=bool)
    train[perm[:n_train]] = True
    train = train.reshape(mask.shape)
    return train, mask & ~train


def _masked(pred, truth, mask):
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InputError("metric over an empty mask")
    return np.asarray(pred, dtype=np.float64)[mask] - np.asarray(truth, dtype=np.float64)[mask]


def mae(pred, truth, mask) -> float:
    return float(np.abs(_masked(pred, truth, mask)).mean())


def rmse(pred, truth, mask) -> float:
    return float(np.sqrt((_masked(pred, truth, mask) ** 2).mean()))


# -- methods --------------------------------------------------------------------

@dataclass
class MethodContext:
    """What a method may use besides the training view."""

    operator: object
    seed: int
    avgae_config: avgae.AvgaeConfig = field(default_factory=avgae.AvgaeConfig)


Method = Callable[[ObservationMatrix, MethodContext], np.ndarray]


def _avgae(obs, ctx):
    config = replace(ctx.avgae_config, seed=ctx.seed)
    params, _ = avgae.train(obs, ctx.operator, config)
    return avgae.infer(params, obs, ctx.operator)


METHODS: dict[str, Method] = {
    "avgae": _avgae,
    "kriging-linear": lambda obs, ctx: kriging_complete(obs, "linear"),
    "kriging-exp": lambda obs, ctx: kriging_complete(obs, "exponential"),
    "knn": lambda obs, ctx: knn_complete(obs),
    "svd": lambda obs, ctx: fit_svd_mf(obs, seed=ctx.seed).predict(),
    "nmf": lambda obs, ctx: fit_nmf(obs, seed=ctx.seed).predict(),
    "global-mean": lambda obs, ctx: global_mean_complete(obs),
}

DEFAULT_METHODS = ("avgae", "kriging-linear", "kriging-exp", "knn", "svd", "nmf")


def resolve_methods(names) -> dict[str, Method]:
    unknown = [n for n in names if n not in METHODS]
    if unknown:
        raise InputError(f"unknown method(s) {', '.join(unknown)}; valid names: {', '.join(METHODS)}")
    if not names:
        raise InputError(f"no methods given; valid names: {', '.join(METHODS)}")
    return {n: METHODS[n] for n in names}


# -- report ---------------------------------------------------------------------

@dataclass
class MethodResult:
    name: str
    repeats: list[dict] = field(default_factory=list)

    def _stat(self, key, fn):
        return float(fn([r[key] for r in self.repeats]))

    @property
    def mae_mean(self) -> float:
        return self._stat("mae", np.mean)

    @property
    def mae_sd(self) -> float:
        return self._stat("mae", np.std)

    @property
    def rmse_mean(self) -> float:
        return self._stat("rmse", np.mean)

    @property
    def rmse_sd(self) -> float:
        return self._stat("rmse", np.std)

    def to_json(self) -> dict:
        return {"name": self.name, "mae_mean": self.mae_mean, "mae_sd": self.mae_sd,
                "rmse_mean": self.rmse_mean, "rmse_sd": self.rmse_sd, "repeats": self.repeats}


@dataclass
class EvalReport:
    dataset: str
    methods: list[MethodResult]
    config: dict

    def result(self, name: str) -> MethodResult:
        for m in self.methods:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "dataset": self.dataset,
            "methods": [m.to_json() for m in self.methods],
            "config": self.config,
            "published_reference": PUBLISHED_REFERENCE,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "EvalReport":
        if doc.get("format") != REPORT_FORMAT:
            raise InputError(f"unsupported report format {doc.get('format')!r}")
        methods = [MethodResult(m["name"], list(m["repeats"])) for m in doc["methods"]]
        return cls(doc["dataset"], methods, doc["config"])

    @classmethod
    def load(cls, path) -> "EvalReport":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read report {path}: {exc}") from exc
        return cls.from_json(doc)

    def table(self) -> str:
        """Aligned plain-text table, one row per method."""
        header = ("method", "MAE", "sd", "RMSE", "sd", "repeats")
        rows = [(m.name, f"{m.mae_mean:.3f}", f"{m.mae_sd:.3f}", f"{m.rmse_mean:.3f}",
                 f"{m.rmse_sd:.3f}", str(len(m.repeats))) for m in self.methods]
        widths = [max(len(r[k]) for r in [header, *rows]) for k in range(len(header))]
        fmt = "  ".join(["{:<%d}" % widths[0]] + ["{:>%d}" % w for w in widths[1:]])
        lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
        lines += [fmt.format(*r) for r in rows]
        return "\n".join(lines)


def _run_method(name, fn, train_obs, ctx):
    try:
        pred = np.asarray(fn(train_obs, ctx), dtype=np.float64)
    except InputError as exc:
        raise InputError(f"method {name!r}: {exc}") from exc
    except DivergedTrainingError as exc:
        raise DivergedTrainingError(f"method {name!r}: {exc}", exc.epoch) from exc
    except Exception as exc:
        raise MethodError(name, exc) from exc
    if pred.shape != train_obs.shape:
        raise MethodError(name, ValueError(f"prediction shape {pred.shape} != {train_obs.shape}"))
    if not np.isfinite(pred).all():
        raise MethodError(name, ValueError("non-finite predictions"))
    return pred


def run_benchmark(obs: ObservationMatrix, operator, methods, spec: SplitSpec = SplitSpec(),
                  avgae_config: avgae.AvgaeConfig | None = None, dataset: str = "dataset",
                  progress=None) -> EvalReport:
    """Score every method on ``spec.n_repeats`` random holdouts of ``obs``.

    ``methods`` is a sequence of registry names or a ``{name: callable}``
    mapping; callables receive the training view and a ``MethodContext``.
    A method's per-repeat seed is derived from ``(spec.seed, repeat)``.
    """
    methods = resolve_methods(list(methods)) if not isinstance(methods, dict) else dict(methods)
    avgae_config = avgae_config or avgae.AvgaeConfig()
    results = {name: MethodResult(name) for name in methods}
    for r in range(spec.n_repeats):
        train_mask, test_mask = split(obs.mask, spec, r)
        train_obs = obs.restrict(train_mask)
        seed = int(np.random.SeedSequence([spec.seed, r]).generate_state(1)[0])
        ctx = MethodContext(operator, seed, avgae_config)
        for name, fn in methods.items():
            start = time.perf_counter()
            pred = _run_method(name, fn, train_obs, ctx)
            row = {"repeat": r, "mae": mae(pred, obs.values, test_mask), "rmse": rmse(pred, obs.values, test_mask),
                   "n_train": int(train_mask.sum()), "n_test": int(test_mask.sum())}
            results[name].repeats.append(row)
            log.info("repeat %d %s: MAE %.4f RMSE %.4f (%.1f s)", r, name, row["mae"], row["rmse"],
                     time.perf_counter() - start)
            if progress is not None:
                progress(r, name, row)
    config = {
        "split": asdict(spec),
        "methods": list(methods),
        "shape": list(obs.shape),
        "n_known": obs.n_known,
        "avgae": asdict(avgae_config) if "avgae" in methods else None,
    }
    return EvalReport(dataset, list(results.values()), config)
