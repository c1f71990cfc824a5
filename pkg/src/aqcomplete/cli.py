"""Command-line pipeline: synth, aggregate, build-graph, train, infer, evaluate.

Stages exchange data only through files. Each run writes
``<output stem>.manifest.json`` beside its main output (``synth.manifest.json``
inside the output directory for ``synth``). Exit codes: 0 ok,
2 bad input, 3 numerical failure (diverged training), 1 anything else.
Set ``AQCOMPLETE_LOG`` (e.g. ``DEBUG``) for more logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__, avgae, evaluation, plotting, synth
from .errors import DivergedTrainingError, InputError
from .graph import StreetGraph, StreetNetwork, build_graph, normalize
from .ingest import AggregationConfig, ObservationMatrix, build_observations, load_measurements, parse_timestamp, write_measurements

log = logging.getLogger("aqcomplete")

EXIT_OK, EXIT_OTHER, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _manifest_path(out, command) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".manifest.json") if out.suffix else out / f"{command}.manifest.json"


def _write_manifest(args, out, config: dict, inputs: dict, outputs: list, seed, started: float):
    doc = {
        "command": args.command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 3),
    }
    _manifest_path(out, args.command).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {what} {path}: {exc}") from exc


def _load_operator(graph_path, obs: ObservationMatrix):
    graph = StreetGraph.load(graph_path)
    if graph.n != obs.shape[0]:
        raise InputError(f"graph has {graph.n} nodes but observations have {obs.shape[0]} locations")
    return normalize(graph)


def _avgae_config(args) -> avgae.AvgaeConfig:
    doc = _read_json(args.config, "config") if args.config else {}
    if not isinstance(doc, dict):
        raise InputError("AVGAE config file must hold a JSON object")
    config = avgae.AvgaeConfig.from_dict(doc)
    overrides = {k: getattr(args, k) for k in ("latent_dim", "epochs") if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(config, **overrides).validate()


def _time_arg(text):
    return None if text is None else parse_timestamp(text)


def cmd_synth(args) -> int:
    started = time.perf_counter()
    config = synth.preset(args.preset, args.seed)
    data = synth.generate(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, net_path = out_dir / "measurements.csv", out_dir / "network.json"
    write_measurements(data.records, csv_path)
    data.network.save(net_path)
    print(f"{len(data.records)} records, {len(data.network.segments)} segments -> {out_dir}")
    _write_manifest(args, out_dir, asdict(config), {}, [csv_path, net_path], args.seed, started)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    started = time.perf_counter()
    records, stats = load_measurements(args.input)
    start, end = _time_arg(args.start), _time_arg(args.end)
    if start is None or end is None:
        if not records:
            raise InputError(f"{args.input} holds no valid records; give --from and --to explicitly")
        cover = AggregationConfig.covering(records, args.tau, args.radius)
        start = cover.period_start if start is None else start
        end = cover.period_end if end is None else end
    config = AggregationConfig(start, end, args.tau, args.radius)
    obs = build_observations(records, config)
    obs.save(args.out)
    n, t = obs.shape
    print(f"N={n} T={t} density={obs.density:.6f} known={obs.n_known}")
    if stats.skipped:
        print(f"skipped {stats.malformed} malformed and {stats.negative} negative rows of {stats.rows}")
    _write_manifest(args, args.out, asdict(config), {"input": args.input}, [args.out], None, started)
    return EXIT_OK


def cmd_build_graph(args) -> int:
    started = time.perf_counter()
    obs = ObservationMatrix.load(args.obs)
    network = StreetNetwork.load(args.network) if args.network else None
    graph = build_graph(list(obs.locations), network, args.delta)
    graph.save(args.out)
    stats = graph.stats()
    print(f"nodes={graph.n} edges={stats['edge_count']} isolated={stats['isolated_nodes']}")
    print("degree histogram: " + " ".join(f"{d}:{c}" for d, c in stats["degree_histogram"].items()))
    _write_manifest(args, args.out, {"delta": args.delta, "stats": stats},
                    {"obs": args.obs, "network": args.network}, [args.out], None, started)
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    obs = ObservationMatrix.load(args.obs)
    p = _load_operator(args.graph, obs)
    config = _avgae_config(args)
    print(f"AVGAE: latent_dim={config.latent_dim} kl_weight={config.kl_weight} smooth_weight={config.smooth_weight} "
          f"smooth_window={config.smooth_window} dropout={config.dropout} lr={config.learning_rate} "
          f"epochs={config.epochs} seed={config.seed}")
    params, history = avgae.train(obs, p, config)
    out = Path(args.out)
    log_path, fig_path = out.with_name(out.stem + "_log.csv"), out.with_name(out.stem + "_loss.png")
    avgae.save_checkpoint(out, params, config, history)
    avgae.save_training_log(log_path, history)
    outputs = [out, log_path]
    if not args.no_figures and history.rows:
        plotting.plot_training_log(history.rows, fig_path)
        outputs.append(fig_path)
    summary = f"epochs run={len(history.rows)}"
    if history.rows:
        summary += f" best epoch={history.best_epoch} val MAE={history.rows[history.best_epoch]['val_mae']:.4f}"
    print(summary)
    _write_manifest(args, out, asdict(config), {"obs": args.obs, "graph": args.graph, "config": args.config},
                    outputs, config.seed, started)
    return EXIT_OK


def cmd_infer(args) -> int:
    started = time.perf_counter()
    obs = ObservationMatrix.load(args.obs)
    p = _load_operator(args.graph, obs)
    params, config, _ = avgae.load_checkpoint(args.checkpoint)
    completed = avgae.infer(params, obs, p)
    doc = obs.to_json()
    doc["completed"] = completed.tolist()
    out = Path(args.out)
    out.write_text(json.dumps(doc) + "\n", encoding="utf-8")
    outputs = [out]
    if not args.no_figures:
        fig_path = out.with_name(out.stem + "_heatmap.png")
        plotting.plot_completion(obs.values, obs.mask, completed, fig_path)
        outputs.append(fig_path)
    print(f"completed {completed.shape[0]} x {completed.shape[1]}: "
          f"min={completed.min():.3f} mean={completed.mean():.3f} max={completed.max():.3f}")
    _write_manifest(args, out, asdict(config), {"obs": args.obs, "graph": args.graph, "checkpoint": args.checkpoint},
                    outputs, config.seed, started)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    names = [m.strip() for m in args.methods.split(",") if m.strip()]
    evaluation.resolve_methods(names)
    obs = ObservationMatrix.load(args.obs)
    p = _load_operator(args.graph, obs)
    config = _avgae_config(args)
    spec = evaluation.SplitSpec(args.train_fraction, args.repeats, args.seed)
    report = evaluation.run_benchmark(obs, p, names, spec, config, dataset=args.dataset or Path(args.obs).stem)
    out = Path(args.out)
    report.save(out)
    outputs = [out]
    if not args.no_figures:
        fig_path = out.with_name(out.stem + "_errors.png")
        plotting.plot_report(report, fig_path)
        outputs.append(fig_path)
    print(report.table())
    _write_manifest(args, out, report.config, {"obs": args.obs, "graph": args.graph, "config": args.config},
                    outputs, args.seed, started)
    return EXIT_OK


def _add_avgae_overrides(p):
    p.add_argument("--config", help="JSON object of AVGAE settings; unset keys keep defaults "
                                    "(latent_dim 512, kl_weight 0.1, smooth_weight 0.8, smooth_window 3, "
                                    "dropout 0.4, learning_rate 0.005)")
    p.add_argument("--latent-dim", dest="latent_dim", type=int, help="override latent width (default 512)")
    p.add_argument("--epochs", type=int, help="override maximum epochs (default 2000)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aqcomplete", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic measurement trace and street network")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="desk-scale", help="default: desk-scale")
    p.add_argument("--seed", type=int, default=0, help="default: 0")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("aggregate", help="aggregate a measurement CSV into an observation matrix")
    p.add_argument("--input", required=True, help="CSV with header timestamp,lat,lon,value")
    p.add_argument("--tau", type=float, default=3600.0, help="timeslot length in seconds (default: 3600)")
    p.add_argument("--radius", type=float, default=100.0, help="location radius in metres (default: 100)")
    p.add_argument("--from", dest="start", help="period start, ISO-8601 or epoch seconds (default: first record)")
    p.add_argument("--to", dest="end", help="period end, exclusive (default: after last record)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("build-graph", help="build the location graph")
    p.add_argument("--obs", required=True)
    p.add_argument("--network", help="street network JSON; same-segment locations are linked")
    p.add_argument("--delta", type=float, default=200.0, help="distance threshold in metres (default: 200)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train the graph autoencoder")
    p.add_argument("--obs", required=True)
    p.add_argument("--graph", required=True)
    _add_avgae_overrides(p)
    p.add_argument("--seed", type=int, help="training seed (default: config value, 0)")
    p.add_argument("--out", required=True, help="checkpoint path (.zip)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="complete a matrix with a trained checkpoint")
    p.add_argument("--obs", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="holdout benchmark of completion methods")
    p.add_argument("--obs", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--methods", default=",".join(evaluation.DEFAULT_METHODS),
                   help=f"comma-separated subset of {', '.join(evaluation.METHODS)} (default: %(default)s)")
    p.add_argument("--repeats", type=int, default=5, help="random 90/10 divisions (default: 5)")
    p.add_argument("--train-fraction", type=float, default=0.9, help="default: 0.9")
    p.add_argument("--seed", type=int, default=0, help="default: 0")
    p.add_argument("--dataset", help="dataset label in the report (default: obs file stem)")
    _add_avgae_overrides(p)
    p.add_argument("--out", required=True, help="report path (.json)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("AQCOMPLETE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DivergedTrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
