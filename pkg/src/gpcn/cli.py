"""Command-line interface.

Subcommands mirror the package's capabilities one to one:

* ``generate``      simulate a dataset over a strength-parameter grid
* ``gdd``           distance and prolongation between two graph files
* ``coarse-search`` distance table over candidate coarse tubes
* ``limit-curve``   tube/grid family distances against growing tubes
* ``train``         train a named model on a dataset, write the run trace
* ``flops``         predicted per-layer costs of a named model

Every command is deterministic given its config and seed, writes a manifest
echoing both, and exits 0 on success, 2 on usage/config errors, 3 on
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ensembles, graphs, simulator, training
from .gdd import gdd as run_gdd, limit_curve
from .numcore import NumericalError
from .serialize import dump_json, save_arrays, write_csv

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Bad or unknown configuration content (exit code 2)."""


def _require_keys(obj: dict, allowed, where: str) -> None:
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {', '.join(sorted(unknown))}")


def _load_config(path) -> dict:
    if path is None:
        raise ConfigError("this command needs --config")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")


def _out_dir(args) -> str:
    if args.out is None:
        raise ConfigError("this command needs --out")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_manifest(out, command: str, config, seed) -> None:
    dump_json(
        os.path.join(out, "manifest.json"),
        {"command": command, "config": config, "seed": seed},
    )


def _tube_from_dict(d: dict, where: str) -> graphs.Graph:
    _require_keys(d, {"n_rings", "k", "offset", "seam_weight"}, where)
    try:
        return graphs.make_tube(
            int(d["n_rings"]), int(d["k"]), int(d["offset"]), float(d.get("seam_weight", 1.0))
        )
    except KeyError as exc:
        raise ConfigError(f"{where} is missing {exc.args[0]!r}")
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}")


def _pmap(fn, items, threads: int):
    """Order-preserving map, optionally over a process pool."""
    if threads <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# generate


_SIM_KEYS = {
    "ramp_steps",
    "hold_steps",
    "dt",
    "save_every",
    "max_force",
    "bond_k_base",
    "angle_k_base",
    "langevin",
    "temperature",
    "damping",
    "feature_columns",
}


def _sim_config(d: dict, strengths=None) -> simulator.SimConfig:
    _require_keys(d, _SIM_KEYS, "sim")
    try:
        return simulator.SimConfig(strengths=dict(strengths or {}), **d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim: {exc}")


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    _require_keys(config, {"tube", "sim", "grid", "strengths", "seed"}, "config")
    tube_cfg = config.get("tube", {})
    _require_keys(tube_cfg, {"n_rings", "k", "offset"}, "tube")
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    grid = config.get("grid", {})
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid must map strength parameters to value lists")
    for key, values in grid.items():
        if key not in simulator.STRENGTH_PARAMS:
            raise ConfigError(
                f"grid: unknown strength parameter {key!r} "
                f"(expected one of {', '.join(simulator.STRENGTH_PARAMS)})"
            )
        if not values or any(v <= 0 for v in values):
            raise ConfigError(f"grid: strength {key!r} needs positive values")
    for key, value in config.get("strengths", {}).items():
        if key not in simulator.STRENGTH_PARAMS:
            raise ConfigError(f"strengths: unknown strength parameter {key!r}")
        if value <= 0:
            raise ConfigError(f"strengths: {key!r} must be positive, got {value}")
    sim_cfg = _sim_config(config.get("sim", {}), config.get("strengths", {}))
    model = simulator.build_geometry(
        n_rings=int(tube_cfg.get("n_rings", 12)),
        k=int(tube_cfg.get("k", 13)),
        offset=int(tube_cfg.get("offset", 3)),
    )
    out = _out_dir(args)
    data = simulator.generate_dataset(model, grid, sim_cfg, seed=seed)
    simulator.save_dataset(data, out, fmt=args.format)
    _write_manifest(out, "generate", config, seed)
    failed = [r for r in data.manifest["runs"] if r["status"] != "ok"]
    print(
        f"wrote {data.n_frames} frames from "
        f"{len(data.manifest['runs']) - len(failed)} runs to {out}"
        + (f" ({len(failed)} runs diverged)" if failed else "")
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# gdd / coarse-search / limit-curve


def cmd_gdd(args) -> int:
    for path in (args.graph_a, args.graph_b):
        if not os.path.exists(path):
            raise ConfigError(f"graph file not found: {path}")
    with open(args.graph_a, "r", encoding="utf-8") as fh:
        ga = graphs.graph_from_edgelist(fh.read(), name=os.path.basename(args.graph_a))
    with open(args.graph_b, "r", encoding="utf-8") as fh:
        gb = graphs.graph_from_edgelist(fh.read(), name=os.path.basename(args.graph_b))
    if ga.n > gb.n:
        raise ConfigError(f"first graph must not be larger ({ga.n} > {gb.n})")
    result = run_gdd(ga, gb, alpha=args.alpha)
    print(f"{result.distance!r}")
    if args.out is not None:
        out = _out_dir(args)
        if args.format == "csv":
            write_csv(
                os.path.join(out, "prolongation.csv"),
                [f"c{j}" for j in range(result.p.shape[1])],
                [row.tolist() for row in result.p],
            )
        else:
            save_arrays(
                os.path.join(out, "prolongation.bin"),
                {"p": result.p},
                {"alpha": args.alpha, "objective": result.objective},
            )
        _write_manifest(
            out,
            "gdd",
            {"graph_a": args.graph_a, "graph_b": args.graph_b, "alpha": args.alpha},
            args.seed,
        )
    return EXIT_OK


def _search_cell(job):
    fine, n_rings, k, p, w, alpha, kwargs = job
    cand = graphs.make_tube(n_rings, k, p, w)
    return run_gdd(cand, fine, alpha, **kwargs).distance


def cmd_coarse_search(args) -> int:
    config = _load_config(args.config)
    _require_keys(
        config,
        {"fine", "candidate_rings", "k_values", "p_values", "seam_weights", "alpha", "refine_iters"},
        "config",
    )
    fine = _tube_from_dict(config.get("fine", {}), "fine")
    n_rings = int(config.get("candidate_rings", fine.n // 26))
    k_values = sorted(int(k) for k in config.get("k_values", range(3, 13)))
    p_values = sorted(int(p) for p in config.get("p_values", range(4)))
    seam_weights = sorted(float(w) for w in config.get("seam_weights", (1.0, 2.0)))
    alpha = float(config.get("alpha", 1.0))
    kwargs = {}
    if "refine_iters" in config:
        kwargs["max_iters"] = int(config["refine_iters"])
    jobs = [
        (fine, n_rings, k, p, w, alpha, kwargs)
        for k in k_values
        for p in p_values
        if 0 <= p < n_rings
        for w in seam_weights
    ]
    distances = _pmap(_search_cell, jobs, args.threads)
    rows = [
        (job[2], job[3], job[4], dist) for job, dist in zip(jobs, distances)
    ]
    out = _out_dir(args)
    write_csv(os.path.join(out, "coarse_search.csv"), ["k", "p", "seam_weight", "distance"], rows)
    _write_manifest(out, "coarse-search", config, args.seed)
    best = min(rows, key=lambda r: r[3])
    print(f"{len(rows)} candidates; nearest k={best[0]} p={best[1]} seam={best[2]:g} distance={best[3]!r}")
    return EXIT_OK


def cmd_limit_curve(args) -> int:
    config = _load_config(args.config)
    _require_keys(config, {"n_values", "k", "alpha", "refine_iters"}, "config")
    n_values = sorted(int(n) for n in config.get("n_values", range(4, 11)))
    if not n_values or min(n_values) < 2:
        raise ConfigError("n_values must contain integers >= 2")
    kwargs = {}
    if "refine_iters" in config:
        kwargs["max_iters"] = int(config["refine_iters"])
    rows = limit_curve(
        n_values, k=int(config.get("k", 13)), alpha=float(config.get("alpha", 1.0)), **kwargs
    )
    out = _out_dir(args)
    write_csv(os.path.join(out, "limit_curve.csv"), ["n", "family", "distance"], rows)
    _write_manifest(out, "limit-curve", config, args.seed)
    print(f"wrote {len(rows)} rows to {os.path.join(out, 'limit_curve.csv')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / flops


def _hierarchy_from_config(value) -> ensembles.Hierarchy:
    if value == "desk" or value is None:
        return ensembles.desk_hierarchy()
    if value == "paper":
        return ensembles.paper_hierarchy()
    if isinstance(value, list):
        return ensembles.make_hierarchy(
            [_tube_from_dict(d, f"hierarchy[{i}]") for i, d in enumerate(value)]
        )
    raise ConfigError("hierarchy must be 'desk', 'paper', or a list of tube specs")


_SCHEDULE_KEYS = {
    "kind",
    "gamma",
    "smoothing_epochs",
    "patience",
    "total_epochs",
    "batches_per_epoch",
    "batch_size",
    "smoothing_forward",
}


def cmd_train(args) -> int:
    config = _load_config(args.config)
    _require_keys(config, {"dataset", "model", "hierarchy", "schedule", "seed"}, "config")
    if "dataset" not in config:
        raise ConfigError("config needs a 'dataset' directory")
    if not os.path.isdir(config["dataset"]):
        raise ConfigError(f"dataset directory not found: {config['dataset']}")
    name = config.get("model", "single_gcn")
    if name not in ensembles.MODEL_NAMES:
        raise ConfigError(
            f"unknown model {name!r}; valid names: {', '.join(ensembles.MODEL_NAMES)}"
        )
    sched_cfg = config.get("schedule", {})
    _require_keys(sched_cfg, _SCHEDULE_KEYS, "schedule")
    try:
        schedule = training.ScheduleSpec(**sched_cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"schedule: {exc}")
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    data = simulator.load_dataset(config["dataset"])
    hier = _hierarchy_from_config(config.get("hierarchy"))
    spec = ensembles.build_from_table(name, hier)
    if spec.n_fine != data.x.shape[1]:
        raise ConfigError(
            f"model fine scale has {spec.n_fine} nodes but the dataset has {data.x.shape[1]}"
        )
    trainer = training.Trainer(spec, data, schedule, seed)
    record = trainer.run()
    out = _out_dir(args)
    record.to_csv(os.path.join(out, "run_record.csv"))
    ensembles.save_checkpoint(os.path.join(out, "checkpoint.bin"), spec, trainer.params)
    if record.stage_starts:
        write_csv(os.path.join(out, "stages.csv"), ["stage", "epoch"], record.stage_starts)
    _write_manifest(out, "train", config, seed)
    if record.diverged:
        print("training diverged; partial record written", file=sys.stderr)
        return EXIT_NUMERICAL
    print(
        f"{name}: best validation nmse {record.best_val_nmse!r} "
        f"after {record.points[-1].epoch} epochs ({record.total_flops:,} flops)"
    )
    return EXIT_OK


def cmd_flops(args) -> int:
    name = args.model
    if name not in ensembles.MODEL_NAMES:
        print(
            f"unknown model {name!r}; valid names: {', '.join(ensembles.MODEL_NAMES)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    hier = _hierarchy_from_config(args.hierarchy)
    spec = ensembles.build_from_table(name, hier)
    rows = []
    for i, lvl in enumerate(spec.levels):
        nnz = lvl.z.nnz if lvl.z is not None else lvl.n * lvl.n
        f = args.features
        for j, c in enumerate(lvl.gcn_widths):
            rows.append((i, f"gcn{j}", training.flops_gcn_layer(lvl.n, f, c, nnz)))
            f = c
        f = lvl.concat_width
        for j, c in enumerate(lvl.dense_widths):
            rows.append((i, f"dense{j}", training.flops_dense(lvl.n, f, c)))
            f = c
    total, breakdown = training.model_forward_flops(spec, args.features)
    for level, layer, cost in rows:
        print(f"level {level}  {layer:<8} {cost:>14,}")
    print(f"forward total (with projections): {total:,}  {breakdown}")
    if args.out is not None:
        out = _out_dir(args)
        write_csv(os.path.join(out, "flops.csv"), ["level", "layer", "flops"], rows)
        _write_manifest(out, "flops", {"model": name, "hierarchy": args.hierarchy}, args.seed)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpcn",
        description="Multiscale graph prolongation networks and the microtubule benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=("csv", "bin"), default="csv")
        p.add_argument("--threads", type=int, default=1, help="worker processes")

    p = sub.add_parser("generate", help="simulate a dataset over a strength grid")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("gdd", help="diffusion distance between two edge-list graphs")
    p.add_argument("graph_a")
    p.add_argument("graph_b")
    p.add_argument("--alpha", type=float, default=1.0)
    common(p)
    p.set_defaults(fn=cmd_gdd)

    p = sub.add_parser("coarse-search", help="distance table over candidate coarse tubes")
    common(p)
    p.set_defaults(fn=cmd_coarse_search)

    p = sub.add_parser("limit-curve", help="tube/grid family distances vs tube length")
    common(p)
    p.set_defaults(fn=cmd_limit_curve)

    p = sub.add_parser("train", help="train a named model on a dataset directory")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("flops", help="predicted per-layer costs of a named model")
    p.add_argument("--model", required=True)
    p.add_argument("--hierarchy", default="desk")
    p.add_argument("--features", type=int, default=10)
    common(p)
    p.set_defaults(fn=cmd_flops)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    np.seterr(over="ignore")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
