"""Command-line entry point: ``hmtl {fit,bench,synth,gridsearch}``.

Every subcommand reads an optional JSON config (``--config``); ``--seed``
overrides the config seed, ``--out`` the output location and ``--threads``
the worker count. Exit status is 0 on success, 2 for bad input and 1 for
solver failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from .bench import (
    FITTED,
    METHODS,
    ExperimentConfig,
    grid_search,
    load_config,
    load_table,
    make_estimator,
    run_experiment,
)
from .core import InvalidInputError, SolverError
from .data_io import extract_season, table_from_dataset, write_grid_csv, write_gridded_csv
from .driver import save_model
from .synthetic import ClimateSynthSpec, SyntheticSpec, generate_hierarchical_dataset, generate_synthetic_climate


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "threads", None):
        cfg = replace(cfg, threads=args.threads)
    return cfg


def _training_data(cfg):
    table = extract_season(load_table(cfg.data), cfg.seasons[0], cfg.season_mapping)
    return table, table.to_dataset()


def cmd_bench(args):
    cfg = _config(args)
    result = run_experiment(cfg, output_dir=args.out or cfg.output_dir, threads=cfg.threads)
    width = max(len(m) for m in cfg.methods)
    for season, variable, length, method, mean, std, k, missing in result.summary:
        cell = "missing" if mean is None else f"{mean:.4f} ({std:.4f})"
        print(f"{season:6s} {variable:14s} {length:3d}y  {method:{width}s}  {cell}  windows={k} missing={missing}")
    print(f"wrote {', '.join(sorted(result.paths.values()))}")
    return 0


def cmd_gridsearch(args):
    cfg = _config(args)
    if args.method not in FITTED:
        raise InvalidInputError(f"gridsearch needs a tuned method: {', '.join(FITTED)}")
    table, dataset = _training_data(cfg)
    est = make_estimator(args.method, table.grid, cfg.seed)
    result = grid_search(est, dataset, cfg.grid_for(args.method))
    payload = {"method": args.method, "seed": cfg.seed, "season": cfg.seasons[0], **result.to_dict()}
    out = args.out or os.path.join(cfg.output_dir, f"gridsearch_{args.method}.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"best {args.method} parameters: {json.dumps(result.best_params, sort_keys=True)}")
    print(f"wrote {out}")
    return 0


def cmd_fit(args):
    cfg = _config(args)
    if args.method not in ("hmtl", "mssl"):
        raise InvalidInputError("fit writes model files for 'hmtl' or 'mssl'")
    table, dataset = _training_data(cfg)
    est = make_estimator(args.method, table.grid, cfg.seed)
    params = grid_search(est, dataset, cfg.grid_for(args.method)).best_params
    est.set_params(**params, n_jobs=cfg.threads)
    est.fit(dataset)
    out = args.out or os.path.join(cfg.output_dir, f"model_{args.method}.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_model(est.model_, out)
    rep = est.report_
    print(f"fitted {args.method} with {json.dumps(params, sort_keys=True)}: "
          f"{rep.outer_iterations} outer iterations, converged={rep.converged}, "
          f"objective={rep.objective_trace[-1]:.6g}")
    print(f"wrote {out}")
    return 0


def cmd_synth(args):
    spec_fields = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            spec_fields = json.load(fh)
    if args.seed is not None:
        spec_fields["seed"] = args.seed
    out = args.out or "synthetic"
    os.makedirs(out, exist_ok=True)
    if args.kind == "climate":
        table = generate_synthetic_climate(ClimateSynthSpec(**spec_fields))
        write_grid_csv(table, os.path.join(out, "grid.csv"))
    else:
        spec = SyntheticSpec(**spec_fields)
        dataset, thetas, omegas = generate_hierarchical_dataset(spec)
        table = table_from_dataset(dataset)
        with open(os.path.join(out, "truth.json"), "w", encoding="utf-8") as fh:
            json.dump({"spec": asdict(spec),
                       "thetas": [np.asarray(t).tolist() for t in thetas],
                       "omegas": [np.asarray(o).tolist() for o in omegas]}, fh)
            fh.write("\n")
    write_gridded_csv(table, os.path.join(out, "data.csv"))
    print(f"wrote {table.V} variables x {table.m} locations x {table.n} months, "
          f"{table.d} models, to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="hmtl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threads=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output file or directory")
        if threads:
            p.add_argument("--threads", type=int, help="worker threads")

    p = sub.add_parser("bench", help="moving-window comparison of methods")
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gridsearch", help="select hyperparameters on an 80/20 temporal split")
    common(p)
    p.add_argument("--method", default="hmtl", choices=METHODS)
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("fit", help="fit HMTL or MSSL on the whole record and save the model")
    common(p)
    p.add_argument("--method", default="hmtl", choices=("hmtl", "mssl"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("synth", help="write a synthetic dataset in the gridded CSV format")
    common(p, threads=False)
    p.add_argument("--kind", default="climate", choices=("climate", "hierarchical"))
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (InvalidInputError, OSError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
