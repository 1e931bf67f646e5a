"""Command-line entry point: ``tdbm <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from tdbm import datasets, experiment
from tdbm.deep import load_stack, reconstruct, save_stack, train_stack
from tdbm.errors import ConfigError, DataError, InsufficientDataError, InvalidArgumentError, NumericalError
from tdbm.evaluation import dataset_mse
from tdbm.numerics import make_rng

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", choices=sorted(experiment.PRESETS))
    g = p.add_argument_group("experiment fields (override the config file)")
    for f in fields(experiment.ExperimentConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE")


def _experiment_config(args) -> experiment.ExperimentConfig:
    values = {}
    if args.preset:
        values.update(experiment.preset_values(args.preset))
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        values.update(experiment.parse_config_text(text))
    for f in fields(experiment.ExperimentConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            values[f.name] = experiment.parse_value(f.name, raw)
    return experiment.build_config(values)


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    ds = experiment.load_dataset(cfg)
    tcfg = cfg.train_config(cfg.temperatures[0], cfg.algorithms[0], cfg.seed)
    result = train_stack(ds.train.astype(float), cfg.architecture, tcfg, cfg.kinds[0],
                         cfg.propagate_samples, cfg.tempering)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = f"{cfg.kinds[0]}-{cfg.algorithms[0]}_T{cfg.temperatures[0]:g}"
    save_stack(out / f"model_{name}.tdbm", result.model)
    experiment._write_stack_metrics(out / f"metrics_{name}.csv", result.metrics)
    mse = dataset_mse(result.model, ds.test, cfg.binarize_reconstruction, cfg.fixed_point_iters)
    print(f"{name}: test MSE {mse:.5f} -> {out / f'model_{name}.tdbm'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    total = len(experiment.sweep_cells(cfg))

    def progress(cell, res):
        print(f"{cell.name}: {res.test_mse:.5f}", flush=True)

    experiment.run_sweep(cfg, progress)
    out = Path(cfg.output_dir)
    print((out / "table.txt").read_text(), end="")
    print(f"{total} cells -> {out / 'results.csv'}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _experiment_config(args)
    model = load_stack(args.model, cfg.bias_tempered, cfg.tempering)
    ds = experiment.load_dataset(cfg)
    mse = dataset_mse(model, ds.test, cfg.binarize_reconstruction, cfg.fixed_point_iters)
    print(f"test MSE {mse:.5f} over {len(ds.test)} items")
    if args.out:
        n = min(args.count, len(ds.test))
        rec = reconstruct(model, ds.test[:n], fixed_point_iters=cfg.fixed_point_iters)
        # originals and reconstructions interleaved row by row
        pairs = np.stack([ds.test[:n].astype(float), rec], axis=1).reshape(2 * n, -1)
        img = experiment.tile_image(pairs, ds.height, ds.width)
        experiment.write_pgm(args.out, img)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_export_filters(args) -> int:
    model = load_stack(args.model)
    tiles = args.tiles if args.tiles else min(225, model.layers[args.layer - 1].n_hidden)
    img = experiment.export_filters(model, args.layer, tiles, make_rng(args.seed), args.out,
                                    args.width, args.height)
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]})")
    return EXIT_OK


def cmd_inspect(args) -> int:
    print(experiment.inspect_model(args.model), end="")
    return EXIT_OK


def cmd_convert_caltech(args) -> int:
    counts = datasets.convert_caltech(args.inp, args.out)
    print(", ".join(f"{k}: {v}" for k, v in counts.items()) + f" -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdbm", description="Temperature-based RBM/DBN/DBM experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train one stack (first kind/algorithm/temperature of the config)")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run the full temperature sweep")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reconstruct", help="test-set MSE of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="optional PGM of originals and reconstructions")
    p.add_argument("--count", type=int, default=50)
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("export-filters", help="write weight filters of a saved model as PGM")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--tiles", type=int, default=0, help="default: min(225, hidden units)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_export_filters)

    p = sub.add_parser("inspect", help="summarize a saved model")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("convert-caltech", help="convert the Caltech silhouettes .mat to CSIL1")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert_caltech)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InsufficientDataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
