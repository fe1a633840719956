"""Command-line entry point: ``ntklab <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. ``NTKLAB_OUTPUT_ROOT`` sets the default output root for ``run`` and
``NTKLAB_THREADS`` caps the BLAS thread pool.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, storage
from .experiments import ConfigError, DataError, report, run
from .kernel import GramSizeError, OutOfSpanError, gram
from .nads import nad_basis, stein_check
from .netcore import NetworkSpec, init_params
from .spectral import DEFAULT_K, EigenDecompositionError, eigendecompose
from .tasks import (
    IDXFormatError,
    class_group_labels,
    label_with_eigenfunction,
    linear_task,
    load_digits_dataset,
    load_idx_images,
    synth_gaussian,
)
from .trainer import TrainConfig, TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
_DEFAULTS = TrainConfig()


def _network_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("network")
    g.add_argument("--network", help="JSON file with a network description (overrides the flags below)")
    g.add_argument("--input-dim", type=int, default=64, help="input dimension (default: 64)")
    g.add_argument("--hidden", default="32,32", help="comma-separated hidden widths, empty for linear (default: 32,32)")
    g.add_argument("--activation", choices=("relu", "gelu", "tanh"), default="relu", help="(default: relu)")
    g.add_argument("--no-bias", action="store_true", help="drop bias vectors")
    g.add_argument("--seed", type=int, default=0, help="initialization seed (default: 0)")


def _spec(args) -> NetworkSpec:
    if args.network:
        try:
            return NetworkSpec.from_dict(json.loads(Path(args.network).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.network}: invalid JSON ({exc})") from None
    hidden = tuple(int(h) for h in args.hidden.split(",") if h.strip())
    return NetworkSpec(args.input_dim, hidden, args.activation, not args.no_bias)


def _data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data (one source)")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset file (.ntkd)")
    src.add_argument("--gaussian", type=int, metavar="M", help="draw M standard Gaussian samples")
    src.add_argument("--digits", action="store_true", help="scikit-learn 8x8 digits")
    src.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), help="IDX image and label files")
    g.add_argument("--data-seed", type=int, default=0, help="seed for --gaussian (default: 0)")
    g.add_argument("--classes", help="comma-separated class filter for image sources")
    g.add_argument("--downsample", type=int, help="average-pool IDX images to this side length")


def _dataset(args, d: int):
    classes = [int(c) for c in args.classes.split(",")] if args.classes else None
    if args.data:
        return storage.load_dataset(args.data)
    if args.gaussian:
        return synth_gaussian(d, args.gaussian, args.data_seed)
    if args.digits:
        return load_digits_dataset(classes)
    return load_idx_images(args.idx[0], args.idx[1], classes, args.downsample)


def _print_rows(rows, out=None) -> None:
    if not rows:
        return
    w = csv.writer(out or sys.stdout, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow([storage.fmt(v) for v in r.values()])


# ----------------------------------------------------------------------------
# subcommands

def cmd_run(args) -> int:
    config = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
    if config is None:
        raise DataError(f"config file {args.config} not found")
    train = dict(config.get("train", {}))
    for key, val in (("learning_rate", args.lr), ("momentum", args.momentum),
                     ("batch_size", args.batch_size), ("epochs", args.epochs)):
        if val is not None:
            train[key] = val
    if train:
        config["train"] = train
    if args.K is not None:
        config.setdefault("params", {})["K"] = args.K
    if args.workers is not None:
        config["workers"] = args.workers
    manifest = run(config, args.out, config_path=args.config)
    print(json.dumps({k: manifest[k] for k in ("experiment_id", "status", "wall_seconds")}))
    return EXIT_OK


def cmd_report(args) -> int:
    rep = report(args.path)
    if args.format == "json":
        print(json.dumps(rep, indent=2, default=storage._json_default))
    else:
        for name, rows in rep["tables"].items():
            print(f"# {name}")
            _print_rows(rows)
        for k, v in rep["statistics"].items():
            print(f"# {k} = {storage.fmt(v)}")
    return EXIT_OK


def cmd_gram(args) -> int:
    spec = _spec(args)
    ds = _dataset(args, spec.input_dim)
    G = gram(spec, init_params(spec, args.seed), ds.X, max_samples=args.max_samples)
    path = storage.save_gram(args.out, G, {"seed": args.seed, "network": spec.to_dict()})
    print(f"wrote {path} ({G.m}x{G.m})")
    if args.save_data:
        print(f"wrote {storage.save_dataset(args.save_data, ds)}")
    return EXIT_OK


def cmd_eig(args) -> int:
    es = eigendecompose(storage.load_gram(args.gram))
    paths = storage.save_eigensystem(args.out, es)
    print("\n".join(f"wrote {p}" for p in paths))
    for j in range(min(args.show, es.m)):
        print(f"lambda_{j + 1} = {storage.fmt(es.eigenvalues[j])}")
    return EXIT_OK


def cmd_nads(args) -> int:
    spec = _spec(args)
    dataset = None
    if args.mode == "dataset_expectation":
        if not args.data:
            raise ConfigError("--mode dataset_expectation needs --data")
        dataset = storage.load_dataset(args.data)
    basis = nad_basis(spec, init_params(spec, args.seed), args.mode, dataset)
    if args.out:
        print(f"wrote {storage.save_nad_basis(args.out, basis)}")
    _print_rows([{"nad_index": j + 1, "s2": a} for j, a in enumerate(basis.alignments)])
    return EXIT_OK


def cmd_stein(args) -> int:
    spec = _spec(args)
    params = init_params(spec, args.seed)
    if args.direction == "nad1":
        u = nad_basis(spec, params).direction(1)
    else:
        u = np.random.default_rng(args.seed).standard_normal(spec.input_dim)
        u /= np.linalg.norm(u)
    rows = []
    for s in range(args.seeds):
        res = stein_check(spec, params, u, args.n_samples, s)
        rows.append({"sample_seed": s, "n_samples": args.n_samples, "rel_err": res.rel_err})
    _print_rows(rows)
    print(f"# median_rel_err = {storage.fmt(float(np.median([r['rel_err'] for r in rows])))}")
    return EXIT_OK


def cmd_gen_task(args) -> int:
    if args.kind == "linear":
        if args.nad_basis:
            u = storage.load_nad_basis(args.nad_basis).direction(args.index)
        else:
            u = np.zeros(args.input_dim)
            u[args.index - 1] = 1.0
        ds = linear_task(u, args.epsilon, args.sigma, args.m, args.task_seed)
    elif args.kind == "eigenfunction":
        if not (args.data and args.eig):
            raise ConfigError("eigenfunction tasks need --data and --eig")
        ds = label_with_eigenfunction(storage.load_dataset(args.data), storage.load_eigensystem(args.eig), args.index)
    else:
        classes = [int(c) for c in args.classes.split(",")] if args.classes else None
        if args.idx:
            base = load_idx_images(args.idx[0], args.idx[1], classes, args.downsample)
        else:
            base = load_digits_dataset(classes)
        pos = [int(c) for c in args.positive.split(",")] if args.positive else None
        ds = class_group_labels(base, pos)
    path = storage.save_dataset(args.out, ds)
    print(f"wrote {path} ({ds.m} samples, d={ds.d})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntklab", description="Empirical NTK experiments on small networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config and write a manifest")
    p.add_argument("config", help="experiment JSON file")
    p.add_argument("--out", help="output directory (default: $NTKLAB_OUTPUT_ROOT/<id>, root defaults to ./runs)")
    p.add_argument("--lr", type=float, help=f"learning rate override (default in configs: {_DEFAULTS.learning_rate})")
    p.add_argument("--momentum", type=float, help=f"momentum override (default in configs: {_DEFAULTS.momentum})")
    p.add_argument("--batch-size", type=int, help=f"batch size override (default in configs: {_DEFAULTS.batch_size})")
    p.add_argument("--epochs", type=int, help=f"epoch override (default in configs: {_DEFAULTS.epochs})")
    p.add_argument("--K", type=int, help=f"top-K for energy concentration (default: {DEFAULT_K})")
    p.add_argument("--workers", type=int, help="worker processes for independent seeds (default: 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize a finished run")
    p.add_argument("path", help="output directory or manifest.json")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="(default: csv)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gram", help="compute the empirical NTK Gram matrix at initialization")
    _network_args(p)
    _data_args(p)
    p.add_argument("--max-samples", type=int, default=20000, help="Gram size cap (default: 20000)")
    p.add_argument("--out", required=True, help="output .ntkg file")
    p.add_argument("--save-data", help="also write the sample set as .ntkd (needed by gen-task eigenfunction)")
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("eig", help="eigendecompose a Gram file")
    p.add_argument("gram", help="input .ntkg file")
    p.add_argument("--out", required=True, help="output stem; writes .phi.ntkg, .lambda.f64 and .eig.json")
    p.add_argument("--show", type=int, default=10, help="eigenvalues to print (default: 10)")
    p.set_defaults(func=cmd_eig)

    p = sub.add_parser("nads", help="neural anisotropy directions at initialization")
    _network_args(p)
    p.add_argument("--mode", choices=("at_origin", "dataset_expectation"), default="at_origin", help="(default: at_origin)")
    p.add_argument("--data", help="dataset file for dataset_expectation")
    p.add_argument("--out", help="output .ntkn file")
    p.set_defaults(func=cmd_nads)

    p = sub.add_parser("stein", help="Monte-Carlo check of the Gaussian integration-by-parts identity")
    _network_args(p)
    p.add_argument("--n-samples", type=int, default=200_000, help="(default: 200000)")
    p.add_argument("--seeds", type=int, default=5, help="number of sampling seeds (default: 5)")
    p.add_argument("--direction", choices=("nad1", "random"), default="nad1", help="(default: nad1)")
    p.set_defaults(func=cmd_stein)

    p = sub.add_parser("gen-task", help="write a labeled dataset file")
    p.add_argument("kind", choices=("linear", "eigenfunction", "class-group"))
    p.add_argument("--out", required=True, help="output .ntkd file")
    p.add_argument("--index", type=int, default=1, help="NAD, axis or eigenfunction index, 1-based (default: 1)")
    p.add_argument("--epsilon", type=float, default=1.0, help="linear task margin (default: 1)")
    p.add_argument("--sigma", type=float, default=1.0, help="linear task noise scale (default: 1)")
    p.add_argument("--m", type=int, default=10_000, help="linear task samples (default: 10000)")
    p.add_argument("--input-dim", type=int, default=64, help="linear task dimension without --nad-basis (default: 64)")
    p.add_argument("--task-seed", type=int, default=0, help="(default: 0)")
    p.add_argument("--nad-basis", help=".ntkn file supplying the direction")
    p.add_argument("--data", help="unlabeled .ntkd file for eigenfunction tasks")
    p.add_argument("--eig", help=".eig.json manifest for eigenfunction tasks")
    p.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), help="IDX files for class-group tasks (default: digits)")
    p.add_argument("--classes", help="comma-separated class filter")
    p.add_argument("--positive", help="comma-separated classes labeled +1 (default: lower half)")
    p.add_argument("--downsample", type=int)
    p.set_defaults(func=cmd_gen_task)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (TrainingDiverged, EigenDecompositionError, OutOfSpanError, GramSizeError,
                        np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (DataError, storage.StorageError, IDXFormatError, OSError)):
        return EXIT_DATA
    if isinstance(exc, (ConfigError, ValueError, KeyError, TypeError, IndexError)):
        return EXIT_CONFIG
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = os.environ.get("NTKLAB_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(int(threads)):
                return args.func(args)
        return args.func(args)
    except Exception as exc:  # mapped to documented exit codes
        code = _exit_code(exc)
        print(f"ntklab: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
