"""Experiment templates driven by JSON configs.

A run writes every artifact under one output directory and finishes by
writing ``manifest.json`` listing each output with its SHA-256. Outputs are
pure functions of the config and input files, so re-running a config
reproduces the same hashes.
"""
from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
from scipy.stats import spearmanr

from . import __version__, storage
from .kernel import gram
from .nads import nad_basis, nad_experiment, stein_check
from .netcore import NetworkSpec, init_params
from .rotation import DEFAULT_CHECKPOINTS, alignment_spectrum, pretrained_kernel_transfer, track_rotation
from .spectral import eigendecompose
from .tasks import (
    Dataset,
    IDXFormatError,
    class_group_labels,
    label_with_eigenfunction,
    load_digits_dataset,
    load_idx_images,
    split,
    synth_gaussian,
)
from .trainer import TrainConfig, distance_metrics, iterations_to_loss, train


TEMPLATES = (
    "train",
    "eigenfunction-sweep",
    "nad-sweep",
    "sample-size-sweep",
    "rotation-trace",
    "kernel-transfer",
    "stein-check",
)
KIND_SUFFIX = {"nonlinear": "nonlinear", "linearized_biased": "linear", "linearized_unbiased": "linear_unbiased"}


class ConfigError(ValueError):
    pass


class DataError(OSError):
    pass


_int_list = {"type": "array", "items": {"type": "integer"}}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["experiment", "network"],
    "additionalProperties": False,
    "properties": {
        "experiment": {"enum": list(TEMPLATES)},
        "id": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "workers": {"type": "integer", "minimum": 1},
        "network": {
            "type": "object",
            "required": ["input_dim"],
            "additionalProperties": False,
            "properties": {
                "input_dim": {"type": "integer", "minimum": 1},
                "hidden_widths": _int_list,
                "activation": {"enum": ["relu", "gelu", "tanh"]},
                "bias": {"type": "boolean"},
                "input_scale": {"type": ["array", "null"], "items": {"type": "number"}},
                "input_scale_geometric": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "data": {
            "type": "object",
            "required": ["source"],
            "properties": {
                "source": {"enum": ["gaussian", "digits", "idx", "inline", "file"]},
                "m": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "classes": _int_list,
                "center": {"type": "boolean"},
                "images": {"type": "string"},
                "labels_file": {"type": "string"},
                "downsample": {"type": ["integer", "null"], "minimum": 1},
                "path": {"type": "string"},
                "X": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                "y": {"type": "array", "items": {"type": "number"}},
                "labels": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["class_group"]},
                        "positive_classes": _int_list,
                    },
                },
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "optimizer": {"enum": ["sgd_momentum", "adam"]},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 1},
                "model_kind": {"enum": ["nonlinear", "linearized_biased", "linearized_unbiased"]},
                "adam_beta1": {"type": "number"},
                "adam_beta2": {"type": "number"},
                "adam_eps": {"type": "number"},
            },
        },
        "params": {"type": "object"},
    },
}


def validate_config(config: dict) -> dict:
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return config


def load_config(path) -> dict:
    try:
        config = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(config)


def network_from_config(net: dict) -> NetworkSpec:
    net = dict(net)
    geo = net.pop("input_scale_geometric", None)
    if geo is not None:
        net["input_scale"] = np.geomspace(geo[0], geo[1], net["input_dim"]).tolist()
    return NetworkSpec.from_dict(net)


def load_data(data: dict, seed: int) -> Dataset:
    src = data["source"]
    try:
        if src == "gaussian":
            if "m" not in data:
                raise ConfigError("config error at data/m: required for the gaussian source")
            ds = synth_gaussian(data.get("d", data.get("_d")), data["m"], data.get("seed", seed))
        elif src == "digits":
            ds = load_digits_dataset(data.get("classes"), data.get("center", True))
        elif src == "idx":
            ds = load_idx_images(data["images"], data["labels_file"], data.get("classes"),
                                 data.get("downsample"), data.get("center", True))
        elif src == "inline":
            ds = Dataset(np.asarray(data["X"], dtype=float), data.get("y"), {"generator": "inline"})
        else:
            ds = storage.load_dataset(data["path"])
    except KeyError as exc:
        raise ConfigError(f"config error at data/{exc.args[0]}: required for source {src!r}") from None
    except (FileNotFoundError, IDXFormatError, storage.StorageError) as exc:
        raise DataError(str(exc)) from None
    labels = data.get("labels")
    if labels and labels["kind"] == "class_group":
        ds = class_group_labels(ds, labels.get("positive_classes"))
    return ds


def input_files(data: Optional[dict]) -> list:
    if not data:
        return []
    keys = {"idx": ("images", "labels_file"), "file": ("path",)}.get(data["source"], ())
    return [data[k] for k in keys if k in data]


def _train_config(config: dict, **overrides) -> TrainConfig:
    return TrainConfig.from_dict(dict(config.get("train", {}), **overrides))


def _seeds(config: dict) -> list:
    return list(config.get("seeds") or [config.get("seed", 0)])


def _data_cfg(config, spec):
    data = dict(config.get("data") or {})
    data["_d"] = spec.input_dim
    return data


def _summ(record, theta0, threshold=0.01) -> dict:
    dist = distance_metrics(theta0, record.final_params)
    return {
        "acc": record.test_acc[-1] if record.test_acc else None,
        "loss": record.train_loss[-1],
        "iters": iterations_to_loss(record, threshold),
        "l2": dist["l2"],
        "cos": dist["cosine_distance"],
    }


# ----------------------------------------------------------------------------
# per-seed workers (top level so they can cross process boundaries)

def _seed_train(config, seed):
    spec = network_from_config(config["network"])
    p = config.get("params", {})
    ds = load_data(_data_cfg(config, spec), seed)
    if ds.y is None:
        raise ConfigError("config error at data: the train template needs labeled data")
    theta0 = init_params(spec, seed)
    if "train_m" in p:
        tr, te = split(ds, p["train_m"], p.get("test_m", ds.m - p["train_m"]), seed)
    else:
        tr, te = ds, None
    rec = train(spec, theta0, tr, te if te is not None and te.m else None, _train_config(config, seed=seed))
    return {"records": {f"seed{seed}_{KIND_SUFFIX[rec.config['model_kind']]}": rec}, "rows": []}


def _seed_eigen_sweep(config, seed):
    spec = network_from_config(config["network"])
    p = config.get("params", {})
    js = p.get("j_list", [1, 10, 50, 200, 500])
    kinds = p.get("kinds", ["nonlinear", "linearized_biased"])
    thr = p.get("threshold", 0.01)
    ds = load_data(_data_cfg(config, spec), seed)
    train_m = p.get("train_m", ds.m // 2)
    test_m = p.get("test_m", ds.m - train_m)
    theta0 = init_params(spec, seed)
    G = gram(spec, theta0, ds.X)
    es = eigendecompose(G)
    out = {"records": {}, "rows": [], "gram": G if p.get("save_gram") else None}
    for j in js:
        labelled = label_with_eigenfunction(ds, es, j)
        tr, te = split(labelled, train_m, test_m, seed)
        row = {"seed": seed, "j": j, "lambda": float(es.eigenvalues[j - 1])}
        for kind in kinds:
            rec = train(spec, theta0, tr, te, _train_config(config, seed=seed, model_kind=kind, record_batches=True))
            sfx = KIND_SUFFIX[kind]
            out["records"][f"seed{seed}_j{j}_{sfx}"] = rec
            s = _summ(rec, theta0, thr)
            row.update({f"acc_{sfx}": s["acc"], f"iters_{sfx}": s["iters"], f"l2_{sfx}": s["l2"],
                        f"cos_{sfx}": s["cos"], f"loss_{sfx}": s["loss"]})
        out["rows"].append(row)
    return out


def _seed_nad_sweep(config, seed):
    spec = network_from_config(config["network"])
    p = config.get("params", {})
    d = spec.input_dim
    idx = p.get("nad_indices", sorted({1, max(1, d // 4), max(1, d // 2), d}))
    theta0 = init_params(spec, seed)
    basis = nad_basis(spec, theta0, p.get("mode", "at_origin"))
    rows = nad_experiment(
        spec, theta0, idx, p.get("train_m", 1000), p.get("test_m", 1000), _train_config(config, seed=seed),
        basis=basis, epsilon=p.get("epsilon", 1.0), sigma=p.get("sigma", 1.0), seed=seed, keep_records=True,
    )
    records = {}
    out_rows = []
    for r in rows:
        for kind, rec in r.pop("records").items():
            records[f"seed{seed}_nad{r['index']}_{KIND_SUFFIX[kind]}"] = rec
        out_rows.append({"seed": seed, "nad_index": r["index"], "s2": r["alignment"],
                         "acc_nonlinear": r.get("acc_nonlinear"), "acc_linear": r.get("acc_linear")})
    return {"records": records, "rows": out_rows, "basis": basis}


def _seed_sample_size(config, seed):
    spec = network_from_config(config["network"])
    p = config.get("params", {})
    ds = load_data(_data_cfg(config, spec), seed)
    if ds.y is None:
        raise ConfigError("config error at data/labels: sample-size-sweep needs labeled data")
    sizes = p.get("train_sizes", [100, 300, 1000])
    test_m = p.get("test_m", ds.m - max(sizes))
    theta0 = init_params(spec, seed)
    records, rows = {}, []
    for size in sizes:
        tr, te = split(ds, size, test_m, seed)
        row = {"seed": seed, "train_m": size}
        for kind in ("nonlinear", "linearized_biased"):
            rec = train(spec, theta0, tr, te, _train_config(config, seed=seed, model_kind=kind))
            sfx = KIND_SUFFIX[kind]
            records[f"seed{seed}_m{size}_{sfx}"] = rec
            s = _summ(rec, theta0)
            row.update({f"acc_{sfx}": s["acc"], f"l2_{sfx}": s["l2"]})
        rows.append(row)
    return {"records": records, "rows": rows}


def _checkpoint_schedule(p, epochs):
    return sorted({e for e in p.get("checkpoints", DEFAULT_CHECKPOINTS) if 0 <= e <= epochs} | {0, epochs})


def _seed_rotation(config, seed):
    spec = network_from_config(config["network"])
    p = config.get("params", {})
    ds = load_data(_data_cfg(config, spec), seed)
    if "train_m" in p:
        ds, _ = split(ds, p["train_m"], 0, seed)
    theta0 = init_params(spec, seed)
    es0 = eigendecompose(gram(spec, theta0, ds.X))
    J = min(p.get("J", 20), ds.m)
    target = p.get("target_j")
    if target is not None:
        ds = label_with_eigenfunction(ds, es0, target)
    if ds.y is None:
        raise ConfigError("config error at params/target_j: rotation-trace needs labels or a target eigenfunction")
    base = _train_config(config, seed=seed, model_kind="nonlinear")
    cfg = replace(base, checkpoint_epochs=tuple(_checkpoint_schedule(p, base.epochs)))
    rec = train(spec, theta0, ds, None, cfg)
    probe_idx = list(range(1, J + 1))
    if target is not None and target not in probe_idx:
        probe_idx.append(target)
    probes = [ds.y] + [es0.phi(j) for j in probe_idx]
    names = ["target"] + [f"phi{j}" for j in probe_idx]
    trace = track_rotation(spec, list(rec.checkpoints.values()), ds, ds.y, p.get("K", 50), probes, names)
    spec_J = max(probe_idx)
    a0 = alignment_spectrum(spec, theta0, ds, es0, spec_J)
    aT = alignment_spectrum(spec, rec.final_params, ds, es0, spec_J)
    return {"records": {f"seed{seed}_nonlinear": rec}, "trace": trace, "spectrum": (a0, aT),
            "checkpoints": rec.checkpoints, "rows": [], "target": target}


def _seed_transfer(config, seed):
    spec = network_from_config(config["network"])
    p = config.get("params", {})
    ds = load_data(_data_cfg(config, spec), seed)
    theta0 = init_params(spec, seed)
    if p.get("target_j") is not None:
        es = eigendecompose(gram(spec, theta0, ds.X))
        ds = label_with_eigenfunction(ds, es, p["target_j"])
    if ds.y is None:
        raise ConfigError("config error at params/target_j: kernel-transfer needs labels or a target eigenfunction")
    train_m = p.get("train_m", ds.m // 2)
    tr, te = split(ds, train_m, p.get("test_m", ds.m - train_m), seed)
    base = _train_config(config, seed=seed, model_kind="nonlinear", record_batches=True)
    cfg = replace(base, checkpoint_epochs=tuple(_checkpoint_schedule(p, base.epochs)))
    rec = train(spec, theta0, tr, te, cfg)
    rows = pretrained_kernel_transfer(spec, theta0, list(rec.checkpoints.values()), tr, te,
                                      _train_config(config, seed=seed), p.get("threshold", 0.01), rec)
    for r in rows:
        r["seed"] = seed
    return {"records": {f"seed{seed}_nonlinear": rec}, "rows": rows}


def _seed_stein(config, seed):
    spec = network_from_config(config["network"])
    p = config.get("params", {})
    theta0 = init_params(spec, seed)
    direction = p.get("direction", "nad1")
    if direction == "nad1":
        u = nad_basis(spec, theta0).direction(1)
    elif direction == "random":
        u = np.random.default_rng(seed).standard_normal(spec.input_dim)
        u /= np.linalg.norm(u)
    else:
        u = np.asarray(direction, dtype=float)
        u /= np.linalg.norm(u)
    n = p.get("n_samples", 200_000)
    res = stein_check(spec, theta0, u, n, seed)
    row = {"seed": seed, "n_samples": n, "rel_err": res.rel_err,
           "lhs_norm": float(np.linalg.norm(res.mc_lhs)), "rhs_norm": float(np.linalg.norm(res.analytic_rhs))}
    return {"records": {}, "rows": [row]}


WORKERS = {
    "train": _seed_train,
    "eigenfunction-sweep": _seed_eigen_sweep,
    "nad-sweep": _seed_nad_sweep,
    "sample-size-sweep": _seed_sample_size,
    "rotation-trace": _seed_rotation,
    "kernel-transfer": _seed_transfer,
    "stein-check": _seed_stein,
}


def _map(fn, config, seeds, workers):
    if workers <= 1 or len(seeds) <= 1:
        return [fn(config, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, [config] * len(seeds), seeds))


# ----------------------------------------------------------------------------
# writing

def _rows_csv(path, rows):
    header = []
    for r in rows:
        for k in r:
            if k not in header:
                header.append(k)
    storage.write_csv(path, header, ([r.get(k) for k in header] for r in rows))


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.items = []

    def add(self, path: Path, kind: str):
        self.items.append((Path(path), kind))

    def manifest_entries(self):
        return [
            {"path": str(p.relative_to(self.root)), "kind": k, "sha256": storage.sha256_file(p)}
            for p, k in self.items
        ]


def _write_outputs(experiment, results, outdir: Path, outs: _Outputs, spec):
    rec_dir = outdir / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    for res in results:
        for name, rec in res["records"].items():
            outs.add(storage.write_train_record(rec_dir / f"{name}.csv", rec), "train_record")
    rows = [r for res in results for r in res["rows"]]
    if experiment == "eigenfunction-sweep":
        _rows_csv(outdir / "summary.csv", rows)
        outs.add(outdir / "summary.csv", "summary")
        for res in results:
            if res.get("gram") is not None:
                seed = res["rows"][0]["seed"]
                p = storage.save_gram(outdir / f"gram_seed{seed}.ntkg", res["gram"])
                outs.add(p, "gram")
                outs.add(storage.sidecar(p), "gram_manifest")
    elif experiment in ("nad-sweep", "sample-size-sweep", "stein-check"):
        name = {"nad-sweep": "summary.csv", "sample-size-sweep": "summary.csv", "stein-check": "stein.csv"}[experiment]
        _rows_csv(outdir / name, rows)
        outs.add(outdir / name, "summary")
        if experiment == "nad-sweep":
            for res in results:
                seed = res["rows"][0]["seed"]
                p = storage.save_nad_basis(outdir / f"nads_seed{seed}.ntkn", res["basis"])
                outs.add(p, "nad_basis")
                outs.add(storage.sidecar(p), "nad_manifest")
    elif experiment == "kernel-transfer":
        cols = ["seed", "epoch", "model", "iterations_to_loss", "test_accuracy", "final_train_loss"]
        storage.write_csv(outdir / "transfer.csv", cols, ([r[c] for c in cols] for r in rows))
        outs.add(outdir / "transfer.csv", "summary")
    elif experiment == "rotation-trace":
        trace_rows, spec_rows, ckpt_dir = [], [], outdir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        for res in results:
            seed = int(res["records"] and next(iter(res["records"])).split("_")[0][4:])
            tr = res["trace"]
            for i, ep in enumerate(tr.epochs):
                row = {"seed": seed, "checkpoint_epoch": ep, "energy_concentration": tr.energy_concentration[i],
                       "jacobian_norm": tr.jacobian_norm[i]}
                row.update({f"alpha_{n}": float(a) for n, a in zip(tr.probe_names, tr.alignments[i])})
                trace_rows.append(row)
            a0, aT = res["spectrum"]
            for j in range(len(a0)):
                spec_rows.append({"seed": seed, "j": j + 1, "alpha_init": a0[j], "alpha_final": aT[j],
                                  "ratio": aT[j] / a0[j], "is_target": res["target"] == j + 1})
            for ep, ck in sorted(res["checkpoints"].items()):
                p = storage.save_checkpoint(ckpt_dir / f"seed{seed}_epoch{ep}.ntkp", ck, spec)
                outs.add(p, "checkpoint")
                outs.add(storage.sidecar(p), "checkpoint_manifest")
        _rows_csv(outdir / "rotation.csv", trace_rows)
        _rows_csv(outdir / "spectrum.csv", spec_rows)
        outs.add(outdir / "rotation.csv", "summary")
        outs.add(outdir / "spectrum.csv", "spectrum")


def run(config, outdir=None, config_path=None) -> dict:
    """Execute one experiment template and return its manifest.

    ``config`` is a path to a JSON file or an already parsed dict; in the
    latter case ``config_path`` may name the file it came from so that the
    manifest records its hash.
    """
    if isinstance(config, (str, Path)):
        config_path = Path(config)
        config = load_config(config_path)
    else:
        config = validate_config(config)
    experiment = config["experiment"]
    exp_id = config.get("id", experiment)
    if outdir is None:
        outdir = Path(os.environ.get("NTKLAB_OUTPUT_ROOT", "runs")) / exp_id
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = network_from_config(config["network"])
    seeds = _seeds(config)
    workers = config.get("workers", 1)
    inputs = [{"path": str(p), "sha256": storage.sha256_file(p)} for p in input_files(config.get("data")) if Path(p).exists()]
    if config_path is not None:
        inputs.insert(0, {"path": str(config_path), "sha256": storage.sha256_file(config_path)})
    manifest = {
        "experiment_id": exp_id,
        "experiment": experiment,
        "config": config,
        "tool_version": __version__,
        "seeds": seeds,
        "inputs": inputs,
        "outputs": [],
        "status": "running",
    }
    outs = _Outputs(outdir)
    t0 = time.time()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    try:
        results = _map(WORKERS[experiment], config, seeds, workers)
        _write_outputs(experiment, results, outdir, outs, spec)
        manifest["status"] = "complete"
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["partial_outputs"] = True
        raise
    finally:
        manifest["outputs"] = outs.manifest_entries()
        manifest["started"] = started
        manifest["wall_seconds"] = round(time.time() - t0, 3)
        storage.write_json(outdir / "manifest.json", manifest)
    return manifest


# ----------------------------------------------------------------------------
# reporting

def _num(v):
    if v in (None, ""):
        return None
    if v in ("true", "false"):
        return v == "true"
    try:
        return float(v)
    except ValueError:
        return v


def _median_by(rows, key, cols):
    groups = {}
    for r in rows:
        groups.setdefault(r[key], []).append(r)
    table = []
    for k in sorted(groups):
        out = {key: k}
        for c in cols:
            vals = [np.inf if r.get(c) is None else r[c] for r in groups[k] if c in r]
            out[c] = float(np.median(vals)) if vals else None
        table.append(out)
    return table


def _spearman(x, y) -> float:
    """Rank correlation; NaN when either side is constant (e.g. a threshold never reached)."""
    if len(set(x)) < 2 or len(set(y)) < 2:
        return float("nan")
    return float(spearmanr(x, y).statistic)


def _load_manifest(path) -> tuple:
    path = Path(path)
    if path.is_dir():
        mpath = path / "manifest.json"
        if not mpath.exists():
            raise DataError(f"{path}: no manifest.json found")
    else:
        mpath = path
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{mpath}: unreadable manifest ({exc})") from None
    root = mpath.parent
    for entry in manifest.get("outputs", []):
        p = root / entry["path"]
        if not p.exists() or storage.sha256_file(p) != entry["sha256"]:
            raise DataError(f"{p}: missing or does not match its manifest hash")
    return manifest, root


def report(path) -> dict:
    """Median-over-seed tables and rank statistics for a finished run."""
    manifest, root = _load_manifest(path)
    exp = manifest["experiment"]
    if not manifest.get("outputs"):
        raise DataError(f"{root}: run produced no outputs")
    tables, stats = {}, {}

    def rows_of(name):
        return [{k: _num(v) for k, v in r.items()} for r in storage.read_csv(root / name)]

    if exp == "eigenfunction-sweep":
        rows = rows_of("summary.csv")
        cols = [c for c in rows[0] if c not in ("seed", "j")]
        med = _median_by(rows, "j", cols)
        tables["eigenfunction_accuracy"] = med
        js = [r["j"] for r in med]
        for c in ("acc_nonlinear", "acc_linear", "iters_nonlinear", "l2_nonlinear", "iters_linear", "l2_linear"):
            if c in cols:
                stats[f"spearman_j_{c}"] = _spearman(js, [r[c] for r in med])
    elif exp == "nad-sweep":
        rows = rows_of("summary.csv")
        med = _median_by(rows, "nad_index", ["s2", "acc_nonlinear", "acc_linear"])
        tables["nad_accuracy"] = med
        idx = [r["nad_index"] for r in med]
        for c in ("acc_nonlinear", "acc_linear"):
            if med[0].get(c) is not None:
                stats[f"spearman_index_{c}"] = _spearman(idx, [r[c] for r in med])
                stats[f"spearman_neg_s2_{c}"] = _spearman([-r["s2"] for r in med], [r[c] for r in med])
    elif exp == "sample-size-sweep":
        rows = rows_of("summary.csv")
        tables["sample_size"] = _median_by(rows, "train_m", [c for c in rows[0] if c not in ("seed", "train_m")])
    elif exp == "rotation-trace":
        rows = rows_of("rotation.csv")
        tables["rotation"] = _median_by(rows, "checkpoint_epoch", [c for c in rows[0] if c not in ("seed", "checkpoint_epoch")])
        first, last = tables["rotation"][0], tables["rotation"][-1]
        stats["energy_init"] = first["energy_concentration"]
        stats["energy_final"] = last["energy_concentration"]
        spec_rows = rows_of("spectrum.csv")
        tables["alignment_spectrum"] = _median_by(spec_rows, "j", ["alpha_init", "alpha_final", "ratio"])
        doms = []
        for seed in sorted({r["seed"] for r in spec_rows}):
            rs = [r for r in spec_rows if r["seed"] == seed]
            tgt = [r["ratio"] for r in rs if r["is_target"]]
            if tgt:
                doms.append(tgt[0] / float(np.median([r["ratio"] for r in rs if not r["is_target"]])))
        if doms:
            stats["target_dominance"] = float(np.median(doms))
    elif exp == "kernel-transfer":
        rows = rows_of("transfer.csv")
        for r in rows:
            r["epoch"] = -1 if r["epoch"] is None else r["epoch"]
        tables["transfer"] = _median_by(rows, "epoch", ["iterations_to_loss", "test_accuracy", "final_train_loss"])
    elif exp == "stein-check":
        rows = rows_of("stein.csv")
        tables["stein"] = rows
        stats["median_rel_err"] = float(np.median([r["rel_err"] for r in rows]))
    elif exp == "train":
        recs = [e for e in manifest["outputs"] if e["kind"] == "train_record"]
        tables["final"] = [dict(rows_of(e["path"])[-1], record=e["path"]) for e in recs]
    return {"experiment": exp, "experiment_id": manifest["experiment_id"], "tables": tables, "statistics": stats}
