"""On-disk formats.

Binary matrices are framed as a 4-byte ASCII magic, a little-endian u32
format version, the dimensions as u32 and then little-endian float64
values in row-major order. Gram files (``NTKG``) are square and store a
single dimension ``m``; every other magic stores ``rows, cols``. Each binary
file may carry a JSON sidecar at ``<path>.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FORMAT_VERSION = 1
GRAM_MAGIC = b"NTKG"
DATASET_MAGIC = b"NTKD"
NAD_MAGIC = b"NTKN"
PARAMS_MAGIC = b"NTKP"
_MATRIX_MAGICS = (DATASET_MAGIC, NAD_MAGIC, PARAMS_MAGIC)


class StorageError(ValueError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_gram(path, G) -> Path:
    G = np.ascontiguousarray(G, dtype="<f8")
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise StorageError("Gram matrix must be square")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(GRAM_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, G.shape[0]))
        fh.write(G.tobytes())
    return path


def read_gram(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != GRAM_MAGIC:
        raise StorageError(f"{path}: not a Gram file (magic {data[:4]!r})")
    if len(data) < 12:
        raise StorageError(f"{path}: truncated header")
    version, m = struct.unpack("<II", data[4:12])
    if version != FORMAT_VERSION:
        raise StorageError(f"{path}: unsupported format version {version}")
    if len(data) != 12 + 8 * m * m:
        raise StorageError(f"{path}: expected {m}x{m} values, found {(len(data) - 12) // 8}")
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(m, m).astype(float)


def write_matrix(path, magic: bytes, A) -> Path:
    if magic not in _MATRIX_MAGICS:
        raise StorageError(f"unknown magic {magic!r}")
    A = np.ascontiguousarray(np.atleast_2d(A), dtype="<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<III", FORMAT_VERSION, *A.shape))
        fh.write(A.tobytes())
    return path


def read_matrix(path, magic: bytes) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise StorageError(f"{path}: expected magic {magic!r}, found {data[:4]!r}")
    if len(data) < 16:
        raise StorageError(f"{path}: truncated header")
    version, rows, cols = struct.unpack("<III", data[4:16])
    if version != FORMAT_VERSION:
        raise StorageError(f"{path}: unsupported format version {version}")
    if len(data) != 16 + 8 * rows * cols:
        raise StorageError(f"{path}: payload does not match {rows}x{cols}")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(rows, cols).astype(float)


def write_f64(path, values) -> Path:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(values, dtype="<f8").tobytes())
    return path


def read_f64(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) % 8:
        raise StorageError(f"{path}: length is not a multiple of 8")
    return np.frombuffer(data, dtype="<f8").astype(float)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, (set, tuple)):
        return list(o)
    raise TypeError(f"{type(o).__name__} is not JSON serialisable")


def sidecar(path) -> Path:
    return Path(str(path) + ".json")


def fmt(value) -> str:
    """CSV cell: 17 significant digits for reals, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------------------
# domain objects

def save_gram(path, gram_matrix, extra: Optional[dict] = None) -> Path:
    path = write_gram(path, gram_matrix.values)
    meta = {
        "kind": "gram",
        "m": gram_matrix.m,
        "dataset_fingerprint": gram_matrix.dataset_fingerprint,
        "network_fingerprint": gram_matrix.network_fingerprint,
        "gram_fingerprint": gram_matrix.fingerprint,
    }
    meta.update(extra or {})
    write_json(sidecar(path), meta)
    return path


def load_gram(path):
    from .kernel import GramMatrix

    meta = json.loads(sidecar(path).read_text()) if sidecar(path).exists() else {}
    return GramMatrix(read_gram(path), meta.get("dataset_fingerprint", ""), meta.get("network_fingerprint", ""))


def save_eigensystem(stem, eigsys) -> tuple:
    stem = Path(stem)
    phi_path = write_gram(stem.with_suffix(".phi.ntkg"), eigsys.eigenfunctions)
    lam_path = write_f64(stem.with_suffix(".lambda.f64"), eigsys.eigenvalues)
    man = write_json(stem.with_suffix(".eig.json"), {
        "kind": "eigensystem",
        "m": eigsys.m,
        "phi": phi_path.name,
        "eigenvalues": lam_path.name,
        "gram_fingerprint": eigsys.gram_fingerprint,
        "dataset_fingerprint": eigsys.dataset_fingerprint,
        "convention": "lambda_j = mu_j / m; phi_j = sqrt(m) u_j (columns)",
    })
    return phi_path, lam_path, man


def load_eigensystem(manifest_path):
    from .spectral import EigenSystem

    manifest_path = Path(manifest_path)
    meta = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    return EigenSystem(
        read_f64(base / meta["eigenvalues"]),
        read_gram(base / meta["phi"]),
        meta["gram_fingerprint"],
        meta.get("dataset_fingerprint", ""),
    )


def save_dataset(path, dataset) -> Path:
    path = write_matrix(path, DATASET_MAGIC, dataset.X)
    write_json(sidecar(path), {
        "kind": "dataset",
        "m": dataset.m,
        "d": dataset.d,
        "fingerprint": dataset.fingerprint,
        "labels": None if dataset.y is None else dataset.y.tolist(),
        "class_ids": None if dataset.class_ids is None else dataset.class_ids.tolist(),
        "provenance": dataset.provenance,
    })
    return path


def load_dataset(path):
    from .tasks import Dataset

    X = read_matrix(path, DATASET_MAGIC)
    meta = json.loads(sidecar(path).read_text()) if sidecar(path).exists() else {}
    return Dataset(X, meta.get("labels"), meta.get("provenance", {}), meta.get("class_ids"))


def save_nad_basis(path, basis) -> Path:
    path = write_matrix(path, NAD_MAGIC, basis.directions)
    write_json(sidecar(path), {
        "kind": "nad_basis",
        "d": basis.d,
        "mode": basis.mode,
        "singular_values": basis.singular_values.tolist(),
        "network_fingerprint": basis.network_fingerprint,
        "tie_groups": [list(g) for g in basis.tie_groups],
        "layout": "column j is the j-th direction",
    })
    return path


def load_nad_basis(path):
    from .nads import NadBasis

    meta = json.loads(sidecar(path).read_text())
    return NadBasis(
        read_matrix(path, NAD_MAGIC),
        np.asarray(meta["singular_values"], dtype=float),
        meta["mode"],
        meta["network_fingerprint"],
        tuple(tuple(g) for g in meta.get("tie_groups", ())),
    )


def save_checkpoint(path, checkpoint, spec=None) -> Path:
    """Parameters in row 0, then one row per vector-valued optimizer buffer."""
    names = sorted(k for k, v in checkpoint.optimizer_state.items() if np.size(v) > 1)
    scalars = {k: np.asarray(v).tolist() for k, v in checkpoint.optimizer_state.items() if np.size(v) <= 1}
    rows = [checkpoint.params] + [checkpoint.optimizer_state[k] for k in names]
    if checkpoint.reference is not None:
        rows.append(checkpoint.reference)
    path = write_matrix(path, PARAMS_MAGIC, np.vstack(rows))
    write_json(sidecar(path), {
        "kind": "checkpoint",
        "epoch": checkpoint.epoch,
        "config_fingerprint": checkpoint.config_fingerprint,
        "rng_digest": checkpoint.rng_digest,
        "optimizer_rows": names,
        "optimizer_scalars": scalars,
        "has_reference": checkpoint.reference is not None,
        "network": None if spec is None else spec.to_dict(),
    })
    return path


def load_checkpoint(path):
    from .trainer import Checkpoint

    meta = json.loads(sidecar(path).read_text())
    M = read_matrix(path, PARAMS_MAGIC)
    state = {k: M[1 + i].copy() for i, k in enumerate(meta["optimizer_rows"])}
    for k, v in meta.get("optimizer_scalars", {}).items():
        state[k] = np.atleast_1d(np.asarray(v, dtype=float))
    ref = M[-1].copy() if meta.get("has_reference") else None
    return Checkpoint(meta["epoch"], M[0].copy(), meta["config_fingerprint"], meta["rng_digest"], state, ref)


def write_train_record(path, record) -> Path:
    n = len(record.train_loss)
    test = record.test_acc if record.test_acc else [None] * n
    rows = (
        (record.start_epoch + i + 1, record.train_loss[i], record.train_acc[i], test[i])
        for i in range(n)
    )
    return write_csv(path, ["epoch", "train_loss", "train_acc", "test_acc"], rows)
