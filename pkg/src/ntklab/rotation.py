"""Evolution of the empirical NTK along a training trajectory."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernel import alignments, gram, jacobian_moments
from .netcore import NetworkSpec, param_jacobian
from .spectral import DEFAULT_K, EigenSystem, eigendecompose, energy_concentration
from .tasks import Dataset
from .trainer import TrainConfig, distance_metrics, iterations_to_loss, train

logger = logging.getLogger(__name__)

DEFAULT_CHECKPOINTS = (0, 1, 2, 5, 10, 25, 50, 100)


@dataclass
class RotationTrace:
    epochs: list
    energy_concentration: list
    alignments: list  # one array of probe alignments per checkpoint
    jacobian_norm: list
    K: int
    probe_names: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)

    def alignment_series(self, probe: int) -> np.ndarray:
        return np.array([a[probe] for a in self.alignments])


def mean_jacobian_sq_norm(spec: NetworkSpec, params, X, chunk: int = 512) -> float:
    """``(1/m) sum_i ||grad_theta f(x_i)||^2``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    total = 0.0
    for i0 in range(0, X.shape[0], chunk):
        J = param_jacobian(spec, params, X[i0 : i0 + chunk])
        total += float(np.einsum("ij,ij->", J, J))
    return total / X.shape[0]


def track_rotation(
    spec: NetworkSpec,
    checkpoints: Sequence,
    dataset,
    y,
    K: int = DEFAULT_K,
    probe_functions: Sequence = (),
    probe_names: Optional[Sequence[str]] = None,
) -> RotationTrace:
    """Energy concentration of ``y``, probe alignments and Jacobian norm at each checkpoint.

    A checkpoint that fails (e.g. Gram cap exceeded) is logged in
    ``errors`` with NaN entries; the remaining checkpoints still run.
    """
    X = dataset.X if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=float)
    y = np.asarray(y, dtype=float)
    P = np.column_stack([np.asarray(p, dtype=float) for p in probe_functions]) if len(probe_functions) else np.zeros((len(X), 0))
    if P.shape[0] != len(X) or y.shape != (len(X),):
        raise ValueError("probe and label vectors must have one entry per sample")
    names = list(probe_names) if probe_names is not None else [f"probe{i}" for i in range(P.shape[1])]
    trace = RotationTrace([], [], [], [], K, names)
    for ckpt in sorted(checkpoints, key=lambda c: c.epoch):
        trace.epochs.append(ckpt.epoch)
        try:
            es = eigendecompose(gram(spec, ckpt.params, X))
            e = energy_concentration(es, y, K)
            a = alignments(spec, ckpt.params, X, P) if P.shape[1] else np.zeros(0)
            jn = mean_jacobian_sq_norm(spec, ckpt.params, X)
        except (ValueError, MemoryError, RuntimeError) as exc:
            logger.warning("checkpoint %d failed: %s", ckpt.epoch, exc)
            trace.errors[ckpt.epoch] = str(exc)
            e, a, jn = float("nan"), np.full(P.shape[1], np.nan), float("nan")
        trace.energy_concentration.append(e)
        trace.alignments.append(a)
        trace.jacobian_norm.append(jn)
    return trace


def alignment_spectrum(spec: NetworkSpec, params_t, dataset, eigsys0: EigenSystem, J: int) -> np.ndarray:
    """Alignments of the first ``J`` initial eigenfunctions with the kernel at ``params_t``."""
    X = dataset.X if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=float)
    if J > eigsys0.m:
        raise ValueError(f"J={J} exceeds the {eigsys0.m} available eigenfunctions")
    if len(X) != eigsys0.m:
        raise ValueError("eigensystem and dataset differ in sample count")
    V = jacobian_moments(spec, params_t, X, eigsys0.eigenfunctions[:, :J])
    return np.einsum("nk,nk->k", V, V)


def pretrained_kernel_transfer(
    spec: NetworkSpec,
    init_params,
    pretrain_checkpoints: Sequence,
    train_set: Dataset,
    test_set: Dataset,
    config: TrainConfig,
    threshold: float = 0.01,
    nonlinear_record=None,
) -> list:
    """Train a fresh linear model on the kernel of each pretraining checkpoint.

    The epoch-0 row is the ordinary (biased) linearization at initialization;
    later rows use the unbiased linearization around the checkpoint weights,
    started from zero displacement. A final ``"nonlinear"`` row carries the
    fully non-linear run for reference when ``nonlinear_record`` is given.
    """
    rows = []
    for ckpt in sorted(pretrain_checkpoints, key=lambda c: c.epoch):
        if ckpt.epoch == 0:
            kind, start, ref = "linearized_biased", init_params, init_params
        else:
            kind, start, ref = "linearized_unbiased", ckpt.params, ckpt.params
        cfg = TrainConfig.from_dict(dict(config.to_dict(), model_kind=kind, record_batches=True, checkpoint_epochs=()))
        rec = train(spec, start, train_set, test_set, cfg, reference=ref)
        rows.append({
            "epoch": ckpt.epoch,
            "model": kind,
            "iterations_to_loss": iterations_to_loss(rec, threshold),
            "test_accuracy": rec.test_acc[-1],
            "final_train_loss": rec.train_loss[-1],
        })
    if nonlinear_record is not None:
        rows.append({
            "epoch": None,
            "model": "nonlinear",
            "iterations_to_loss": iterations_to_loss(nonlinear_record, threshold),
            "test_accuracy": nonlinear_record.test_acc[-1],
            "final_train_loss": nonlinear_record.train_loss[-1],
        })
    return rows


def relative_growth(spectrum_t: np.ndarray, spectrum_0: np.ndarray) -> np.ndarray:
    return np.asarray(spectrum_t) / np.asarray(spectrum_0)


def target_dominance(spectrum_t, spectrum_0, target: int) -> float:
    """Growth ratio of the target eigenfunction (1-based) over the median growth of all others."""
    ratios = relative_growth(spectrum_t, spectrum_0)
    others = np.delete(ratios, target - 1)
    return float(ratios[target - 1] / np.median(others))


def parameter_travel(init_params, record) -> dict:
    return distance_metrics(init_params, record.final_params)
