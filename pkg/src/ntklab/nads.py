"""Neural anisotropy directions from the mixed input/parameter derivative.

For Gaussian inputs the alignment of the linear predictor ``x -> u @ x``
with the NTK equals ``||E[d^2 f / d theta d x] u||^2``, so the directions
ranked by that alignment are the right singular vectors of the averaged
mixed-derivative matrix.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .netcore import (
    NetworkSpec,
    jacobian_directional,
    mixed_jacobian,
    network_fingerprint,
    param_jacobian,
)
from .spectral import canonical_signs
from .tasks import Dataset, linear_task, split
from .trainer import TrainConfig, train

MODES = ("at_origin", "dataset_expectation")


@dataclass(frozen=True)
class NadBasis:
    directions: np.ndarray  # column j is v_{j+1}
    singular_values: np.ndarray
    mode: str
    network_fingerprint: str
    tie_groups: tuple = ()

    @property
    def d(self) -> int:
        return self.directions.shape[0]

    @property
    def degenerate(self) -> bool:
        return bool(self.tie_groups)

    @property
    def alignments(self) -> np.ndarray:
        """Predicted alignment ``s_j^2`` of each direction."""
        return self.singular_values**2

    def direction(self, j: int) -> np.ndarray:
        """The ``j``-th NAD, 1-based."""
        if not 1 <= j <= self.d:
            raise IndexError(f"NAD index {j} outside 1..{self.d}")
        return self.directions[:, j - 1]


def _needs_smooth(spec: NetworkSpec) -> None:
    if spec.activation == "relu" and spec.hidden_widths:
        raise ValueError("relu networks are not differentiable at the origin; use gelu or tanh for NADs")


def _check_unit(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if abs(np.linalg.norm(u) - 1.0) > 1e-8:
        raise ValueError("direction must have unit norm")
    return u


def mean_mixed_jacobian(spec: NetworkSpec, params, X, chunk: int = 32) -> np.ndarray:
    """Average of the mixed-derivative matrices over the rows of ``X``, shape ``(n, d)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eye = np.eye(spec.input_dim)
    acc = np.zeros((spec.n_params, spec.input_dim))
    for i0 in range(0, X.shape[0], chunk):
        acc += jacobian_directional(spec, params, X[i0 : i0 + chunk], eye).sum(axis=0).T
    return acc / X.shape[0]


def mixed_matrix(spec: NetworkSpec, params, mode: str = "at_origin", dataset: Optional[Dataset] = None) -> np.ndarray:
    if mode == "at_origin":
        _needs_smooth(spec)
        return mixed_jacobian(spec, params, np.zeros(spec.input_dim))
    if mode == "dataset_expectation":
        if dataset is None:
            raise ValueError("dataset_expectation mode needs a dataset")
        X = dataset.X if isinstance(dataset, Dataset) else dataset
        return mean_mixed_jacobian(spec, params, X)
    raise ValueError(f"mode must be one of {MODES}")


def _ties(s: np.ndarray, rel_tol: float = 1e-8) -> tuple:
    groups = []
    scale = max(s.max(initial=0.0), np.finfo(float).tiny)
    start = 0
    while start < len(s):
        stop = start + 1
        while stop < len(s) and abs(s[start] - s[stop]) <= rel_tol * scale:
            stop += 1
        if stop - start > 1:
            groups.append(tuple(range(start + 1, stop + 1)))
        start = stop
    return tuple(groups)


def nad_basis(spec: NetworkSpec, params, mode: str = "at_origin", dataset: Optional[Dataset] = None) -> NadBasis:
    """Right singular vectors of the mixed-derivative matrix, by decreasing singular value."""
    M = mixed_matrix(spec, params, mode, dataset)
    _, s, Vt = np.linalg.svd(M, full_matrices=False)
    d = spec.input_dim
    if s.shape[0] < d:  # fewer parameters than input dimensions
        V = np.linalg.svd(M, full_matrices=True)[2].T
        s = np.concatenate([s, np.zeros(d - s.shape[0])])
    else:
        V = Vt.T
    V = canonical_signs(V)
    return NadBasis(V, s, mode, network_fingerprint(spec, params), _ties(s))


def gaussian_moment_matched(d: int, n: int, seed: int) -> np.ndarray:
    """Standard normal samples whitened so their sample mean is 0 and sample covariance is I."""
    if n <= d:
        raise ValueError("need more samples than dimensions for moment matching")
    Z = np.random.default_rng(seed).standard_normal((n, d))
    Z -= Z.mean(axis=0)
    C = Z.T @ Z / n
    L = np.linalg.cholesky(C)
    return np.linalg.solve(L, Z.T).T


def predictor_alignment(
    spec: NetworkSpec,
    params,
    u,
    mode: str = "analytic",
    n_samples: int = 200_000,
    seed: int = 0,
    basis_mode: str = "at_origin",
    dataset: Optional[Dataset] = None,
    chunk: int = 4096,
) -> float:
    """Alignment of ``x -> u @ x`` with the NTK.

    ``analytic`` uses ``||M u||^2`` with ``M`` chosen by ``basis_mode``;
    ``monte_carlo`` averages ``(u @ x) grad_theta f(x)`` over Gaussian draws.
    """
    u = _check_unit(u)
    if mode == "analytic":
        M = mixed_matrix(spec, params, basis_mode, dataset)
        v = M @ u
        return float(v @ v)
    if mode == "monte_carlo":
        X = np.random.default_rng(seed).standard_normal((n_samples, spec.input_dim))
        acc = np.zeros(spec.n_params)
        for i0 in range(0, n_samples, chunk):
            Xc = X[i0 : i0 + chunk]
            acc += param_jacobian(spec, params, Xc).T @ (Xc @ u)
        v = acc / n_samples
        return float(v @ v)
    raise ValueError("mode must be 'analytic' or 'monte_carlo'")


@dataclass(frozen=True)
class SteinCheck:
    mc_lhs: np.ndarray
    analytic_rhs: np.ndarray
    rel_err: float


def stein_check(spec: NetworkSpec, params, u, n_samples: int = 200_000, seed: int = 0, chunk: int = 2048) -> SteinCheck:
    """Compare ``E[grad_theta f(x) (x @ u)]`` with ``E[d^2 f / d theta d x] u`` on shared Gaussian draws.

    Draws are moment matched (exact zero mean and identity covariance), which
    makes the identity hold exactly for models linear in ``x``.
    """
    u = _check_unit(u)
    X = gaussian_moment_matched(spec.input_dim, n_samples, seed)
    lhs = np.zeros(spec.n_params)
    rhs = np.zeros(spec.n_params)
    for i0 in range(0, n_samples, chunk):
        Xc = X[i0 : i0 + chunk]
        lhs += param_jacobian(spec, params, Xc).T @ (Xc @ u)
        rhs += jacobian_directional(spec, params, Xc, u[None, :])[:, 0, :].sum(axis=0)
    lhs /= n_samples
    rhs /= n_samples
    denom = np.linalg.norm(rhs)
    rel = float(np.linalg.norm(lhs - rhs) / denom) if denom > 0 else float(np.linalg.norm(lhs))
    return SteinCheck(lhs, rhs, rel)


def nad_experiment(
    spec: NetworkSpec,
    params,
    nad_indices: Sequence[int],
    train_m: int,
    test_m: int,
    config: TrainConfig,
    basis: Optional[NadBasis] = None,
    epsilon: float = 1.0,
    sigma: float = 1.0,
    seed: int = 0,
    kinds: Sequence[str] = ("nonlinear", "linearized_biased"),
    keep_records: bool = False,
) -> list:
    """Train on linearly separable tasks along selected NADs.

    Returns rows ``{"index", "alignment", "acc_nonlinear", "acc_linear"}``;
    with ``keep_records`` each row also maps model kind to its TrainRecord
    under ``"records"``.
    """
    if basis is None:
        basis = nad_basis(spec, params)
    rows = []
    for j in nad_indices:
        u = basis.direction(int(j))
        data = linear_task(u, epsilon, sigma, train_m + test_m, seed=seed * 7919 + int(j))
        tr, te = split(data, train_m, test_m, seed)
        row = {"index": int(j), "alignment": float(basis.alignments[int(j) - 1])}
        records = {}
        for kind in kinds:
            cfg = TrainConfig.from_dict(dict(config.to_dict(), model_kind=kind))
            rec = train(spec, params, tr, te, cfg)
            key = "acc_nonlinear" if kind == "nonlinear" else "acc_linear"
            row[key] = rec.test_acc[-1]
            records[kind] = rec
        if keep_records:
            row["records"] = records
        rows.append(row)
    return rows
