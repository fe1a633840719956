"""Empirical NTK, Gram matrices, target alignment and RKHS-norm diagnostics.

Every expectation over inputs is the uniform average over the samples given.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .netcore import (
    NetworkSpec,
    array_fingerprint,
    network_fingerprint,
    param_jacobian,
)

DEFAULT_BLOCK_SIZE = 256
DEFAULT_MAX_SAMPLES = 20_000


class GramSizeError(MemoryError):
    pass


class OutOfSpanError(ValueError):
    def __init__(self, residual: float, limit: float):
        super().__init__(
            f"{residual:.3%} of the target energy lies outside the retained eigenspace (limit {limit:.1%})"
        )
        self.residual = residual


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    dataset_fingerprint: str
    network_fingerprint: str

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def fingerprint(self) -> str:
        return array_fingerprint(self.values)

    def check(self, sym_tol: float = 1e-9, psd_tol: float = 1e-8) -> None:
        """Raise if the matrix is not symmetric and positive semi-definite."""
        G = self.values
        scale = np.abs(G).max() if G.size else 0.0
        if np.abs(G - G.T).max(initial=0.0) > sym_tol * scale:
            raise ValueError("Gram matrix is not symmetric")
        w = np.linalg.eigvalsh(G)
        if w[0] < -psd_tol * max(w[-1], 0.0):
            raise ValueError(f"Gram matrix is not PSD (min eigenvalue {w[0]:.3e})")


@dataclass(frozen=True)
class AlignmentReport:
    alignment: float
    l2_norm: float
    rkhs_lower_bound: float
    rkhs_norm: Optional[float] = None
    bound_term: Optional[float] = None


def ntk_value(spec: NetworkSpec, params, x, x2) -> float:
    return float(param_jacobian(spec, params, x) @ param_jacobian(spec, params, x2))


def gram(
    spec: NetworkSpec,
    params,
    X,
    block_size: int = DEFAULT_BLOCK_SIZE,
    max_samples: int = DEFAULT_MAX_SAMPLES,
) -> GramMatrix:
    """NTK Gram matrix over the rows of ``X``.

    Only blocks on or above the diagonal are evaluated; the rest is mirrored.
    Jacobian blocks are recomputed per block pair so peak memory stays at two
    ``block_size x n`` slabs plus the output.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    m = X.shape[0]
    if m == 0:
        raise ValueError("empty dataset")
    if m > max_samples:
        raise GramSizeError(f"{m} samples exceeds the Gram cap of {max_samples}")
    starts = list(range(0, m, block_size))
    G = np.empty((m, m))
    for bi, i0 in enumerate(starts):
        i1 = min(i0 + block_size, m)
        Ji = param_jacobian(spec, params, X[i0:i1])
        for j0 in starts[bi:]:
            j1 = min(j0 + block_size, m)
            if j0 == i0:
                blk = Ji @ Ji.T
                blk = np.triu(blk) + np.triu(blk, 1).T
            else:
                blk = Ji @ param_jacobian(spec, params, X[j0:j1]).T
                G[j0:j1, i0:i1] = blk.T
            G[i0:i1, j0:j1] = blk
    return GramMatrix(G, array_fingerprint(X), network_fingerprint(spec, params))


def jacobian_moments(spec: NetworkSpec, params, X, F, chunk: int = 512) -> np.ndarray:
    """``(1/m) * J.T @ F`` accumulated over sample chunks; ``F`` is ``(m,)`` or ``(m, k)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    F = np.asarray(F, dtype=float)
    m = X.shape[0]
    if F.shape[0] != m:
        raise ValueError(f"{F.shape[0]} target values for {m} samples")
    acc = np.zeros((spec.n_params,) + F.shape[1:])
    for i0 in range(0, m, chunk):
        J = param_jacobian(spec, params, X[i0 : i0 + chunk])
        acc += J.T @ F[i0 : i0 + chunk]
    return acc / m


def alignment(spec: NetworkSpec, params, X, f_values) -> float:
    """``||(1/m) sum_i f(x_i) grad_theta f(x_i)||^2``, without forming the Gram matrix."""
    f_values = np.asarray(f_values, dtype=float)
    if f_values.ndim != 1:
        raise ValueError("f_values must be a vector")
    v = jacobian_moments(spec, params, X, f_values)
    return float(v @ v)


def alignments(spec: NetworkSpec, params, X, F) -> np.ndarray:
    """Alignment of every column of ``F`` (shape ``(m, k)``)."""
    V = jacobian_moments(spec, params, X, np.asarray(F, dtype=float).reshape(len(X), -1))
    return np.einsum("nk,nk->k", V, V)


def alignment_from_gram(G, f_values) -> float:
    G = G.values if isinstance(G, GramMatrix) else np.asarray(G)
    f = np.asarray(f_values, dtype=float)
    m = G.shape[0]
    return float(f @ G @ f) / m**2


def empirical_l2_norm(f_values) -> float:
    f = np.asarray(f_values, dtype=float)
    return float(np.sqrt(np.mean(f * f)))


def rkhs_norm_lower_bound(alpha: float, l2_norm: float) -> float:
    if not alpha > 0:
        raise ValueError(f"bound undefined for alignment {alpha!r}")
    return l2_norm**4 / alpha


def _projections(eigsys, f_values, cutoff):
    f = np.asarray(f_values, dtype=float)
    if f.shape != (eigsys.m,):
        raise ValueError(f"expected {eigsys.m} target values, got {f.shape}")
    lam = eigsys.eigenvalues
    keep = lam > cutoff * lam[0]
    coef = eigsys.eigenfunctions[:, keep].T @ f / eigsys.m
    total = float(f @ f) / eigsys.m
    residual = 0.0 if total == 0 else max(0.0, 1.0 - float(coef @ coef) / total)
    return coef, lam[keep], residual


def span_residual(eigsys, f_values, cutoff: float = 1e-10) -> float:
    """Fraction of the target's energy outside the retained eigenvectors."""
    return _projections(eigsys, f_values, cutoff)[2]


def rkhs_norm_empirical(eigsys, f_values, cutoff: float = 1e-10, max_residual: float = 0.01) -> float:
    """Squared RKHS norm ``sum_j <phi_j, f>^2 / lambda_j`` over eigenvalues above ``cutoff * lambda_1``."""
    coef, lam, residual = _projections(eigsys, f_values, cutoff)
    if residual > max_residual:
        raise OutOfSpanError(residual, max_residual)
    return float(np.sum(coef * coef / lam))


def generalization_bound_terms(eigsys, gram_matrix, f_values, m: Optional[int] = None, cutoff: float = 1e-10) -> dict:
    """Measurable ingredients of the kernel generalization bound (no probabilistic constants)."""
    G = gram_matrix.values if isinstance(gram_matrix, GramMatrix) else np.asarray(gram_matrix)
    m = G.shape[0] if m is None else int(m)
    norm = rkhs_norm_empirical(eigsys, f_values, cutoff)
    mean_self = float(np.trace(G)) / G.shape[0]
    return {
        "rkhs_norm": norm,
        "mean_self_kernel": mean_self,
        "bound_term": float(np.sqrt(norm * mean_self / m)),
    }


def alignment_report(spec: NetworkSpec, params, X, f_values, eigsys=None, gram_matrix=None) -> AlignmentReport:
    alpha = alignment(spec, params, X, f_values)
    l2 = empirical_l2_norm(f_values)
    lower = rkhs_norm_lower_bound(alpha, l2) if alpha > 0 else float("inf")
    norm = bound = None
    if eigsys is not None:
        norm = rkhs_norm_empirical(eigsys, f_values)
        if gram_matrix is not None:
            bound = generalization_bound_terms(eigsys, gram_matrix, f_values)["bound_term"]
    return AlignmentReport(alpha, l2, lower, norm, bound)
