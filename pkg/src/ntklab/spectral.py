"""Eigensystems of NTK Gram matrices.

Conventions: with raw Gram eigenpairs ``(mu_j, u_j)`` (unit-norm ``u_j``),
eigenvalues are ``lambda_j = mu_j / m`` and eigenfunction values are
``phi_j(x_i) = sqrt(m) * u_j[i]``. Under uniform empirical averages this
makes ``(1/m) <phi_j, phi_k> = delta_jk`` and the alignment of ``phi_j``
equal to ``lambda_j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import GramMatrix
from .netcore import array_fingerprint

DEFAULT_K = 50


class EigenDecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenSystem:
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray  # column j holds phi_{j+1} evaluated on the samples
    gram_fingerprint: str
    dataset_fingerprint: str = ""

    @property
    def m(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def eigenvectors(self) -> np.ndarray:
        """Unit-norm Gram eigenvectors, one per column."""
        return self.eigenfunctions / np.sqrt(self.m)

    def phi(self, j: int) -> np.ndarray:
        """Values of the ``j``-th eigenfunction (1-based, decreasing eigenvalue order)."""
        if not 1 <= j <= self.m:
            raise IndexError(f"eigenfunction index {j} outside 1..{self.m}")
        return self.eigenfunctions[:, j - 1]

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * (self.eigenvalues * self.m)) @ U.T


def canonical_signs(V: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip columns so the first coordinate with magnitude above ``tol`` is positive."""
    V = V.copy()
    for j in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, j]) > tol)
        if nz.size and V[nz[0], j] < 0:
            V[:, j] = -V[:, j]
    return V


def order_with_ties(values: np.ndarray, V: np.ndarray, rel_tol: float = 1e-10) -> tuple:
    """Sort by decreasing value; within numerically tied groups, order vectors lexicographically (descending)."""
    order = np.argsort(-values, kind="stable")
    values, V = values[order], V[:, order]
    scale = max(np.abs(values).max(initial=0.0), np.finfo(float).tiny)
    start = 0
    n = len(values)
    while start < n:
        stop = start + 1
        while stop < n and abs(values[stop] - values[start]) <= rel_tol * scale:
            stop += 1
        if stop - start > 1:
            block = V[:, start:stop]
            # lexsort keys: last key is primary, so feed rows in reverse
            idx = np.lexsort(-np.round(block[::-1], 12))
            V[:, start:stop] = block[:, idx]
        start = stop
    return values, V


def eigendecompose(gram_matrix: GramMatrix) -> EigenSystem:
    G = gram_matrix.values if isinstance(gram_matrix, GramMatrix) else np.asarray(gram_matrix, dtype=float)
    m = G.shape[0]
    if not np.all(np.isfinite(G)):
        raise EigenDecompositionError("Gram matrix has non-finite entries")
    try:
        mu, U = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise EigenDecompositionError(str(exc)) from exc
    U = canonical_signs(U)
    mu, U = order_with_ties(mu, U)
    top = mu[0] if m else 0.0
    mu = np.where((mu < 0) & (mu >= -1e-10 * top), 0.0, mu)
    phi = U * np.sqrt(m)
    if isinstance(gram_matrix, GramMatrix):
        gfp, dfp = gram_matrix.fingerprint, gram_matrix.dataset_fingerprint
    else:
        gfp, dfp = array_fingerprint(G), ""
    return EigenSystem(mu / m, phi, gfp, dfp)


def binarize_eigenfunction(eigsys: EigenSystem, j: int) -> np.ndarray:
    """Labels ``sign(phi_j)`` with ``sign(0) = +1``."""
    return np.where(eigsys.phi(j) >= 0, 1.0, -1.0)


def binarization_overlap(eigsys: EigenSystem, j: int) -> float:
    phi = eigsys.phi(j)
    s = np.where(phi >= 0, 1.0, -1.0)
    return float(abs(phi @ s) / (np.linalg.norm(phi) * np.linalg.norm(s)))


def energy_concentration(eigsys: EigenSystem, y, K: int = DEFAULT_K) -> float:
    """``||P_K y|| / ||y||`` for the projection onto the top-``K`` eigenvectors."""
    y = np.asarray(y, dtype=float)
    if y.shape != (eigsys.m,):
        raise ValueError(f"label vector has shape {y.shape}, expected ({eigsys.m},)")
    if not 1 <= K <= eigsys.m:
        raise ValueError(f"K={K} outside 1..{eigsys.m}")
    norm = np.linalg.norm(y)
    if norm == 0:
        raise ValueError("zero label vector")
    proj = eigsys.eigenvectors[:, :K].T @ y
    return float(min(1.0, np.linalg.norm(proj) / norm))
