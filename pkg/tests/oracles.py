"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def jacobi_eigh(A, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations; returns (ascending eigenvalues, eigenvectors as columns)."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, np.sum(A * A) - np.sum(np.diag(A) ** 2)))
        if off <= tol * max(1.0, np.abs(A).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(A[p, q]) < 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                R = np.eye(n)
                R[p, p] = R[q, q] = c
                R[p, q], R[q, p] = s, -s
                A = R.T @ A @ R
                V = V @ R
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def _act(kind, z):
    if kind == "relu":
        return max(z, 0.0)
    if kind == "tanh":
        return math.tanh(z)
    return z * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def loop_forward(spec, params, x):
    """Scalar-by-scalar forward pass reading weights directly from the flat layout."""
    h = [float(v) for v in x]
    if spec.input_scale is not None:
        h = [a * v for a, v in zip(spec.input_scale, h)]
    sizes = [spec.input_dim, *spec.hidden_widths, 1]
    k = 0
    for layer in range(len(sizes) - 1):
        fi, fo = sizes[layer], sizes[layer + 1]
        W = [[params[k + r * fi + c] for c in range(fi)] for r in range(fo)]
        k += fi * fo
        b = [0.0] * fo
        if spec.bias:
            b = [params[k + r] for r in range(fo)]
            k += fo
        z = [sum(W[r][c] * h[c] for c in range(fi)) + b[r] for r in range(fo)]
        h = z if layer == len(sizes) - 2 else [_act(spec.activation, v) for v in z]
    return h[0]


def fd_gradient(fn, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        g[k] = (fn(tp) - fn(tm)) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))
