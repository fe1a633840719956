"""Small scalar-output feed-forward networks with exact derivatives.

Parameters live in a single flat ``numpy`` vector. For every layer the
weight matrix (``fan_out x fan_in``, row-major) comes first, followed by the
bias vector when biases are enabled. All derivative code is hand-written
reverse accumulation, vectorised over a batch of inputs.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

ACTIVATIONS = ("relu", "gelu", "tanh")
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "gelu":
        return z * ndtr(z)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(kind: str, z: np.ndarray) -> np.ndarray:
    """First derivative of the activation. relu'(0) is taken to be 0."""
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "gelu":
        return ndtr(z) + z * np.exp(-0.5 * z * z) * _INV_SQRT_2PI
    raise ValueError(f"unknown activation {kind!r}")


def activate_hess(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.zeros_like(z)
    if kind == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    if kind == "gelu":
        return np.exp(-0.5 * z * z) * _INV_SQRT_2PI * (2.0 - z * z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a scalar-output MLP.

    ``input_scale`` is an optional fixed (non-trainable) per-coordinate
    multiplier applied to the input before the first layer. It is how
    anisotropic toy architectures such as ``f(x) = w @ (a * x)`` are built.
    """

    input_dim: int
    hidden_widths: tuple = ()
    activation: str = "relu"
    bias: bool = True
    input_scale: Optional[tuple] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_scale is not None:
            object.__setattr__(self, "input_scale", tuple(float(a) for a in self.input_scale))
        if int(self.input_dim) < 1:
            raise ValueError("input_dim must be positive")
        if any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.input_scale is not None and len(self.input_scale) != self.input_dim:
            raise ValueError("input_scale length must equal input_dim")

    @property
    def layer_sizes(self) -> tuple:
        return (self.input_dim, *self.hidden_widths, 1)

    @property
    def n_layers(self) -> int:
        return len(self.hidden_widths) + 1

    @property
    def offsets(self) -> list:
        """Offset table: one ``(w_start, w_stop, b_start, b_stop, shape)`` per layer."""
        table = []
        pos = 0
        sizes = self.layer_sizes
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w0, pos = pos, pos + fan_in * fan_out
            b0 = pos
            if self.bias:
                pos += fan_out
            table.append((w0, b0, b0, pos, (fan_out, fan_in)))
        return table

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(
            fi * fo + (fo if self.bias else 0) for fi, fo in zip(sizes[:-1], sizes[1:])
        )

    def locate(self, k: int) -> tuple:
        """Map flat index ``k`` to ``(layer, 'W'|'b', row, col)``."""
        if not 0 <= k < self.n_params:
            raise IndexError(k)
        for layer, (w0, w1, b0, b1, (fo, fi)) in enumerate(self.offsets):
            if w0 <= k < w1:
                row, col = divmod(k - w0, fi)
                return layer, "W", row, col
            if b0 <= k < b1:
                return layer, "b", k - b0, 0
        raise AssertionError("unreachable")

    def unflatten(self, params: np.ndarray) -> list:
        params = self.check_params(params)
        layers = []
        for w0, w1, b0, b1, shape in self.offsets:
            W = params[w0:w1].reshape(shape)
            b = params[b0:b1] if self.bias else None
            layers.append((W, b))
        return layers

    def flatten(self, layers: Sequence) -> np.ndarray:
        parts = []
        for (W, b), (_, _, _, _, shape) in zip(layers, self.offsets):
            W = np.asarray(W, dtype=float)
            if W.shape != shape:
                raise ValueError(f"weight shape {W.shape} != {shape}")
            parts.append(W.ravel())
            if self.bias:
                parts.append(np.asarray(b, dtype=float).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def check_params(self, params) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if params.ndim != 1 or params.shape[0] != self.n_params:
            raise ValueError(
                f"parameter vector has shape {params.shape}, spec expects ({self.n_params},)"
            )
        return params

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "bias": self.bias,
            "input_scale": None if self.input_scale is None else list(self.input_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            input_dim=d["input_dim"],
            hidden_widths=tuple(d.get("hidden_widths", ())),
            activation=d.get("activation", "relu"),
            bias=d.get("bias", True),
            input_scale=d.get("input_scale"),
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.blake2b(blob, digest_size=16).hexdigest()


def array_fingerprint(a: np.ndarray) -> str:
    a = np.ascontiguousarray(a, dtype=float)
    h = hashlib.blake2b(digest_size=16)
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


def network_fingerprint(spec: NetworkSpec, params: np.ndarray) -> str:
    return hashlib.blake2b(
        (spec.fingerprint() + array_fingerprint(params)).encode(), digest_size=16
    ).hexdigest()


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """He-style Gaussian weights (variance 2/fan_in for relu, 1/fan_in otherwise), zero biases."""
    rng = np.random.default_rng(seed)
    gain = 2.0 if spec.activation == "relu" else 1.0
    layers = []
    for _, _, _, _, (fo, fi) in spec.offsets:
        W = rng.standard_normal((fo, fi)) * np.sqrt(gain / fi)
        layers.append((W, np.zeros(fo)))
    return spec.flatten(layers)


def _as_batch(spec: NetworkSpec, x) -> tuple:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"input has shape {x.shape}, expected trailing dimension {spec.input_dim}")
    return X, single


def _scaled(spec: NetworkSpec, X: np.ndarray) -> np.ndarray:
    if spec.input_scale is None:
        return X
    return X * np.asarray(spec.input_scale)


def _forward_cache(spec, layers, X):
    hs = [_scaled(spec, X)]
    zs = []
    h = hs[0]
    for i, (W, b) in enumerate(layers):
        z = h @ W.T
        if b is not None:
            z = z + b
        if i < len(layers) - 1:
            zs.append(z)
            h = activate(spec.activation, z)
            hs.append(h)
        else:
            out = z[:, 0]
    return out, zs, hs


def forward(spec: NetworkSpec, params, x):
    """Network output for one input (returns a float) or a batch (returns shape ``(m,)``)."""
    X, single = _as_batch(spec, x)
    out, _, _ = _forward_cache(spec, spec.unflatten(params), X)
    return float(out[0]) if single else out


def _backward(spec, layers, zs, hs, m, out=None):
    n = spec.n_params
    J = np.empty((m, n)) if out is None else out
    delta = np.ones((m, 1))
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        w0, w1, b0, b1, (fo, fi) = spec.offsets[i]
        J[:, w0:w1] = (delta[:, :, None] * hs[i][:, None, :]).reshape(m, fo * fi)
        if spec.bias:
            J[:, b0:b1] = delta
        if i > 0:
            delta = (delta @ W) * activate_grad(spec.activation, zs[i - 1])
    return J


def forward_and_jacobian(spec: NetworkSpec, params, X) -> tuple:
    """Batched outputs ``(m,)`` and parameter Jacobian ``(m, n)`` in one pass."""
    X, _ = _as_batch(spec, X)
    layers = spec.unflatten(params)
    out, zs, hs = _forward_cache(spec, layers, X)
    return out, _backward(spec, layers, zs, hs, X.shape[0])


def param_jacobian(spec: NetworkSpec, params, x) -> np.ndarray:
    """Gradient of the output w.r.t. every parameter: ``(n,)`` for one input, ``(m, n)`` for a batch."""
    X, single = _as_batch(spec, x)
    _, J = forward_and_jacobian(spec, params, X)
    return J[0] if single else J


def jacobian_directional(spec: NetworkSpec, params, X, directions) -> np.ndarray:
    """Derivative of the parameter Jacobian along input directions.

    ``directions`` has shape ``(k, d)``. Returns ``(m, k, n)`` with entry
    ``[i, a, p] = sum_j d^2 f(x_i) / (d theta_p d x_j) * directions[a, j]``.
    """
    X, _ = _as_batch(spec, X)
    T = np.atleast_2d(np.asarray(directions, dtype=float))
    if T.shape[1] != spec.input_dim:
        raise ValueError("direction dimension mismatch")
    act = spec.activation
    layers = spec.unflatten(params)
    m, k = X.shape[0], T.shape[0]
    _, zs, hs = _forward_cache(spec, layers, X)

    # forward tangents
    hdots = [np.broadcast_to(_scaled(spec, T)[None], (m, k, spec.input_dim))]
    zdots = []
    for i, (W, _) in enumerate(layers[:-1]):
        zd = hdots[-1] @ W.T
        zdots.append(zd)
        hdots.append(activate_grad(act, zs[i])[:, None, :] * zd)

    out = np.empty((m, k, spec.n_params))
    delta = np.ones((m, 1))
    delta_dot = np.zeros((m, k, 1))
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        w0, w1, b0, b1, (fo, fi) = spec.offsets[i]
        dW = delta_dot[..., :, None] * hs[i][:, None, None, :] + delta[:, None, :, None] * hdots[i][..., None, :]
        out[:, :, w0:w1] = dW.reshape(m, k, fo * fi)
        if spec.bias:
            out[:, :, b0:b1] = delta_dot
        if i > 0:
            back = delta @ W
            back_dot = delta_dot @ W
            g = activate_grad(act, zs[i - 1])
            h2 = activate_hess(act, zs[i - 1])
            delta = back * g
            delta_dot = back_dot * g[:, None, :] + (back * h2)[:, None, :] * zdots[i - 1]
    return out


def mixed_jacobian(spec: NetworkSpec, params, x) -> np.ndarray:
    """Matrix of mixed derivatives d^2 f / (d theta_k d x_j), shape ``(n, d)``."""
    X, single = _as_batch(spec, x)
    if not single:
        raise ValueError("mixed_jacobian takes a single input vector")
    D = jacobian_directional(spec, params, X, np.eye(spec.input_dim))
    return D[0].T.copy()


def linearized_forward(spec: NetworkSpec, params_ref, params, x, biased: bool = True):
    """First-order Taylor model around ``params_ref``.

    ``biased=False`` drops the zeroth-order term ``f_ref(x)``.
    """
    params_ref = spec.check_params(params_ref)
    params = spec.check_params(params)
    X, single = _as_batch(spec, x)
    f_ref, J = forward_and_jacobian(spec, params_ref, X)
    out = J @ (params - params_ref)
    if biased:
        out = out + f_ref
    return float(out[0]) if single else out


def value_and_grad(spec: NetworkSpec, params, X, cotangent_fn) -> tuple:
    """Run the network on a batch, let ``cotangent_fn(outputs)`` return
    ``(value, d value / d outputs)``, and pull the cotangent back to the parameters."""
    X, _ = _as_batch(spec, X)
    layers = spec.unflatten(params)
    out, zs, hs = _forward_cache(spec, layers, X)
    value, cot = cotangent_fn(out)
    grad = np.empty(spec.n_params)
    delta = np.asarray(cot, dtype=float).reshape(-1, 1)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        w0, w1, b0, b1, _ = spec.offsets[i]
        grad[w0:w1] = (delta.T @ hs[i]).ravel()
        if spec.bias:
            grad[b0:b1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ W) * activate_grad(spec.activation, zs[i - 1])
    return value, grad
