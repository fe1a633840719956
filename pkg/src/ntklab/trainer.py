"""Minibatch training of networks and their linearizations on a logistic loss."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .netcore import NetworkSpec, array_fingerprint, forward, forward_and_jacobian, value_and_grad
from .tasks import Dataset

logger = logging.getLogger(__name__)

MODEL_KINDS = ("nonlinear", "linearized_biased", "linearized_unbiased")
OPTIMIZERS = ("sgd_momentum", "adam")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, record: "TrainRecord"):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd_momentum"
    learning_rate: float = 0.05
    momentum: float = 0.9
    lr_decay: float = 0.99  # multiplicative per epoch; 1.0 keeps the rate constant
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    model_kind: str = "nonlinear"
    checkpoint_epochs: tuple = ()
    record_batches: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    divergence_threshold: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "checkpoint_epochs", tuple(sorted({int(e) for e in self.checkpoint_epochs})))
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if not 0 < self.lr_decay <= 1 or not 0 <= self.momentum < 1:
            raise ValueError("lr_decay must lie in (0, 1] and momentum in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checkpoint_epochs"] = list(self.checkpoint_epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["checkpoint_epochs"] = tuple(d.get("checkpoint_epochs", ()))
        return cls(**d)

    def fingerprint(self) -> str:
        return hashlib.blake2b(json.dumps(self.to_dict(), sort_keys=True).encode(), digest_size=16).hexdigest()


@dataclass(frozen=True)
class Checkpoint:
    epoch: int
    params: np.ndarray
    config_fingerprint: str
    rng_digest: str
    optimizer_state: dict = field(default_factory=dict)
    reference: Optional[np.ndarray] = None


@dataclass
class TrainRecord:
    config: dict
    init_params: np.ndarray
    final_params: Optional[np.ndarray] = None
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    param_hashes: list = field(default_factory=list)
    kernel_fingerprints: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)
    steps_per_epoch: int = 0
    start_epoch: int = 0
    checkpoints: dict = field(default_factory=dict)
    iterations_to_threshold: dict = field(default_factory=dict)
    aborted: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)


def _shuffle_rng(seed: int, epoch: int):
    return np.random.default_rng([int(seed), int(epoch)])


def _rng_digest(seed: int, epoch: int) -> str:
    return hashlib.blake2b(f"{seed}:{epoch}".encode(), digest_size=8).hexdigest()


def logistic_loss(margins: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, -margins)


class _Linearization:
    """Frozen first-order model ``offset + J_ref (theta - theta_ref)`` on a fixed sample set."""

    def __init__(self, spec, reference, X, biased):
        f_ref, J = forward_and_jacobian(spec, reference, X)
        J.setflags(write=False)
        self.J = J
        self.reference = reference
        self.offset = f_ref if biased else np.zeros_like(f_ref)

    def outputs(self, params, idx=None):
        J = self.J if idx is None else self.J[idx]
        off = self.offset if idx is None else self.offset[idx]
        return off + J @ (params - self.reference)

    def fingerprint(self) -> str:
        return hashlib.sha1(self.J.data).hexdigest()


def _outputs(spec, kind, params, X, lin=None):
    if kind == "nonlinear":
        return forward(spec, params, X)
    return lin.outputs(params)


def _metrics(out, y) -> tuple:
    acc = float(np.mean(np.where(out >= 0, 1.0, -1.0) == y))
    return acc, float(np.mean(logistic_loss(y * out)))


def evaluate(spec: NetworkSpec, model_kind: str, params, dataset: Dataset, reference=None) -> dict:
    """Accuracy of ``sign(f)`` (with ``sign(0) = +1``) and mean logistic loss."""
    if dataset.y is None:
        raise ValueError("dataset is unlabeled")
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {model_kind!r}")
    lin = None
    if model_kind != "nonlinear":
        ref = params if reference is None else reference
        lin = _Linearization(spec, spec.check_params(ref), dataset.X, model_kind == "linearized_biased")
    acc, loss = _metrics(_outputs(spec, model_kind, spec.check_params(params), dataset.X, lin), dataset.y)
    return {"accuracy": acc, "mean_loss": loss}


def _check_data(spec, ds, name):
    if ds is None:
        return
    if ds.y is None:
        raise ValueError(f"{name} set is unlabeled")
    if ds.d != spec.input_dim:
        raise ValueError(f"{name} set has dimension {ds.d}, network expects {spec.input_dim}")


def train(
    spec: NetworkSpec,
    init_params,
    train_set: Dataset,
    test_set: Optional[Dataset],
    config: TrainConfig,
    reference=None,
    resume: Optional[Checkpoint] = None,
) -> TrainRecord:
    """Train from ``init_params`` and return the full per-epoch record.

    Linearized kinds expand around ``reference`` (default: ``init_params``);
    the Jacobian there is computed once and never recomputed.
    """
    _check_data(spec, train_set, "train")
    _check_data(spec, test_set, "test")
    params = spec.check_params(init_params).copy()
    kind = config.model_kind
    ref = None
    if kind != "nonlinear":
        ref = spec.check_params(params if reference is None else reference).copy()
    start = 0
    opt_state = {}
    if resume is not None:
        if resume.config_fingerprint != config.fingerprint():
            raise ValueError("checkpoint was produced under a different configuration")
        params = resume.params.copy()
        start = resume.epoch
        opt_state = {k: v.copy() for k, v in resume.optimizer_state.items()}
        if resume.reference is not None:
            ref = resume.reference.copy()

    X, y = train_set.X, train_set.y
    m = train_set.m
    bs = min(config.batch_size, m)
    steps = -(-m // bs)
    lin_train = lin_test = None
    if kind != "nonlinear":
        biased = kind == "linearized_biased"
        lin_train = _Linearization(spec, ref, X, biased)
        if test_set is not None:
            lin_test = _Linearization(spec, ref, test_set.X, biased)

    record = TrainRecord(config=config.to_dict(), init_params=params.copy(), steps_per_epoch=steps, start_epoch=start)
    if not opt_state:
        opt_state = {"velocity": np.zeros_like(params)}
        if config.optimizer == "adam":
            opt_state = {"m": np.zeros_like(params), "v": np.zeros_like(params), "t": np.zeros(1)}

    def snapshot(epoch):
        record.checkpoints[epoch] = Checkpoint(
            epoch, params.copy(), config.fingerprint(), _rng_digest(config.seed, epoch),
            {k: v.copy() for k, v in opt_state.items()}, None if ref is None else ref.copy(),
        )

    if start in config.checkpoint_epochs:
        snapshot(start)

    for epoch in range(start, config.epochs):
        lr = config.learning_rate * config.lr_decay**epoch
        perm = _shuffle_rng(config.seed, epoch).permutation(m)
        for s in range(steps):
            idx = perm[s * bs : (s + 1) * bs]
            yb = y[idx]

            def cot(out, yb=yb):
                margins = yb * out
                return float(np.mean(logistic_loss(margins))), -yb * expit(-margins) / len(yb)

            if kind == "nonlinear":
                loss, grad = value_and_grad(spec, params, X[idx], cot)
            else:
                loss, c = cot(lin_train.outputs(params, idx))
                grad = lin_train.J[idx].T @ c
            if not np.isfinite(loss) or loss > config.divergence_threshold:
                record.aborted = True
                record.final_params = params.copy()
                raise TrainingDiverged(f"loss {loss!r} at epoch {epoch} step {s}", record)
            if config.record_batches:
                record.batch_losses.append(loss)
            if config.optimizer == "sgd_momentum":
                v = opt_state["velocity"]
                v *= config.momentum
                v += grad
                params -= lr * v
            else:
                st = opt_state
                st["t"] += 1
                t = st["t"][0]
                st["m"] = config.adam_beta1 * st["m"] + (1 - config.adam_beta1) * grad
                st["v"] = config.adam_beta2 * st["v"] + (1 - config.adam_beta2) * grad * grad
                mhat = st["m"] / (1 - config.adam_beta1**t)
                vhat = st["v"] / (1 - config.adam_beta2**t)
                params -= lr * mhat / (np.sqrt(vhat) + config.adam_eps)

        tr_acc, tr_loss = _metrics(_outputs(spec, kind, params, X, lin_train), y)
        if not np.isfinite(tr_loss):
            record.aborted = True
            record.final_params = params.copy()
            raise TrainingDiverged(f"non-finite training loss after epoch {epoch}", record)
        record.train_loss.append(tr_loss)
        record.train_acc.append(tr_acc)
        if test_set is not None:
            te_acc, te_loss = _metrics(_outputs(spec, kind, params, test_set.X, lin_test), test_set.y)
            record.test_acc.append(te_acc)
            record.test_loss.append(te_loss)
        record.param_hashes.append(array_fingerprint(params))
        if lin_train is not None:
            record.kernel_fingerprints.append(lin_train.fingerprint())
        if epoch + 1 in config.checkpoint_epochs:
            snapshot(epoch + 1)
    record.final_params = params.copy()
    logger.debug("trained %s for %d epochs, final loss %.4g", kind, config.epochs - start,
                 record.train_loss[-1] if record.train_loss else float("nan"))
    return record


def distance_metrics(theta0, thetaT) -> dict:
    theta0 = np.asarray(theta0, dtype=float)
    thetaT = np.asarray(thetaT, dtype=float)
    if theta0.shape != thetaT.shape:
        raise ValueError("parameter vectors differ in length")
    n0, nT = np.linalg.norm(theta0), np.linalg.norm(thetaT)
    if n0 == 0 or nT == 0:
        raise ValueError("cosine distance undefined for a zero vector")
    return {
        "l2": float(np.linalg.norm(thetaT - theta0)),
        "cosine_distance": float(1.0 - theta0 @ thetaT / (n0 * nT)),
    }


def iterations_to_loss(record: TrainRecord, threshold: float = 0.01, granularity: str = "auto") -> Optional[int]:
    """First iteration at which the training loss drops to ``threshold``; ``None`` if never.

    Epoch granularity counts epochs (1-based) of the end-of-epoch training
    loss. Batch granularity counts optimizer steps and uses the mean batch
    loss over a trailing window of one epoch.
    """
    if granularity == "auto":
        granularity = "batch" if record.batch_losses else "epoch"
    key = (float(threshold), granularity)
    if key in record.iterations_to_threshold:
        return record.iterations_to_threshold[key]
    result = None
    if granularity == "epoch":
        for i, loss in enumerate(record.train_loss):
            if loss <= threshold:
                result = record.start_epoch + i + 1
                break
    elif granularity == "batch":
        losses = np.asarray(record.batch_losses, dtype=float)
        w = max(1, record.steps_per_epoch)
        if losses.size:
            csum = np.concatenate([[0.0], np.cumsum(losses)])
            for t in range(1, losses.size + 1):
                lo = max(0, t - w)
                if (csum[t] - csum[lo]) / (t - lo) <= threshold:
                    result = record.start_epoch * record.steps_per_epoch + t
                    break
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    record.iterations_to_threshold[key] = result
    return result
