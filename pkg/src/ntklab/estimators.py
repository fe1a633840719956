"""scikit-learn compatible wrappers around the network, kernel and NAD tools."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .kernel import gram, jacobian_moments
from .nads import nad_basis
from .netcore import NetworkSpec, forward, init_params, linearized_forward, param_jacobian
from .spectral import eigendecompose
from .tasks import Dataset
from .trainer import TrainConfig, train


def _spec(n_features, hidden_widths, activation, bias=True) -> NetworkSpec:
    return NetworkSpec(int(n_features), tuple(int(h) for h in hidden_widths), activation, bias)


class NTKNetworkClassifier(ClassifierMixin, BaseEstimator):
    """Binary MLP classifier trained on the logistic loss.

    ``model_kind`` selects the network itself or its first-order expansion
    around the initial weights (``linearized_biased`` / ``linearized_unbiased``).
    """

    def __init__(
        self,
        hidden_widths=(32, 32),
        activation="relu",
        bias=True,
        model_kind="nonlinear",
        optimizer="sgd_momentum",
        learning_rate=0.05,
        momentum=0.9,
        lr_decay=0.99,
        batch_size=128,
        epochs=100,
        random_state=0,
    ):
        self.hidden_widths = hidden_widths
        self.activation = activation
        self.bias = bias
        self.model_kind = model_kind
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"expected 2 classes, got {len(self.classes_)}")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        seed = 0 if self.random_state is None else int(self.random_state)
        self.spec_ = _spec(X.shape[1], self.hidden_widths, self.activation, self.bias)
        self.n_features_in_ = X.shape[1]
        self.reference_ = init_params(self.spec_, seed)
        cfg = TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate, momentum=self.momentum,
            lr_decay=self.lr_decay, batch_size=self.batch_size, epochs=self.epochs, seed=seed,
            model_kind=self.model_kind,
        )
        self.record_ = train(self.spec_, self.reference_, Dataset(X, signs), None, cfg)
        self.params_ = self.record_.final_params
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        if self.model_kind == "nonlinear":
            return np.atleast_1d(forward(self.spec_, self.params_, X))
        biased = self.model_kind == "linearized_biased"
        return np.atleast_1d(linearized_forward(self.spec_, self.reference_, self.params_, X, biased))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores >= 0).astype(int)]


class NTKEigenfunctions(TransformerMixin, BaseEstimator):
    """Top eigenfunctions of the empirical NTK at initialization.

    ``fit`` diagonalizes the Gram matrix of the training inputs; ``transform``
    evaluates the eigenfunctions at new points through the Nystrom extension
    ``phi_j(x) = (1/(m lambda_j)) sum_i Theta(x, x_i) phi_j(x_i)``, which
    reproduces the training values exactly.
    """

    def __init__(self, n_components=50, hidden_widths=(32, 32), activation="relu", bias=True, random_state=0):
        self.n_components = n_components
        self.hidden_widths = hidden_widths
        self.activation = activation
        self.bias = bias
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.spec_ = _spec(X.shape[1], self.hidden_widths, self.activation, self.bias)
        self.n_features_in_ = X.shape[1]
        self.params_ = init_params(self.spec_, 0 if self.random_state is None else int(self.random_state))
        self.eigensystem_ = eigendecompose(gram(self.spec_, self.params_, X))
        lam = self.eigensystem_.eigenvalues
        k = min(int(self.n_components), int(np.sum(lam > 1e-12 * lam[0])))
        self.eigenvalues_ = lam[:k]
        phi = self.eigensystem_.eigenfunctions[:, :k]
        self.components_ = jacobian_moments(self.spec_, self.params_, X, phi) / self.eigenvalues_
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return param_jacobian(self.spec_, self.params_, X) @ self.components_


class NADTransformer(TransformerMixin, BaseEstimator):
    """Project inputs onto the leading neural anisotropy directions of a network at initialization."""

    def __init__(self, n_components=None, hidden_widths=(32, 32), activation="gelu", bias=True,
                 mode="at_origin", random_state=0):
        self.n_components = n_components
        self.hidden_widths = hidden_widths
        self.activation = activation
        self.bias = bias
        self.mode = mode
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.spec_ = _spec(X.shape[1], self.hidden_widths, self.activation, self.bias)
        self.n_features_in_ = X.shape[1]
        params = init_params(self.spec_, 0 if self.random_state is None else int(self.random_state))
        self.basis_ = nad_basis(self.spec_, params, self.mode, X if self.mode == "dataset_expectation" else None)
        k = X.shape[1] if self.n_components is None else int(self.n_components)
        self.components_ = self.basis_.directions[:, :k].T
        self.alignments_ = self.basis_.alignments[:k]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.components_.T
