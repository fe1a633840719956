import numpy as np
import pytest
from sklearn.base import clone
from sklearn.utils.estimator_checks import check_estimators_unfitted, check_get_params_invariance

from ntklab.estimators import NADTransformer, NTKEigenfunctions, NTKNetworkClassifier
from ntklab.kernel import gram
from ntklab.netcore import NetworkSpec, init_params
from ntklab.spectral import eigendecompose


@pytest.fixture
def blobs(rng):
    X = rng.standard_normal((150, 4))
    y = np.where(X[:, 0] - X[:, 2] > 0, "pos", "neg")
    return X, y


def test_classifier_fit_predict(blobs):
    X, y = blobs
    clf = NTKNetworkClassifier(hidden_widths=(8,), activation="tanh", epochs=30).fit(X, y)
    assert set(clf.classes_) == {"neg", "pos"}
    assert clf.score(X, y) > 0.9
    assert clf.decision_function(X).shape == (150,)
    assert clone(clf).get_params() == clf.get_params()


def test_linearized_classifier_matches_nonlinear_on_linear_model(blobs):
    X, y = blobs
    a = NTKNetworkClassifier(hidden_widths=(), epochs=5).fit(X, y)
    b = NTKNetworkClassifier(hidden_widths=(), epochs=5, model_kind="linearized_biased").fit(X, y)
    assert np.allclose(a.decision_function(X), b.decision_function(X), atol=1e-12)


def test_classifier_rejects_multiclass(rng):
    with pytest.raises(ValueError):
        NTKNetworkClassifier().fit(rng.standard_normal((9, 2)), np.arange(9) % 3)


def test_sklearn_checks():
    for est in (NTKNetworkClassifier(), NTKEigenfunctions(), NADTransformer()):
        check_get_params_invariance(type(est).__name__, est)
        check_estimators_unfitted(type(est).__name__, est) if hasattr(est, "predict") else None


def test_eigenfunctions_reproduce_training_values(rng):
    X = rng.standard_normal((40, 3))
    tr = NTKEigenfunctions(n_components=5, hidden_widths=(6,), activation="tanh", random_state=2).fit(X)
    spec = NetworkSpec(3, (6,), "tanh")
    es = eigendecompose(gram(spec, init_params(spec, 2), X))
    assert np.allclose(tr.transform(X), es.eigenfunctions[:, :5], atol=1e-8)
    assert np.allclose(tr.eigenvalues_, es.eigenvalues[:5])
    assert tr.transform(rng.standard_normal((7, 3))).shape == (7, 5)


def test_nad_transformer(rng):
    X = rng.standard_normal((20, 5))
    t = NADTransformer(n_components=2, hidden_widths=(4,)).fit(X)
    Z = t.transform(X)
    assert Z.shape == (20, 2)
    assert np.allclose(Z, X @ t.basis_.directions[:, :2])
    with pytest.raises(ValueError):
        t.transform(X[:, :3])
