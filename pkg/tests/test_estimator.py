import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from qblif.data import generate_synthetic
from qblif.estimator import QBLIFClassifier


@pytest.fixture(scope="module")
def blobs():
    ds = generate_synthetic("gaussians", 400, seed=0)
    return ds.features, ds.labels


def test_params_round_trip():
    clf = QBLIFClassifier(n_max=5, surrogate="box_et")
    params = clf.get_params()
    assert params["n_max"] == 5 and params["surrogate"] == "box_et"
    twin = clone(clf).set_params(n_max=7)
    assert twin.n_max == 7 and clf.n_max == 5


def test_not_fitted():
    with pytest.raises(NotFittedError):
        QBLIFClassifier().predict(np.zeros((2, 8)))


def test_fits_separable_clusters(blobs):
    X, y = blobs
    clf = QBLIFClassifier(layers="dense:16", epochs=10, timesteps=2, gamma_init=0.5).fit(X, y)
    assert clf.score(X, y) > 0.95
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.transform(X).shape == (len(X), 16)
    assert len(clf.history_) == 10


def test_string_labels(blobs):
    X, y = blobs
    names = np.array(["a", "b", "c", "d"])[y]
    clf = QBLIFClassifier(layers="dense:8", epochs=2).fit(X, names)
    assert set(clf.predict(X)) <= set(names)


def test_cross_validation(blobs):
    X, y = blobs
    scores = cross_val_score(QBLIFClassifier(layers="dense:8", epochs=3), X, y, cv=2)
    assert scores.shape == (2,)


def test_input_validation(blobs):
    X, y = blobs
    with pytest.raises(ValueError):
        QBLIFClassifier().fit(X, y[:-1])
    with pytest.raises(ValueError):
        QBLIFClassifier().fit(np.full_like(X, np.nan), y)
    clf = QBLIFClassifier(layers="dense:4", epochs=1).fit(X, y)
    with pytest.raises(Exception):
        clf.predict(X[:, :3])


def test_repeat_fit_is_bit_identical(blobs):
    X, y = blobs
    a = QBLIFClassifier(layers="dense:8", epochs=3).fit(X, y)
    b = QBLIFClassifier(layers="dense:8", epochs=3).fit(X, y)
    assert a.history_ == b.history_
    assert a.decision_function(X).tobytes() == b.decision_function(X).tobytes()


def test_spike_record_levels(blobs):
    X, y = blobs
    clf = QBLIFClassifier(layers="dense:8", epochs=2).fit(X, y)
    rec = clf.spike_record(X[:5])
    assert rec[0].shape == (4, 5, 8) and rec[0].min() >= 0 and rec[0].max() <= 20


def test_absorbed_model_agrees(blobs):
    from qblif.absorb import infer_integer
    X, y = blobs
    clf = QBLIFClassifier(layers="dense:8, dense:6", epochs=3).fit(X, y)
    logits, _ = infer_integer(clf.absorb(), clf.encode(X))
    np.testing.assert_allclose(logits.mean(axis=0), clf.decision_function(X), atol=1e-9)
