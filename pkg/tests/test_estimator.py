import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ttriemann import completion as cp
from ttriemann.estimator import TTCompletion
from ttriemann.tt import Shape, random_tt


@pytest.fixture
def data():
    shape = Shape.of((3, 3, 3), (2, 2))
    target = random_tt(shape, seed=7)
    rng = np.random.default_rng(8)
    codes = rng.choice(shape.num_elements, size=24, replace=False)
    idx = np.stack(np.unravel_index(codes, shape.n), -1)
    y = target.entries(idx)
    holdout = np.stack(np.unravel_index(
        rng.choice(shape.num_elements, size=10, replace=False), shape.n), -1)
    return target, idx, y, holdout


def test_fit_predict_recovers_entries(data):
    target, idx, y, holdout = data
    est = TTCompletion(dims=(3, 3, 3), rank=(2, 2), max_iter=60,
                       grad_tol=1e-10, random_state=0)
    est.fit(idx, y)
    pred = est.predict(holdout)
    truth = target.entries(holdout)
    assert np.abs(pred - truth).max() <= 1e-6 * max(np.abs(truth).max(), 1)
    assert est.score(idx, y) == pytest.approx(1.0, abs=1e-9)
    assert est.n_iter_ >= 1
    assert est.tensor_.ranks == (1, 2, 2, 1)


@pytest.mark.parametrize("algorithm", ["fdtr", "rcg", "als"])
def test_all_algorithms_fit(data, algorithm):
    target, idx, y, holdout = data
    est = TTCompletion(dims=(3, 3, 3), rank=(2, 2), algorithm=algorithm,
                       max_iter=40, random_state=1)
    est.fit(idx, y)
    assert est.log_.algo in (algorithm, "rtr", "fdtr")
    assert np.isfinite(est.predict(holdout)).all()


def test_sklearn_protocol(data):
    target, idx, y, _ = data
    est = TTCompletion(dims=(3, 3, 3), rank=(2, 2))
    params = est.get_params()
    assert params["algorithm"] == "rtr"
    est2 = clone(est).set_params(max_iter=5, algorithm="als")
    assert est2.get_params()["max_iter"] == 5
    with pytest.raises(NotFittedError):
        est.predict(idx)


def test_validation_errors(data):
    target, idx, y, _ = data
    with pytest.raises(ValueError):
        TTCompletion().fit(idx, y)  # dims/rank unset
    est = TTCompletion(dims=(3, 3, 3), rank=(2, 2))
    with pytest.raises(IndexError):
        est.fit(np.array([[0, 0, 5]]), [1.0])
    with pytest.raises(ValueError):
        est.fit(idx, y[:-1])
    with pytest.raises(ValueError):
        est.fit(idx[:, :2], y)


def test_duplicate_observations_averaged():
    idx = np.array([[0, 0, 0], [0, 0, 0], [1, 1, 1], [2, 2, 2], [0, 1, 2],
                    [2, 1, 0], [1, 2, 0], [0, 2, 1]])
    y = np.array([1.0, 3.0, 5.0, 2.0, 0.5, 1.5, -1.0, 4.0])
    est = TTCompletion(dims=(3, 3, 3), rank=(1, 1), algorithm="als",
                       max_iter=3, random_state=0)
    est.fit(idx, y)  # must not raise on duplicates
    assert est.tensor_.n == (3, 3, 3)
