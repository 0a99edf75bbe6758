import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from weaklift.data import generate_synthetic
from weaklift.estimator import PoseStandardizer, RootCenterer, WeaklySupervisedLifter
from weaklift.metrics import pck

SMALL = dict(hidden=16, batch_size=16, phase1_epochs=3, phase2_epochs=2, joint_epochs=2, lr=1e-3)


def arrays(n, seed):
    s = generate_synthetic(n, seed)
    return np.stack([x.y2d.coords for x in s]), np.stack([x.y3d.coords for x in s])


def test_root_centerer_flat_and_stacked():
    X, _ = arrays(4, 0)
    out = RootCenterer().fit_transform(X)
    np.testing.assert_array_equal(out[:, 0], 0.0)
    np.testing.assert_allclose(RootCenterer().fit_transform(X.reshape(4, -1)), out.reshape(4, -1))
    with pytest.raises(NotFittedError):
        RootCenterer().transform(X)
    with pytest.raises(ValueError):
        RootCenterer(root_index=40).fit(X)


def test_standardizer_round_trip():
    _, Y = arrays(30, 1)
    Y = Y - Y[:, :1]
    st = PoseStandardizer().fit(Y)
    Z = st.transform(Y)
    varying = Y.reshape(30, -1).std(axis=0) > 1e-8
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(Z[:, varying].std(axis=0), 1.0, rtol=1e-10)
    np.testing.assert_allclose(st.inverse_transform(Z), Y, atol=1e-9)


def test_input_validation_messages():
    X, Y = arrays(4, 2)
    with pytest.raises(ValueError, match="multiple of 2"):
        RootCenterer().fit(np.zeros((3, 5)))
    bad = X.copy()
    bad[2, 3, 0] = np.inf
    with pytest.raises(ValueError, match="sample 2"):
        WeaklySupervisedLifter(**SMALL).fit(bad, Y)
    Yp = Y.copy()
    Yp[1, 0, 0] = np.nan
    with pytest.raises(ValueError, match="partly labeled"):
        WeaklySupervisedLifter(**SMALL).fit(X, Yp)


def test_lifter_params_and_clone():
    est = WeaklySupervisedLifter(**SMALL)
    assert est.get_params()["hidden"] == 16
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((2, 17, 2)))


def test_lifter_fit_predict_score_with_unlabeled_rows():
    X, Y = arrays(96, 3)
    Y = Y.copy()
    Y[64:] = np.nan
    est = WeaklySupervisedLifter(**SMALL).fit(X, Y)
    pred = est.predict(X[:5])
    assert pred.shape == (5, 17, 3)
    np.testing.assert_array_equal(pred[:, 0], 0.0)
    assert est.reproject(X[:5]).shape == (5, 17, 2)
    Xt, Yt = arrays(20, 4)
    Yc = Yt - Yt[:, :1]
    assert est.score(Xt, Yt) == pytest.approx(pck(est.predict(Xt), Yc))
    # deterministic given the seed
    again = WeaklySupervisedLifter(**SMALL).fit(X, Y)
    np.testing.assert_array_equal(again.predict(X[:5]), pred)
