import numpy as np
import pytest
from sklearn.base import clone

from hydrohom.estimator import HydroHomogenizer, build_preset, check_currents
from hydrohom.exceptions import DimensionMismatch
from hydrohom.grid import Grid
from hydrohom.solver import effective_tensor
from hydrohom.forms import FormContext


def test_params_and_clone():
    est = HydroHomogenizer(shape=(8, 8), eta=0.2)
    p = est.get_params()
    assert p["shape"] == (8, 8) and p["eta"] == 0.2
    c = clone(est).set_params(bc="dirichlet")
    assert c.bc == "dirichlet" and est.bc == "periodic"


def test_fit_predict_matches_tensor(ctx16):
    est = HydroHomogenizer().fit()
    A = effective_tensor(ctx16).matrix
    assert np.allclose(est.tensor_.matrix, A)
    C = np.array([[1.0, 0.0, 0.0, 0.0], [0.3, -1.0, 2.0, 0.5]])
    assert np.allclose(est.predict(C), C @ A.T)
    assert np.allclose(est.energy(C), np.einsum("ni,ij,nj->n", C, A, C))
    assert np.allclose(est.predict(np.eye(2)), np.eye(2).reshape(1, 4) @ A.T)
    assert est.n_features_in_ == 4


def test_natural_periodic_predict_inverts():
    a = HydroHomogenizer(shape=(8, 8)).fit()
    b = HydroHomogenizer(shape=(8, 8), bc="natural_periodic").fit()
    C = np.ones((1, 4))
    assert np.allclose(a.predict(C), b.predict(C), rtol=1e-7)


def test_fit_with_coefficients():
    co = build_preset("scalar", Grid((8, 8)), n=lambda x, y: 3 + np.sin(2 * np.pi * x) + np.cos(2 * np.pi * y))
    est = HydroHomogenizer().fit(co)
    assert est.tensor_.m == 1 and est.n_features_in_ == 2


def test_validation():
    est = HydroHomogenizer(shape=(8, 8))
    with pytest.raises(Exception):
        est.predict(np.ones((1, 4)))
    est.fit()
    with pytest.raises(DimensionMismatch):
        est.predict(np.ones((1, 3)))
    with pytest.raises(ValueError):
        HydroHomogenizer(bc="robin").fit()
    with pytest.raises(ValueError):
        build_preset("plasma", Grid((8, 8)))
    with pytest.raises(TypeError):
        HydroHomogenizer().fit(np.ones(3))
    assert check_currents(np.ones((2, 2)), 2, 2).shape == (1, 4)
