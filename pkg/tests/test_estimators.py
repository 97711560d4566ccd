import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from surfmotion import GeodesicFeature, LBOSphericalMap, LDDMMRegistration, SphericalMap
from surfmotion.geodesic import geodesic_feature, sample_on_vertices
from surfmotion.mesh import make_icosphere, make_quad_sphere


def test_geodesic_feature_matches_functional(ball10):
    mesh = make_quad_sphere(6, radius=9.5)
    est = GeodesicFeature(max_iter=50).fit(ball10)
    *_, fmap = geodesic_feature(ball10, iters=50)
    np.testing.assert_array_equal(est.transform(mesh), sample_on_vertices(fmap, mesh.vertices))
    u = est.spherical_map(mesh.vertices)
    np.testing.assert_allclose(np.linalg.norm(u, axis=1), 1.0)


def test_params_and_clone():
    est = GeodesicFeature(radius_factor=0.9, init="distance")
    assert est.get_params()["radius_factor"] == 0.9
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est
    est.set_params(max_iter=10)
    assert est.max_iter == 10


def test_not_fitted():
    with pytest.raises(NotFittedError):
        GeodesicFeature().transform(np.zeros((2, 3)))
    with pytest.raises(NotFittedError):
        LDDMMRegistration().transform(np.zeros((2, 3)))
    with pytest.raises(NotFittedError):
        LBOSphericalMap().transform(np.zeros(3))


def test_registration_estimator():
    src = make_icosphere(2, radius=10).vertices
    tgt = src * 1.1
    est = LDDMMRegistration(max_iter=80).fit(src, tgt)
    assert est.loss_history_[-1] < est.loss_history_[0]
    assert est.score(src, tgt) > -0.5
    assert est.transform(src).shape == src.shape
    with pytest.raises(ValueError):
        est.transform(np.array([[np.nan, 0, 0]]))


def test_lbo_estimator():
    m = make_icosphere(3)
    est = LBOSphericalMap().fit(m)
    np.testing.assert_allclose(est.eigenvalues_, 2.0, rtol=0.05)
    smap = est.transform(m.vertices[:, 0])
    assert isinstance(smap, SphericalMap) and len(smap.values) == m.n_vertices
