"""scikit-learn style wrappers over the functional pipeline.

The estimators keep hyperparameters in ``__init__`` (so ``get_params`` /
``set_params`` and cloning work) and store fitted state in trailing-underscore
attributes.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import analysis, geodesic, lddmm
from .volgrid import VoxelGrid


def _points(X):
    X = getattr(X, "vertices", X)
    return check_array(X, dtype=np.float64, ensure_min_samples=1, ensure_all_finite=True)


class GeodesicFeature(BaseEstimator, TransformerMixin):
    """Geodesic shape feature f = R / G of a binary mask, sampled at query points.

    Parameters
    ----------
    radius_factor : float, default=0.8
        Sphere radius as a fraction of the principal length of the shape.
    max_iter : int, default=200
        Jacobi sweeps of the harmonic solve.
    tol : float or None, default=None
        Relative energy-change threshold for early stopping of the solve.
    init : {"zero", "distance"}, default="zero"
        Initial values of the harmonic field on the domain.
    erosion_passes : int, default=1
        Erosions that produce the inner boundary.

    Attributes
    ----------
    labels_ : BoundaryLabels
    field_ : HarmonicField
    flow_ : FlowField
    lengths_ : GeodesicLengths
    feature_map_ : FeatureMap
    """

    def __init__(self, radius_factor=0.8, max_iter=200, tol=None, init="zero", erosion_passes=1):
        self.radius_factor = radius_factor
        self.max_iter = max_iter
        self.tol = tol
        self.init = init
        self.erosion_passes = erosion_passes

    def fit(self, X, y=None):
        if not isinstance(X, VoxelGrid):
            X = VoxelGrid(np.asarray(X))
        self.labels_, self.field_, self.flow_, self.lengths_, self.feature_map_ = geodesic.geodesic_feature(
            X, radius_factor=self.radius_factor, iters=self.max_iter, tol=self.tol, init=self.init,
            erosion_passes=self.erosion_passes)
        return self

    def transform(self, X):
        """Feature at the given points (or mesh vertices), shape (n,)."""
        check_is_fitted(self, "feature_map_")
        return geodesic.sample_on_vertices(self.feature_map_, _points(X))

    def spherical_map(self, X):
        """Unit-sphere positions of the points obtained by following the flow."""
        check_is_fitted(self, "flow_")
        return geodesic.flow_to_sphere(self.flow_, _points(X), self.labels_)


class LDDMMRegistration(BaseEstimator, TransformerMixin):
    """Diffeomorphic point-set registration with control points and momenta.

    ``fit(source, target)`` estimates the initial momenta; ``transform``
    carries arbitrary points along the resulting flow.

    Parameters
    ----------
    kernel_width : float, default=8.0
        Width of the Gaussian kernel (mm).
    time_steps : int, default=15
        Number of integration steps on [0, 1].
    regularization : float, default=1e-8
        Weight of the deformation norm relative to the data term.
    max_iter : int, default=100
        Gradient-descent iterations.
    tol : float, default=1e-7
        Relative loss decrease below which the descent stops.
    """

    def __init__(self, kernel_width=8.0, time_steps=15, regularization=1e-8, max_iter=100, tol=1e-7):
        self.kernel_width = kernel_width
        self.time_steps = time_steps
        self.regularization = regularization
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = _points(X)
        y = _points(y)
        res = lddmm.register(X, y, kernel_width=self.kernel_width, time_steps=self.time_steps,
                             regularization=self.regularization, max_iter=self.max_iter, tol=self.tol)
        self.system_ = res.system
        self.control_points_ = res.system.q
        self.momenta_ = res.system.mu
        self.loss_history_ = np.asarray(res.loss_history)
        self.data_term_ = res.data_term
        self.flow_ = lddmm.shoot(res.system)
        return self

    def transform(self, X):
        check_is_fitted(self, "flow_")
        return lddmm.flow_points(self.flow_, _points(X))[-1]

    def score(self, X, y):
        """Negative mean closest-point distance of the transported ``X`` to ``y``."""
        return -lddmm.tracking_error(self.transform(X), _points(y))


class LBOSphericalMap(BaseEstimator, TransformerMixin):
    """Spherical parameterisation of a closed genus-0 mesh by Laplace-Beltrami eigenfunctions.

    Parameters
    ----------
    n_candidates : int, default=6
        Non-trivial eigenfunctions searched for the three with two nodal domains.
    """

    def __init__(self, n_candidates=6):
        self.n_candidates = n_candidates

    def fit(self, X, y=None):
        smap, vals = analysis.lbo_spherical_map(X, self.n_candidates)
        self.positions_ = smap.positions
        self.eigenvalues_ = vals
        return self

    def transform(self, X):
        """Attach per-vertex values, returning a :class:`SphericalMap`."""
        check_is_fitted(self, "positions_")
        values = np.asarray(X, float).ravel()
        return analysis.SphericalMap(self.positions_, values)
