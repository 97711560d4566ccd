"""Motion-pattern statistics: correlation trajectories, deformation depth,
inter-subject distance matrices and spherical maps for cross-subject comparison."""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import eigsh
from scipy.spatial import cKDTree

from .mesh import TriMesh, make_icosphere, quad_to_tri

logger = logging.getLogger(__name__)


def normcorr(a, b):
    """Pearson correlation of two vectors (NaN if either is constant)."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0:
        return float("nan")
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0))


@dataclass
class CorrelationTrajectory:
    values: np.ndarray  # per-frame correlation with the reference row
    reference: int = 0
    flagged: np.ndarray = None  # frames whose correlation is undefined

    @property
    def min_corr(self):
        return float(np.nanmin(self.values))

    @property
    def depth(self):
        return 1.0 - self.min_corr

    def to_dict(self):
        return {"correlation": [None if not np.isfinite(v) else float(v) for v in self.values],
                "reference": int(self.reference), "min_corr": self.min_corr, "depth": self.depth,
                "flagged": [int(i) for i in np.nonzero(self.flagged)[0]]}


def correlation_trajectory(series):
    """Pearson correlation of each frame's row against the reference row.

    A row with zero variance gets correlation 1 if it equals the reference
    exactly and is flagged (NaN) otherwise.
    """
    X = np.asarray(series.values, float)
    if X.shape[0] < 2:
        raise ValueError("at least two frames are required")
    ref = X[series.reference]
    vals = np.empty(len(X))
    flagged = np.zeros(len(X), bool)
    for t, row in enumerate(X):
        c = normcorr(row, ref)
        if np.isnan(c):
            if np.array_equal(row, ref):
                c = 1.0
            else:
                flagged[t] = True
        vals[t] = c
    vals[series.reference] = 1.0
    flagged[series.reference] = False
    if flagged.any():
        logger.warning("correlation undefined for %d frame(s)", flagged.sum())
    return CorrelationTrajectory(vals, series.reference, flagged)


@dataclass
class DistanceMatrix:
    values: np.ndarray
    kind: str  # "depth_abs_diff" or "one_minus_normcorr"
    raw: np.ndarray = None
    flagged: bool = False
    labels: list = field(default_factory=list)

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("distance matrix must be square")
        self.values = v

    def row_means(self):
        n = len(self.values)
        return self.values.sum(axis=1) / max(n - 1, 1)


def _normalise(D):
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    m = D.max()
    return D / m if m > 0 else D


def depth_distance_matrix(depths, labels=None):
    """|depth_i - depth_j| scaled so the largest entry is 1."""
    d = np.asarray(depths, float)
    if d.size < 2:
        raise ValueError("at least two subjects are required")
    raw = np.abs(d[:, None] - d[None, :])
    return DistanceMatrix(_normalise(raw.copy()), "depth_abs_diff", raw=raw, labels=list(labels or []))


# ---------------------------------------------------------------------------
# Laplace-Beltrami spectrum


def cotangent_laplacian(mesh):
    """Stiffness matrix (positive semi-definite) and lumped mass of a triangle mesh."""
    tri = mesh if isinstance(mesh, TriMesh) else quad_to_tri(mesh)
    V, F = tri.vertices, tri.faces
    n = len(V)
    I, J, W = [], [], []
    for k in range(3):
        i, j, o = F[:, (k + 1) % 3], F[:, (k + 2) % 3], F[:, k]
        u = V[i] - V[o]
        v = V[j] - V[o]
        cot = np.einsum("ij,ij->i", u, v) / np.linalg.norm(np.cross(u, v), axis=1)
        I.append(i)
        J.append(j)
        W.append(0.5 * cot)
    I, J, W = np.concatenate(I), np.concatenate(J), np.concatenate(W)
    off = sparse.coo_matrix((W, (I, J)), shape=(n, n)).tocsr()
    off = off + off.T
    L = sparse.diags(np.asarray(off.sum(axis=1)).ravel()) - off
    M = sparse.diags(tri.vertex_areas())
    return L.tocsc(), M.tocsc()


def lbo_eigenfunctions(mesh, k=7, tol=1e-8):
    """The ``k`` smallest generalised eigenpairs of the cotangent Laplacian.

    Returns (eigenvalues, eigenvectors as columns); eigenvectors are
    M-orthonormal.
    """
    L, M = cotangent_laplacian(mesh)
    n = L.shape[0]
    if k >= n:
        raise ValueError("k must be smaller than the number of vertices")
    # shift just below zero keeps the factorisation non-singular
    shift = -1e-6 * abs(L.diagonal()).mean() / max(M.diagonal().mean(), 1e-300)
    # extra pairs guard against Lanczos skipping members of degenerate clusters
    kk = min(n - 1, k + 6)
    vals, vecs = eigsh(L, k=kk, M=M, sigma=shift, which="LM", tol=tol)
    order = np.argsort(vals)[:k]
    vals, vecs = vals[order], vecs[:, order]
    res = np.linalg.norm(L @ vecs - (M @ vecs) * vals, axis=0) / np.maximum(
        np.linalg.norm(M @ vecs, axis=0), 1e-300)
    scale = max(1.0, float(np.abs(vals).max()))
    if np.any(res > 1e-5 * scale):
        raise RuntimeError(f"eigensolver did not converge (residuals {res})")
    vals = np.maximum(vals, 0.0)
    return vals, vecs


def nodal_domains(mesh, f):
    """Number of connected regions where ``f`` keeps one strict sign."""
    adj = mesh.adjacency()
    f = np.asarray(f, float)
    total = 0
    for sgn in (1, -1):
        sel = np.nonzero(sgn * f > 0)[0]
        if len(sel) == 0:
            continue
        sub = adj[sel][:, sel]
        total += csgraph.connected_components(sub, directed=False)[0]
    return total


@dataclass
class SphericalMap:
    positions: np.ndarray  # (n, 3) unit vectors
    values: np.ndarray = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, float))
        if len(self.positions) == 0:
            raise ValueError("empty spherical map")
        if np.max(np.abs(np.linalg.norm(self.positions, axis=1) - 1.0)) > 1e-9:
            raise ValueError("positions must lie on the unit sphere")
        if self.values is not None:
            self.values = np.asarray(self.values, float)
            if len(self.values) != len(self.positions):
                raise ValueError("one value per position is required")

    def with_values(self, values):
        return SphericalMap(self.positions, values)


def lbo_spherical_map(mesh, n_candidates=6, values=None):
    """Spherical map from the first three non-trivial eigenfunctions with two nodal domains.

    Candidates are the ``n_candidates`` eigenfunctions after the constant
    one, taken in eigenvalue order. Each selected eigenfunction is signed to
    be positive at the vertex of largest z.
    """
    vals, vecs = lbo_eigenfunctions(mesh, n_candidates + 1)
    top = int(np.argmax(mesh.vertices[:, 2]))
    chosen = []
    for i in range(1, n_candidates + 1):
        if nodal_domains(mesh, vecs[:, i]) == 2:
            chosen.append(i)
        if len(chosen) == 3:
            break
    if len(chosen) < 3:
        raise RuntimeError("fewer than three eigenfunctions with two nodal domains")
    P = vecs[:, chosen].copy()
    for c in range(3):
        if P[top, c] < 0:
            P[:, c] = -P[:, c]
    nrm = np.linalg.norm(P, axis=1, keepdims=True)
    if np.any(nrm == 0):
        raise RuntimeError("vertex maps to the origin")
    return SphericalMap(P / nrm, values), vals[chosen]


def common_grid(level=4):
    return make_icosphere(level).vertices


def resample(smap, grid):
    """Nearest-neighbour value of ``smap`` at each grid node."""
    if smap.values is None:
        raise ValueError("spherical map carries no values")
    _, idx = cKDTree(smap.positions).query(grid)
    return smap.values[idx]


def spherical_resample(map_a, map_b, level=4, grid=None):
    """Both maps' values on a common icosphere grid (nearest neighbour)."""
    grid = common_grid(level) if grid is None else grid
    return resample(map_a, grid), resample(map_b, grid)


def mean_pattern(series):
    """Time average of per-frame |row - reference row|."""
    X = np.asarray(series.values, float)
    return np.mean(np.abs(X - X[series.reference]), axis=0)


def pattern_distance_matrix(maps, level=4, labels=None):
    """1 - normcorr between resampled mean patterns, normalised to max 1.

    ``flagged`` is set when some raw entry exceeds 1 (anti-correlated pair).
    """
    if len(maps) < 2:
        raise ValueError("at least two subjects are required")
    grid = common_grid(level)
    R = np.array([resample(m, grid) for m in maps])
    n = len(maps)
    raw = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            c = normcorr(R[i], R[j])
            raw[i, j] = raw[j, i] = 1.0 - (0.0 if np.isnan(c) else c)
    flagged = bool(np.any(raw > 1.0))
    return DistanceMatrix(_normalise(raw.copy()), "one_minus_normcorr", raw=raw, flagged=flagged,
                          labels=list(labels or []))
