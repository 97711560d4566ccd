"""Quad and triangle surface meshes, synthetic generators and curvature."""

import logging
import warnings

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


def _as_vertices(v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ValueError(f"vertices must have shape (n, 3), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vertices contain non-finite values")
    return v


def _as_faces(f, nverts, arity):
    f = np.asarray(f, dtype=np.int64)
    if f.ndim != 2 or f.shape[1] != arity:
        raise ValueError(f"faces must have shape (m, {arity}), got {f.shape}")
    if f.size and (f.min() < 0 or f.max() >= nverts):
        raise ValueError("face index out of range")
    return f


def _edge_table(faces):
    """Undirected edges (sorted pairs) of polygon faces, with the face owning each."""
    k = faces.shape[1]
    a = faces
    b = np.roll(faces, -1, axis=1)
    e = np.stack([a, b], axis=-1).reshape(-1, 2)
    owner = np.repeat(np.arange(len(faces)), k)
    return np.sort(e, axis=1), owner


class _PolyMesh:
    arity = 0

    def __init__(self, vertices, faces):
        self.vertices = _as_vertices(vertices)
        self.faces = _as_faces(faces, len(self.vertices), self.arity)
        if self.faces.size:
            for a in range(self.arity):
                for b in range(a + 1, self.arity):
                    if np.any(self.faces[:, a] == self.faces[:, b]):
                        raise ValueError("face with repeated vertex index")
        self._cache = {}

    def __repr__(self):
        return f"{type(self).__name__}(n_vertices={self.n_vertices}, n_faces={self.n_faces})"

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def with_vertices(self, vertices):
        """Same connectivity, new vertex positions."""
        out = type(self).__new__(type(self))
        out.vertices = _as_vertices(vertices)
        if out.vertices.shape != self.vertices.shape:
            raise ValueError("vertex array shape mismatch")
        out.faces = self.faces
        # connectivity-only caches carry over
        out._cache = {k: v for k, v in self._cache.items() if k.startswith("topo_")}
        return out

    def edges(self):
        """Unique undirected edges, shape (E, 2)."""
        if "topo_edges" not in self._cache:
            e, _ = _edge_table(self.faces)
            self._cache["topo_edges"] = np.unique(e, axis=0)
        return self._cache["topo_edges"]

    def edge_face_counts(self):
        e, _ = _edge_table(self.faces)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_closed_manifold(self):
        """Every edge shared by exactly two faces."""
        return bool(self.n_faces) and bool(np.all(self.edge_face_counts() == 2))

    def euler_characteristic(self):
        used = np.unique(self.faces)
        return int(len(used) - len(self.edges()) + self.n_faces)

    def adjacency(self):
        """Symmetric vertex adjacency (edge graph) as CSR matrix."""
        if "topo_adj" not in self._cache:
            e = self.edges()
            n = self.n_vertices
            data = np.ones(2 * len(e))
            adj = sparse.csr_matrix(
                (data, (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)
            )
            adj.sort_indices()
            self._cache["topo_adj"] = adj
        return self._cache["topo_adj"]

    def vertex_neighbors(self):
        """List of edge-adjacent vertex index arrays per vertex."""
        if "topo_nbrs" not in self._cache:
            adj = self.adjacency()
            self._cache["topo_nbrs"] = [
                adj.indices[adj.indptr[i]:adj.indptr[i + 1]] for i in range(self.n_vertices)
            ]
        return self._cache["topo_nbrs"]

    def vertex_faces(self):
        """List of face index arrays incident to each vertex."""
        if "topo_vf" not in self._cache:
            n = self.n_vertices
            rows = self.faces.ravel()
            cols = np.repeat(np.arange(self.n_faces), self.arity)
            m = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, self.n_faces))
            m.sort_indices()
            self._cache["topo_vf"] = [m.indices[m.indptr[i]:m.indptr[i + 1]] for i in range(n)]
        return self._cache["topo_vf"]

    def valences(self):
        return np.diff(self.adjacency().indptr)

    def edge_lengths(self):
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def centroid(self):
        return self.vertices.mean(axis=0)


class TriMesh(_PolyMesh):
    """Triangle mesh with fixed connectivity.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex coordinates in mm.
    faces : array_like, shape (m, 3)
        Vertex indices, counter-clockwise seen from outside.
    """

    arity = 3

    def face_areas(self):
        v = self.vertices
        f = self.faces
        cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def area(self):
        return float(self.face_areas().sum())

    def face_normals(self):
        v = self.vertices
        f = self.faces
        cr = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        nrm = np.linalg.norm(cr, axis=1, keepdims=True)
        if np.any(nrm == 0):
            raise ValueError("zero-area face")
        return cr / nrm

    def signed_volume(self):
        v = self.vertices
        f = self.faces
        return float(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0)

    def vertex_normals(self):
        """Unit normals with Max's weighting (exact for points on a sphere)."""
        v = self.vertices
        f = self.faces
        n = np.zeros_like(v)
        for k in range(3):
            i0, i1, i2 = f[:, k], f[:, (k + 1) % 3], f[:, (k + 2) % 3]
            e1 = v[i1] - v[i0]
            e2 = v[i2] - v[i0]
            cr = np.cross(e1, e2)
            w = 1.0 / (np.einsum("ij,ij->i", e1, e1) * np.einsum("ij,ij->i", e2, e2))
            np.add.at(n, i0, cr * w[:, None])
        nrm = np.linalg.norm(n, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        return n / nrm

    def flipped(self):
        return TriMesh(self.vertices, self.faces[:, ::-1])

    def corner_areas(self):
        """Mixed Voronoi areas per face corner, shape (m, 3) (Meyer et al. 2003)."""
        v = self.vertices
        f = self.faces
        # edge opposite corner k
        e = np.stack([v[f[:, 2]] - v[f[:, 1]], v[f[:, 0]] - v[f[:, 2]], v[f[:, 1]] - v[f[:, 0]]], axis=1)
        l2 = np.einsum("ijk,ijk->ij", e, e)
        area = self.face_areas()
        # barycentric weights of circumcenter
        bc = np.stack(
            [l2[:, 0] * (l2[:, 1] + l2[:, 2] - l2[:, 0]),
             l2[:, 1] * (l2[:, 2] + l2[:, 0] - l2[:, 1]),
             l2[:, 2] * (l2[:, 0] + l2[:, 1] - l2[:, 2])], axis=1)
        ca = np.empty((len(f), 3))
        obtuse = bc <= 0
        for k in range(3):
            k1, k2 = (k + 1) % 3, (k + 2) % 3
            # obtuse at corner k: half area; obtuse elsewhere: quarter
            ob = obtuse[:, k]
            ca[ob, k] = 0.5 * area[ob]
            ob_other = ~ob & (obtuse[:, k1] | obtuse[:, k2])
            ca[ob_other, k] = 0.25 * area[ob_other]
        regular = ~obtuse.any(axis=1)
        if np.any(regular):
            s = bc[regular].sum(axis=1)
            scale = 0.5 * area[regular] / s
            for k in range(3):
                k1, k2 = (k + 1) % 3, (k + 2) % 3
                ca[regular, k] = scale * (bc[regular, k1] + bc[regular, k2])
        return ca

    def vertex_areas(self):
        ca = self.corner_areas()
        out = np.zeros(self.n_vertices)
        np.add.at(out, self.faces.ravel(), ca.ravel())
        return out


class QuadMesh(_PolyMesh):
    """Pure quadrilateral mesh with fixed connectivity.

    Faces index four distinct vertices in cyclic order. Vertex neighbourhoods
    are taken from the edge graph, so irregular vertices (valence other than
    4) are handled the same way as regular ones.
    """

    arity = 4

    def face_normals(self):
        return face_normal(self.vertices[self.faces])

    def face_areas(self):
        return self.to_tri().face_areas().reshape(-1, 2).sum(axis=1)

    def area(self):
        return float(self.face_areas().sum())

    def to_tri(self):
        return quad_to_tri(self)

    def face_adjacency(self):
        """Pairs of faces sharing an edge, shape (P, 2)."""
        if "topo_fadj" not in self._cache:
            e, owner = _edge_table(self.faces)
            order = np.lexsort((e[:, 1], e[:, 0]))
            es, os_ = e[order], owner[order]
            same = np.all(es[1:] == es[:-1], axis=1)
            self._cache["topo_fadj"] = np.stack([os_[:-1][same], os_[1:][same]], axis=1)
        return self._cache["topo_fadj"]


def quad_to_tri(q):
    """Split every quad along its shorter diagonal, keeping vertex indices and orientation."""
    v = q.vertices
    f = q.faces
    d02 = np.linalg.norm(v[f[:, 0]] - v[f[:, 2]], axis=1)
    d13 = np.linalg.norm(v[f[:, 1]] - v[f[:, 3]], axis=1)
    use02 = d02 <= d13
    tris = np.empty((2 * len(f), 3), dtype=np.int64)
    a, b, c, d = f.T
    tris[0::2] = np.where(use02[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
    tris[1::2] = np.where(use02[:, None], np.stack([a, c, d], 1), np.stack([b, c, d], 1))
    return TriMesh(v, tris)


def face_normal(corners):
    """Unit normal of a polygon face, or of a stack of faces.

    Quads use the cross product of their diagonals, triangles the cross
    product of two edges. ``corners`` has shape (3|4, 3) or (m, 3|4, 3).
    """
    c = np.asarray(corners, dtype=float)
    single = c.ndim == 2
    if single:
        c = c[None]
    if c.shape[1] == 4:
        n = np.cross(c[:, 2] - c[:, 0], c[:, 3] - c[:, 1])
    elif c.shape[1] == 3:
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    else:
        raise ValueError("faces must have 3 or 4 corners")
    nrm = np.linalg.norm(n, axis=1)
    if np.any(nrm <= 1e-300):
        raise ValueError("zero-area face")
    n = n / nrm[:, None]
    return n[0] if single else n


def dihedral_angle(n1, n2):
    """Angle in [0, pi] between two face normals (vectorised over leading axes)."""
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    num = np.sum(n1 * n2, axis=-1)
    den = np.linalg.norm(n1, axis=-1) * np.linalg.norm(n2, axis=-1)
    if np.any(den == 0):
        raise ValueError("zero-length normal")
    return np.arccos(np.clip(num / den, -1.0, 1.0))


def face_dihedral_angle(mesh, f1, f2):
    """Dihedral angle between two faces of ``mesh`` given by index."""
    n = face_normal(mesh.vertices[mesh.faces[[f1, f2]]])
    return float(dihedral_angle(n[0], n[1]))


# ---------------------------------------------------------------------------
# curvature


def _perp_frame(n):
    """Orthonormal tangent vectors (u, v) for each unit normal row of ``n``."""
    a = np.where(np.abs(n[:, [0]]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    u = np.cross(n, a)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(n, u)
    return u, v


def _rotate_frame(u, v, n_from, n_to):
    """Rotate (u, v) about n_from x n_to so that n_from maps onto n_to."""
    ndot = np.sum(n_from * n_to, axis=1, keepdims=True)
    flip = ndot[:, 0] <= -1 + 1e-12
    perp = n_to - ndot * n_from
    dperp = (n_from + n_to) / np.where(flip[:, None], 1.0, 1.0 + ndot)
    ru = u - dperp * np.sum(u * perp, axis=1, keepdims=True)
    rv = v - dperp * np.sum(v * perp, axis=1, keepdims=True)
    ru[flip] = -u[flip]
    rv[flip] = -v[flip]
    return ru, rv


def _project_tensor(uf, vf, II, up, vp):
    """Express a 2x2 tensor given in face frame (uf, vf) in the coplanar frame (up, vp)."""
    u1 = np.sum(up * uf, axis=1)
    v1 = np.sum(up * vf, axis=1)
    u2 = np.sum(vp * uf, axis=1)
    v2 = np.sum(vp * vf, axis=1)
    e, f, g = II[:, 0], II[:, 1], II[:, 2]
    ku = u1 * u1 * e + 2 * u1 * v1 * f + v1 * v1 * g
    kuv = u1 * u2 * e + (u1 * v2 + u2 * v1) * f + v1 * v2 * g
    kv = u2 * u2 * e + 2 * u2 * v2 * f + v2 * v2 * g
    return np.stack([ku, kuv, kv], axis=1)


def shape_operators(mesh):
    """Per-vertex second fundamental form by normal finite differences.

    For every triangle the 2x2 tensor that maps edge vectors to the change
    of vertex normals along them is fitted by least squares in the face
    frame, rotated into each corner's tangent frame and averaged with
    mixed Voronoi weights.

    Returns
    -------
    II : ndarray, shape (n, 3)
        Tensor entries (e, f, g) in the frame (u, v) of each vertex.
    u, v, normals : ndarray, shape (n, 3)
        The tangent frame and unit vertex normal.
    """
    if not isinstance(mesh, TriMesh):
        mesh = mesh.to_tri()
    vtx = mesh.vertices
    f = mesh.faces
    normals = mesh.vertex_normals()
    up, vp = _perp_frame(normals)

    e = np.stack([vtx[f[:, 2]] - vtx[f[:, 1]], vtx[f[:, 0]] - vtx[f[:, 2]], vtx[f[:, 1]] - vtx[f[:, 0]]], axis=1)
    dn = np.stack([normals[f[:, 2]] - normals[f[:, 1]],
                   normals[f[:, 0]] - normals[f[:, 2]],
                   normals[f[:, 1]] - normals[f[:, 0]]], axis=1)
    fn = mesh.face_normals()
    uf = e[:, 0] / np.linalg.norm(e[:, 0], axis=1, keepdims=True)
    vf = np.cross(fn, uf)

    eu = np.einsum("fkj,fj->fk", e, uf)
    ev = np.einsum("fkj,fj->fk", e, vf)
    nu = np.einsum("fkj,fj->fk", dn, uf)
    nv = np.einsum("fkj,fj->fk", dn, vf)
    # normal equations of the 6x3 system  [eu ev 0; 0 eu ev] (e f g)^T = (nu; nv)
    A = np.zeros((len(f), 3, 3))
    b = np.zeros((len(f), 3))
    A[:, 0, 0] = np.sum(eu * eu, 1)
    A[:, 0, 1] = np.sum(eu * ev, 1)
    A[:, 1, 1] = np.sum(eu * eu + ev * ev, 1)
    A[:, 1, 2] = np.sum(eu * ev, 1)
    A[:, 2, 2] = np.sum(ev * ev, 1)
    A[:, 1, 0] = A[:, 0, 1]
    A[:, 2, 1] = A[:, 1, 2]
    b[:, 0] = np.sum(nu * eu, 1)
    b[:, 1] = np.sum(nu * ev + nv * eu, 1)
    b[:, 2] = np.sum(nv * ev, 1)
    IIf = np.linalg.solve(A, b[..., None])[..., 0]

    wts = mesh.corner_areas()
    acc = np.zeros((mesh.n_vertices, 3))
    wsum = np.zeros(mesh.n_vertices)
    for k in range(3):
        idx = f[:, k]
        # rotate the vertex frame into the face plane
        ru, rv = _rotate_frame(up[idx], vp[idx], normals[idx], fn)
        t = _project_tensor(uf, vf, IIf, ru, rv)
        np.add.at(acc, idx, t * wts[:, k, None])
        np.add.at(wsum, idx, wts[:, k])
    isolated = wsum == 0
    if np.any(isolated):
        warnings.warn(f"{int(isolated.sum())} isolated vertices have no curvature", RuntimeWarning)
        wsum[isolated] = np.nan
    return acc / wsum[:, None], up, vp, normals


def mean_curvature(mesh):
    """Per-vertex mean curvature (1/mm), positive on convex regions.

    Isolated vertices are returned as NaN.
    """
    II, _, _, _ = shape_operators(mesh)
    return 0.5 * (II[:, 0] + II[:, 2])


def principal_curvatures(mesh):
    II, _, _, _ = shape_operators(mesh)
    h = 0.5 * (II[:, 0] + II[:, 2])
    d = np.sqrt(np.maximum(0.25 * (II[:, 0] - II[:, 2]) ** 2 + II[:, 1] ** 2, 0.0))
    return h + d, h - d


# ---------------------------------------------------------------------------
# generators


def _merge_vertices(verts, faces, decimals=9):
    key = np.round(verts, decimals)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return verts[first[order]], remap[inverse.ravel()][faces]


def _cube_grid_faces(nx, ny, nz):
    """Quads covering the surface of the box [-1,1]^3 with per-axis divisions.

    Coordinates are given as parameters in [-1, 1] per axis and later warped.
    Faces are oriented outward.
    """
    verts = []
    faces = []
    divs = (nx, ny, nz)
    base = 0
    for axis in range(3):
        a1, a2 = [i for i in range(3) if i != axis]
        n1, n2 = divs[a1], divs[a2]
        s = np.linspace(-1, 1, n1 + 1)
        t = np.linspace(-1, 1, n2 + 1)
        S, T = np.meshgrid(s, t, indexing="ij")
        for sign in (-1.0, 1.0):
            p = np.zeros((n1 + 1, n2 + 1, 3))
            p[..., axis] = sign
            p[..., a1] = S
            p[..., a2] = T
            idx = base + np.arange((n1 + 1) * (n2 + 1)).reshape(n1 + 1, n2 + 1)
            q = np.stack([idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]], axis=-1).reshape(-1, 4)
            # (a1, a2, axis) right-handed for axis 0 and 2, left-handed for axis 1
            handed = 1.0 if axis != 1 else -1.0
            if sign * handed < 0:
                q = q[:, ::-1]
            verts.append(p.reshape(-1, 3))
            faces.append(q)
            base += p.shape[0] * p.shape[1]
    return _merge_vertices(np.concatenate(verts), np.concatenate(faces))


def _equal_angle(p):
    # warp cube parameters so that projected edges subtend near-equal angles
    return np.tan(p * np.pi / 4.0)


def make_quad_sphere(subdiv, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Cube-sphere quad mesh with ``6 * subdiv**2`` faces."""
    if int(subdiv) < 1:
        raise ValueError("subdiv must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    n = int(subdiv)
    p, faces = _cube_grid_faces(n, n, n)
    p = _equal_angle(p)
    p = p / np.linalg.norm(p, axis=1, keepdims=True)
    return QuadMesh(p * radius + np.asarray(center, float), faces)


def make_quad_ellipsoid(a, b, c, subdiv=8, center=(0.0, 0.0, 0.0)):
    """Quad mesh of the ellipsoid with semi-axes (a, b, c).

    The underlying box uses divisions proportional to the semi-axes so
    that edge lengths stay comparable over the surface; ``subdiv`` is the
    number of divisions along the shortest axis.
    """
    axes = np.array([a, b, c], dtype=float)
    if np.any(axes <= 0):
        raise ValueError("semi-axes must be positive")
    if int(subdiv) < 1:
        raise ValueError("subdiv must be >= 1")
    divs = np.maximum(1, np.round(subdiv * axes / axes.min()).astype(int))
    p, faces = _cube_grid_faces(*divs)
    # box with side ratios of the axes, then radial projection in scaled space
    box = _equal_angle(p) * axes
    x = box / axes
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    return QuadMesh(x * axes + np.asarray(center, float), faces)


def make_quad_torus(R, r, n_major=32, n_minor=16, center=(0.0, 0.0, 0.0)):
    """Quad torus around the z axis, major radius R and tube radius r."""
    if R <= 0 or r <= 0 or r >= R:
        raise ValueError("need 0 < r < R")
    if n_major < 3 or n_minor < 3:
        raise ValueError("need at least 3 divisions per direction")
    u = np.arange(n_major) * 2 * np.pi / n_major
    w = np.arange(n_minor) * 2 * np.pi / n_minor
    U, W = np.meshgrid(u, w, indexing="ij")
    x = (R + r * np.cos(W)) * np.cos(U)
    y = (R + r * np.cos(W)) * np.sin(U)
    z = r * np.sin(W)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    i1 = np.roll(idx, -1, axis=0)
    j1 = np.roll(idx, -1, axis=1)
    ij1 = np.roll(i1, -1, axis=1)
    faces = np.stack([idx, i1, ij1, j1], axis=-1).reshape(-1, 4)
    return QuadMesh(verts + np.asarray(center, float), faces)


def make_icosphere(level=4, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron; level 4 gives 2562 vertices."""
    if level < 0:
        raise ValueError("level must be >= 0")
    t = (1.0 + 5 ** 0.5) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(level):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.ravel()
        mids = v[uniq[:, 0]] + v[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = len(f)
        a, b, c = len(v) + inv[:m], len(v) + inv[m:2 * m], len(v) + inv[2 * m:]
        f = np.concatenate([
            np.stack([f[:, 0], a, c], 1), np.stack([f[:, 1], b, a], 1),
            np.stack([f[:, 2], c, b], 1), np.stack([a, b, c], 1)])
        v = np.concatenate([v, mids])
    return TriMesh(v * radius + np.asarray(center, float), f)
