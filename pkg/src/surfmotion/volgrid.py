"""Voxel volumes: binary morphology, shape PCA, boundary labelling, iso-surfaces."""

import logging
import warnings
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy import ndimage

from .mesh import TriMesh

logger = logging.getLogger(__name__)

CROSS = ndimage.generate_binary_structure(3, 1)


class Label(IntEnum):
    OUTSIDE = 0
    DOMAIN = 1
    INTERIOR_BOUNDARY = 2
    EXTERIOR_BOUNDARY = 3


@dataclass
class VoxelGrid:
    """Scalar or binary lattice with axis-aligned spacing (mm).

    World position of voxel ``[i, j, k]`` is ``origin + (i, j, k) * spacing``.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"data must be a non-empty 3D array, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in np.broadcast_to(self.spacing, 3))
        self.origin = tuple(float(o) for o in np.broadcast_to(self.origin, 3))
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")

    @property
    def dims(self):
        return self.data.shape

    def is_binary(self):
        if self.data.dtype == bool:
            return True
        return bool(np.all((self.data == 0) | (self.data == 1)))

    def foreground(self):
        if not self.is_binary():
            raise ValueError("grid is not a binary mask")
        return self.data.astype(bool)

    def index_to_world(self, idx):
        return np.asarray(self.origin) + np.asarray(idx, dtype=float) * np.asarray(self.spacing)

    def world_to_index(self, pts):
        return (np.asarray(pts, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def world_coords(self):
        """World coordinates of every voxel, shape dims + (3,)."""
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def with_data(self, data):
        return VoxelGrid(data, self.spacing, self.origin)

    def padded(self, pad):
        """Pad by ``pad`` voxels on each side (int or per-axis); origin moves so world positions are kept."""
        pad = np.broadcast_to(np.asarray(pad, dtype=int), 3)
        data = np.pad(self.data, [(p, p) for p in pad])
        origin = np.asarray(self.origin) - pad * np.asarray(self.spacing)
        return VoxelGrid(data, self.spacing, tuple(origin))


@dataclass
class ShapePCA:
    centroid: np.ndarray
    axes: np.ndarray  # rows are unit axes
    axis_lengths: np.ndarray
    variances: np.ndarray

    @property
    def principal_length(self):
        return float(self.axis_lengths[0])


@dataclass
class BoundaryLabels:
    """Partition of a (possibly padded) grid into the two Dirichlet boundaries,
    the domain between them, and the ignored interior of the eroded shape."""

    labels: VoxelGrid
    mask: VoxelGrid
    centroid: np.ndarray
    radius: float
    pca: ShapePCA = None
    pad: tuple = (0, 0, 0)
    meta: dict = field(default_factory=dict)

    @property
    def spacing(self):
        return self.labels.spacing

    def of(self, label):
        return self.labels.data == int(label)

    @property
    def domain(self):
        return self.of(Label.DOMAIN)

    @property
    def s_in(self):
        return self.of(Label.INTERIOR_BOUNDARY)

    @property
    def s_out(self):
        return self.of(Label.EXTERIOR_BOUNDARY)

    def mask_surface(self):
        """Foreground voxels of the (padded) input mask with a background 6-neighbour."""
        m = self.mask.data.astype(bool)
        return m & ~ndimage.binary_erosion(m, CROSS, border_value=0)

    def validate(self):
        lab = self.labels.data
        if not np.all(np.isin(lab, [int(v) for v in Label])):
            raise ValueError("unknown label values")
        if not self.s_in.any() or not self.s_out.any():
            raise ValueError("both boundaries must be non-empty")
        dom = self.domain
        border = np.zeros_like(dom)
        border[[0, -1], :, :] = border[:, [0, -1], :] = border[:, :, [0, -1]] = True
        if np.any(dom & border):
            raise ValueError("domain touches the grid border")
        # the interior of the eroded shape may only meet the inner boundary
        inner = self.of(Label.OUTSIDE)
        near = ndimage.binary_dilation(inner, CROSS) & ~inner
        if np.any(near & (dom | self.s_out)):
            raise ValueError("eroded interior is not enclosed by the inner boundary")
        return self


def _binary(mask):
    if isinstance(mask, VoxelGrid):
        return mask.foreground(), mask
    arr = np.asarray(mask)
    grid = VoxelGrid(arr.astype(np.uint8))
    return grid.foreground(), grid


def erode_cross(mask, iterations=1):
    """Binary erosion with the 6-neighbour cross, applied ``iterations`` times.

    Voxels outside the grid count as background.
    """
    m, grid = _binary(mask)
    if not m.any():
        raise ValueError("mask foreground is empty")
    out = m
    for _ in range(int(iterations)):
        out = ndimage.binary_erosion(out, CROSS, border_value=0)
    if not out.any():
        raise ValueError("shape too thin for erosion")
    return grid.with_data(out.astype(np.uint8))


def shape_pca(mask):
    """Centroid, inertia axes and peak-to-peak extents of the foreground (mm).

    Axes are sorted by decreasing extent; each axis is signed so that its
    largest-magnitude component is positive.
    """
    m, grid = _binary(mask)
    idx = np.argwhere(m)
    if len(idx) < 4:
        raise ValueError("need at least 4 foreground voxels")
    pts = grid.index_to_world(idx)
    c = pts.mean(axis=0)
    x = pts - c
    cov = x.T @ x / len(x)
    w, vec = np.linalg.eigh(cov)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise ValueError("degenerate (coplanar) foreground")
    axes = vec.T[::-1].copy()
    w = w[::-1]
    for a in axes:
        if a[np.argmax(np.abs(a))] < 0:
            a *= -1
    proj = x @ axes.T
    lengths = np.ptp(proj, axis=0)
    order = np.lexsort((-w, -lengths))
    return ShapePCA(centroid=c, axes=axes[order], axis_lengths=lengths[order], variances=w[order])


def make_boundaries(mask, radius_factor=0.8, erosion_passes=1, margin=2, max_pad_factor=2.0):
    """Label the inner boundary, the exterior of the surrounding sphere, and the domain.

    The inner boundary is the surface of the eroded shape. The sphere is
    centred at the shape centroid with radius ``radius_factor`` times the
    principal extent. The grid is padded symmetrically when the sphere
    (plus ``margin`` voxels) does not fit; padded dimensions may not exceed
    ``max_pad_factor`` times the largest original dimension.
    """
    m, grid = _binary(mask)
    pca = shape_pca(grid)
    radius = radius_factor * pca.principal_length
    sp = np.asarray(grid.spacing)

    pts = grid.index_to_world(np.argwhere(m))
    reach = np.linalg.norm(pts - pca.centroid, axis=1).max()
    if reach + sp.max() >= radius:
        raise ValueError(
            f"radius_factor too small: sphere radius {radius:.3g} mm does not contain the mask "
            f"(reach {reach:.3g} mm)"
        )

    cidx = grid.world_to_index(pca.centroid)
    r_vox = radius / sp
    lo = np.floor(cidx - r_vox).astype(int) - margin
    hi = np.ceil(cidx + r_vox).astype(int) + margin
    need = np.maximum(np.maximum(-lo, hi - (np.asarray(grid.dims) - 1)), 0)
    cap = max_pad_factor * max(grid.dims)
    if np.any(np.asarray(grid.dims) + 2 * need > cap):
        raise ValueError("surrounding sphere does not fit in the grid within the padding cap")
    if np.any(need):
        grid = grid.with_data(m.astype(np.uint8)).padded(need)
        m = grid.data.astype(bool)
        logger.debug("padded grid by %s voxels", need.tolist())

    eroded = erode_cross(grid, erosion_passes).data.astype(bool)
    s_in = eroded & ~ndimage.binary_erosion(eroded, CROSS, border_value=0)
    dist = np.linalg.norm(grid.world_coords() - pca.centroid, axis=-1)
    s_out = dist > radius

    lab = np.full(grid.dims, int(Label.DOMAIN), dtype=np.int8)
    lab[s_out] = Label.EXTERIOR_BOUNDARY
    lab[eroded] = Label.OUTSIDE
    lab[s_in] = Label.INTERIOR_BOUNDARY

    # domain pockets that cannot reach the sphere (cavities) are excluded
    dom = lab == Label.DOMAIN
    comp, ncomp = ndimage.label(dom, CROSS)
    if ncomp > 1:
        touching = np.unique(comp[ndimage.binary_dilation(s_out, CROSS) & dom])
        cavity = dom & ~np.isin(comp, touching)
        if cavity.any():
            warnings.warn(f"{int(cavity.sum())} enclosed voxels excluded from the domain", RuntimeWarning)
            lab[cavity] = Label.OUTSIDE

    out = BoundaryLabels(
        labels=grid.with_data(lab),
        mask=grid.with_data(m.astype(np.uint8)),
        centroid=pca.centroid,
        radius=float(radius),
        pca=pca,
        pad=tuple(int(p) for p in need),
        meta={"radius_factor": radius_factor, "erosion_passes": erosion_passes},
    )
    return out.validate()


def marching_cubes(grid, iso=0.5):
    """Closed, outward-oriented triangle mesh of the ``iso`` level set (world coordinates).

    The volume is padded by one background voxel so that shapes touching the
    grid border still give a closed surface.
    """
    from skimage import measure

    if not isinstance(grid, VoxelGrid):
        grid = VoxelGrid(np.asarray(grid, dtype=float))
    vol = np.pad(np.asarray(grid.data, dtype=float), 1)
    if not (vol.min() < iso < vol.max()):
        raise ValueError("empty iso-surface")
    verts, faces, _, _ = measure.marching_cubes(vol, level=iso, spacing=grid.spacing,
                                                allow_degenerate=False, method="lewiner")
    verts = verts - np.asarray(grid.spacing) + np.asarray(grid.origin)
    mesh = TriMesh(verts, faces)
    if mesh.signed_volume() < 0:
        mesh = mesh.flipped()
    return mesh


def voxelize(mesh, like):
    """Binary mask of the region enclosed by a closed mesh, on the lattice of ``like``.

    Uses crossing parity of rays cast along +z through voxel centres.
    """
    tri = mesh if isinstance(mesh, TriMesh) else mesh.to_tri()
    sp = np.asarray(like.spacing)
    org = np.asarray(like.origin)
    nx, ny, nz = like.dims
    # small irrational shift keeps rays off vertices and edges
    v = (tri.vertices - org) / sp - np.array([1.3e-7, 2.7e-7, 0.0])
    toggles = np.zeros((nx, ny, nz + 1), dtype=np.int8)
    p0, p1, p2 = v[tri.faces[:, 0]], v[tri.faces[:, 1]], v[tri.faces[:, 2]]
    xmin = np.ceil(np.minimum(np.minimum(p0[:, 0], p1[:, 0]), p2[:, 0])).astype(int)
    xmax = np.floor(np.maximum(np.maximum(p0[:, 0], p1[:, 0]), p2[:, 0])).astype(int)
    ymin = np.ceil(np.minimum(np.minimum(p0[:, 1], p1[:, 1]), p2[:, 1])).astype(int)
    ymax = np.floor(np.maximum(np.maximum(p0[:, 1], p1[:, 1]), p2[:, 1])).astype(int)
    for t in np.nonzero((xmax >= xmin) & (ymax >= ymin))[0]:
        xs = np.arange(max(xmin[t], 0), min(xmax[t], nx - 1) + 1)
        ys = np.arange(max(ymin[t], 0), min(ymax[t], ny - 1) + 1)
        if not len(xs) or not len(ys):
            continue
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        a, b, c = p0[t], p1[t], p2[t]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if det == 0:
            continue
        w1 = ((X - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (Y - a[1])) / det
        w2 = ((b[0] - a[0]) * (Y - a[1]) - (X - a[0]) * (b[1] - a[1])) / det
        w0 = 1 - w1 - w2
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        z = w0 * a[2] + w1 * b[2] + w2 * c[2]
        kz = np.clip(np.ceil(z[inside]).astype(int), 0, nz)
        np.add.at(toggles, (X[inside], Y[inside], kz), 1)
    filled = (np.cumsum(toggles, axis=2)[:, :, :nz] % 2).astype(np.uint8)
    return like.with_data(filled)


# ---------------------------------------------------------------------------
# synthetic masks


def implicit_mask(inside, lo, hi, spacing=1.0):
    """Voxelise ``inside(points) -> bool`` over the box [lo, hi] (mm) at voxel centres."""
    sp = np.broadcast_to(np.asarray(spacing, float), 3)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    n = np.floor((hi - lo) / sp).astype(int) + 1
    grid = VoxelGrid(np.zeros(n, dtype=np.uint8), spacing=tuple(sp), origin=tuple(lo))
    pts = grid.world_coords().reshape(-1, 3)
    grid.data[...] = np.asarray(inside(pts), dtype=bool).reshape(n)
    return grid


def _similarity(scale, rotation, translation):
    R = np.eye(3) if rotation is None else np.asarray(rotation, float)
    t = np.zeros(3) if translation is None else np.asarray(translation, float)
    return float(scale), R, t


def ellipsoid_mask(semi_axes, spacing=1.0, margin=2, scale=1.0, rotation=None, translation=None):
    """Binary ellipsoid, optionally under ``x -> scale * R x + t``."""
    axes = np.asarray(semi_axes, float)
    s, R, t = _similarity(scale, rotation, translation)
    ext = s * axes.max() + margin
    A = np.diag(1.0 / axes ** 2)

    def inside(p):
        q = (p - t) @ R / s
        return np.einsum("ij,jk,ik->i", q, A, q) <= 1.0

    return implicit_mask(inside, t - ext, t + ext, spacing)


def ball_mask(radius, spacing=1.0, margin=2, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, float)

    def inside(p):
        return np.linalg.norm(p - c, axis=1) <= radius

    return implicit_mask(inside, c - radius - margin, c + radius + margin, spacing)


def box_mask(size, spacing=1.0, margin=2, rotation=None):
    """Solid box of ``size`` voxels per axis centred at the origin, optionally rotated.

    The lattice sits on half-integer positions, so even sizes are represented exactly.
    """
    size = np.asarray(size, float)
    half = size / 2.0
    R = np.eye(3) if rotation is None else np.asarray(rotation, float)
    ext = np.ceil(np.linalg.norm(half)) + margin + 0.5

    def inside(p):
        q = p @ R
        return np.all(np.abs(q) <= half - 0.5 + 1e-9, axis=1)

    return implicit_mask(inside, -np.full(3, ext), np.full(3, ext), spacing)


def smooth(grid, sigma=1.0):
    """Gaussian-smoothed float copy of a grid (sigma in voxels)."""
    return grid.with_data(ndimage.gaussian_filter(np.asarray(grid.data, dtype=float), sigma))


def torus_mask(R, r, spacing=1.0, margin=2, scale=1.0, rotation=None, translation=None):
    s, Rot, t = _similarity(scale, rotation, translation)
    ext = s * (R + r) + margin

    def inside(p):
        q = (p - t) @ Rot / s
        rho = np.hypot(q[:, 0], q[:, 1])
        return (rho - R) ** 2 + q[:, 2] ** 2 <= r * r

    return implicit_mask(inside, t - ext, t + ext, spacing)


def labels_from_masks(s_in, s_out, spacing=1.0, origin=(0.0, 0.0, 0.0), outside=None,
                      centroid=None, radius=None):
    """Build BoundaryLabels directly from boolean boundary masks.

    Everything that is neither boundary nor ``outside`` becomes domain.
    Used for analytic test domains such as slabs and spherical shells.
    """
    s_in = np.asarray(s_in, bool)
    s_out = np.asarray(s_out, bool)
    if np.any(s_in & s_out):
        raise ValueError("boundaries intersect")
    lab = np.full(s_in.shape, int(Label.DOMAIN), dtype=np.int8)
    if outside is not None:
        lab[np.asarray(outside, bool)] = Label.OUTSIDE
    lab[s_out] = Label.EXTERIOR_BOUNDARY
    lab[s_in] = Label.INTERIOR_BOUNDARY
    grid = VoxelGrid(lab, spacing, origin)
    mask = grid.with_data((s_in | (lab == Label.OUTSIDE)).astype(np.uint8))
    if centroid is None:
        centroid = grid.index_to_world(np.argwhere(s_in).mean(axis=0))
    return BoundaryLabels(labels=grid, mask=mask, centroid=np.asarray(centroid, float),
                          radius=float(radius) if radius is not None else float("nan")).validate()
