"""Log-Euclidean polyaffine simulation of cyclic organ motion.

Each region k carries an affine map ``A_k`` (here a component-wise scaling
about an anchor point ``c_k``). The fused stationary velocity field is

    v(x) = sum_k w_k(x) log(S_k) (x - c_k)

with smooth weights summing to one, and the transformation at amplitude
``s`` is ``exp(s v)``, computed by scaling and squaring on the voxel grid.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volgrid import VoxelGrid

logger = logging.getLogger(__name__)

SQUARING_DEPTH = 6


@dataclass
class PolyaffineModel:
    """Regions, per-region log-scalings and the weight field that fuses them.

    Parameters
    ----------
    regions : VoxelGrid
        Integer labels, 0 for background and 1..K for the regions.
    scalings : ndarray, shape (K, 3)
        Component-wise scale factors of each region (all positive).
    anchors : ndarray, shape (K, 3)
        Fixed point of each region's scaling (mm).
    centers : ndarray, shape (K, 3)
        Centre of each region's weight bump (mm); defaults to region centroids.
    width : float
        Standard deviation of the Gaussian weight bumps (mm); defaults to half
        the mean distance between neighbouring centres.
    """

    regions: VoxelGrid
    scalings: np.ndarray
    anchors: np.ndarray = None
    centers: np.ndarray = None
    width: float = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lab = np.asarray(self.regions.data)
        self.scalings = np.atleast_2d(np.asarray(self.scalings, float))
        K = len(self.scalings)
        if lab.max() != K or lab.min() < 0:
            raise ValueError("region labels must be 1..K with K = len(scalings)")
        if np.any(self.scalings <= 0):
            raise ValueError("non-invertible region transform (non-positive scaling)")
        cents = np.array([self.regions.index_to_world(np.argwhere(lab == k + 1).mean(axis=0))
                          for k in range(K)])
        if self.centers is None:
            self.centers = cents
        if self.anchors is None:
            self.anchors = cents
        self.centers = np.asarray(self.centers, float).reshape(K, 3)
        self.anchors = np.asarray(self.anchors, float).reshape(K, 3)
        if self.width is None:
            if K == 1:
                self.width = float(np.max(np.ptp(self.regions.world_coords().reshape(-1, 3), axis=0)))
            else:
                d = np.linalg.norm(self.centers[:, None] - self.centers[None], axis=-1)
                np.fill_diagonal(d, np.inf)
                self.width = 0.5 * float(np.mean(d.min(axis=1)))
        if self.width <= 0:
            raise ValueError("weight width must be positive")

    @property
    def n_regions(self):
        return len(self.scalings)

    @property
    def grid(self):
        return self.regions

    def weights(self, x):
        """Normalised Gaussian-bump weights, shape (n, K)."""
        x = np.atleast_2d(x)
        d2 = np.sum((x[:, None, :] - self.centers[None]) ** 2, axis=-1)
        a = -d2 / (2.0 * self.width ** 2)
        a -= a.max(axis=1, keepdims=True)
        w = np.exp(a)
        return w / w.sum(axis=1, keepdims=True)

    def velocity(self, x):
        """Stationary velocity ``sum_k w_k(x) log(S_k) (x - c_k)`` at points (mm/unit time)."""
        x = np.atleast_2d(np.asarray(x, float))
        w = self.weights(x)
        L = np.log(self.scalings)
        v = np.zeros_like(x)
        for k in range(self.n_regions):
            v += w[:, k:k + 1] * (L[k] * (x - self.anchors[k]))
        return v


@dataclass
class DisplacementField:
    """Dense displacement u(x) on a voxel lattice; the map is x -> x + u(x)."""

    u: np.ndarray  # dims + (3,), mm
    spacing: tuple
    origin: tuple

    @property
    def dims(self):
        return self.u.shape[:3]

    def _grid(self):
        return VoxelGrid(np.zeros(self.dims, np.uint8), self.spacing, self.origin)

    def sample(self, pts):
        """Trilinear displacement at arbitrary points (clamped at the border)."""
        idx = self._grid().world_to_index(np.atleast_2d(pts)).T
        return np.stack([ndimage.map_coordinates(self.u[..., a], idx, order=1, mode="nearest")
                         for a in range(3)], axis=-1)

    def apply(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        return pts + self.sample(pts)

    def compose(self, inner):
        """Displacement of ``self o inner``."""
        pts = inner._grid().world_coords().reshape(-1, 3)
        moved = pts + inner.u.reshape(-1, 3)
        u = inner.u.reshape(-1, 3) + self.sample(moved)
        return DisplacementField(u.reshape(inner.u.shape), inner.spacing, inner.origin)

    def jacobian_determinant(self):
        J = np.empty(self.dims + (3, 3))
        for a in range(3):
            grads = np.gradient(self.u[..., a], *self.spacing)
            for b in range(3):
                J[..., a, b] = grads[b] + (1.0 if a == b else 0.0)
        return np.linalg.det(J)

    def warp_volume(self, vol, order=1):
        """Sample ``vol`` at ``x + u(x)`` (pull-back by this map)."""
        g = self._grid()
        pts = g.world_coords().reshape(-1, 3) + self.u.reshape(-1, 3)
        idx = g.world_to_index(pts).T
        out = ndimage.map_coordinates(np.asarray(vol, float), idx, order=order, mode="constant", cval=0.0)
        return out.reshape(self.dims)


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def fuse_transform(model, s, depth=SQUARING_DEPTH):
    """Displacement of ``exp(s v)`` on the model grid by scaling and squaring.

    The first step ``exp(s v / 2**depth)`` is one RK4 step of the flow; it
    is then squared ``depth`` times by self-composition.
    """
    g = model.regions
    pts = g.world_coords().reshape(-1, 3)
    h = float(s) / 2 ** depth
    u = _rk4(model.velocity, pts, h) - pts
    d = DisplacementField(u.reshape(g.dims + (3,)), g.spacing, g.origin)
    for _ in range(depth):
        d = d.compose(d)
    return d


def exp_points(model, pts, s, steps=64):
    """Pointwise ``exp(s v)`` by RK4 integration of the flow (reference route)."""
    x = np.atleast_2d(np.asarray(pts, float)).copy()
    h = float(s) / steps
    for _ in range(steps):
        x = _rk4(model.velocity, x, h)
    return x


# ---------------------------------------------------------------------------
# models


def slab_regions(mask, n=4, axis=2):
    """Split the foreground into ``n`` slabs of equal voxel count along ``axis``.

    Background voxels get label 0; labels run 1..n from low to high coordinate.
    """
    fg = mask.foreground()
    if fg.sum() < 8 * n:
        raise ValueError("mask too small to partition")
    coord = np.argwhere(fg)[:, axis]
    cuts = np.quantile(coord, np.linspace(0, 1, n + 1)[1:-1])
    lab_axis = np.searchsorted(cuts, np.arange(fg.shape[axis]), side="right") + 1
    shape = [1, 1, 1]
    shape[axis] = -1
    full = np.broadcast_to(lab_axis.reshape(shape), fg.shape)
    lab = np.where(fg, full, 0).astype(np.int16)
    if len(np.unique(lab[fg])) != n:
        raise ValueError("mask too small to partition")
    return mask.with_data(lab)


def single_region_model(mask, scaling, anchor=None):
    lab = mask.with_data(np.where(mask.foreground(), 1, 0).astype(np.int16))
    return PolyaffineModel(lab, np.atleast_2d(scaling), anchors=None if anchor is None else [anchor])


def breathing_model(mask, amplitude=0.03, axis=2, n=4):
    """Small-amplitude cyclic model: alternating volume-preserving stretches per slab."""
    lab = slab_regions(mask, n, axis)
    sc = np.ones((n, 3))
    for k in range(n):
        a = 1.0 + amplitude * (1 if k % 2 == 0 else -1)
        sc[k, axis] = a
        sc[k, (axis + 1) % 3] = 1.0 / np.sqrt(a)
        sc[k, (axis + 2) % 3] = 1.0 / np.sqrt(a)
    return PolyaffineModel(lab, sc, meta={"kind": "breathing", "amplitude": amplitude})


def sag_model(mask, amplitude=0.3, axis=2, n=4):
    """Four slabs along ``axis``; the organ sags towards low coordinates.

    All slabs stretch along ``axis`` about the organ's upper face, the
    inferior one by ``1 + amplitude`` and widened laterally (the bulge), the
    others by ``1 + amplitude / 3`` with lateral compensation.
    """
    lab = slab_regions(mask, n, axis)
    top = np.argwhere(lab.data > 0)[:, axis].max() + 0.5
    sc = np.ones((n, 3))
    lat = [(axis + 1) % 3, (axis + 2) % 3]
    b = amplitude / 3.0
    sc[0, axis] = 1.0 + amplitude
    sc[0, lat] = 1.0 + b
    sc[1:, axis] = 1.0 + b
    sc[1:, lat[0]] = sc[1:, lat[1]] = 1.0 / np.sqrt(1.0 + b)
    anchors = np.array([lab.index_to_world(np.argwhere(lab.data == k + 1).mean(axis=0)) for k in range(n)])
    anchors[:, axis] = lab.index_to_world(np.full(3, top))[axis]
    return PolyaffineModel(lab, sc, anchors=anchors, meta={"kind": "sag", "amplitude": amplitude})


# ---------------------------------------------------------------------------
# cycles


@dataclass
class CycleFrame:
    phase: str  # "forward" or "inverse"
    cycle: int
    amount: float  # s on the forward ramp, u on the inverse ramp


@dataclass
class SimulatedSequence:
    masks: list  # VoxelGrid per frame
    levels: list  # smoothed float volumes per frame (iso 0.5 is the surface)
    frames: list  # CycleFrame per frame
    vertices: np.ndarray = None  # ground-truth trajectories (L+1, n, 3)
    faces: np.ndarray = None

    @property
    def n_frames(self):
        return len(self.masks)

    def rest_indices(self):
        return [i for i, f in enumerate(self.frames) if f.phase == "forward" and f.amount == 0.0]

    def clouds(self):
        from .volgrid import marching_cubes

        return [marching_cubes(v, 0.5).vertices for v in self.levels]


def _frame_schedule(frames_per_half, n_cycles, close):
    out = []
    for c in range(n_cycles):
        out += [CycleFrame("forward", c, i / frames_per_half) for i in range(frames_per_half)]
        out += [CycleFrame("inverse", c, i / frames_per_half) for i in range(frames_per_half)]
    if close:
        out.append(CycleFrame("inverse", n_cycles - 1, 1.0))
    return out


def make_cycle(model, mask, frames_per_half=4, n_cycles=8, mesh=None, smooth_sigma=0.8, close=False):
    """Cyclic sequence: forward ramp ``exp(s v)``, s = 0..1, then the inverse
    ramp ``exp(-u v) o exp(v)``, u = 0..1, repeated ``n_cycles`` times.

    Frames depend only on (phase, amount), so they are computed once and
    reused across cycles. ``mesh`` vertices (if given) are carried along as
    ground truth by the same maps.
    """
    if frames_per_half < 1 or n_cycles < 1:
        raise ValueError("frames_per_half and n_cycles must be >= 1")
    sched = _frame_schedule(frames_per_half, n_cycles, close)
    level0 = ndimage.gaussian_filter(mask.foreground().astype(float), smooth_sigma) if smooth_sigma else \
        mask.foreground().astype(float)
    full = fuse_transform(model, 1.0)
    full_inv = fuse_transform(model, -1.0)
    cache = {}
    for f in sched:
        key = (f.phase, round(f.amount, 12))
        if key in cache:
            continue
        if f.phase == "forward":
            fwd = fuse_transform(model, f.amount)
            back = fuse_transform(model, -f.amount)
        else:
            # map exp(-u v) o exp(v); its inverse exp(-v) o exp(u v) pulls the rest volume back
            fwd = fuse_transform(model, -f.amount).compose(full)
            back = full_inv.compose(fuse_transform(model, f.amount))
        lvl = back.warp_volume(level0, order=1)
        verts = None if mesh is None else fwd.apply(mesh.vertices)
        cache[key] = (lvl, verts)
    masks, levels, verts = [], [], []
    for f in sched:
        lvl, v = cache[(f.phase, round(f.amount, 12))]
        levels.append(mask.with_data(lvl))
        masks.append(mask.with_data((lvl >= 0.5).astype(np.uint8)))
        verts.append(v)
    seq = SimulatedSequence(masks=masks, levels=levels, frames=sched)
    if mesh is not None:
        seq.vertices = np.stack(verts)
        seq.faces = mesh.faces.copy()
    return seq


def dice(a, b):
    a = np.asarray(a, bool)
    b = np.asarray(b, bool)
    return 2.0 * np.sum(a & b) / max(np.sum(a) + np.sum(b), 1)


def organ_phantom(semi_axes=(20.0, 17.0, 15.0), n_bumps=20, bump_amplitude=0.041, bump_width=0.225,
                  subdiv=12, seed=49, spacing=1.0, margin=10):
    """Star-shaped test organ: an ellipsoid with seeded Gaussian surface folds.

    Returns the binary mask and a quad mesh whose vertices lie on the same
    radial surface. Folds have random directions and signs; ``bump_width``
    is their angular standard deviation (radians) and ``bump_amplitude`` the
    relative radial height.
    """
    from .mesh import QuadMesh, make_quad_sphere
    from .volgrid import implicit_mask

    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_bumps, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    signs = rng.choice([-1.0, 1.0], n_bumps)
    ax = np.asarray(semi_axes, float)

    def radius(u):
        r_ell = 1.0 / np.sqrt(np.sum(u ** 2 / ax ** 2, axis=1))
        ang = np.arccos(np.clip(u @ dirs.T, -1.0, 1.0))
        return r_ell * (1.0 + bump_amplitude * np.sum(signs * np.exp(-ang ** 2 / (2 * bump_width ** 2)), axis=1))

    def inside(p):
        r = np.linalg.norm(p, axis=1)
        u = p / np.maximum(r, 1e-12)[:, None]
        return r <= radius(u)

    ext = ax.max() * (1.0 + 2.0 * bump_amplitude) + margin
    mask = implicit_mask(inside, -np.full(3, ext), np.full(3, ext), spacing)
    q = make_quad_sphere(subdiv)
    u = q.vertices / np.linalg.norm(q.vertices, axis=1, keepdims=True)
    return mask, QuadMesh(u * radius(u)[:, None], q.faces)
