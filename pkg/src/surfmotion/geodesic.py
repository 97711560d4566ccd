"""Gradient flow of the harmonic field, Eulerian path lengths and the R/G feature.

Conventions: ``T = grad h / |grad h|`` points towards increasing h, i.e.
towards the inner boundary. ``L0`` is the streamline length to the inner
boundary, ``L1`` the length to the exterior of the sphere, ``G = L0 + L1``.
"""

import logging
from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .volgrid import Label

logger = logging.getLogger(__name__)

GRAD_EPS = 1e-12
LENGTH_INIT = 0.5


@dataclass
class FlowField:
    T: np.ndarray  # dims + (3,)
    valid: np.ndarray  # bool, domain voxels with a defined direction
    labels: object

    @property
    def degenerate(self):
        return self.labels.domain & ~self.valid


@dataclass
class GeodesicLengths:
    L0: np.ndarray
    L1: np.ndarray
    G: np.ndarray
    R: float
    labels: object
    sweeps: int = 0
    skipped: np.ndarray = None


@dataclass
class FeatureMap:
    values: np.ndarray  # R / G on the domain, NaN elsewhere
    labels: object
    vertex_values: np.ndarray = None

    @property
    def grid(self):
        return self.labels.labels.with_data(self.values)

    def surface_values(self):
        """Feature on the voxels of the input-mask surface."""
        return self.values[self.labels.mask_surface() & self.labels.domain]


def flow_field(hfield):
    """Normalised central-difference gradient of h on the domain."""
    h = hfield.h
    labels = hfield.labels
    dom = labels.domain
    sp = labels.spacing
    g = np.zeros(h.shape + (3,))
    for ax in range(3):
        fwd = [slice(1, -1)] * 3
        g_ax = np.zeros(h.shape)
        hi = [slice(1, -1)] * 3
        lo = [slice(1, -1)] * 3
        hi[ax] = slice(2, None)
        lo[ax] = slice(None, -2)
        g_ax[tuple(fwd)] = (h[tuple(hi)] - h[tuple(lo)]) / (2.0 * sp[ax])
        g[..., ax] = g_ax
    g[~dom] = 0.0
    nrm = np.linalg.norm(g, axis=-1)
    valid = dom & (nrm > GRAD_EPS)
    T = np.zeros_like(g)
    T[valid] = g[valid] / nrm[valid, None]
    return FlowField(T=T, valid=valid, labels=labels)


@numba.njit(cache=True)
def _gs_sweep(L, dom, start, stop, step, T, sgn, sx, sy, sz):
    # upwind neighbour offset is sgn * sign(T) per axis
    change = 0.0
    p = start
    while p != stop:
        i, j, k = dom[p, 0], dom[p, 1], dom[p, 2]
        tx, ty, tz = T[i, j, k, 0], T[i, j, k, 1], T[i, j, k, 2]
        ax, ay, az = abs(tx) / sx, abs(ty) / sy, abs(tz) / sz
        den = ax + ay + az
        if den > 0.0:
            di = int(sgn * np.sign(tx))
            dj = int(sgn * np.sign(ty))
            dk = int(sgn * np.sign(tz))
            new = (1.0 + ax * L[i + di, j, k] + ay * L[i, j + dj, k] + az * L[i, j, k + dk]) / den
            d = abs(new - L[i, j, k])
            if d > change:
                change = d
            L[i, j, k] = new
        p += step
    return change


def _solve_one(T, dom, zero_mask, sgn, sp, iters, tol):
    L = np.full(T.shape[:3], LENGTH_INIT)
    L[zero_mask] = 0.0
    n = len(dom)
    sweeps = 0
    for _ in range(int(iters)):
        c1 = _gs_sweep(L, dom, 0, n, 1, T, sgn, *sp)
        c2 = _gs_sweep(L, dom, n - 1, -1, -1, T, sgn, *sp)
        sweeps += 1
        if max(c1, c2) <= tol:
            break
    return L, sweeps


def solve_lengths(flow, labels=None, iters=200, tol=1e-10, which="both"):
    """Solve the two upwind transport equations by symmetric Gauss-Seidel.

    Each iteration is a forward then a backward raster sweep over the domain.
    Iteration stops after ``iters`` iterations or when no value changes by
    more than ``tol``. With ``which="outer"`` only L1 is solved and L0 is
    left at zero (G = L1), which is the usual approximation for voxels on
    the shape surface.
    """
    labels = flow.labels if labels is None else labels
    lab = labels.labels.data
    dom = np.argwhere(lab == Label.DOMAIN).astype(np.int64)
    T = np.ascontiguousarray(flow.T)
    sp = tuple(float(s) for s in labels.spacing)
    inner = (lab == Label.INTERIOR_BOUNDARY) | (lab == Label.OUTSIDE)
    outer = lab == Label.EXTERIOR_BOUNDARY
    if which not in ("both", "outer"):
        raise ValueError(f"unknown mode {which!r}")
    # L1 runs against T (upwind towards the sphere), L0 along T
    L1, s1 = _solve_one(T, dom, outer, -1.0, sp, iters, tol)
    if which == "both":
        L0, s0 = _solve_one(T, dom, inner, 1.0, sp, iters, tol)
    else:
        L0, s0 = np.zeros_like(L1), 0
    G = L0 + L1
    skipped = labels.domain & ~flow.valid
    if skipped.any():
        logger.warning("%d domain voxels without flow direction kept at initial length", skipped.sum())
    return GeodesicLengths(L0=L0, L1=L1, G=G, R=labels.radius, labels=labels,
                           sweeps=max(s0, s1), skipped=skipped)


def feature_map(lengths):
    """f = R / G on the domain."""
    dom = lengths.labels.domain
    G = lengths.G[dom]
    assert np.all(G > 0), "non-positive geodesic length in the domain"
    vals = np.full(lengths.G.shape, np.nan)
    vals[dom] = lengths.R / G
    return FeatureMap(values=vals, labels=lengths.labels)


# ---------------------------------------------------------------------------
# sampling on vertices


class _Sampler:
    """Trilinear interpolation restricted to valid voxels, with nearest-valid fallback."""

    def __init__(self, values, valid, grid):
        self.values = np.where(valid[..., None] if values.ndim == 4 else valid, values, 0.0)
        self.valid = valid
        self.grid = grid
        _, self.nearest = ndimage.distance_transform_edt(~valid, return_indices=True)

    def __call__(self, pts):
        idx = self.grid.world_to_index(np.atleast_2d(pts))
        dims = np.asarray(self.grid.dims)
        if np.any(idx < 0) or np.any(idx > dims - 1):
            raise ValueError("vertex outside grid bounds")
        base = np.minimum(np.floor(idx).astype(int), dims - 2)
        fr = idx - base
        vec = self.values.ndim == 4
        acc = np.zeros((len(idx), 3)) if vec else np.zeros(len(idx))
        wsum = np.zeros(len(idx))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = ((fr[:, 0] if dx else 1 - fr[:, 0])
                         * (fr[:, 1] if dy else 1 - fr[:, 1])
                         * (fr[:, 2] if dz else 1 - fr[:, 2]))
                    c = (base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz)
                    w = w * self.valid[c]
                    acc += (w[:, None] * self.values[c]) if vec else w * self.values[c]
                    wsum += w
        ok = wsum > 1e-12
        out = np.empty_like(acc)
        out[ok] = acc[ok] / (wsum[ok, None] if vec else wsum[ok])
        if np.any(~ok):
            r = np.rint(idx[~ok]).astype(int)
            r = np.clip(r, 0, dims - 1)
            ni = self.nearest[:, r[:, 0], r[:, 1], r[:, 2]]
            out[~ok] = self.values[ni[0], ni[1], ni[2]]
        return out


def sample_on_vertices(fmap, mesh_or_points):
    """Trilinear interpolation of the feature at vertex positions (mm)."""
    pts = getattr(mesh_or_points, "vertices", mesh_or_points)
    valid = np.isfinite(fmap.values)
    s = _Sampler(np.nan_to_num(fmap.values), valid, fmap.labels.labels)
    return s(np.asarray(pts, float))


def flow_to_sphere(flow, mesh_or_points, labels=None, step=0.5, max_steps=None):
    """Carry points down the flow (towards the sphere) and project them radially
    onto the unit sphere centred at the shape centroid.

    Explicit Euler with a step of ``step`` voxels; a point stops once it
    leaves the domain into the sphere exterior.
    """
    labels = flow.labels if labels is None else labels
    grid = labels.labels
    pts = np.array(getattr(mesh_or_points, "vertices", mesh_or_points), dtype=float)
    c = np.asarray(labels.centroid, float)
    h = step * min(grid.spacing)
    if max_steps is None:
        max_steps = int(np.ceil(10 * labels.radius / h))
    sampler = _Sampler(flow.T, flow.valid, grid)
    outer = labels.s_out
    dims = np.asarray(grid.dims)

    def arrived(p):
        r = np.clip(np.rint(grid.world_to_index(p)).astype(int), 0, dims - 1)
        return outer[r[:, 0], r[:, 1], r[:, 2]] | (np.linalg.norm(p - c, axis=1) > labels.radius)

    active = ~arrived(pts)
    steps = 0
    while active.any():
        if steps >= max_steps:
            raise RuntimeError("flow did not terminate")
        d = sampler(pts[active])
        nrm = np.linalg.norm(d, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        pts[active] -= h * d / nrm
        active[active] = ~arrived(pts[active])
        steps += 1
    v = pts - c
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def geodesic_feature(mask, radius_factor=0.8, iters=200, tol=None, init="zero", erosion_passes=1,
                     length_iters=None, which="both"):
    """Full pipeline mask -> (labels, harmonic field, flow, lengths, feature map)."""
    from .harmonic import solve_laplace
    from .volgrid import make_boundaries

    labels = make_boundaries(mask, radius_factor=radius_factor, erosion_passes=erosion_passes)
    hf = solve_laplace(labels, max_iter=iters, tol=tol, init=init)
    flow = flow_field(hf)
    lengths = solve_lengths(flow, labels, iters=length_iters or iters, which=which)
    return labels, hf, flow, lengths, feature_map(lengths)
