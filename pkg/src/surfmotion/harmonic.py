"""Harmonic interpolation between the two boundaries by Jacobi relaxation."""

import logging
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .volgrid import BoundaryLabels, Label

logger = logging.getLogger(__name__)

H_INNER = 1e4
H_OUTER = 0.0


@dataclass
class HarmonicField:
    grid: object  # VoxelGrid of h
    labels: BoundaryLabels
    iterations_run: int
    final_ratio: float
    energy_history: list = field(default_factory=list)

    @property
    def h(self):
        return self.grid.data


@numba.njit(cache=True)
def _jacobi_sweeps(h, buf, dom, wx, wy, wz, n):
    den = 2.0 * (wx + wy + wz)
    for _ in range(n):
        for p in range(dom.shape[0]):
            i, j, k = dom[p, 0], dom[p, 1], dom[p, 2]
            buf[p] = (wx * (h[i + 1, j, k] + h[i - 1, j, k])
                      + wy * (h[i, j + 1, k] + h[i, j - 1, k])
                      + wz * (h[i, j, k + 1] + h[i, j, k - 1])) / den
        for p in range(dom.shape[0]):
            h[dom[p, 0], dom[p, 1], dom[p, 2]] = buf[p]


@numba.njit(cache=True)
def _gradient_sum(h, dom, sx, sy, sz):
    tot = 0.0
    for p in range(dom.shape[0]):
        i, j, k = dom[p, 0], dom[p, 1], dom[p, 2]
        gx = (h[i + 1, j, k] - h[i - 1, j, k]) / (2.0 * sx)
        gy = (h[i, j + 1, k] - h[i, j - 1, k]) / (2.0 * sy)
        gz = (h[i, j, k + 1] - h[i, j, k - 1]) / (2.0 * sz)
        tot += np.sqrt(gx * gx + gy * gy + gz * gz)
    return tot


def field_energy(h, labels):
    """Sum over the domain of the central-difference gradient magnitude.

    This is the quantity whose relative decrease drives the stopping rule.
    """
    dom = np.argwhere(labels.domain)
    sx, sy, sz = labels.spacing
    return float(_gradient_sum(np.ascontiguousarray(h, dtype=float), dom, sx, sy, sz))


def dirichlet_energy(h, labels):
    """Discrete Dirichlet energy: half the sum of squared differences over lattice
    edges with at least one domain endpoint, weighted by face area over length."""
    dom = labels.domain
    sp = labels.spacing
    e = 0.0
    for ax in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[ax] = slice(1, None)
        b[ax] = slice(None, -1)
        d = h[tuple(a)] - h[tuple(b)]
        active = dom[tuple(a)] | dom[tuple(b)]
        area = np.prod([sp[i] for i in range(3) if i != ax])
        e += 0.5 * area / sp[ax] * float(np.sum(d[active] ** 2))
    return e


def initial_field(labels, init="zero"):
    """h with boundary values set; the domain starts at 0 or, with
    ``init="distance"``, at the distance-weighted blend of the two boundary values."""
    lab = labels.labels.data
    h = np.zeros(lab.shape, dtype=float)
    inner = (lab == Label.INTERIOR_BOUNDARY) | (lab == Label.OUTSIDE)
    h[inner] = H_INNER
    h[lab == Label.EXTERIOR_BOUNDARY] = H_OUTER
    if init == "distance":
        sp = labels.spacing
        d_in = ndimage.distance_transform_edt(~inner, sampling=sp)
        d_out = ndimage.distance_transform_edt(lab != Label.EXTERIOR_BOUNDARY, sampling=sp)
        dom = lab == Label.DOMAIN
        h[dom] = H_OUTER + (H_INNER - H_OUTER) * d_out[dom] / (d_in[dom] + d_out[dom])
    elif init != "zero":
        raise ValueError(f"unknown init {init!r}")
    return h


def solve_laplace(labels, max_iter=200, tol=None, check_every=10, init="zero", track_energy=False):
    """Jacobi relaxation of Laplace's equation on the domain.

    The inner boundary is held at 1e4 and the exterior of the sphere at 0.
    Without ``tol`` exactly ``max_iter`` sweeps are run. With ``tol``, every
    ``check_every`` sweeps the relative change of :func:`field_energy`
    across one sweep is compared to ``tol`` and relaxation stops once it
    falls below (or once the energy is exactly zero).
    """
    labels.validate()
    lab = labels.labels.data
    dom = np.argwhere(lab == Label.DOMAIN)
    # by construction the stencil never reads the eroded interior
    nb = ndimage.binary_dilation(lab == Label.DOMAIN, ndimage.generate_binary_structure(3, 1))
    assert not np.any(nb & (lab == Label.OUTSIDE)), "domain touches the eroded interior"

    h = initial_field(labels, init)
    sx, sy, sz = labels.spacing
    wx, wy, wz = (sy * sz) ** 2, (sx * sz) ** 2, (sx * sy) ** 2
    buf = np.empty(len(dom))
    history = [dirichlet_energy(h, labels)] if track_energy else []
    ratio = float("nan")
    it = 0
    check_every = max(1, int(check_every))
    while it < max_iter:
        if tol is not None and it % check_every == 0:
            eps_t = _gradient_sum(h, dom, sx, sy, sz)
            _jacobi_sweeps(h, buf, dom, wx, wy, wz, 1)
            it += 1
            if track_energy:
                history.append(dirichlet_energy(h, labels))
            eps_next = _gradient_sum(h, dom, sx, sy, sz)
            if eps_t == 0.0:
                ratio = 0.0
                break
            ratio = (eps_t - eps_next) / eps_t
            if abs(ratio) < tol:
                break
            continue
        n = 1 if track_energy else min(max_iter - it, check_every - it % check_every if tol is not None else max_iter - it)
        _jacobi_sweeps(h, buf, dom, wx, wy, wz, n)
        it += n
        if track_energy:
            history.append(dirichlet_energy(h, labels))
    logger.debug("laplace: %d sweeps, ratio %.3g", it, ratio)
    return HarmonicField(labels.labels.with_data(h), labels, it, ratio, history)
