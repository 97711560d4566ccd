"""Per-vertex temporal descriptors over a tracked mesh sequence."""

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriMesh, mean_curvature, quad_to_tri

logger = logging.getLogger(__name__)

DESCRIPTORS = ("elongation", "distortion", "curvature", "geodesic_feature")


@dataclass
class FeatureSeries:
    """Per-vertex descriptor values, one row per frame.

    Parameters
    ----------
    name : str
        One of ``elongation``, ``distortion``, ``curvature``, ``geodesic_feature``.
    values : ndarray, shape (n_frames, n_vertices)
        Finite descriptor values.
    reference : int
        Row used as the reference state (default 0).
    """

    name: str
    values: np.ndarray
    reference: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DESCRIPTORS:
            raise ValueError(f"unknown descriptor {self.name!r}")
        self.values = np.atleast_2d(np.asarray(self.values, float))
        if not np.all(np.isfinite(self.values)):
            raise ValueError("descriptor values must be finite")
        if not 0 <= self.reference < len(self.values):
            raise ValueError("reference row out of range")

    @property
    def n_frames(self):
        return self.values.shape[0]

    def save(self, csv_path, json_path=None):
        from .io import write_json, write_matrix_csv

        write_matrix_csv(csv_path, self.values, row_label="frame", col_prefix="v")
        if json_path is not None:
            write_json(json_path, {"name": self.name, "reference": self.reference,
                                   "units": _UNITS[self.name], "n_frames": self.n_frames,
                                   "n_vertices": int(self.values.shape[1]), **self.meta})

    @classmethod
    def load(cls, csv_path, json_path):
        from .io import read_json, read_matrix_csv

        meta = read_json(json_path)
        name = meta.pop("name")
        ref = meta.pop("reference")
        for k in ("units", "n_frames", "n_vertices"):
            meta.pop(k, None)
        return cls(name, read_matrix_csv(csv_path), ref, meta)


_UNITS = {"elongation": "mm", "distortion": "rad", "curvature": "1/mm", "geodesic_feature": "1"}


def _frame_mesh(seq, t):
    return seq.mesh(t)


def mean_neighbor_distance(mesh):
    """d_hat: mean length of the edges incident to each vertex."""
    e = mesh.edges()
    ln = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    tot = np.bincount(e.ravel(), weights=np.repeat(ln, 2), minlength=mesh.n_vertices)
    cnt = np.bincount(e.ravel(), minlength=mesh.n_vertices)
    with np.errstate(invalid="ignore", divide="ignore"):
        return tot / cnt


def max_dihedral(mesh):
    """theta: maximal angle between normals over all pairs of faces at each vertex."""
    n = mesh.face_normals()
    theta = np.zeros(mesh.n_vertices)
    for v, fs in enumerate(mesh.vertex_faces()):
        if len(fs) < 2:
            continue
        nf = n[fs]
        c = np.clip(nf @ nf.T, -1.0, 1.0)
        theta[v] = np.arccos(c.min())
    return theta


def elongation(seq, t, negate=False):
    """E(t) = (d_hat(t) - d_hat(t+1)) / (2 d_hat(t+1)) per vertex.

    With the formula as written expansion gives E < 0; ``negate`` flips the sign.
    """
    d0 = mean_neighbor_distance(_frame_mesh(seq, t))
    d1 = mean_neighbor_distance(_frame_mesh(seq, t + 1))
    if np.any(~(d1 > 0)):
        raise ValueError("zero mean neighbour distance (degenerate mesh)")
    e = (d0 - d1) / (2.0 * d1)
    return -e if negate else e


def distortion(seq, t):
    """D(t) = |theta(t+1) - theta(t)| per vertex (radians)."""
    return np.abs(max_dihedral(_frame_mesh(seq, t + 1)) - max_dihedral(_frame_mesh(seq, t)))


def _tri(mesh):
    return mesh if isinstance(mesh, TriMesh) else quad_to_tri(mesh)


def elongation_series(seq):
    """Per-frame d_hat maps; their change against the reference is the elongation."""
    return FeatureSeries("elongation", [mean_neighbor_distance(_frame_mesh(seq, t)) for t in range(seq.n_frames)],
                         meta={"row": "mean_neighbor_distance"})


def distortion_series(seq):
    """Per-frame theta maps; their change against the reference is the distortion."""
    return FeatureSeries("distortion", [max_dihedral(_frame_mesh(seq, t)) for t in range(seq.n_frames)],
                         meta={"row": "max_dihedral_angle"})


def curvature_series(seq):
    return FeatureSeries("curvature", [mean_curvature(_tri(_frame_mesh(seq, t))) for t in range(seq.n_frames)])


def geodesic_feature_series(seq, masks=None, like=None, radius_factor=0.8, iters=200, tol=None,
                            init="zero", length_iters=None):
    """Geodesic feature of every frame sampled on the tracked vertices.

    Masks come from ``masks`` when given, otherwise from voxelising each
    tracked mesh on the lattice of ``like``. Frames with byte-identical masks
    share one computation.
    """
    from .geodesic import geodesic_feature, sample_on_vertices
    from .volgrid import voxelize

    if masks is None and like is None:
        raise ValueError("either masks or a reference lattice is required")
    rows = []
    cache = {}
    for t in range(seq.n_frames):
        mesh = _frame_mesh(seq, t)
        if masks is not None:
            mask = masks[t]
        else:
            mask = voxelize(mesh, like)
            if not mask.data.any():
                raise ValueError(f"voxelisation failed at frame {t}")
        key = hashlib.sha1(np.ascontiguousarray(mask.data, dtype=np.uint8).tobytes()).hexdigest() + repr(
            (mask.spacing, mask.origin))
        if key not in cache:
            *_, fmap = geodesic_feature(mask, radius_factor=radius_factor, iters=iters, tol=tol, init=init,
                                        length_iters=length_iters)
            cache[key] = fmap
        rows.append(sample_on_vertices(cache[key], mesh.vertices))
    return FeatureSeries("geodesic_feature", rows, meta={"radius_factor": radius_factor, "iters": iters})


def all_series(seq, masks=None, like=None, **feature_kw):
    return {
        "elongation": elongation_series(seq),
        "distortion": distortion_series(seq),
        "curvature": curvature_series(seq),
        "geodesic_feature": geodesic_feature_series(seq, masks=masks, like=like, **feature_kw),
    }
