"""Spatio-temporal surface motion analysis of deforming organs.

Modules
-------
volgrid      voxel lattices, boundary labelling, iso-surfaces
harmonic     Laplace solve between the inner and outer boundaries
geodesic     streamline lengths and the R/G shape feature
mesh         quad/triangle meshes, dihedral angles, curvature
lddmm        control-point diffeomorphic registration and tracking
descriptors  per-vertex temporal descriptors
simulate     log-Euclidean polyaffine motion sequences
analysis     correlation trajectories, distance matrices, spherical maps
"""

from .analysis import (CorrelationTrajectory, DistanceMatrix, SphericalMap, correlation_trajectory,
                       depth_distance_matrix, lbo_eigenfunctions, lbo_spherical_map, pattern_distance_matrix,
                       spherical_resample)
from .descriptors import FeatureSeries, curvature_series, distortion, elongation, geodesic_feature_series
from .estimators import GeodesicFeature, LBOSphericalMap, LDDMMRegistration
from .geodesic import feature_map, flow_field, geodesic_feature, sample_on_vertices, solve_lengths
from .harmonic import HarmonicField, solve_laplace
from .lddmm import (ControlPointSystem, GeodesicFlow, TrackedSequence, flow_points, register, shoot,
                    track_sequence, tracking_error, velocity)
from .mesh import (QuadMesh, TriMesh, dihedral_angle, make_icosphere, make_quad_ellipsoid, make_quad_sphere,
                   make_quad_torus, mean_curvature, quad_to_tri)
from .simulate import PolyaffineModel, fuse_transform, make_cycle, organ_phantom, sag_model
from .volgrid import BoundaryLabels, Label, VoxelGrid, make_boundaries, marching_cubes, voxelize

__version__ = "0.1.0"
