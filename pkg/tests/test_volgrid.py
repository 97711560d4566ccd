import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from surfmotion.volgrid import (Label, VoxelGrid, ball_mask, box_mask, ellipsoid_mask, erode_cross,
                                make_boundaries, marching_cubes, shape_pca, torus_mask, voxelize)


def brute_erosion(m):
    """Voxel survives iff it and its six face neighbours are foreground (outside = background)."""
    p = np.pad(m, 1)
    out = p[1:-1, 1:-1, 1:-1].copy()
    for ax in range(3):
        for sh in (-1, 1):
            out &= np.roll(p, sh, axis=ax)[1:-1, 1:-1, 1:-1]
    return out


class TestErosion:
    def test_cube_erodes_to_center(self):
        m = np.zeros((5, 5, 5), np.uint8)
        m[1:4, 1:4, 1:4] = 1
        out = erode_cross(m).data
        assert out.sum() == 1 and out[2, 2, 2] == 1

    def test_single_voxel_raises(self):
        m = np.zeros((3, 3, 3), np.uint8)
        m[1, 1, 1] = 1
        with pytest.raises(ValueError, match="too thin"):
            erode_cross(m)

    def test_ball_matches_brute_force(self, ball10):
        m = ball10.data.astype(bool)
        out = erode_cross(ball10).data.astype(bool)
        np.testing.assert_array_equal(out, brute_erosion(m))
        # radius shrinks by one voxel along the axes
        c = np.array(m.shape) // 2
        assert out[c[0] + 9, c[1], c[2]] and not out[c[0] + 10, c[1], c[2]]

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="empty"):
            erode_cross(np.zeros((4, 4, 4), np.uint8))

    @given(st.integers(0, 2**31 - 1))
    def test_erosion_is_subset_property(self, seed):
        r = np.random.default_rng(seed)
        m = r.random((8, 8, 8)) < 0.8
        m[2:6, 2:6, 2:6] = True
        out = erode_cross(m.astype(np.uint8)).data.astype(bool)
        assert not np.any(out & ~m)
        np.testing.assert_array_equal(out, brute_erosion(m))


class TestShapePCA:
    def test_box_axes(self):
        p = shape_pca(box_mask((40, 20, 10)))
        assert abs(p.axes[0] @ [1, 0, 0]) > 0.999
        np.testing.assert_allclose(p.axis_lengths, [40, 20, 10], atol=1.0)

    def test_box_rotated_about_z(self):
        R = Rotation.from_euler("z", 90, degrees=True).as_matrix()
        p = shape_pca(box_mask((40, 20, 10), rotation=R.T))
        assert abs(p.axes[0] @ [0, 1, 0]) > 0.999

    def test_ellipsoid_extents(self):
        p = shape_pca(ellipsoid_mask((30, 15, 10)))
        np.testing.assert_allclose(p.axis_lengths, [60, 30, 20], atol=2.0)

    def test_too_few_voxels(self):
        m = np.zeros((4, 4, 4), np.uint8)
        m[0, 0, :3] = 1
        with pytest.raises(ValueError):
            shape_pca(m)


class TestBoundaries:
    def test_ball_radius(self, ball10):
        lab = make_boundaries(ball10)
        assert lab.pca.principal_length == pytest.approx(20.0)
        assert lab.radius == pytest.approx(16.0)
        d = np.linalg.norm(lab.labels.world_coords() - lab.centroid, axis=-1)
        np.testing.assert_array_equal(lab.s_out, d > 16.0)

    def test_sphere_must_contain_mask(self):
        with pytest.raises(ValueError, match="radius_factor too small"):
            make_boundaries(ball_mask(25.0), radius_factor=0.4)

    def test_ellipsoid_labels(self):
        lab = make_boundaries(ellipsoid_mask((30, 15, 10)))
        surf = lab.mask_surface()
        assert np.all(lab.labels.data[surf] == Label.DOMAIN)
        assert not np.any(lab.s_in & lab.s_out)
        lab.validate()

    def test_padding_keeps_world_positions(self, ball10):
        lab = make_boundaries(ball10)
        assert any(lab.pad)
        np.testing.assert_allclose(lab.centroid, 0.0, atol=1e-9)
        assert lab.mask.data.sum() == ball10.data.sum()


class TestMarchingCubes:
    def test_ball_topology_and_area(self, ball10):
        from scipy import ndimage

        sm = ball10.with_data(ndimage.gaussian_filter(ball10.data.astype(float), 0.8))
        m = marching_cubes(sm, 0.5)
        assert m.is_closed_manifold()
        assert m.euler_characteristic() == 2
        assert m.area() == pytest.approx(4 * np.pi * 100, rel=0.05)

    def test_torus_genus(self):
        m = marching_cubes(torus_mask(12, 5), 0.5)
        assert m.euler_characteristic() == 0

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            marching_cubes(VoxelGrid(np.zeros((4, 4, 4))), 0.5)

    def test_voxelize_roundtrip(self, ball10):
        from scipy import ndimage

        m = marching_cubes(ball10.with_data(ndimage.gaussian_filter(ball10.data.astype(float), 0.8)))
        back = voxelize(m, ball10).data.astype(bool)
        ref = ball10.data.astype(bool)
        assert (back ^ ref).sum() / ref.sum() < 0.05
