import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from surfmotion.mesh import make_quad_ellipsoid
from surfmotion.simulate import (PolyaffineModel, _frame_schedule, breathing_model, dice, exp_points,
                                 fuse_transform, make_cycle, organ_phantom, sag_model, single_region_model,
                                 slab_regions)
from surfmotion.volgrid import ellipsoid_mask


@pytest.fixture(scope="module")
def organ():
    return ellipsoid_mask((14, 11, 10), margin=8)


def inside_points(mask):
    return mask.index_to_world(np.argwhere(mask.foreground()))


def test_identity_scalings(organ):
    m = PolyaffineModel(slab_regions(organ), np.ones((4, 3)))
    assert np.abs(fuse_transform(m, 0.7).u).max() == 0.0


def test_single_region_exact_scaling(organ):
    c = np.array([1.0, -2.0, 0.5])
    m = single_region_model(organ, [1.1, 1.1, 1.1], anchor=c)
    d = fuse_transform(m, 1.0)
    x = inside_points(organ)
    assert np.abs(d.apply(x) - (c + 1.1 * (x - c))).max() < 1e-4


def test_reciprocal_regions_preserve_volume(organ):
    lab = slab_regions(organ, n=2, axis=0)
    m = PolyaffineModel(lab, [[1.1, 1.0, 1.0], [1 / 1.1, 1.0, 1.0]])
    back = fuse_transform(m, -1.0)
    warped = back.warp_volume(organ.data.astype(float))
    assert abs(warped.sum() / organ.data.sum() - 1) < 0.01


def test_dense_and_pointwise_routes_agree(organ):
    m = sag_model(organ, 0.3)
    x = inside_points(organ)[::7]
    d = np.linalg.norm(fuse_transform(m, 1.0).apply(x) - exp_points(m, x, 1.0), axis=1)
    # the gap is trilinear resampling of the composed fields, independent of squaring depth
    assert d.max() < 0.15 and d.mean() < 0.03


def test_group_property(organ):
    m = breathing_model(organ, 0.05)
    x = inside_points(organ)[::11]
    there = fuse_transform(m, 0.6).apply(x)
    back = fuse_transform(m, -0.6).apply(there)
    assert np.abs(back - x).max() < 0.01


def test_jacobian_positive(organ):
    assert fuse_transform(sag_model(organ, 0.3), 1.0).jacobian_determinant().min() > 0


def test_non_invertible_rejected(organ):
    with pytest.raises(ValueError, match="non-invertible"):
        PolyaffineModel(slab_regions(organ), [[1, 1, 1], [1, 1, 1], [1, 0, 1], [1, 1, 1]])
    with pytest.raises(ValueError, match="1..K"):
        PolyaffineModel(slab_regions(organ), np.ones((3, 3)))


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_velocity_linear_in_log_property(a, b):
    m = ellipsoid_mask((6, 5, 4))
    lab = slab_regions(m, n=2)
    x = np.random.default_rng(0).normal(size=(10, 3)) * 4
    va = PolyaffineModel(lab, np.exp([[a, 0, 0], [0, a, 0]])).velocity(x)
    vb = PolyaffineModel(lab, np.exp([[b, 0, 0], [0, b, 0]])).velocity(x)
    vab = PolyaffineModel(lab, np.exp([[a + b, 0, 0], [0, a + b, 0]])).velocity(x)
    np.testing.assert_allclose(va + vb, vab, atol=1e-12)


def test_weights_partition_of_unity(organ):
    m = sag_model(organ)
    w = m.weights(np.random.default_rng(0).normal(size=(50, 3)) * 30)
    np.testing.assert_allclose(w.sum(1), 1.0)
    assert np.all(w >= 0)


class TestSag:
    def test_inferior_centroid_moves_down(self, organ):
        m = sag_model(organ, 0.3)
        x = inside_points(organ)
        low = x[:, 2] < np.quantile(x[:, 2], 1 / 3)
        y = fuse_transform(m, 1.0).apply(x[low])
        assert x[low, 2].mean() - y[:, 2].mean() > 2.0

    def test_zero_amount_identity(self, organ):
        assert np.abs(fuse_transform(sag_model(organ), 0.0).u).max() == 0.0

    @given(st.floats(3, 12), st.floats(3, 12), st.floats(4, 12))
    def test_partition_property(self, a, b, c):
        mask = ellipsoid_mask((a, b, c))
        lab = slab_regions(mask).data
        fg = mask.foreground()
        assert set(np.unique(lab[fg])) == {1, 2, 3, 4}
        assert np.all(lab[~fg] == 0)

    def test_partition_too_small(self):
        with pytest.raises(ValueError, match="too small"):
            slab_regions(ellipsoid_mask((1, 1, 1)))


class TestCycle:
    def test_schedule_counts(self):
        assert len(_frame_schedule(26, 8, False)) == 416
        s = _frame_schedule(4, 2, True)
        assert len(s) == 17 and s[-1].amount == 1.0
        fwd = [f.amount for f in s if f.phase == "forward" and f.cycle == 0]
        assert np.all(np.diff(fwd) > 0)

    def test_cycle_closes(self, organ):
        m = breathing_model(organ, 0.05)
        mesh = make_quad_ellipsoid(14, 11, 10, subdiv=6)
        seq = make_cycle(m, organ, frames_per_half=3, n_cycles=1, mesh=mesh, close=True)
        assert seq.n_frames == 7
        assert dice(seq.masks[-1].data, seq.masks[0].data) > 0.995
        assert np.abs(seq.vertices[-1] - mesh.vertices).max() < 0.05
        assert seq.rest_indices() == [0]

    def test_volume_within_one_percent(self, organ):
        seq = make_cycle(breathing_model(organ, 0.05), organ, frames_per_half=3, n_cycles=1)
        v0 = seq.levels[0].data.sum()
        for lvl in seq.levels:
            assert abs(lvl.data.sum() / v0 - 1) < 0.01

    def test_cycles_repeat_frames(self, organ):
        seq = make_cycle(breathing_model(organ, 0.05), organ, frames_per_half=2, n_cycles=2)
        assert seq.rest_indices() == [0, 4]
        for i in range(4):
            assert np.array_equal(seq.masks[i].data, seq.masks[i + 4].data)

    def test_invalid_counts(self, organ):
        with pytest.raises(ValueError):
            make_cycle(breathing_model(organ), organ, frames_per_half=0)


def test_phantom_mesh_matches_mask():
    mask, mesh = organ_phantom(subdiv=6)
    idx = np.rint(mask.world_to_index(mesh.vertices * 0.97 + 0.03 * mesh.vertices.mean(0))).astype(int)
    assert mask.data[idx[:, 0], idx[:, 1], idx[:, 2]].mean() > 0.95
    assert mesh.is_closed_manifold()


def test_phantom_seeded():
    a = organ_phantom(subdiv=4, seed=3)[0].data
    b = organ_phantom(subdiv=4, seed=3)[0].data
    c = organ_phantom(subdiv=4, seed=4)[0].data
    assert np.array_equal(a, b) and not np.array_equal(a, c)
