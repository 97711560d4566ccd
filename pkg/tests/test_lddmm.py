import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from surfmotion.lddmm import (ControlPointSystem, control_grid, flow_points, flow_points_backward, hamiltonian,
                              jacobian_determinants, numerical_gradient, register, registration_loss, shoot,
                              track_sequence, tracking_error, velocity)
from surfmotion.mesh import make_icosphere, make_quad_sphere


def velocity_oracle(x, q, mu, w):
    d2 = ((x[:, None] - q[None]) ** 2).sum(-1)
    return np.exp(-d2 / w ** 2) @ mu


def hamilton_rhs(q, mu, w):
    """Hamilton's equations of H = 1/2 sum mu_i.mu_j K(q_i, q_j), written independently."""
    diff = q[:, None] - q[None]
    K = np.exp(-(diff ** 2).sum(-1) / w ** 2)
    dq = K @ mu
    dmu = (2 / w ** 2) * ((K * (mu @ mu.T))[..., None] * diff).sum(1)
    return dq, dmu


def random_system(seed, n=10, scale=1.0, w=8.0, steps=15):
    r = np.random.default_rng(seed)
    return ControlPointSystem(r.uniform(-12, 12, (n, 3)), scale * r.normal(size=(n, 3)), w, steps)


class TestVelocity:
    def test_zero_momenta(self):
        q = np.random.default_rng(1).normal(size=(5, 3))
        assert np.all(velocity(np.ones((4, 3)), q, np.zeros_like(q), 8.0) == 0)

    def test_kernel_one_at_control_point(self):
        q = np.array([[1.0, 2, 3]])
        mu = np.array([[0.3, -0.2, 0.5]])
        np.testing.assert_allclose(velocity(q, q, mu, 8.0), mu)

    def test_symmetric_cancellation(self):
        q = np.array([[-2.0, 0, 0], [2.0, 0, 0]])
        mu = np.array([[0, 1.0, 0], [0, -1.0, 0]])
        np.testing.assert_allclose(velocity(np.zeros((1, 3)), q, mu, 8.0), 0.0, atol=1e-15)

    @given(st.integers(0, 10000), st.floats(1.0, 20.0))
    def test_matches_dense_oracle_property(self, seed, w):
        r = np.random.default_rng(seed)
        q, mu, x = r.normal(size=(6, 3)) * 5, r.normal(size=(6, 3)), r.normal(size=(9, 3)) * 5
        np.testing.assert_allclose(velocity(x, q, mu, w), velocity_oracle(x, q, mu, w), atol=1e-12)

    def test_invalid_system(self):
        with pytest.raises(ValueError):
            ControlPointSystem(np.zeros((3, 3)), np.zeros((2, 3)))
        with pytest.raises(ValueError):
            ControlPointSystem(np.zeros((3, 3)), np.zeros((3, 3)), kernel_width=0)


class TestShooting:
    def test_zero_momenta_static(self):
        sys = ControlPointSystem(np.random.default_rng(0).normal(size=(4, 3)), np.zeros((4, 3)))
        f = shoot(sys)
        assert np.all(f.q == sys.q)
        x = np.random.default_rng(1).normal(size=(7, 3))
        np.testing.assert_array_equal(flow_points(f, x)[-1], x)

    def test_single_particle_straight_line(self):
        mu = np.array([[3.0, -1.0, 2.0]])
        f = shoot(ControlPointSystem(np.zeros((1, 3)), mu))
        assert np.linalg.norm(f.q[-1] - f.q[0] - mu) < 1e-6
        np.testing.assert_allclose(f.mu[-1], mu)

    def test_two_point_energy_conservation(self):
        sys = ControlPointSystem([[0, 0, 0], [5.0, 0, 0]], [[0, 4.0, 0], [0, -2.0, 1.0]])
        H = shoot(sys).hamiltonians()
        assert 0.99 <= H[-1] / H[0] <= 1.01

    def test_matches_fine_integration(self):
        sys = random_system(3, n=5, scale=3.0)
        w = sys.kernel_width

        def rhs(t, y):
            q, mu = y[:15].reshape(5, 3), y[15:].reshape(5, 3)
            dq, dmu = hamilton_rhs(q, mu, w)
            return np.concatenate([dq.ravel(), dmu.ravel()])

        ref = solve_ivp(rhs, (0, 1), np.concatenate([sys.q.ravel(), sys.mu.ravel()]), rtol=1e-11, atol=1e-11)
        q1 = ref.y[:15, -1].reshape(5, 3)
        coarse = shoot(sys).q[-1]
        fine = shoot(ControlPointSystem(sys.q, sys.mu, w, 200)).q[-1]
        assert np.abs(coarse - q1).max() < 1e-2
        assert np.abs(fine - q1).max() < np.abs(coarse - q1).max() / 50  # second order

    def test_hamiltonian_value(self):
        sys = random_system(4, n=3)
        q, mu = sys.q, sys.mu
        ref = 0.5 * sum(mu[i] @ mu[j] * np.exp(-np.sum((q[i] - q[j]) ** 2) / 64) for i in range(3) for j in range(3))
        assert hamiltonian(q, mu, 8.0) == pytest.approx(ref)

    def test_divergence_detected(self):
        sys = ControlPointSystem([[0, 0, 0], [1e-3, 0, 0]], [[1e300, 0, 0], [-1e300, 0, 0]], 1.0, 2)
        with pytest.raises(FloatingPointError):
            shoot(sys)


class TestPointFlow:
    def test_far_points_do_not_move(self):
        sys = random_system(5)
        f = shoot(sys)
        x = np.array([[200.0, 0, 0], [0, -150.0, 0]])
        assert np.abs(flow_points(f, x)[-1] - x).max() < 1e-6 * np.abs(sys.mu).max()

    def test_control_point_follows_its_trajectory(self):
        f = shoot(random_system(6, scale=2.0))
        xs = flow_points(f, f.q[0])
        assert np.abs(xs - f.q).max() < 1e-8

    @given(st.integers(0, 1000))
    def test_diffeomorphic_property(self, seed):
        f = shoot(random_system(seed, n=6, scale=4.0))
        x = np.random.default_rng(seed).uniform(-15, 15, (20, 3))
        assert np.all(jacobian_determinants(f, x) > 0)
        back = flow_points_backward(f, flow_points(f, x)[-1])
        assert np.abs(back - x).max() < 0.05


class TestGradient:
    def test_adjoint_matches_finite_differences(self):
        r = np.random.default_rng(0)
        src = r.normal(size=(25, 3)) * 4
        tgt = src * 1.1 + 0.5
        q = control_grid(src, 8.0)
        mu = r.normal(size=q.shape) * 0.3
        _, _, g = registration_loss(mu, q, src, tgt, 8.0, 10, 1e-3)
        gn = numerical_gradient(mu, q, src, tgt, 8.0, 10, 1e-3)
        assert np.linalg.norm(g - gn) / np.linalg.norm(gn) < 1e-5

    def test_control_grid_covers_bbox(self):
        pts = np.random.default_rng(0).uniform(0, 20, (50, 3))
        g = control_grid(pts, 8.0)
        assert np.all(g.min(0) <= pts.min(0) + 1e-9) and np.all(g.max(0) >= pts.max(0) - 1e-9)
        spacing = np.diff(np.unique(g[:, 0]))
        np.testing.assert_allclose(spacing, 8.0)


class TestRegister:
    def test_identity(self):
        src = make_icosphere(2, radius=10).vertices
        res = register(src, src, max_iter=20)
        assert res.data_term < 1e-8
        assert np.abs(res.system.mu).max() == 0

    def test_translation(self):
        src = make_icosphere(2, radius=10).vertices
        tgt = src + [3.0, 0, 0]
        res = register(src, tgt, kernel_width=30.0, max_iter=150)
        moved = flow_points(shoot(res.system), src)[-1]
        assert np.linalg.norm(moved - tgt, axis=1).mean() < 0.3

    def test_sphere_to_ellipsoid(self):
        src = make_icosphere(3, radius=10).vertices
        tgt = src * [1.3, 1.0, 0.8]
        res = register(src, tgt, max_iter=100)
        moved = flow_points(shoot(res.system), src)[-1]
        assert tracking_error(moved, tgt) < 1.0
        assert res.loss_history[-1] < res.loss_history[0]

    def test_empty(self):
        with pytest.raises(ValueError):
            register(np.zeros((0, 3)), np.ones((3, 3)))


class TestTracking:
    def test_constant_sequence(self):
        m = make_quad_sphere(4, radius=10)
        seq = track_sequence(m.faces, m.vertices, [m.vertices] * 3, max_iter=10)
        assert seq.n_frames == 3
        np.testing.assert_allclose(seq.frames, np.stack([m.vertices] * 3), atol=1e-9)
        assert max(seq.residuals) < 1e-8

    def test_scaling_recovered(self):
        m = make_quad_sphere(6, radius=10)
        cloud = make_icosphere(4, radius=11).vertices
        seq = track_sequence(m.faces, m.vertices, [m.vertices, cloud], max_iter=150)
        ratio = np.linalg.norm(seq.frames[1], axis=1) / np.linalg.norm(seq.frames[0], axis=1)
        np.testing.assert_allclose(ratio, 1.1, atol=0.02)

    def test_failure_reports_frame(self):
        m = make_quad_sphere(2)
        with pytest.raises(RuntimeError, match="frame 1"):
            track_sequence(m.faces, m.vertices, [m.vertices, np.zeros((0, 3))])


class TestTrackingError:
    def test_subset_is_zero(self):
        c = np.random.default_rng(0).normal(size=(100, 3))
        assert tracking_error(c[:30], c) == 0.0

    def test_normal_offset(self):
        dense = make_icosphere(5, radius=10).vertices
        probe = make_icosphere(2, radius=10.5).vertices
        assert tracking_error(probe, dense) == pytest.approx(0.5, abs=0.05)
