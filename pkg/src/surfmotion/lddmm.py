"""Control-point LDDMM: geodesic shooting, point transport and point-set registration.

The velocity field is a Gaussian-kernel sum of momenta carried by control
points, ``v(x, t) = sum_i K(x, q_i(t)) mu_i(t)`` with
``K(x, y) = exp(-|x - y|^2 / sigma^2)``. Control points and momenta follow
Hamilton's equations for ``H = 1/2 mu^T K(q, q) mu``; both systems are
integrated on [0, 1] with Heun's second-order Runge-Kutta scheme.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)


@dataclass
class ControlPointSystem:
    q: np.ndarray
    mu: np.ndarray
    kernel_width: float = 8.0
    time_steps: int = 15

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        if self.q.shape != self.mu.shape or self.q.shape[1] != 3 or len(self.q) < 1:
            raise ValueError("q and mu must both have shape (N, 3) with N >= 1")
        if self.kernel_width <= 0:
            raise ValueError("kernel_width must be positive")
        if int(self.time_steps) < 1:
            raise ValueError("time_steps must be >= 1")
        self.time_steps = int(self.time_steps)

    def hamiltonian(self):
        return hamiltonian(self.q, self.mu, self.kernel_width)


@dataclass
class GeodesicFlow:
    """Control-point trajectory with the Heun predictor states of every step."""

    q: np.ndarray  # (T+1, N, 3)
    mu: np.ndarray  # (T+1, N, 3)
    q_pred: np.ndarray  # (T, N, 3)
    mu_pred: np.ndarray  # (T, N, 3)
    kernel_width: float

    @property
    def n_steps(self):
        return len(self.q) - 1

    @property
    def dt(self):
        return 1.0 / self.n_steps

    def hamiltonians(self):
        return np.array([hamiltonian(q, m, self.kernel_width) for q, m in zip(self.q, self.mu)])

    def velocity(self, x, step):
        return velocity(x, self.q[step], self.mu[step], self.kernel_width)


def kernel(x, y, width):
    d2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / width ** 2)


@numba.njit(cache=True)
def _velocity(x, q, mu, s):
    out = np.zeros_like(x)
    for p in range(x.shape[0]):
        for j in range(q.shape[0]):
            d0 = x[p, 0] - q[j, 0]
            d1 = x[p, 1] - q[j, 1]
            d2 = x[p, 2] - q[j, 2]
            k = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) * s)
            out[p, 0] += k * mu[j, 0]
            out[p, 1] += k * mu[j, 1]
            out[p, 2] += k * mu[j, 2]
    return out


def velocity(x, q, mu, width):
    """Velocity of the kernel field at points ``x`` (shape (n, 3))."""
    x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, float)))
    return _velocity(x, np.ascontiguousarray(q), np.ascontiguousarray(mu), 1.0 / width ** 2)


def hamiltonian(q, mu, width):
    return 0.5 * float(np.sum((kernel(q, q, width) @ mu) * mu))


@numba.njit(cache=True)
def _rhs_kernel(q, mu, s):
    n = q.shape[0]
    dq = np.zeros_like(q)
    dmu = np.zeros_like(q)
    for i in range(n):
        for j in range(n):
            d0 = q[i, 0] - q[j, 0]
            d1 = q[i, 1] - q[j, 1]
            d2 = q[i, 2] - q[j, 2]
            k = np.exp(-(d0 * d0 + d1 * d1 + d2 * d2) * s)
            dq[i, 0] += k * mu[j, 0]
            dq[i, 1] += k * mu[j, 1]
            dq[i, 2] += k * mu[j, 2]
            c = 2.0 * s * k * (mu[i, 0] * mu[j, 0] + mu[i, 1] * mu[j, 1] + mu[i, 2] * mu[j, 2])
            dmu[i, 0] += c * d0
            dmu[i, 1] += c * d1
            dmu[i, 2] += c * d2
    return dq, dmu


def _rhs(q, mu, width):
    return _rhs_kernel(np.ascontiguousarray(q), np.ascontiguousarray(mu), 1.0 / width ** 2)


def shoot(sys):
    """Integrate Hamilton's equations from (q, mu) over [0, 1]."""
    T = sys.time_steps
    dt = 1.0 / T
    w = sys.kernel_width
    q = np.empty((T + 1,) + sys.q.shape)
    mu = np.empty_like(q)
    qp = np.empty((T,) + sys.q.shape)
    mp = np.empty_like(qp)
    q[0], mu[0] = sys.q, sys.mu
    for n in range(T):
        dq1, dm1 = _rhs(q[n], mu[n], w)
        qp[n] = q[n] + dt * dq1
        mp[n] = mu[n] + dt * dm1
        dq2, dm2 = _rhs(qp[n], mp[n], w)
        q[n + 1] = q[n] + 0.5 * dt * (dq1 + dq2)
        mu[n + 1] = mu[n] + 0.5 * dt * (dm1 + dm2)
        if not (np.all(np.isfinite(q[n + 1])) and np.all(np.isfinite(mu[n + 1]))):
            raise FloatingPointError("integration diverged")
    return GeodesicFlow(q=q, mu=mu, q_pred=qp, mu_pred=mp, kernel_width=w)


def flow_points(flow, x0):
    """Transport points through the time-dependent field; returns (T+1, n, 3)."""
    x0 = np.atleast_2d(np.asarray(x0, float))
    T = flow.n_steps
    dt = flow.dt
    w = flow.kernel_width
    xs = np.empty((T + 1,) + x0.shape)
    xs[0] = x0
    for n in range(T):
        v1 = velocity(xs[n], flow.q[n], flow.mu[n], w)
        xp = xs[n] + dt * v1
        v2 = velocity(xp, flow.q_pred[n], flow.mu_pred[n], w)
        xs[n + 1] = xs[n] + 0.5 * dt * (v1 + v2)
    if not np.all(np.isfinite(xs[-1])):
        raise FloatingPointError("integration diverged")
    return xs


def flow_points_backward(flow, x1):
    """Integrate the reversed-time field from t=1 to t=0 (approximate inverse map)."""
    x1 = np.atleast_2d(np.asarray(x1, float))
    T = flow.n_steps
    dt = flow.dt
    w = flow.kernel_width
    x = x1.copy()
    for n in range(T, 0, -1):
        v1 = velocity(x, flow.q[n], flow.mu[n], w)
        xp = x - dt * v1
        v2 = velocity(xp, flow.q[n - 1], flow.mu[n - 1], w)
        x = x - 0.5 * dt * (v1 + v2)
    return x


def jacobian_determinants(flow, x0, h=1e-4):
    """Finite-difference Jacobian determinant of the end-point map at ``x0``."""
    x0 = np.atleast_2d(np.asarray(x0, float))
    J = np.empty((len(x0), 3, 3))
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        J[:, :, a] = (flow_points(flow, x0 + e)[-1] - flow_points(flow, x0 - e)[-1]) / (2 * h)
    return np.linalg.det(J)


# ---------------------------------------------------------------------------
# adjoint


@numba.njit(cache=True)
def _rhs_vjp_kernel(q, mu, a, b, s):
    n = q.shape[0]
    q_bar = np.zeros_like(q)
    mu_bar = np.zeros_like(q)
    D = np.empty(3)
    db = np.empty(3)
    for k in range(n):
        for j in range(n):
            for c in range(3):
                D[c] = q[k, c] - q[j, c]
                db[c] = b[k, c] - b[j, c]
            K = np.exp(-(D[0] * D[0] + D[1] * D[1] + D[2] * D[2]) * s)
            M = mu[k, 0] * mu[j, 0] + mu[k, 1] * mu[j, 1] + mu[k, 2] * mu[j, 2]
            P = (a[k, 0] * mu[j, 0] + a[k, 1] * mu[j, 1] + a[k, 2] * mu[j, 2]
                 + a[j, 0] * mu[k, 0] + a[j, 1] * mu[k, 1] + a[j, 2] * mu[k, 2])
            gamma = db[0] * D[0] + db[1] * D[1] + db[2] * D[2]
            cq = -2.0 * s * K * P - 4.0 * s * s * M * K * gamma
            for c in range(3):
                mu_bar[k, c] += K * a[j, c] + 2.0 * s * K * gamma * mu[j, c]
                q_bar[k, c] += cq * D[c] + 2.0 * s * M * K * db[c]
    return q_bar, mu_bar


def _rhs_vjp(q, mu, a, b, width):
    """Cotangents (q_bar, mu_bar) of <a, dq> + <b, dmu> for the Hamiltonian field."""
    c = np.ascontiguousarray
    return _rhs_vjp_kernel(c(q), c(mu), c(a), c(b), 1.0 / width ** 2)


@numba.njit(cache=True)
def _vel_vjp_kernel(x, q, mu, cot, s):
    x_bar = np.zeros_like(x)
    q_bar = np.zeros_like(q)
    mu_bar = np.zeros_like(q)
    D = np.empty(3)
    for p in range(x.shape[0]):
        for j in range(q.shape[0]):
            for c in range(3):
                D[c] = x[p, c] - q[j, c]
            K = np.exp(-(D[0] * D[0] + D[1] * D[1] + D[2] * D[2]) * s)
            cp = K * (cot[p, 0] * mu[j, 0] + cot[p, 1] * mu[j, 1] + cot[p, 2] * mu[j, 2])
            for c in range(3):
                g = 2.0 * s * cp * D[c]
                x_bar[p, c] -= g
                q_bar[j, c] += g
                mu_bar[j, c] += K * cot[p, c]
    return x_bar, q_bar, mu_bar


def _vel_vjp(x, q, mu, c, width):
    """Cotangents (x_bar, q_bar, mu_bar) of <c, v(x; q, mu)>."""
    a = np.ascontiguousarray
    return _vel_vjp_kernel(a(x), a(q), a(mu), a(c), 1.0 / width ** 2)


def endpoint_vjp(flow, xs, x_bar_final):
    """Gradient of <x_bar_final, x(1)> with respect to the initial momenta and points."""
    T = flow.n_steps
    dt = flow.dt
    w = flow.kernel_width
    xb = x_bar_final.copy()
    qb = np.zeros_like(flow.q[0])
    mb = np.zeros_like(flow.mu[0])
    for n in range(T - 1, -1, -1):
        q, mu, x = flow.q[n], flow.mu[n], xs[n]
        dq1, dm1 = _rhs(q, mu, w)
        v1 = velocity(x, q, mu, w)
        xp = x + dt * v1
        qp, mp = flow.q_pred[n], flow.mu_pred[n]
        # cotangent on the predictor state from the corrector term
        hx, hq, hm = 0.5 * dt * xb, 0.5 * dt * qb, 0.5 * dt * mb
        px, pq_v, pm_v = _vel_vjp(xp, qp, mp, hx, w)
        pq_h, pm_h = _rhs_vjp(qp, mp, hq, hm, w)
        wx, wq, wm = px, pq_v + pq_h, pm_v + pm_h
        # predictor cotangent flows back through the explicit Euler step
        gx = 0.5 * dt * xb + dt * wx
        gq = 0.5 * dt * qb + dt * wq
        gm = 0.5 * dt * mb + dt * wm
        ex, eq_v, em_v = _vel_vjp(x, q, mu, gx, w)
        eq_h, em_h = _rhs_vjp(q, mu, gq, gm, w)
        xb = xb + wx + ex
        qb = qb + wq + eq_v + eq_h
        mb = mb + wm + em_v + em_h
    return mb, qb, xb


# ---------------------------------------------------------------------------
# registration


def closest_point_mse(y, target, tree=None):
    """Symmetrised mean squared closest-point distance and its gradient in ``y``."""
    tree = cKDTree(target) if tree is None else tree
    d1, i1 = tree.query(y)
    d2, i2 = cKDTree(y).query(target)
    loss = float(np.mean(d1 ** 2) + np.mean(d2 ** 2))
    grad = 2.0 * (y - target[i1]) / len(y)
    np.add.at(grad, i2, 2.0 * (y[i2] - target) / len(target))
    return loss, grad


def control_grid(points, spacing):
    """Regular grid of control points covering the bounding box of ``points``."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    n = np.maximum(np.ceil((hi - lo) / spacing).astype(int) + 1, 1)
    start = (lo + hi) / 2.0 - (n - 1) * spacing / 2.0
    axes = [start[a] + spacing * np.arange(n[a]) for a in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


@dataclass
class RegistrationResult:
    system: ControlPointSystem
    loss_history: list = field(default_factory=list)
    data_term: float = float("nan")
    converged: bool = False


def registration_loss(mu, q, source, target, kernel_width, time_steps, regularization,
                      tree=None, with_grad=True):
    sys = ControlPointSystem(q, mu.reshape(q.shape), kernel_width, time_steps)
    flow = shoot(sys)
    xs = flow_points(flow, source)
    data, g_y = closest_point_mse(xs[-1], target, tree)
    K0 = kernel(q, q, kernel_width)
    reg = float(np.sum((K0 @ sys.mu) * sys.mu))
    loss = data + regularization * reg
    if not with_grad:
        return loss, data
    mb, _, _ = endpoint_vjp(flow, xs, g_y)
    grad = mb + 2.0 * regularization * (K0 @ sys.mu)
    return loss, data, grad


def numerical_gradient(mu, q, source, target, kernel_width, time_steps, regularization, h=1e-6):
    """Central finite differences of the registration loss (reference mode)."""
    mu = np.asarray(mu, float).reshape(q.shape)
    tree = cKDTree(target)
    g = np.zeros_like(mu)
    for idx in np.ndindex(mu.shape):
        e = np.zeros_like(mu)
        e[idx] = h
        fp, _ = registration_loss(mu + e, q, source, target, kernel_width, time_steps,
                                  regularization, tree, with_grad=False)
        fm, _ = registration_loss(mu - e, q, source, target, kernel_width, time_steps,
                                  regularization, tree, with_grad=False)
        g[idx] = (fp - fm) / (2 * h)
    return g


def register(source, target, kernel_width=8.0, time_steps=15, regularization=1e-8,
             max_iter=100, tol=1e-7, control_points=None, mu0=None, initial_step=None,
             patience=20):
    """Match ``source`` onto ``target`` by gradient descent on the initial momenta.

    Minimises the symmetrised closest-point MSE between the transported
    source and the target plus ``regularization * mu^T K mu``. Control
    points stay fixed at their initial positions (a grid with kernel-width
    spacing over the source bounding box unless given).
    """
    source = np.atleast_2d(np.asarray(source, float))
    target = np.atleast_2d(np.asarray(target, float))
    if len(source) == 0 or len(target) == 0:
        raise ValueError("empty point set")
    q = control_grid(source, kernel_width) if control_points is None else np.asarray(control_points, float)
    mu = np.zeros_like(q) if mu0 is None else np.asarray(mu0, float).reshape(q.shape).copy()
    tree = cKDTree(target)
    args = (q, source, target, kernel_width, time_steps, regularization, tree)

    loss, data, grad = registration_loss(mu, *args)
    history = [loss]
    gnorm = np.linalg.norm(grad)
    if initial_step is None:
        # a step moving points by about a tenth of the mean residual
        step = 0.1 * np.sqrt(max(data, 1e-30)) / max(gnorm, 1e-30)
    else:
        step = initial_step
    fails = 0
    converged = False
    for it in range(int(max_iter)):
        if gnorm == 0 or loss <= 1e-16:
            converged = True
            break
        trial = mu - step * grad
        t_loss, t_data, t_grad = registration_loss(trial, *args)
        if not np.isfinite(t_loss):
            if step < 1e-300:
                raise FloatingPointError("registration diverged")
            step *= 0.5
            fails += 1
            continue
        if t_loss < loss:
            rel = (loss - t_loss) / max(loss, 1e-300)
            mu, loss, data, grad = trial, t_loss, t_data, t_grad
            gnorm = np.linalg.norm(grad)
            history.append(loss)
            step *= 1.5
            fails = 0
            if rel < tol:
                converged = True
                break
        else:
            step *= 0.5
            fails += 1
            if fails >= patience:
                warnings.warn("loss did not decrease for %d consecutive trials; stopping" % patience,
                              RuntimeWarning)
                break
    system = ControlPointSystem(q, mu, kernel_width, time_steps)
    return RegistrationResult(system=system, loss_history=history, data_term=data, converged=converged)


# ---------------------------------------------------------------------------
# sequences


@dataclass
class TrackedSequence:
    faces: np.ndarray
    frames: np.ndarray  # (L+1, n, 3)
    residuals: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return len(self.frames)

    def mesh(self, t):
        from .mesh import QuadMesh, TriMesh

        cls = QuadMesh if self.faces.shape[1] == 4 else TriMesh
        return cls(self.frames[t], self.faces)


def track_sequence(faces, vertices0, clouds, kernel_width=8.0, time_steps=15, regularization=1e-8,
                   max_iter=100, tol=1e-7, progress=None):
    """Chain registrations M_t -> C_{t+1} and carry the vertices along.

    ``clouds[0]`` is the cloud of the first frame (kept for bookkeeping);
    the faces never change.
    """
    faces = np.asarray(faces)
    frames = [np.asarray(vertices0, float)]
    residuals = [0.0]
    for t in range(len(clouds) - 1):
        try:
            res = register(frames[-1], clouds[t + 1], kernel_width=kernel_width, time_steps=time_steps,
                           regularization=regularization, max_iter=max_iter, tol=tol)
            nxt = flow_points(shoot(res.system), frames[-1])[-1]
        except (FloatingPointError, ValueError) as exc:
            raise RuntimeError(f"registration failed at frame {t + 1}: {exc}") from exc
        frames.append(nxt)
        residuals.append(res.data_term)
        if progress is not None:
            progress(t + 1, res)
    return TrackedSequence(faces=faces, frames=np.stack(frames), residuals=residuals,
                           meta={"kernel_width": kernel_width, "time_steps": time_steps,
                                 "regularization": regularization})


def tracking_error(tracked, cloud):
    """Mean distance from tracked vertices to their closest point in ``cloud`` (mm)."""
    d, _ = cKDTree(np.asarray(cloud, float)).query(np.asarray(tracked, float))
    return float(np.mean(d))
