import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ofcsim.pdg import (Box, DimensionError, Diverged, PdgGains, SaddleProblem, SaddleState,
                        integrate_pdg, kkt_residual, lyapunov_value, pdg_rhs, pdg_rhs_flat,
                        project_box, projection_inequality, squared_distance,
                        squared_distance_gradient)
from ofcsim.oracle import run_pdg
from ofcsim.suites import random_qp, saddle_point

finite = st.floats(-1e3, 1e3, allow_nan=False)


def box_qp():
    """min (x - 2)^2 over [0, 1]; optimum x = 1."""
    return SaddleProblem.qp([[2.0]], [-4.0], lo=[0.0], hi=[1.0], c0=4.0)


def test_project_clamp():
    assert project_box([3.5], Box([0.0], [3.0]))[0] == 3.0


def test_project_interior_fixed():
    b = Box([0.0, -1.0], [3.0, 1.0])
    x = np.array([1.0, 0.5])
    assert np.array_equal(project_box(x, b), x)


def test_box_rejects_inverted():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])


@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3))
def test_projection_nonexpansive_and_idempotent(x, y):
    b = Box([-1.0, 0.0, -np.inf], [1.0, 5.0, 2.0])
    x, y = np.array(x), np.array(y)
    px, py = project_box(x, b), project_box(y, b)
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9
    assert np.array_equal(project_box(px, b), px)
    assert b.contains(px)


@given(st.lists(finite, min_size=2, max_size=2),
       st.lists(st.floats(0.0, 1.0), min_size=2, max_size=2))
def test_variational_inequality(y, p01):
    b = Box([-1.0, 2.0], [1.0, 3.0])
    p = b.lo + np.array(p01) * (b.hi - b.lo)
    assert projection_inequality(np.array(y), p, b) <= 1e-9


def test_squared_distance_gradient_examples():
    b = Box([0.0], [3.0])
    assert squared_distance_gradient([1.5], b)[0] == 0.0
    assert squared_distance_gradient([4.0], b)[0] == 1.0
    assert squared_distance([4.0], b) == 0.5


@settings(max_examples=50)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_squared_distance_gradient_fd(x):
    b = Box([-1.0, 0.0, -2.0], [1.0, 2.0, -1.0])
    x = np.array(x)
    h = 1e-6
    fd = np.array([(squared_distance(x + h * e, b) - squared_distance(x - h * e, b)) / (2 * h)
                   for e in np.eye(3)])
    assert np.allclose(fd, squared_distance_gradient(x, b), atol=1e-6)


def test_rhs_hand_arithmetic():
    prob = box_qp()
    for eps in (1.0, 3.0):
        g = PdgGains(eps_x=eps, alpha_x=0.1)
        z = pdg_rhs(SaddleState(np.array([0.5])), prob, g)
        assert z.x[0] == pytest.approx(eps * 0.3)


def test_rhs_zero_at_kkt_point():
    prob = box_qp()
    assert pdg_rhs(SaddleState(np.array([1.0])), prob, PdgGains.uniform(2.0, 0.3)).x[0] == 0.0


def _textbook_rhs(prob, z, eps, alpha):
    """Term by term: x, then lam, then sig, with explicit clamps."""
    Q, q, A, b, G, h = prob.Q, prob.q, prob.A, prob.b, prob.G, prob.h
    n, l = prob.n, prob.l
    x, lam, sig = z[:n], z[n:n + l], z[n + l:]
    out = np.zeros_like(z)
    for i in range(n):
        gi = (Q[i] @ x + q[i]) + sum(A[j, i] * lam[j] for j in range(l)) \
            + sum(G[j, i] * sig[j] for j in range(G.shape[0]))
        y = x[i] - alpha * gi
        y = min(max(y, prob.box.lo[i]), prob.box.hi[i])
        out[i] = eps * (y - x[i])
    for j in range(l):
        out[n + j] = eps * alpha * (A[j] @ x - b[j])
    for j in range(G.shape[0]):
        y = max(0.0, sig[j] + alpha * (G[j] @ x - h[j]))
        out[n + l + j] = eps * (y - sig[j])
    return out


def test_rhs_matches_textbook_evaluation():
    rng = np.random.default_rng(11)
    for _ in range(10):
        prob = random_qp(rng, n=3, l=1, m=1)
        z = np.concatenate([rng.normal(size=3), rng.normal(size=1), rng.uniform(0, 1, 1)])
        z[:3] = prob.box.project(z[:3])
        got = pdg_rhs_flat(z, prob, PdgGains.uniform(1.7, 0.3))
        assert np.allclose(got, _textbook_rhs(prob, z, 1.7, 0.3), atol=1e-13)


def test_saddle_point_constant_trajectory():
    rng = np.random.default_rng(3)
    prob = random_qp(rng, n=3, l=1, m=2)
    zs = saddle_point(prob)
    tr = integrate_pdg(prob, zs, PdgGains.uniform(1.0, 0.3), 1e-2, 1.0)
    assert np.max(np.abs(tr.z - zs)) <= 1e-9


def test_equality_constrained_converges():
    prob = SaddleProblem.qp([[2.0]], [0.0], A=[[1.0]], b=[1.0])
    tr = integrate_pdg(prob, np.zeros(2), PdgGains.uniform(1.0, 1.0), 1e-2, 60.0)
    x, lam, _ = prob.split(tr.z[-1])
    assert x[0] == pytest.approx(1.0, abs=1e-6)
    assert lam[0] == pytest.approx(-2.0, abs=1e-6)


def test_inequality_constrained_converges():
    # min (x - 2)^2 s.t. x <= 1 over [0, 3]
    prob = SaddleProblem.qp([[2.0]], [-4.0], G=[[1.0]], h=[1.0], lo=[0.0], hi=[3.0], c0=4.0)
    tr = integrate_pdg(prob, np.zeros(2), PdgGains.uniform(1.0, 0.5), 1e-2, 80.0)
    x, _, sig = prob.split(tr.z[-1])
    grid = np.linspace(0, 1, 100001)
    assert x[0] == pytest.approx(grid[np.argmin((grid - 2) ** 2)], abs=1e-6)
    # stationarity 2 (x - 2) + sig = 0
    assert sig[0] == pytest.approx(2.0, abs=1e-6)


def test_trajectory_stays_in_z():
    rng = np.random.default_rng(8)
    prob = random_qp(rng, n=4, l=1, m=2)
    tr = integrate_pdg(prob, np.zeros(prob.size), PdgGains.uniform(1.0, 0.5), 1e-2, 10.0)
    assert all(prob.zbox.contains(z) for z in tr.z)
    assert tr.t[-1] == pytest.approx(10.0) and tr.t.size == 1001


def test_record_every():
    prob = box_qp()
    tr = integrate_pdg(prob, np.zeros(1), PdgGains.uniform(), 0.1, 1.0, record_every=3)
    assert tr.t.tolist() == pytest.approx([0.0, 0.3, 0.6, 0.9, 1.0])


def test_diverged_and_dimension_errors():
    prob = SaddleProblem.qp([[-1.0]], [0.0])           # concave: grows without bound
    with pytest.raises(Diverged):
        integrate_pdg(prob, np.array([1.0]), PdgGains.uniform(1.0, 1.0), 0.1, 100.0, bound=1e6)
    with pytest.raises(DimensionError):
        pdg_rhs_flat(np.zeros(3), box_qp(), PdgGains.uniform())
    with pytest.raises(ValueError):
        integrate_pdg(box_qp(), np.array([5.0]), PdgGains.uniform(), 0.1, 1.0)


def test_lyapunov_zero_at_saddle():
    prob = box_qp()
    assert lyapunov_value(np.array([1.0]), np.array([1.0]), prob, PdgGains.uniform()) == 0.0


@given(st.floats(0.0, 1.0), st.floats(0.01, 1.0))
def test_lyapunov_lower_bound_box_qp(x, alpha):
    prob = box_qp()
    v = lyapunov_value(np.array([x]), np.array([1.0]), prob, PdgGains.uniform(1.0, alpha))
    assert v >= 0.5 * (x - 1.0) ** 2 - 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_lyapunov_nonincreasing_random_qp(seed):
    rng = np.random.default_rng(seed)
    prob = random_qp(rng)
    zs = saddle_point(prob)
    g = PdgGains.uniform(1.0, 0.3)
    z0 = prob.zbox.project(rng.normal(size=prob.size))
    tr = integrate_pdg(prob, z0, g, 5e-3, 3.0)
    V = lyapunov_value(tr.z, zs, prob, g)
    assert np.max(np.diff(V)) <= 1e-9
    low = 0.5 * np.sum((tr.z - zs) ** 2, axis=1)
    assert np.all(V >= low - 1e-12)


def test_kkt_residual_examples():
    prob = box_qp()
    assert kkt_residual(np.array([1.0]), prob).max <= 1e-12
    assert kkt_residual(np.array([0.5]), prob).stationarity > 0
    # inequality example: residual at the analytic saddle point
    p2 = SaddleProblem.qp([[2.0]], [-4.0], G=[[1.0]], h=[1.0], lo=[0.0], hi=[3.0])
    r = kkt_residual(np.array([1.0, 2.0]), p2)
    assert r.max <= 1e-12 and r.ok(1e-12)
    r = kkt_residual(np.array([1.5, 0.0]), p2)
    assert r.primal_ineq == pytest.approx(0.5)


def test_kkt_at_converged_random_qps():
    rng = np.random.default_rng(0)
    for _ in range(5):
        prob = random_qp(rng)
        z, _ = run_pdg(prob, PdgGains.uniform(1.0, 0.5), max_steps=20_000, tol=1e-9)
        assert kkt_residual(z, prob).max <= 1e-6
