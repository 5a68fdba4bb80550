"""Property suites on randomised problems, shared by ``verify`` and the tests.

Each suite returns a list of :class:`Check` records; a suite passes when
every check does.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Bus, Line, NetworkModel
from .oracle import enumerate_qp, polish, run_pdg, stable_dt, verify_lemma1
from .pdg import (Box, PdgGains, SaddleProblem, integrate_pdg, kkt_residual, lyapunov_value,
                  pdg_rhs_flat, projection_inequality, squared_distance,
                  squared_distance_gradient)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    tol: float

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.3e} (tol {self.tol:.1e})"


def _unit_rows(M):
    return M / np.linalg.norm(M, axis=1, keepdims=True)


def random_qp(rng, n=None, l=None, m=None):
    """Random strongly convex QP with equality, inequality and box constraints.

    Hessian eigenvalues lie in [0.5, 2] and constraint rows have unit
    norm. A strictly interior point ``x0`` is built in first, so
    Slater's condition holds.
    """
    n = int(rng.integers(2, 6)) if n is None else n
    l = int(rng.integers(1, max(2, n - 1))) if l is None else l
    m = int(rng.integers(1, 4)) if m is None else m
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    Q = U @ np.diag(rng.uniform(0.5, 2.0, n)) @ U.T
    q = rng.standard_normal(n)
    lo = -rng.uniform(0.5, 2.0, n)
    hi = rng.uniform(0.5, 2.0, n)
    x0 = rng.uniform(0.5 * lo, 0.5 * hi)
    A = _unit_rows(rng.standard_normal((l, n)))
    b = A @ x0
    G = _unit_rows(rng.standard_normal((m, n)))
    h = G @ x0 + rng.uniform(0.05, 0.5, m)
    return SaddleProblem.qp(Q, q, A=A, b=b, G=G, h=h, lo=lo, hi=hi)


def qp_battery(seed=0, count=20):
    rng = np.random.default_rng(seed)
    return [random_qp(rng) for _ in range(count)]


def saddle_point(prob):
    """Certified saddle point of a small QP: PDG, polish, enumeration fallback."""
    z, _ = run_pdg(prob, PdgGains.uniform(1.0, 0.5), max_steps=40_000, tol=1e-12)
    zc = polish(prob, z)
    if kkt_residual(zc, prob).ok(1e-10):
        return zc
    x, _ = enumerate_qp(prob)
    if x is None:
        raise ValueError("infeasible problem")
    z = np.concatenate([x, np.zeros(prob.l + prob.m)])
    z, _ = run_pdg(prob, PdgGains.uniform(1.0, 0.5), max_steps=40_000, tol=1e-12, z0=z)
    return polish(prob, z)


def kkt_point(rng, n=4, l=1, m=2):
    """QP built around a prescribed KKT point (some box and inequality faces active)."""
    M = rng.standard_normal((n, n))
    Q = M @ M.T / n + 0.2 * np.eye(n)
    lo, hi = -np.ones(n), np.ones(n)
    x = rng.uniform(-0.8, 0.8, n)
    face = rng.integers(0, 3, n)                     # 0 interior, 1 at lo, 2 at hi
    x[face == 1] = -1.0
    x[face == 2] = 1.0
    A = rng.standard_normal((l, n))
    b = A @ x
    G = rng.standard_normal((m, n))
    act = rng.random(m) < 0.5
    h = G @ x + np.where(act, 0.0, rng.uniform(0.1, 0.5, m))
    sig = np.where(act, rng.uniform(0.1, 1.0, m), 0.0)
    lam = rng.standard_normal(l)
    nu = np.where(face == 1, rng.uniform(0.1, 1.0, n),
                  np.where(face == 2, -rng.uniform(0.1, 1.0, n), 0.0))
    q = -(Q @ x + A.T @ lam + G.T @ sig) + nu
    prob = SaddleProblem.qp(Q, q, A=A, b=b, G=G, h=h, lo=lo, hi=hi)
    return prob, np.concatenate([x, lam, sig])


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------
def suite_pdg(seed=0, count=20, alpha=0.5):
    """Forward invariance, Lyapunov monotonicity and lower bound, convergence.

    Each problem is integrated with the RK4-stable step ``dt`` of
    :func:`ofcsim.oracle.stable_dt` up to ``T = 1000 dt / min(eps)``.
    """
    checks = []
    gains = PdgGains.uniform(1.0, alpha)
    worst_inc, worst_lb, worst_conv, worst_kkt, worst_inv = -np.inf, -np.inf, 0.0, 0.0, 0.0
    for prob in qp_battery(seed, count):
        zs = saddle_point(prob)
        dt = stable_dt(prob, gains)
        T = 1e3 * dt / 1.0
        tr = integrate_pdg(prob, prob.zbox.project(np.zeros(prob.size)), gains, dt, T)
        zb = prob.zbox
        worst_inv = max(worst_inv, float(np.max(np.maximum(zb.lo - tr.z, 0.0))),
                        float(np.max(np.maximum(tr.z - zb.hi, 0.0))))
        V = lyapunov_value(tr.z, zs, prob, gains)
        worst_inc = max(worst_inc, float(np.max(np.diff(V))))
        e = tr.z - zs
        worst_lb = max(worst_lb, float(np.max(0.5 * np.sum(e * e, axis=1) - V)))
        half = tr.z[len(tr.t) // 2]
        worst_conv = max(worst_conv, float(np.linalg.norm(tr.z[-1] - half)))
        worst_kkt = max(worst_kkt, kkt_residual(tr.z[-1], prob).max)
    checks.append(Check("forward invariance (distance outside Z)", worst_inv == 0.0, worst_inv, 0.0))
    checks.append(Check("Lyapunov per-step increase", worst_inc <= 1e-9, worst_inc, 1e-9))
    checks.append(Check("Lyapunov lower bound 0.5|z-z*|^2 - V", worst_lb <= 1e-12, worst_lb, 1e-12))
    checks.append(Check("convergence |z(T)-z(T/2)|", worst_conv <= 1e-4, worst_conv, 1e-4))
    checks.append(Check("endpoint KKT residual", worst_kkt <= 1e-6, worst_kkt, 1e-6))
    return checks


def suite_kkt(seed=1, count=20):
    """Equilibria of the projected flow coincide with KKT points."""
    rng = np.random.default_rng(seed)
    worst_rhs, worst_res, mismatch = 0.0, 0.0, 0
    for _ in range(count):
        for alpha in (0.01, 0.05, 0.2):
            prob, z = kkt_point(rng)
            g = PdgGains.uniform(1.0, alpha)
            worst_rhs = max(worst_rhs, float(np.max(np.abs(pdg_rhs_flat(z, prob, g)))))
            worst_res = max(worst_res, kkt_residual(z, prob).max)
            # a perturbed feasible-dual point is neither
            zp = prob.zbox.project(z + 0.1 * rng.standard_normal(z.size))
            eq = np.max(np.abs(pdg_rhs_flat(zp, prob, g))) <= 1e-10
            kk = kkt_residual(zp, prob).ok(1e-8)
            mismatch += int(eq != kk)
    out = [Check("constructed KKT points: |pdg_rhs|_inf", worst_rhs <= 1e-10, worst_rhs, 1e-10),
           Check("constructed KKT points: KKT residual", worst_res <= 1e-12, worst_res, 1e-12),
           Check("equilibrium <=> KKT mismatches on perturbed points", mismatch == 0,
                 float(mismatch), 0.0)]
    worst = 0.0
    for prob in qp_battery(seed + 100, count):
        zs = saddle_point(prob)
        worst = max(worst, kkt_residual(zs, prob).max)
    out.append(Check("certified saddle points of random QPs", worst <= 1e-8, worst, 1e-8))
    return out


def suite_projection(seed=2, samples=10_000, fd_points=1_000):
    """Variational inequality of the projection and the squared-distance gradient."""
    rng = np.random.default_rng(seed)
    n = 5
    worst_vi = -np.inf
    worst_fd = 0.0
    worst_ne = -np.inf
    for _ in range(samples):
        lo = rng.uniform(-2, 0, n)
        box = Box(lo, lo + rng.uniform(0, 3, n))
        y = rng.uniform(-5, 5, n)
        p = rng.uniform(box.lo, box.hi)
        worst_vi = max(worst_vi, projection_inequality(y, p, box))
        a, b = rng.uniform(-5, 5, (2, n))
        worst_ne = max(worst_ne, float(np.linalg.norm(box.project(a) - box.project(b))
                                       - np.linalg.norm(a - b)))
    hstep = 1e-6
    for _ in range(fd_points):
        lo = rng.uniform(-2, 0, n)
        box = Box(lo, lo + rng.uniform(0, 3, n))
        x = rng.uniform(-5, 5, n)
        g = squared_distance_gradient(x, box)
        fd = np.array([(squared_distance(x + hstep * e, box) - squared_distance(x - hstep * e, box))
                       / (2 * hstep) for e in np.eye(n)])
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - g))))
    return [Check("projection variational inequality max", worst_vi <= 1e-12, worst_vi, 1e-12),
            Check("projection non-expansive (excess)", worst_ne <= 1e-12, worst_ne, 1e-12),
            Check("squared-distance gradient vs central differences", worst_fd <= 1e-6,
                  worst_fd, 1e-6)]


def random_network(rng, n=3, kinds=None, limit=None):
    """Random connected ``n``-bus ring (plus chords) with one optional line bound."""
    kinds = kinds or [("GFM", "GFL", "SG")[int(rng.integers(0, 3))] for _ in range(n)]
    buses = []
    for i, kind in enumerate(kinds, start=1):
        buses.append(Bus(id=i, kind=kind, k=float(rng.uniform(0.5, 2.0)),
                         beta=float(rng.uniform(5, 15)) if kind == "GFM" else 0.0,
                         inertia=float(rng.uniform(0.05, 0.5)) if kind == "SG" else 0.0,
                         box=(-float(rng.uniform(0.3, 1.5)), float(rng.uniform(0.3, 1.5))),
                         cost=float(rng.uniform(0.5, 2.0)), initial_power=0.0, passive=False))
    lines = [Line(i, i + 1, float(rng.uniform(1, 10)), (-np.inf, np.inf)) for i in range(1, n)]
    if n > 2:
        lines.append(Line(1, n, float(rng.uniform(1, 10)), (-np.inf, np.inf)))
    net = NetworkModel(tuple(buses), tuple(lines), 1, 1.0, 60.0)
    if limit is not None:
        a, b = lines[0].key
        net = net.with_flow_box(a, b, (-limit, limit))
    return net


def suite_lemma1(seed=3, count=10):
    """At the modified problem's optimum the frequencies vanish and costs agree."""
    rng = np.random.default_rng(seed)
    worst_w, worst_gap, fails = 0.0, 0.0, 0
    cases = []
    for _ in range(count):
        net = random_network(rng, 3)
        d = rng.uniform(-0.4, 0.4, net.n)
        cases.append((net, d))
    net = random_network(rng, 3)
    cases.append((net, np.zeros(net.n)))
    # binding line limit
    net = random_network(np.random.default_rng(seed + 7), 3, ["GFM", "GFL", "GFL"], limit=0.05)
    cases.append((net, np.array([0.0, 0.6, 0.3])))
    for net, d in cases:
        rep = verify_lemma1(net, d)
        worst_w = max(worst_w, rep.omega_inf)
        worst_gap = max(worst_gap, abs(rep.cost_gap) / (1 + abs(rep.cost_ofc)))
        fails += int(not rep.passed)
    return [Check("|omega*|_inf at modified optimum", worst_w <= 1e-8, worst_w, 1e-8),
            Check("relative cost gap modified vs original", worst_gap <= 1e-8, worst_gap, 1e-8),
            Check("failing instances", fails == 0, float(fails), 0.0)]


SUITES = {"pdg": suite_pdg, "kkt": suite_kkt, "lemma1": suite_lemma1,
          "projection": suite_projection}
