"""The plant plus distributed controller written as one projected saddle flow.

With the frequency of every GFM/SG bus taken as the dual ``lam`` of its
power balance (quadratic dual curvature ``k``, step gain ``1/mass``) and
the line flows ``P`` as primal variables with step gain ``B``, the
closed loop (plant dynamics plus distributed controller, with the
``nu`` substitution undone) is the globally projected primal-dual flow
of the modified OFC problem

    x    = [P^r; psi; P]
    lam  = omega at GFM/SG buses     rows  P^r - E P - P^d - k lam = 0
    mu   = consensus dual            rows  P^r - L_B psi - P^d     = 0
    sig  = line duals                rows  +-B (psi_i - psi_j) <= bounds

GFL frequencies are algebraic; maximising the Lagrangian over their dual
leaves ``(P^r_i - (E P)_i - P^d_i)^2 / (2 k_i)`` in the cost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import CERT_TOL, solve_active_set, solve_ofc
from .pdg import PdgGains, SaddleProblem, kkt_residual, lyapunov_value


@dataclass(frozen=True)
class Layout:
    n: int
    m: int
    nd: int
    dyn: np.ndarray
    ineq_lines: np.ndarray     # line index of each inequality row
    ineq_sign: np.ndarray      # +1 upper bound row, -1 lower bound row

    @property
    def nx(self):
        return 2 * self.n + self.m

    def slices(self):
        n, m, nd = self.n, self.m, self.nd
        nx = self.nx
        return {"pr": slice(0, n), "psi": slice(n, 2 * n), "flow": slice(2 * n, nx),
                "lam": slice(nx, nx + nd), "mu": slice(nx + nd, nx + nd + n),
                "sig": slice(nx + nd + n, None)}


def closed_loop_problem(net, disturbance, gains):
    """Return ``(SaddleProblem, PdgGains, Layout)`` of the closed loop."""
    n, m = net.n, net.m
    d = np.asarray(disturbance, dtype=float)
    E, L, k = net.incidence, net.laplacian, net.k
    dyn = net.dynamic
    alg = np.flatnonzero(~dyn)
    nd = int(dyn.sum())
    nx = 2 * n + m
    # balance rows a_i(x) = P^r_i - (E P)_i
    Abal = np.zeros((n, nx))
    Abal[:, :n] = np.eye(n)
    Abal[:, 2 * n:] = -E
    Q = np.zeros((nx, nx))
    Q[:n, :n] = np.diag(2.0 * net.cost)
    q = np.zeros(nx)
    c0 = 0.0
    for i in alg:
        a = Abal[i]
        Q += np.outer(a, a) / k[i]
        q -= d[i] * a / k[i]
        c0 += d[i] ** 2 / (2.0 * k[i])
    Amu = np.zeros((n, nx))
    Amu[:, :n] = np.eye(n)
    Amu[:, n:2 * n] = -L
    A = np.vstack([Abal[dyn], Amu])
    b = np.concatenate([d[dyn], d])
    r = np.concatenate([k[dyn], np.zeros(n)])
    rows, lines, signs, h = [], [], [], []
    Bt = net.b[:, None] * E.T
    for e in range(m):
        for s, bound in ((1.0, net.flow_hi[e]), (-1.0, -net.flow_lo[e])):
            if np.isfinite(bound):
                row = np.zeros(nx)
                row[n:2 * n] = s * Bt[e]
                rows.append(row)
                h.append(bound)
                lines.append(e)
                signs.append(s)
    G = np.array(rows).reshape(-1, nx)
    lo = np.concatenate([net.lo, np.full(n + m, -np.inf)])
    hi = np.concatenate([net.hi, np.full(n + m, np.inf)])
    prob = SaddleProblem.qp(Q, q, A=A, b=b, G=G, h=np.array(h), lo=lo, hi=hi, r=r, c0=c0)
    eps_x = np.concatenate([np.full(n, gains.eps_pr), np.full(n, gains.eps_psi), net.b])
    alpha_x = np.concatenate([np.full(n, gains.alpha), np.ones(n + m)])
    eps_l = np.concatenate([1.0 / net.mass[dyn], np.full(n, gains.eps_mu)])
    pg = PdgGains(eps_x=eps_x, eps_lam=eps_l, eps_sig=gains.eps_sigma,
                  alpha_x=alpha_x, alpha_lam=1.0, alpha_sig=gains.alpha)
    lay = Layout(n, m, nd, dyn.copy(), np.array(lines, dtype=int), np.array(signs))
    return prob, pg, lay


def pack_closed_loop(lay, omega, flows, bank):
    """Saddle-flow state ``z`` of a plant state and a :class:`DistributedBank`."""
    mu = bank.mu(omega)
    sig = np.where(lay.ineq_sign > 0, bank.sp[lay.ineq_lines], bank.sm[lay.ineq_lines]) \
        if lay.ineq_lines.size else np.zeros(0)
    return np.concatenate([bank.pr, bank.psi, flows, omega[lay.dyn], mu, sig])


def unpack_closed_loop(lay, z):
    s = lay.slices()
    return {key: z[sl] for key, sl in s.items()}


def closed_loop_saddle_point(net, disturbance, gains, prob=None, lay=None):
    """Certified saddle point of the closed-loop problem, or ``None``.

    The active set is taken from the OFC oracle solution (with line
    limits) and the KKT system solved exactly. Saddle points are not
    unique: ``psi`` may shift by a constant and ``P`` by a loop flow in
    the null space of ``E``. The returned point is the one reachable
    from a zero start, with ``sum(psi) = 0`` (conserved by the flow) and
    ``P = B E' psi`` (physical flows stay in the range of ``B E'``).
    """
    if prob is None:
        prob, _, lay = closed_loop_problem(net, disturbance, gains)
    ref = solve_ofc(net, disturbance, True)
    if not ref.optimal:
        return None
    n = net.n
    at_lo = np.zeros(prob.n, bool)
    at_hi = np.zeros(prob.n, bool)
    at_lo[:n] = np.isclose(ref.setpoints, net.lo, atol=1e-9)
    at_hi[:n] = np.isclose(ref.setpoints, net.hi, atol=1e-9) & ~at_lo[:n]
    x0 = np.concatenate([ref.setpoints, ref.angles, np.zeros(net.m)])
    active = prob.gval(x0) > -1e-9
    z = solve_active_set(prob, at_lo, at_hi, active)
    sl = lay.slices()
    psi = z[sl["psi"]] - z[sl["psi"]].mean()
    z[sl["psi"]] = psi
    z[sl["flow"]] = net.b * (net.incidence.T @ psi)
    if not kkt_residual(z, prob).ok(CERT_TOL * (1.0 + np.abs(prob.b).max())):
        return None
    return z


def closed_loop_lyapunov(z, z_star, prob, pg):
    return lyapunov_value(z, z_star, prob, pg)


def closed_loop_run(net, disturbance, gains, dt, T, controller=None):
    """Plant RK4 plus agent Euler rounds under a constant disturbance.

    Returns ``(t, Z)`` with ``Z`` the packed saddle-flow states per step.
    ``controller`` defaults to the per-agent reference execution.
    """
    from .controllers import AgentNetwork
    from .plant import LinearPlant

    _, _, lay = closed_loop_problem(net, disturbance, gains)
    ctl = AgentNetwork(net, gains) if controller is None else controller
    lp = LinearPlant(net, dt)
    d = np.asarray(disturbance, dtype=float)
    N = int(round(T / dt))
    z = np.zeros(lp.nd + net.m)
    pr = np.zeros(net.n)
    out = np.empty((N + 1, lay.nx + lay.nd + net.n + lay.ineq_lines.size))
    for k in range(N + 1):
        omega = lp.omega(z, pr - d)
        flows = z[lp.nd:]
        out[k] = pack_closed_loop(lay, omega, flows, ctl)
        if k == N:
            break
        pr = np.array(ctl.step(omega, flows, dt))
        u = pr - d
        z = lp.step(z, u, u, u)
    return np.arange(N + 1) * dt, out
