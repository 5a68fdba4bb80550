"""Centralised reference solutions of the optimal frequency control problem.

The OFC problem is::

    min  sum_i C_i (P^r_i)^2
    s.t. P^r_i - P^d_i = sum_j B_ij (theta_i - theta_j)    every bus
         lo_i <= P^r_i <= hi_i
         Pmin_ij <= B_ij (theta_i - theta_j) <= Pmax_ij
         theta_ref = 0

Eliminating the angles with the PTDF matrix leaves a QP in the setpoints
with one balance row and one or two rows per bounded line. Two
independent routes solve it:

1. the primal-dual engine, integrated until the active set settles,
   followed by an exact KKT solve on that active set and certification
   with :func:`ofcsim.pdg.kkt_residual`;
2. exhaustive enumeration of box faces and inequality activity (only
   for at most ``ENUM_MAX_FREE`` controllable buses).

The two must agree to ``AGREE_TOL`` or :class:`OracleDiscord` is raised.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .pdg import PdgGains, SaddleProblem, SaddleState, kkt_residual, rk4_pdg_step, _Flat

ENUM_MAX_FREE = 12
AGREE_TOL = 1e-6
CERT_TOL = 1e-8


class Infeasible(ValueError):
    pass


class OracleDiscord(RuntimeError):
    pass


# --------------------------------------------------------------------------
# generic QP helpers
# --------------------------------------------------------------------------
def stable_dt(prob, gains):
    """RK4-stable step for a quadratic problem: ``1 / |eps alpha M|_2``."""
    n, l, m = prob.n, prob.l, prob.m
    M = np.zeros((prob.size, prob.size))
    M[:n, :n] = prob.Q
    M[:n, n:n + l] = prob.A.T
    M[:n, n + l:] = prob.G.T
    M[n:n + l, :n] = -prob.A
    M[n:n + l, n:n + l] = np.diag(prob.r)
    M[n + l:, :n] = -prob.G
    eps, alpha = gains.vectors(prob)
    rho = np.linalg.norm(eps[:, None] * alpha[:, None] * M, 2) + eps.max()
    return 1.0 / rho


def run_pdg(prob, gains=None, dt=None, max_steps=200_000, tol=1e-11, z0=None):
    """Integrate the projected dynamics until ``|z'|_inf <= tol``.

    ``dt`` defaults to :func:`stable_dt` (quadratic problems only).
    Returns ``(z, steps)``; ``steps == max_steps`` means no convergence.
    """
    gains = gains or PdgGains.uniform(1.0, 1.0)
    if dt is None:
        dt = stable_dt(prob, gains)
    f = _Flat(prob, gains)
    zbox = prob.zbox
    z = zbox.project(np.zeros(prob.size) if z0 is None else np.asarray(z0, float))
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(1, max_steps + 1):
            zn = rk4_pdg_step(f, zbox, z, dt)
            if not np.all(np.isfinite(zn)):
                break
            z = zn
            if s % 50 == 0 and np.max(np.abs(f(z)), initial=0.0) <= tol:
                return z, s
    return z, max_steps


def _kkt_system(prob, at_lo, at_hi, active):
    """Linear KKT system for one active set of a quadratic SaddleProblem."""
    n, l, m = prob.n, prob.l, prob.m
    N = n + l + m
    K = np.zeros((N, N))
    rhs = np.zeros(N)
    fixed = at_lo | at_hi
    K[:n, :n] = prob.Q
    K[:n, n:n + l] = prob.A.T
    K[:n, n + l:] = prob.G.T
    rhs[:n] = -prob.q
    K[np.flatnonzero(fixed), :] = 0.0
    idx = np.flatnonzero(fixed)
    K[idx, idx] = 1.0
    rhs[idx] = np.where(at_lo[idx], prob.box.lo[idx], prob.box.hi[idx])
    K[n:n + l, :n] = prob.A
    K[n:n + l, n:n + l] = -np.diag(prob.r)
    rhs[n:n + l] = prob.b
    for j in range(m):
        r = n + l + j
        if active[j]:
            K[r, :n] = prob.G[j]
            rhs[r] = prob.h[j]
        else:
            K[r, r] = 1.0
    return K, rhs


def polish(prob, z, act_tol=1e-6):
    """Exact KKT solve on the active set suggested by an approximate ``z``.

    Returns the polished state (projected into ``Z``).
    """
    x, lam, sig = prob.split(z)
    scale = 1.0 + np.abs(x)
    at_lo = np.isfinite(prob.box.lo) & (x - prob.box.lo <= act_tol * scale)
    at_hi = np.isfinite(prob.box.hi) & (prob.box.hi - x <= act_tol * scale) & ~at_lo
    gv = prob.gval(x)
    active = (sig > act_tol) | (gv > -act_tol)
    return solve_active_set(prob, at_lo, at_hi, active)


def solve_active_set(prob, at_lo, at_hi, active):
    K, rhs = _kkt_system(prob, at_lo, at_hi, active)
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    n, l = prob.n, prob.l
    x = np.clip(sol[:n], prob.box.lo, prob.box.hi)
    sig = np.maximum(sol[n + l:], 0.0)
    return np.concatenate([x, sol[n:n + l], sig])


def _batched_solve(K, rhs):
    """LU for well-conditioned systems, pseudo-inverse for the rest."""
    sign, logdet = np.linalg.slogdet(K)
    scale = np.log(np.maximum(np.abs(K).max(axis=(1, 2)), 1e-300)) * K.shape[1]
    good = (sign != 0) & (logdet - scale > -30.0)
    sol = np.empty_like(rhs)
    if good.any():
        sol[good] = np.linalg.solve(K[good], rhs[good][..., None])[..., 0]
    bad = ~good
    if bad.any():
        sol[bad] = np.einsum("bij,bj->bi", np.linalg.pinv(K[bad], rcond=1e-12), rhs[bad])
    return sol


def enumerate_qp(prob, tol=1e-9, chunk=20_000):
    """Global minimiser of a small convex QP by active-set enumeration.

    Every combination of per-coordinate state {free, at lo, at hi} and
    inequality activity is solved as an equality-constrained KKT system;
    the primal-feasible candidate of least cost wins. Coordinates with
    ``lo == hi`` are always fixed.

    Returns ``(x, cost)`` or ``(None, inf)`` when no candidate is feasible.
    """
    n, l, m = prob.n, prob.l, prob.m
    lo, hi = prob.box.lo, prob.box.hi
    choices = []
    for i in range(n):
        if lo[i] == hi[i]:
            choices.append((1,))
        else:
            c = [0]
            if np.isfinite(lo[i]):
                c.append(1)
            if np.isfinite(hi[i]):
                c.append(2)
            choices.append(tuple(c))
    combos = list(itertools.product(*choices, *([(0, 1)] * m)))
    if len(combos) > 5_000_000:
        raise ValueError("problem too large for enumeration")
    S = np.array(combos, dtype=np.int8).reshape(len(combos), n + m)
    N = n + l + m
    best_x, best_c = None, np.inf
    base = np.zeros((N, N))
    base[:n, :n] = prob.Q
    base[:n, n:n + l] = prob.A.T
    base[:n, n + l:] = prob.G.T
    base[n:n + l, :n] = prob.A
    base[n:n + l, n:n + l] = -np.diag(prob.r)
    brhs = np.zeros(N)
    brhs[:n] = -prob.q
    brhs[n:n + l] = prob.b
    for s0 in range(0, len(S), chunk):
        st = S[s0:s0 + chunk]
        B = st.shape[0]
        K = np.broadcast_to(base, (B, N, N)).copy()
        rhs = np.broadcast_to(brhs, (B, N)).copy()
        for i in range(n):
            fx = st[:, i] > 0
            if not fx.any():
                continue
            K[fx, i, :] = 0.0
            K[fx, i, i] = 1.0
            rhs[fx, i] = np.where(st[fx, i] == 1, lo[i], hi[i])
        for j in range(m):
            r = n + l + j
            act = st[:, n + j] == 1
            K[act, r, :n] = prob.G[j]
            K[act, r, n:] = 0.0
            rhs[act, r] = prob.h[j]
            ina = ~act
            K[ina, r, :] = 0.0
            K[ina, r, r] = 1.0
            rhs[ina, r] = 0.0
        sol = _batched_solve(K, rhs)
        res = np.max(np.abs(np.einsum("bij,bj->bi", K, sol) - rhs), axis=1)
        x = sol[:, :n]
        ok = res <= 1e-8 * (1.0 + np.max(np.abs(rhs), axis=1))
        ok &= np.all(x >= lo - tol, axis=1) & np.all(x <= hi + tol, axis=1)
        if l:
            ok &= np.max(np.abs(x @ prob.A.T - prob.b), axis=1) <= 1e-8 * (1 + np.abs(prob.b).max())
        if m:
            ok &= np.all(x @ prob.G.T - prob.h <= tol * (1 + np.abs(prob.h)), axis=1)
        if not ok.any():
            continue
        xs = np.clip(x[ok], lo, hi)
        cost = 0.5 * np.einsum("bi,ij,bj->b", xs, prob.Q, xs) + xs @ prob.q + prob.c0
        k = int(np.argmin(cost))
        if cost[k] < best_c - 1e-14:
            best_x, best_c = xs[k], float(cost[k])
    return best_x, best_c


# --------------------------------------------------------------------------
# OFC problem
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class OfcSolution:
    setpoints: np.ndarray
    angles: np.ndarray
    flows: np.ndarray
    cost: float
    status: str
    kkt: object = None
    duals: np.ndarray = None       # balance multiplier and line multipliers
    enumerated: bool = False

    @property
    def optimal(self):
        return self.status == "optimal"


def ptdf(net):
    """Return ``(H, X)``: flows ``= H (p - P^d)``, angles ``= X (p - P^d)``."""
    n = net.n
    r = net.index_of[net.reference_bus]
    keep = np.array([i for i in range(n) if i != r], dtype=int)
    L = net.laplacian
    X = np.zeros((n, n))
    X[np.ix_(keep, keep)] = np.linalg.inv(L[np.ix_(keep, keep)])
    H = net.b[:, None] * (net.incidence.T @ X)
    return H, X


def total_cost(setpoints, net):
    """``sum_i C_i P_i^2``."""
    p = np.asarray(setpoints, dtype=float)
    return float(np.sum(net.cost * p * p))


def reduced_problem(net, disturbance, with_line_limits=True):
    """OFC problem in the setpoints only (angles eliminated)."""
    d = np.asarray(disturbance, dtype=float)
    H, _ = ptdf(net)
    G, h = [], []
    if with_line_limits:
        f0 = H @ d
        for e in range(net.m):
            if np.isfinite(net.flow_hi[e]):
                G.append(H[e])
                h.append(net.flow_hi[e] + f0[e])
            if np.isfinite(net.flow_lo[e]):
                G.append(-H[e])
                h.append(-net.flow_lo[e] - f0[e])
    G = np.array(G).reshape(-1, net.n)
    return SaddleProblem.qp(np.diag(2.0 * net.cost), np.zeros(net.n),
                            A=np.ones((1, net.n)), b=[d.sum()], G=G, h=np.array(h),
                            lo=net.lo, hi=net.hi)


def _restrict(prob, keep, xfix):
    """Eliminate fixed coordinates (``~keep``) at values ``xfix``."""
    k = np.flatnonzero(keep)
    f = np.flatnonzero(~keep)
    Q = prob.Q[np.ix_(k, k)]
    q = prob.q[k] + prob.Q[np.ix_(k, f)] @ xfix[f]
    c0 = prob.c0 + 0.5 * xfix[f] @ prob.Q[np.ix_(f, f)] @ xfix[f] + prob.q[f] @ xfix[f]
    return SaddleProblem.qp(Q, q, A=prob.A[:, k], b=prob.b - prob.A[:, f] @ xfix[f],
                            G=prob.G[:, k], h=prob.h - prob.G[:, f] @ xfix[f],
                            lo=prob.box.lo[k], hi=prob.box.hi[k], r=prob.r, c0=c0)


def _infeasible(net):
    nan_n, nan_m = np.full(net.n, np.nan), np.full(net.m, np.nan)
    return OfcSolution(nan_n, nan_n.copy(), nan_m, float("nan"), "infeasible")


def solve_ofc(net, disturbance, with_line_limits=True, cross_check=True):
    """KKT-certified minimiser of the OFC problem.

    Parameters
    ----------
    net : NetworkModel
    disturbance : array
        Net-load deviation per bus (internal power units).
    with_line_limits : bool
        Drop all flow bounds when False.
    cross_check : bool
        Run the enumeration route too when small enough.

    Returns
    -------
    OfcSolution
        ``status`` is ``"optimal"`` or ``"infeasible"``.
    """
    d = np.asarray(disturbance, dtype=float)
    total = d.sum()
    if total < net.lo.sum() - 1e-12 or total > net.hi.sum() + 1e-12:
        return _infeasible(net)
    prob = reduced_problem(net, d, with_line_limits)
    scale = 1.0 + np.abs(prob.b).max()
    free = net.controllable
    enumerated = cross_check and int(free.sum()) <= ENUM_MAX_FREE
    if enumerated:
        xe, ce = enumerate_qp(_restrict(prob, free, np.where(free, 0.0, net.lo)))
    # a short PDG budget suffices to confirm that no point certifies
    budget = 5_000 if enumerated and xe is None else 100_000
    z, _ = run_pdg(prob, PdgGains.uniform(1.0, 1.0 / (1.0 + np.abs(prob.Q).max())),
                   tol=1e-10 * scale, max_steps=budget)
    zc = polish(prob, z)
    res = kkt_residual(zc, prob)
    if not res.ok(CERT_TOL * scale):
        # route 1 failed to find the active set; retry from the raw PDG point
        zc2 = polish(prob, z, act_tol=1e-3)
        r2 = kkt_residual(zc2, prob)
        if r2.max < res.max:
            zc, res = zc2, r2
    certified = res.ok(CERT_TOL * scale)
    x = prob.split(zc)[0]

    if enumerated:
        if xe is None:
            if certified:
                raise OracleDiscord("PDG certified a point the enumeration finds infeasible")
            return _infeasible(net)
        if not certified:
            raise OracleDiscord(f"PDG route failed certification (residual {res.max:.3g})")
        cpdg = total_cost(x, net)
        if abs(ce - cpdg) > AGREE_TOL * (1.0 + abs(ce)):
            raise OracleDiscord(f"cost disagreement: pdg {cpdg!r} vs enumeration {ce!r}")
        if np.all(net.cost[free] > 0) and np.max(np.abs(xe - x[free])) > AGREE_TOL * scale:
            raise OracleDiscord("setpoint disagreement between oracle routes")
    elif not certified:
        return _infeasible(net)

    H, X = ptdf(net)
    return OfcSolution(setpoints=x, angles=X @ (x - d), flows=H @ (x - d),
                       cost=total_cost(x, net), status="optimal", kkt=res,
                       duals=zc[prob.n:], enumerated=enumerated)


# --------------------------------------------------------------------------
# modified problem: frequencies, virtual angles and physical flows as variables
# --------------------------------------------------------------------------
def modified_problem(net, disturbance, with_line_limits=True):
    """Modified OFC problem with x = [P^r; omega; psi; P].

    Cost ``sum C P^r^2 + 0.5 sum k omega^2``; equalities
    ``P^r - k omega - P^d - E P = 0`` and ``P^r - P^d - L_B psi = 0``;
    flow bounds act on ``B (psi_i - psi_j)``.
    """
    n, m = net.n, net.m
    d = np.asarray(disturbance, dtype=float)
    E, L = net.incidence, net.laplacian
    N = 3 * n + m
    Q = np.zeros((N, N))
    Q[:n, :n] = np.diag(2.0 * net.cost)
    Q[n:2 * n, n:2 * n] = np.diag(net.k)
    I = np.eye(n)
    A = np.zeros((2 * n, N))
    A[:n, :n] = I
    A[:n, n:2 * n] = -np.diag(net.k)
    A[:n, 3 * n:] = -E
    A[n:, :n] = I
    A[n:, 2 * n:3 * n] = -L
    b = np.concatenate([d, d])
    G, h = [], []
    if with_line_limits:
        Bt = net.b[:, None] * E.T
        for e in range(m):
            row = np.zeros(N)
            row[2 * n:3 * n] = Bt[e]
            if np.isfinite(net.flow_hi[e]):
                G.append(row)
                h.append(net.flow_hi[e])
            if np.isfinite(net.flow_lo[e]):
                G.append(-row)
                h.append(-net.flow_lo[e])
    lo = np.concatenate([net.lo, np.full(2 * n + m, -np.inf)])
    hi = np.concatenate([net.hi, np.full(2 * n + m, np.inf)])
    return SaddleProblem.qp(Q, np.zeros(N), A=A, b=b, G=np.array(G).reshape(-1, N),
                            h=np.array(h), lo=lo, hi=hi)


@dataclass(frozen=True)
class ModifiedProblemReport:
    omega_inf: float
    cost_modified: float
    cost_ofc: float
    cost_gap: float
    kkt: object
    passed: bool


def verify_lemma1(net, disturbance, with_line_limits=True, steps=4_000):
    """Solve the modified problem and the OFC problem and compare.

    Passes when ``|omega*|_inf <= 1e-8`` and the cost gap is at most
    ``1e-8 (1 + |cost|)``. Raises :class:`Infeasible` when either
    problem is infeasible.
    """
    ref = solve_ofc(net, disturbance, with_line_limits)
    if not ref.optimal:
        raise Infeasible("OFC problem infeasible")
    prob = modified_problem(net, disturbance, with_line_limits)
    n = net.n
    z, _ = run_pdg(prob, PdgGains.uniform(1.0, 0.2), max_steps=steps, tol=1e-10)
    zc = polish(prob, z)
    res = kkt_residual(zc, prob)
    if not res.ok(CERT_TOL):
        # fall back to the active set certified on the OFC problem
        at_lo = np.zeros(prob.n, bool)
        at_hi = np.zeros(prob.n, bool)
        p = ref.setpoints
        at_lo[:n] = np.isclose(p, net.lo, atol=1e-9)
        at_hi[:n] = np.isclose(p, net.hi, atol=1e-9) & ~at_lo[:n]
        gv = prob.gval(np.concatenate([p, np.zeros(n), ref.angles, np.zeros(net.m)]))
        zc = solve_active_set(prob, at_lo, at_hi, gv > -1e-9)
        res = kkt_residual(zc, prob)
    x = prob.split(zc)[0]
    if not res.ok(CERT_TOL * (1.0 + np.abs(prob.b).max())):
        raise Infeasible(f"modified problem not certified (residual {res.max:.3g})")
    w = x[n:2 * n]
    c_mod = float(prob.cost(x))
    gap = c_mod - ref.cost
    winf = float(np.max(np.abs(w)))
    ok = winf <= 1e-8 and abs(gap) <= 1e-8 * (1.0 + abs(ref.cost))
    return ModifiedProblemReport(winf, c_mod, ref.cost, gap, res, ok)
