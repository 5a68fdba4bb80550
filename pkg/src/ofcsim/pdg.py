"""Globally projected primal-dual gradient dynamics.

Problem::

    min_x c(x)  s.t.  A x - b = 0,  g(x) <= 0,  x in X = [lo, hi]

Lagrangian ``L = c + lam'(A x - b) - 0.5 lam' diag(r) lam + sig' g``;
the optional dual curvature ``r >= 0`` (default 0) lets a dual variable
stand in for an eliminated primal with a quadratic cost (a frequency
``w = lam`` with cost ``k w^2 / 2`` gives ``r = k``). With
``Omega(z) = [grad_x L; -grad_lam L; -grad_sig L]`` the dynamics are::

    z' = eps * (Proj_Z(z - alpha * Omega(z)) - z),   Z = X x R^l x R^m_+

with per-coordinate positive ``eps`` and ``alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np


class DimensionError(ValueError):
    pass


class Diverged(FloatingPointError):
    def __init__(self, t, norm):
        self.t, self.norm = t, norm
        super().__init__(f"trajectory diverged at t = {t!r} (|z| = {norm:.3g})")


@dataclass(frozen=True)
class Box:
    """Per-coordinate interval ``[lo, hi]``; infinite ends allowed."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        lo, hi = np.broadcast_arrays(lo, hi)
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        object.__setattr__(self, "lo", lo.copy())
        object.__setattr__(self, "hi", hi.copy())

    @classmethod
    def free(cls, n):
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def n(self):
        return self.lo.size

    def project(self, x):
        return np.minimum(np.maximum(x, self.lo), self.hi)

    def contains(self, x, tol=0.0):
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


def project_box(x, box):
    """Euclidean projection onto ``box`` (a per-coordinate clamp)."""
    return box.project(np.asarray(x, dtype=float))


def squared_distance(x, box):
    d = np.asarray(x, dtype=float) - box.project(x)
    return 0.5 * float(d @ d)


def squared_distance_gradient(x, box):
    """Gradient of ``0.5 * dist(x, box)^2``, i.e. ``x - Proj(x)``."""
    x = np.asarray(x, dtype=float)
    return x - box.project(x)


def projection_inequality(y, p, box):
    """``<y - P(y), p - P(y)>``; nonpositive for every ``p`` in the box."""
    py = box.project(y)
    return float((y - py) @ (p - py))


@dataclass(frozen=True)
class SaddleProblem:
    """Convex problem data for the primal-dual engine.

    ``cost``/``grad`` and ``g``/``jac`` are callables. Quadratic problems
    built with :meth:`qp` additionally keep ``Q, q, G, h`` so oracles can
    solve KKT systems exactly.
    """

    n: int
    cost: Callable
    grad: Callable
    A: np.ndarray
    b: np.ndarray
    box: Box
    g: Optional[Callable] = None
    jac: Optional[Callable] = None
    m: int = 0
    r: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None
    c0: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float).reshape(-1, self.n)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise DimensionError("A and b disagree")
        if self.box.n != self.n:
            raise DimensionError("box dimension differs from n")
        r = np.zeros(b.size) if self.r is None else np.asarray(self.r, dtype=float)
        if r.shape != b.shape or np.any(r < 0):
            raise DimensionError("r must be a nonnegative l-vector")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "r", r)

    @property
    def l(self):
        return self.b.size

    @property
    def size(self):
        return self.n + self.l + self.m

    @classmethod
    def qp(cls, Q, q, A=None, b=None, G=None, h=None, lo=None, hi=None, r=None, c0=0.0):
        """``min 0.5 x'Qx + q'x + c0`` s.t. ``Ax = b``, ``Gx <= h``, ``lo <= x <= hi``."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        q = np.asarray(q, dtype=float).reshape(-1)
        n = q.size
        A = np.zeros((0, n)) if A is None else np.asarray(A, dtype=float).reshape(-1, n)
        b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float).reshape(-1)
        G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
        h = np.zeros(G.shape[0]) if h is None else np.asarray(h, dtype=float).reshape(-1)
        lo = np.full(n, -np.inf) if lo is None else lo
        hi = np.full(n, np.inf) if hi is None else hi
        return cls(
            n=n,
            cost=lambda x: 0.5 * x @ Q @ x + q @ x + c0,
            grad=lambda x: Q @ x + q,
            A=A, b=b, box=Box(lo, hi),
            g=lambda x: G @ x - h,
            jac=lambda x: G,
            m=G.shape[0], r=r, Q=Q, q=q, G=G, h=h, c0=c0,
        )

    # -- Lagrangian pieces -------------------------------------------------
    def split(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise DimensionError(f"state has shape {z.shape}, expected ({self.size},)")
        return z[: self.n], z[self.n: self.n + self.l], z[self.n + self.l:]

    def gval(self, x):
        return np.zeros(0) if self.m == 0 else np.asarray(self.g(x), dtype=float)

    def gjac(self, x):
        return np.zeros((0, self.n)) if self.m == 0 else np.asarray(self.jac(x), dtype=float)

    def grad_x(self, x, lam, sig):
        out = np.asarray(self.grad(x), dtype=float) + self.A.T @ lam
        if self.m:
            out = out + self.gjac(x).T @ sig
        return out

    def grad_lam(self, x, lam):
        return self.A @ x - self.b - self.r * lam

    def omega(self, z):
        x, lam, sig = self.split(z)
        return np.concatenate([self.grad_x(x, lam, sig), -self.grad_lam(x, lam), -self.gval(x)])

    @property
    def zbox(self):
        return Box(np.concatenate([self.box.lo, np.full(self.l, -np.inf), np.zeros(self.m)]),
                   np.concatenate([self.box.hi, np.full(self.l, np.inf), np.full(self.m, np.inf)]))

    def lagrangian(self, z):
        x, lam, sig = self.split(z)
        return (float(self.cost(x)) + lam @ (self.A @ x - self.b)
                - 0.5 * lam @ (self.r * lam) + sig @ self.gval(x))


@dataclass(frozen=True)
class SaddleState:
    x: np.ndarray
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sig: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def z(self):
        return np.concatenate([np.atleast_1d(self.x), np.atleast_1d(self.lam),
                               np.atleast_1d(self.sig)]).astype(float)

    @classmethod
    def from_z(cls, z, prob):
        x, lam, sig = prob.split(z)
        return cls(x.copy(), lam.copy(), sig.copy())

    @classmethod
    def zeros(cls, prob):
        return cls.from_z(prob.zbox.project(np.zeros(prob.size)), prob)


@dataclass(frozen=True)
class PdgGains:
    """Step gains ``eps`` and projection parameters ``alpha`` per block.

    Each entry is a scalar (broadcast over the block) or a vector with
    one value per coordinate of the block.
    """

    eps_x: object = 1.0
    eps_lam: object = 1.0
    eps_sig: object = 1.0
    alpha_x: object = 0.05
    alpha_lam: object = 0.05
    alpha_sig: object = 0.05

    @classmethod
    def uniform(cls, eps=1.0, alpha=0.05):
        return cls(eps, eps, eps, alpha, alpha, alpha)

    def vectors(self, prob):
        def blk(v, k):
            v = np.broadcast_to(np.asarray(v, dtype=float), (k,)).copy()
            if np.any(v <= 0) or not np.all(np.isfinite(v)):
                raise ValueError("gains must be positive and finite")
            return v
        eps = np.concatenate([blk(self.eps_x, prob.n), blk(self.eps_lam, prob.l),
                              blk(self.eps_sig, prob.m)])
        alpha = np.concatenate([blk(self.alpha_x, prob.n), blk(self.alpha_lam, prob.l),
                                blk(self.alpha_sig, prob.m)])
        return eps, alpha


def _as_z(state, prob):
    z = state.z if isinstance(state, SaddleState) else np.asarray(state, dtype=float)
    prob.split(z)  # shape check
    return z


class _Flat:
    """Cached flattened operator ``f(z) = eps * (Proj(z - alpha Omega(z)) - z)``."""

    def __init__(self, prob, gains):
        self.prob = prob
        self.eps, self.alpha = gains.vectors(prob)
        self.zbox = prob.zbox

    def __call__(self, z):
        return self.eps * (self.zbox.project(z - self.alpha * self.prob.omega(z)) - z)


def pdg_rhs(state, prob, gains):
    """Right-hand side ``z'`` as a :class:`SaddleState`."""
    z = _as_z(state, prob)
    return SaddleState.from_z(_Flat(prob, gains)(z), prob)


def pdg_rhs_flat(z, prob, gains):
    return _Flat(prob, gains)(np.asarray(z, dtype=float))


class Trajectory(NamedTuple):
    t: np.ndarray
    z: np.ndarray          # rows are states
    prob: SaddleProblem

    def state(self, i=-1):
        return SaddleState.from_z(self.z[i], self.prob)

    @property
    def final(self):
        return self.state(-1)


def rk4_pdg_step(f, zbox, z, dt):
    k1 = f(z)
    k2 = f(z + 0.5 * dt * k1)
    k3 = f(z + 0.5 * dt * k2)
    k4 = f(z + dt * k3)
    return zbox.project(z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def integrate_pdg(prob, z0, gains, dt, T, bound=1e12, record_every=1):
    """RK4 integration with a safeguard projection onto ``Z`` after each step.

    Returns a :class:`Trajectory` holding ``t = 0, dt, ..., T`` (every
    ``record_every``-th step plus the final one).
    """
    z = _as_z(z0, prob).copy()
    if not prob.zbox.contains(z):
        raise ValueError("z0 must lie in Z")
    f = _Flat(prob, gains)
    zbox = prob.zbox
    N = int(round(T / dt))
    ts, zs = [0.0], [z.copy()]
    for s in range(1, N + 1):
        z = rk4_pdg_step(f, zbox, z, dt)
        nz = float(np.max(np.abs(z))) if z.size else 0.0
        if not np.isfinite(nz) or nz > bound:
            raise Diverged(s * dt, nz)
        if s % record_every == 0 or s == N:
            ts.append(s * dt)
            zs.append(z.copy())
    return Trajectory(np.array(ts), np.array(zs), prob)


def lyapunov_value(z, z_star, prob, gains):
    """``V = 0.5|z-z*|^2 + (z-P(y))' diag(alpha) Omega(z) - 0.5|z-P(y)|^2``.

    ``y = z - alpha * Omega(z)``. ``z`` may also be a 2-D array of states.
    """
    zs = _as_z(z_star, prob)
    Z = np.asarray(z.z if isinstance(z, SaddleState) else z, dtype=float)
    _, alpha = gains.vectors(prob)
    if Z.ndim == 2:
        return np.array([_lyap(row, zs, prob, alpha) for row in Z])
    return _lyap(Z, zs, prob, alpha)


def _lyap(z, zs, prob, alpha):
    om = prob.omega(z)
    d = z - prob.zbox.project(z - alpha * om)
    e = z - zs
    return 0.5 * e @ e + d @ (alpha * om) - 0.5 * d @ d


class KKTResidual(NamedTuple):
    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float

    @property
    def max(self):
        return max(self)

    def ok(self, tol):
        return all(v <= tol for v in self)


def kkt_residual(z, prob):
    """Four KKT residuals (projection stationarity, equality, inequality, complementarity)."""
    x, lam, sig = prob.split(_as_z(z, prob))
    gx = prob.grad_x(x, lam, sig)
    stat = np.max(np.abs(x - prob.box.project(x - gx))) if prob.n else 0.0
    heq = prob.grad_lam(x, lam)
    geq = float(np.max(np.abs(heq))) if heq.size else 0.0
    gv = prob.gval(x)
    gin = float(np.max(np.maximum(gv, 0.0))) if gv.size else 0.0
    comp = float(abs(sig @ gv)) if gv.size else 0.0
    return KKTResidual(float(stat), geq, gin, comp)
