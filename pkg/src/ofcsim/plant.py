"""DC power-flow droop plant.

Bus balances (internal units)::

    GFM   (k/beta) w' = -k w + P^r - P^d - sum_j P_ij
    SG         M   w' = -D w + P^r - P^d - sum_j P_ij
    GFL         0     = -k w + P^r - P^d - sum_j P_ij
    line       P_ij'  = B_ij (w_i - w_j)

GFM and SG buses carry a differential frequency state; GFL frequencies
are algebraic and refreshed from the balance at every evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class IntegrationDiverged(FloatingPointError):
    def __init__(self, t):
        self.t = t
        super().__init__(f"integration diverged at t = {t!r}")


class PassiveBusError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class PlantState:
    """Per-bus frequency deviation (rad/s) and per-line flows."""

    omega: np.ndarray
    flows: np.ndarray

    @classmethod
    def zeros(cls, net):
        return cls(np.zeros(net.n), np.zeros(net.m))


@dataclass(frozen=True)
class PlantInput:
    setpoints: np.ndarray
    disturbance: np.ndarray


def injection(inp):
    return np.asarray(inp.setpoints, float) - np.asarray(inp.disturbance, float)


def solve_gfl_frequencies(state, inp, net):
    """Algebraic frequencies of the GFL buses, in bus order."""
    alg = ~net.dynamic
    k = net.k[alg]
    if np.any(k == 0):
        raise PassiveBusError("GFL bus with zero droop gain has no algebraic frequency")
    bal = injection(inp) - net.incidence @ state.flows
    return bal[alg] / k


def refresh(state, inp, net):
    """Copy of ``state`` with GFL frequencies recomputed."""
    w = np.array(state.omega, dtype=float)
    w[~net.dynamic] = solve_gfl_frequencies(state, inp, net)
    return PlantState(w, np.array(state.flows, dtype=float))


def plant_derivatives(state, inp, net):
    """Return ``(d omega_dyn / dt, dP / dt)``.

    ``omega_dyn`` are the GFM and SG entries in bus order. GFL entries of
    ``state.omega`` must already be refreshed.
    """
    dyn = net.dynamic
    bal = injection(inp) - net.incidence @ state.flows
    dw = (bal[dyn] - net.k[dyn] * state.omega[dyn]) / net.mass[dyn]
    dP = net.b * (net.incidence.T @ state.omega)
    return dw, dP


def _stage(wd, P, inp, net):
    w = np.zeros(net.n)
    w[net.dynamic] = wd
    st = refresh(PlantState(w, P), inp, net)
    return plant_derivatives(st, inp, net)


def step_plant(state, inp, net, dt, inp_mid=None, inp_end=None, t=0.0):
    """One classical RK4 step with algebraic GFL refresh at every stage.

    ``inp_mid`` and ``inp_end`` are the inputs at ``t + dt/2`` and
    ``t + dt`` (default: ``inp``, a zero-order hold). The returned state
    has GFL frequencies consistent with ``inp_end``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    inp_mid = inp if inp_mid is None else inp_mid
    inp_end = inp if inp_end is None else inp_end
    dyn = net.dynamic
    wd, P = np.asarray(state.omega, float)[dyn], np.asarray(state.flows, float)
    h = dt
    a1, b1 = _stage(wd, P, inp, net)
    a2, b2 = _stage(wd + 0.5 * h * a1, P + 0.5 * h * b1, inp_mid, net)
    a3, b3 = _stage(wd + 0.5 * h * a2, P + 0.5 * h * b2, inp_mid, net)
    a4, b4 = _stage(wd + h * a3, P + h * b3, inp_end, net)
    wd = wd + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    P = P + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    if not (np.all(np.isfinite(wd)) and np.all(np.isfinite(P))):
        raise IntegrationDiverged(t + dt)
    w = np.zeros(net.n)
    w[dyn] = wd
    return refresh(PlantState(w, P), inp_end, net)


class LinearPlant:
    """Precomputed RK4 propagator for the (linear) plant.

    With the differential state ``z = [omega_dyn; P]`` and net injection
    ``u = P^r - P^d`` the plant reads ``z' = A z + G u`` and one RK4 step
    with stage inputs ``u(t), u(t+h/2), u(t+h)`` is exactly::

        z+ = Phi z + G0 u(t) + G1 u(t+h/2) + G2 u(t+h)

    The full frequency vector is ``Wz z + Wu u``. This is the same
    arithmetic as :func:`step_plant` regrouped into matrices; the two
    agree to rounding.
    """

    def __init__(self, net, dt):
        self.net, self.dt = net, dt
        dyn, alg = net.dynamic, ~net.dynamic
        nd, n, m = int(dyn.sum()), net.n, net.m
        E, k = net.incidence, net.k
        if np.any(k[alg] == 0):
            raise PassiveBusError("GFL bus with zero droop gain")
        sel_d = np.eye(n)[dyn]            # nd x n
        # omega = Wz z + Wu u
        Wz = np.zeros((n, nd + m))
        Wz[dyn, :nd] = np.eye(nd)
        Wz[alg, nd:] = -E[alg] / k[alg, None]
        Wu = np.zeros((n, n))
        Wu[alg, alg] = 1.0 / k[alg]
        A = np.zeros((nd + m, nd + m))
        G = np.zeros((nd + m, n))
        mass, kd = net.mass[dyn], k[dyn]
        A[:nd, nd:] = -(sel_d @ E) / mass[:, None]
        A[:nd, :nd] = -np.diag(kd / mass)
        G[:nd] = sel_d / mass[:, None]
        Bt = net.b[:, None] * E.T          # m x n
        A[nd:] += Bt @ Wz
        G[nd:] += Bt @ Wu
        h = dt
        I = np.eye(nd + m)
        hA = h * A
        self.A, self.G = A, G
        self.Phi = I + hA @ (I + hA @ (I / 2 + hA @ (I / 6 + hA / 24)))
        self.G0 = h / 6 * (G + hA @ (G + hA @ (G / 2 + hA @ G / 4)))
        self.G1 = h / 6 * (4 * G + hA @ (2 * G + hA @ G / 2))
        self.G2 = h / 6 * G
        self.Wz, self.Wu = Wz, Wu
        self.nd = nd

    def pack(self, state):
        return np.concatenate([np.asarray(state.omega, float)[self.net.dynamic],
                               np.asarray(state.flows, float)])

    def unpack(self, z, u):
        return PlantState(self.Wz @ z + self.Wu @ u, z[self.nd:].copy())

    def step(self, z, u0, u1, u2):
        return self.Phi @ z + self.G0 @ u0 + self.G1 @ u1 + self.G2 @ u2

    def omega(self, z, u):
        return self.Wz @ z + self.Wu @ u

    def eigenvalues(self):
        return np.linalg.eigvals(self.A)


def droop_steady_state(net, total_disturbance):
    """Common frequency deviation for constant setpoints: ``-dP / sum k``."""
    return -total_disturbance / float(np.sum(net.k))
