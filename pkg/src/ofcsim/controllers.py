"""Distributed and fully local frequency controllers.

Per-agent reference functions (:func:`distributed_step`, :func:`local_step`,
:func:`round_exchange`) take only what a bus agent can see: its own
state, its own measurement, its neighbours' messages and static local
parameters. Neither consumes the disturbance ``P^d``. The vectorised
banks (:class:`DistributedBank`, :class:`LocalBank`) evaluate the same
update laws for all buses at once and are what the simulator uses.

Update laws (explicit Euler with step ``dt``; ``mass`` is ``k/beta`` for
GFM, ``M`` for SG and 0 for GFL)::

    mu    = eps_mu * (nu / eps_nu + mass * w)
    P^r  += dt eps_pr [Proj(P^r - alpha (2 C P^r + w + mu)) - P^r]
    nu   += dt eps_nu (k w + sum_j P_ij - sum_j B_ij (psi_i - psi_j))
    psi  += dt eps_psi sum_j B_ij (mu_i - mu_j - s+_ij + s-_ij)
    s+   += dt eps_sigma [max(0, s+ + alpha (B_ij (psi_i - psi_j) - Pmax)) - s+]
    s-   += dt eps_sigma [max(0, s- + alpha (Pmin - B_ij (psi_i - psi_j))) - s-]

and the local law::

    theta += dt w
    P^r   += dt eps_pr [Proj(P^r - alpha (2 C P^r + (1 + eps_mu mass) w
                                          + eps_mu k theta)) - P^r]

Line duals are written from the from-bus (lower id) point of view; the
owner is the from-bus.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np


class MissingMessage(KeyError):
    pass


class NonFiniteUpdate(FloatingPointError):
    pass


# --------------------------------------------------------------------------
# agent-level types
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class BusAgentState:
    pr: float = 0.0
    nu: float = 0.0
    psi: float = 0.0
    omega_int: float = 0.0


@dataclass(frozen=True)
class LineDualState:
    line: tuple            # (from id, to id)
    sig_plus: float = 0.0
    sig_minus: float = 0.0

    @property
    def owner(self):
        return self.line[0]


@dataclass(frozen=True)
class NeighborMessage:
    sender: int
    psi: float
    mu: float
    duals: tuple = ()      # LineDualState entries owned by the sender


@dataclass(frozen=True)
class Measurement:
    omega: float
    flows: dict = field(default_factory=dict)   # line key -> flow (from -> to)


@dataclass(frozen=True)
class LocalView:
    """Static data a bus agent may use: its bus record and incident lines."""

    bus: object
    lines: tuple

    def other(self, ln):
        return ln.to_bus if ln.from_bus == self.bus.id else ln.from_bus

    def sign(self, ln):
        return 1.0 if ln.from_bus == self.bus.id else -1.0


def local_view(net, bus_id):
    lines = tuple(ln for ln in net.lines if bus_id in ln.key)
    lines = tuple(sorted(lines, key=lambda ln: (ln.from_bus + ln.to_bus - bus_id, ln.key)))
    return LocalView(net.bus(bus_id), lines)


def _clip(v, lo, hi):
    return min(max(v, lo), hi)


def _safe(v):
    if not math.isfinite(v):
        raise NonFiniteUpdate("non-finite controller update")
    return v


def recover_mu(agent, omega, bus, gains):
    """Dual ``mu`` from the stored auxiliary ``nu`` and the measured ``omega``."""
    return gains.eps_mu * (agent.nu / gains.eps_nu + bus.mass * omega)


def make_message(agent, duals, meas, view, gains):
    owned = tuple(sorted((d for d in duals if d.owner == view.bus.id), key=lambda d: d.line))
    return NeighborMessage(view.bus.id, agent.psi, recover_mu(agent, meas.omega, view.bus, gains),
                           owned)


def round_exchange(messages, net):
    """Deliver each bus's outgoing message to exactly its graph neighbours.

    ``messages`` maps bus id to :class:`NeighborMessage`. Returns a dict
    mapping receiver id to the tuple of received messages sorted by
    sender id.
    """
    inbox = {bid: [] for bid in net.ids}
    for sender in sorted(messages):
        msg = messages[sender]
        i = net.index_of[sender]
        for j, _ in net.neighbors[i]:
            inbox[net.ids[j]].append(msg)
    return {bid: tuple(sorted(v, key=lambda m: m.sender)) for bid, v in inbox.items()}


def distributed_step(agent, duals, meas, inbox, view, gains, dt):
    """One Euler round of the distributed controller at one bus.

    Parameters
    ----------
    agent : BusAgentState
    duals : iterable of LineDualState
        Duals of the incident lines this bus owns (from-bus lines).
    meas : Measurement
        Local frequency and incident-line flows.
    inbox : iterable of NeighborMessage
        Exactly one message per neighbour.
    view : LocalView
    gains : ControlGains
    dt : float

    Returns
    -------
    (BusAgentState, tuple of LineDualState, float)
        New state, new owned duals, and the setpoint command.
    """
    bus = view.bus
    by_sender = {m.sender: m for m in inbox}
    own = {d.line: d for d in duals}
    mu_i = recover_mu(agent, meas.omega, bus, gains)
    out_flow = 0.0
    net_psi = 0.0
    dpsi_sum = 0.0
    new_duals = []
    for ln in view.lines:
        j = view.other(ln)
        if j not in by_sender:
            raise MissingMessage(f"bus {bus.id}: no message from neighbour {j}")
        msg = by_sender[j]
        s = view.sign(ln)
        if ln.key not in meas.flows:
            raise MissingMessage(f"bus {bus.id}: no flow measurement for line {ln.key}")
        out_flow += s * meas.flows[ln.key]
        dpsi = s * (agent.psi - msg.psi)             # psi_from - psi_to
        net_psi += s * ln.b * dpsi
        if ln.from_bus == bus.id:
            d = own.get(ln.key, LineDualState(ln.key))
            lo, hi = ln.flow_box
            fv = ln.b * dpsi
            sp = d.sig_plus + dt * gains.eps_sigma * (
                max(0.0, d.sig_plus + gains.alpha * (fv - hi)) - d.sig_plus)
            sm = d.sig_minus + dt * gains.eps_sigma * (
                max(0.0, d.sig_minus + gains.alpha * (lo - fv)) - d.sig_minus)
            new_duals.append(LineDualState(ln.key, max(0.0, _safe(sp)), max(0.0, _safe(sm))))
        else:
            d = next((x for x in msg.duals if x.line == ln.key), LineDualState(ln.key))
        dpsi_sum += ln.b * (mu_i - msg.mu) - s * ln.b * (d.sig_plus - d.sig_minus)
    lo, hi = bus.box
    grad = 2.0 * bus.cost * agent.pr + meas.omega + mu_i
    pr = agent.pr + dt * gains.eps_pr * (_clip(agent.pr - gains.alpha * grad, lo, hi) - agent.pr)
    pr = _clip(_safe(pr), lo, hi)                   # rounding guard only
    nu = agent.nu + dt * gains.eps_nu * (bus.k * meas.omega + out_flow - net_psi)
    psi = agent.psi + dt * gains.eps_psi * dpsi_sum
    new = BusAgentState(pr, _safe(nu), _safe(psi), agent.omega_int)
    return new, tuple(new_duals), pr


def local_step(agent, omega, bus, gains, dt):
    """One Euler step of the fully local controller. No communication inputs."""
    th = agent.omega_int + omega * dt
    lo, hi = bus.box
    grad = (2.0 * bus.cost * agent.pr + (1.0 + gains.eps_mu * bus.mass) * omega
            + gains.eps_mu * bus.k * th)
    pr = agent.pr + dt * gains.eps_pr * (_clip(agent.pr - gains.alpha * grad, lo, hi) - agent.pr)
    pr = _clip(_safe(pr), lo, hi)
    return replace(agent, pr=pr, omega_int=_safe(th)), pr


# --------------------------------------------------------------------------
# vectorised banks
# --------------------------------------------------------------------------
class LocalBank:
    """All local agents of a network, evaluated together."""

    mode = "local"

    def __init__(self, net, gains):
        self.net, self.gains = net, gains
        self.pr = np.zeros(net.n)
        self.theta = np.zeros(net.n)
        g = gains
        self._c1 = 1.0 + g.eps_mu * net.mass
        self._c2 = g.eps_mu * net.k
        self._2C = 2.0 * net.cost
        self._a = g.eps_pr

    def step(self, omega, flows, dt):
        g, net = self.gains, self.net
        self.theta = self.theta + omega * dt
        grad = self._2C * self.pr + self._c1 * omega + self._c2 * self.theta
        pr = self.pr + dt * self._a * (np.clip(self.pr - g.alpha * grad, net.lo, net.hi) - self.pr)
        self.pr = np.clip(pr, net.lo, net.hi)
        return self.pr

    def state(self):
        return {"pr": self.pr.copy(), "theta": self.theta.copy()}


class DistributedBank:
    """All distributed agents and line duals of a network, evaluated together."""

    mode = "distributed"

    def __init__(self, net, gains):
        self.net, self.gains = net, gains
        n, m = net.n, net.m
        self.pr = np.zeros(n)
        self.nu = np.zeros(n)
        self.psi = np.zeros(n)
        self.sp = np.zeros(m)
        self.sm = np.zeros(m)
        self._fr, self._to = net.line_ends
        self._E = net.incidence
        self._2C = 2.0 * net.cost

    def mu(self, omega):
        g = self.gains
        return g.eps_mu * (self.nu / g.eps_nu + self.net.mass * omega)

    def step(self, omega, flows, dt):
        g, net = self.gains, self.net
        fr, to, E, B = self._fr, self._to, self._E, net.b
        mu = self.mu(omega)
        dpsi = self.psi[fr] - self.psi[to]
        fv = B * dpsi
        grad = self._2C * self.pr + omega + mu
        pr = self.pr + dt * g.eps_pr * (np.clip(self.pr - g.alpha * grad, net.lo, net.hi) - self.pr)
        nu = self.nu + dt * g.eps_nu * (net.k * omega + E @ flows - E @ fv)
        psi = self.psi + dt * g.eps_psi * (E @ (B * (mu[fr] - mu[to]) - B * (self.sp - self.sm)))
        with np.errstate(invalid="ignore"):
            sp = self.sp + dt * g.eps_sigma * (
                np.maximum(0.0, self.sp + g.alpha * (fv - net.flow_hi)) - self.sp)
            sm = self.sm + dt * g.eps_sigma * (
                np.maximum(0.0, self.sm + g.alpha * (net.flow_lo - fv)) - self.sm)
        self.pr = np.clip(pr, net.lo, net.hi)
        self.nu, self.psi = nu, psi
        self.sp, self.sm = np.maximum(sp, 0.0), np.maximum(sm, 0.0)
        if not (np.all(np.isfinite(self.nu)) and np.all(np.isfinite(self.psi))):
            raise NonFiniteUpdate("non-finite controller update")
        return self.pr

    def state(self):
        return {"pr": self.pr.copy(), "nu": self.nu.copy(), "psi": self.psi.copy(),
                "sig_plus": self.sp.copy(), "sig_minus": self.sm.copy()}


class NoControl:
    """Primary droop only: setpoints held at the dispatch."""

    mode = "none"

    def __init__(self, net, gains=None):
        self.pr = np.zeros(net.n)

    def step(self, omega, flows, dt):
        return self.pr

    def state(self):
        return {"pr": self.pr.copy()}


BANKS = {"none": NoControl, "local": LocalBank, "distributed": DistributedBank}


def make_bank(mode, net, gains):
    return BANKS[mode](net, gains)


class AgentNetwork:
    """Reference execution: one :class:`BusAgentState` per bus, message rounds.

    Same interface as the banks; slow, used to cross-check them.
    """

    def __init__(self, net, gains, mode="distributed"):
        self.net, self.gains, self.mode = net, gains, mode
        self.views = {bid: local_view(net, bid) for bid in net.ids}
        self.agents = {bid: BusAgentState() for bid in net.ids}
        self.duals = {bid: tuple(LineDualState(ln.key) for ln in self.views[bid].lines
                                 if ln.from_bus == bid) for bid in net.ids}

    def _meas(self, bid, omega, flows):
        i = self.net.index_of[bid]
        fl = {ln.key: float(flows[self.net.line_index(*ln.key)]) for ln in self.views[bid].lines}
        return Measurement(float(omega[i]), fl)

    def step(self, omega, flows, dt):
        out = np.zeros(self.net.n)
        if self.mode == "local":
            for bid in self.net.ids:
                i = self.net.index_of[bid]
                self.agents[bid], out[i] = local_step(self.agents[bid], float(omega[i]),
                                                      self.views[bid].bus, self.gains, dt)
            return out
        meas = {bid: self._meas(bid, omega, flows) for bid in self.net.ids}
        msgs = {bid: make_message(self.agents[bid], self.duals[bid], meas[bid],
                                  self.views[bid], self.gains) for bid in self.net.ids}
        inbox = round_exchange(msgs, self.net)
        new_agents, new_duals = {}, {}
        for bid in self.net.ids:
            a, d, cmd = distributed_step(self.agents[bid], self.duals[bid], meas[bid],
                                         inbox[bid], self.views[bid], self.gains, dt)
            new_agents[bid], new_duals[bid] = a, d
            out[self.net.index_of[bid]] = cmd
        self.agents, self.duals = new_agents, new_duals
        return out

    @property
    def pr(self):
        return np.array([self.agents[b].pr for b in self.net.ids])

    @property
    def nu(self):
        return np.array([self.agents[b].nu for b in self.net.ids])

    @property
    def psi(self):
        return np.array([self.agents[b].psi for b in self.net.ids])

    def _duals(self, attr):
        out = np.zeros(self.net.m)
        for d in itertools.chain.from_iterable(self.duals.values()):
            out[self.net.line_index(*d.line)] = getattr(d, attr)
        return out

    @property
    def sp(self):
        return self._duals("sig_plus")

    @property
    def sm(self):
        return self._duals("sig_minus")

    def mu(self, omega):
        g = self.gains
        return g.eps_mu * (self.nu / g.eps_nu + self.net.mass * np.asarray(omega))
