"""Network model, disturbance profiles and scenario files.

Units
-----
Scenario files store powers in MW, droop gains in per-unit power per
per-unit frequency, times in seconds and line susceptances in per-unit
power per radian. On load everything is converted to a single internal
system:

* power in per-unit on ``s_base_mva``,
* frequency deviation ``omega`` in rad/s,
* droop gain ``k`` in per-unit power per rad/s, ``k = k_pu / (2 pi f0)``,
* cost coefficient ``C`` in cost per per-unit power squared.

With the default ``s_base_mva = 1`` one per-unit of power is one MW.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib
import tomli_w

BUS_KINDS = ("GFM", "GFL", "SG")
CONTROLLER_MODES = ("none", "local", "distributed")
INTERP_MODES = ("step-hold", "piecewise-linear")
SCHEMA = "ofcsim-scenario/1"


class ScenarioError(ValueError):
    """Malformed or invalid scenario file. ``path`` names the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class Bus:
    """One bus of the DC network.

    Parameters
    ----------
    id : int
        Bus identifier (any positive integer, unique).
    kind : {"GFM", "GFL", "SG"}
        Grid-forming inverter, grid-following inverter, or inertial bus
        (``M w' = -D w + ...``).
    k : float
        Droop gain (GFM/GFL) or damping ``D`` (SG), internal units.
    beta : float
        GFM filter cutoff in 1/s. Ignored for other kinds.
    inertia : float
        SG inertia ``M``, internal units. Ignored for other kinds.
    box : tuple of float
        Setpoint deviation bounds ``(lo, hi)``, internal power.
    cost : float
        Quadratic cost coefficient, ``c(P) = cost * P**2``.
    initial_power : float
        Pre-disturbance dispatch, internal power. Informational.
    passive : bool
        Zero-capacity bus with ``k = 0``. Rejected by validation.
    """

    id: int
    kind: str
    k: float
    beta: float = 0.0
    inertia: float = 0.0
    box: tuple = (0.0, 0.0)
    cost: float = 0.0
    initial_power: float = 0.0
    passive: bool = False

    @property
    def controllable(self):
        return self.box[0] < self.box[1]

    @property
    def mass(self):
        """Coefficient multiplying ``w'`` in the bus balance (0 for GFL)."""
        if self.kind == "GFM":
            return self.k / self.beta if self.beta > 0 else math.inf
        if self.kind == "SG":
            return self.inertia
        return 0.0


@dataclass(frozen=True)
class Line:
    """Line ``from_bus -> to_bus`` with susceptance ``b`` and flow bounds."""

    from_bus: int
    to_bus: int
    b: float
    flow_box: tuple = (-math.inf, math.inf)

    @property
    def key(self):
        return (self.from_bus, self.to_bus)

    @property
    def bounded(self):
        return math.isfinite(self.flow_box[0]) or math.isfinite(self.flow_box[1])


@dataclass(frozen=True)
class NetworkModel:
    """Immutable network description plus cached array views.

    Array attributes are indexed by bus position (order of ``buses``) and
    line position (order of ``lines``); ``incidence[i, e]`` is +1 at the
    from-bus and -1 at the to-bus of line ``e``.
    """

    buses: tuple
    lines: tuple
    reference_bus: int
    s_base: float = 1.0
    f0: float = 60.0

    @property
    def n(self):
        return len(self.buses)

    @property
    def m(self):
        return len(self.lines)

    @cached_property
    def ids(self):
        return tuple(b.id for b in self.buses)

    @cached_property
    def index_of(self):
        return {bid: i for i, bid in enumerate(self.ids)}

    def bus(self, bid):
        return self.buses[self.index_of[bid]]

    def line_index(self, a, b):
        key = (min(a, b), max(a, b))
        for e, ln in enumerate(self.lines):
            if ln.key == key:
                return e
        raise KeyError(f"no line {key}")

    @cached_property
    def incidence(self):
        E = np.zeros((self.n, self.m))
        for e, ln in enumerate(self.lines):
            E[self.index_of[ln.from_bus], e] = 1.0
            E[self.index_of[ln.to_bus], e] = -1.0
        E.setflags(write=False)
        return E

    @cached_property
    def line_ends(self):
        """(from index array, to index array)."""
        fr = np.array([self.index_of[ln.from_bus] for ln in self.lines], dtype=int)
        to = np.array([self.index_of[ln.to_bus] for ln in self.lines], dtype=int)
        fr.setflags(write=False)
        to.setflags(write=False)
        return fr, to

    @cached_property
    def k(self):
        return _frozen([b.k for b in self.buses])

    @cached_property
    def mass(self):
        return _frozen([b.mass for b in self.buses])

    @cached_property
    def dynamic(self):
        """Buses with a differential frequency state (GFM and SG)."""
        d = np.array([b.kind in ("GFM", "SG") for b in self.buses])
        d.setflags(write=False)
        return d

    @cached_property
    def lo(self):
        return _frozen([b.box[0] for b in self.buses])

    @cached_property
    def hi(self):
        return _frozen([b.box[1] for b in self.buses])

    @cached_property
    def cost(self):
        return _frozen([b.cost for b in self.buses])

    @cached_property
    def controllable(self):
        c = np.array([b.controllable for b in self.buses])
        c.setflags(write=False)
        return c

    @cached_property
    def b(self):
        return _frozen([ln.b for ln in self.lines])

    @cached_property
    def flow_lo(self):
        return _frozen([ln.flow_box[0] for ln in self.lines])

    @cached_property
    def flow_hi(self):
        return _frozen([ln.flow_box[1] for ln in self.lines])

    @cached_property
    def laplacian(self):
        E = self.incidence
        L = E @ (self.b[:, None] * E.T)
        L.setflags(write=False)
        return L

    @cached_property
    def neighbors(self):
        """Per bus: tuple of (neighbor index, line index), sorted by neighbor id."""
        fr, to = self.line_ends
        out = [[] for _ in range(self.n)]
        for e in range(self.m):
            out[fr[e]].append((to[e], e))
            out[to[e]].append((fr[e], e))
        return tuple(tuple(sorted(v, key=lambda p: self.ids[p[0]])) for v in out)

    def with_flow_box(self, a, b, box):
        """Copy with the flow bounds of line (a, b) replaced."""
        e = self.line_index(a, b)
        lines = list(self.lines)
        lines[e] = replace(lines[e], flow_box=(float(box[0]), float(box[1])))
        return replace(self, lines=tuple(lines))

    def without_line_limits(self):
        lines = tuple(replace(ln, flow_box=(-math.inf, math.inf)) for ln in self.lines)
        return replace(self, lines=lines)


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


class ValidationReport(list):
    """List of :class:`Violation`; empty means the network is simulable."""

    @property
    def ok(self):
        return len(self) == 0

    def messages(self):
        return [v.message for v in self]


def validate_network(net):
    """Collect every structural problem of ``net``.

    Checks bus kinds and parameters, boxes, line orientation and
    uniqueness, the reference bus, and connectivity.
    """
    rep = ValidationReport()
    if net.n == 0:
        rep.append(Violation("buses", "network has no buses"))
        return rep
    seen = set()
    for i, b in enumerate(net.buses):
        p = f"buses[{i}] (id {b.id})"
        if b.id in seen:
            rep.append(Violation(p, f"duplicate bus id {b.id}"))
        seen.add(b.id)
        if b.kind not in BUS_KINDS:
            rep.append(Violation(p, f"unknown bus kind {b.kind!r}"))
            continue
        if b.box[0] > b.box[1]:
            rep.append(Violation(p, "inverted setpoint box"))
        if b.cost < 0:
            rep.append(Violation(p, "cost coefficient must be nonnegative"))
        if b.passive:
            rep.append(Violation(
                p, "passive bus (k = 0) requires network reduction, which is not supported"))
        elif not b.k > 0:
            rep.append(Violation(p, "droop gain must be positive"))
        if b.kind == "GFM" and not b.beta > 0:
            rep.append(Violation(p, "filter cutoff must be positive"))
        if b.kind == "SG" and not b.inertia > 0:
            rep.append(Violation(p, "inertia must be positive"))
        for name in ("k", "beta", "inertia", "cost"):
            if not math.isfinite(getattr(b, name)):
                rep.append(Violation(p, f"{name} must be finite"))
    pairs = set()
    for e, ln in enumerate(net.lines):
        p = f"lines[{e}] ({ln.from_bus}, {ln.to_bus})"
        if ln.from_bus not in seen or ln.to_bus not in seen:
            rep.append(Violation(p, "line references an unknown bus"))
            continue
        if not ln.from_bus < ln.to_bus:
            rep.append(Violation(p, "line orientation must satisfy from < to"))
        key = (min(ln.key), max(ln.key))
        if key in pairs:
            rep.append(Violation(p, f"duplicate line {key}"))
        pairs.add(key)
        if not (ln.b > 0 and math.isfinite(ln.b)):
            rep.append(Violation(p, "susceptance must be positive"))
        if ln.flow_box[0] > ln.flow_box[1]:
            rep.append(Violation(p, "inverted flow box"))
    if net.reference_bus not in seen:
        rep.append(Violation("reference_bus", "missing reference bus"))
    if not _connected(net, seen):
        rep.append(Violation("lines", "graph not connected"))
    return rep


def _connected(net, ids):
    ids = list(dict.fromkeys(ids))
    if len(ids) <= 1:
        return True
    adj = {i: [] for i in ids}
    for ln in net.lines:
        if ln.from_bus in adj and ln.to_bus in adj:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
    stack, reached = [ids[0]], {ids[0]}
    while stack:
        for j in adj[stack.pop()]:
            if j not in reached:
                reached.add(j)
                stack.append(j)
    return len(reached) == len(ids)


# --------------------------------------------------------------------------
# disturbances
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DisturbanceProfile:
    """Per-bus breakpoint series of the net-load deviation ``P^d``.

    ``series`` maps a bus position to ``(times, values)`` arrays in seconds
    and internal power. Values are held constant before the first and after
    the last breakpoint. A generation increase is a negative value.
    """

    n: int
    series: dict = field(default_factory=dict)
    mode: str = "step-hold"

    def __post_init__(self):
        if self.mode not in INTERP_MODES:
            raise ScenarioError(f"unknown interpolation mode {self.mode!r}", "disturbance.mode")
        clean = {}
        for i, (t, v) in self.series.items():
            t = _frozen(t)
            v = _frozen(v)
            if t.shape != v.shape or t.ndim != 1:
                raise ScenarioError("times and values must be equal-length vectors",
                                    f"disturbance.bus[{i}]")
            if t.size and np.any(np.diff(t) <= 0):
                raise ScenarioError("breakpoint times must be strictly increasing",
                                    f"disturbance.bus[{i}]")
            if t.size:
                clean[int(i)] = (t, v)
        object.__setattr__(self, "series", clean)

    @property
    def buses(self):
        return sorted(self.series)

    def value(self, i, t):
        """Scalar or vectorised evaluation for bus position ``i``."""
        if i not in self.series:
            return np.zeros_like(np.asarray(t, dtype=float))
        times, vals = self.series[i]
        t = np.asarray(t, dtype=float)
        if self.mode == "piecewise-linear":
            return np.interp(t, times, vals)
        j = np.searchsorted(times, t, side="right") - 1
        return vals[np.clip(j, 0, None)]

    def breakpoints(self):
        ts = [s[0] for s in self.series.values()]
        return np.unique(np.concatenate(ts)) if ts else np.zeros(0)


def disturbance_at(profile, t):
    """Per-bus disturbance vector at time ``t`` (internal power)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    out = np.zeros(profile.n)
    for i in profile.series:
        out[i] = profile.value(i, t)
    return out


def read_series_csv(path):
    """Read a two-column (time_s, power_MW) CSV. A header row is allowed."""
    times, vals = [], []
    seen = False
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh)):
            if not row or row[0].lstrip().startswith("#"):
                continue
            first, seen = not seen, True
            try:
                t, p = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if first:
                    continue
                raise ScenarioError(f"bad CSV row {row_no + 1}: {row!r}", str(path))
            times.append(t)
            vals.append(p)
    return np.array(times), np.array(vals)


def write_series_csv(path, times, power_mw):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "power_MW"])
        for t, p in zip(times, power_mw):
            w.writerow([repr(float(t)), repr(float(p))])


# --------------------------------------------------------------------------
# scenario
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class ControlGains:
    """Controller gains.

    ``eps_mu`` scales the dual ``mu``; it is needed by both controllers
    (``mu`` recovery and the local integral term) and is therefore part of
    the gain set. ``eps_nu`` cancels out of the closed loop.
    """

    eps_pr: float = 50.0
    eps_nu: float = 20.0
    eps_psi: float = 20.0
    eps_sigma: float = 20.0
    alpha: float = 0.05
    eps_mu: float = 1.0

    def check(self):
        for name, v in vars(self).items():
            if not (v > 0 and math.isfinite(v)):
                raise ScenarioError("gains must be positive and finite", f"controller.{name}")
        return self


@dataclass(frozen=True)
class Scenario:
    network: NetworkModel
    disturbance: DisturbanceProfile
    controller_mode: str = "local"
    gains: ControlGains = ControlGains()
    dt: float = 1e-3
    duration: float = 60.0
    name: str = "scenario"
    record_every: int = 1
    control_decimation: int = 1
    settle_band_hz: float = 0.005

    @property
    def reference_bus(self):
        return self.network.reference_bus

    @property
    def steps(self):
        return int(round(self.duration / self.dt))

    def replace(self, **kw):
        return replace(self, **kw)


def _get(d, key, path, kind=float, default=None):
    if key not in d:
        if default is None:
            raise ScenarioError("missing field", f"{path}.{key}")
        return default
    try:
        return kind(d[key])
    except (TypeError, ValueError):
        raise ScenarioError(f"bad value {d[key]!r}", f"{path}.{key}")


def _pair(d, key, path, default):
    v = d.get(key, default)
    if not (isinstance(v, (list, tuple)) and len(v) == 2):
        raise ScenarioError("expected a two-element array", f"{path}.{key}")
    return float(v[0]), float(v[1])


def scenario_from_dict(doc, base_dir=Path(".")):
    """Build and validate a :class:`Scenario` from a parsed TOML document."""
    base = doc.get("base", {})
    s_base = _get(base, "s_base_mva", "base", default=1.0)
    f0 = _get(base, "f0_hz", "base", default=60.0)
    if not (s_base > 0 and f0 > 0):
        raise ScenarioError("s_base_mva and f0_hz must be positive", "base")
    wconv = 2.0 * math.pi * f0

    buses = []
    for i, bd in enumerate(doc.get("buses", [])):
        p = f"buses[{i}]"
        kind = str(bd.get("kind", ""))
        lo, hi = _pair(bd, "box_mw", p, (0.0, 0.0))
        buses.append(Bus(
            id=_get(bd, "id", p, int),
            kind=kind,
            k=_get(bd, "droop_pu", p) / wconv,
            beta=_get(bd, "beta", p, default=0.0),
            inertia=_get(bd, "inertia", p, default=0.0) / s_base,
            box=(lo / s_base, hi / s_base),
            cost=_get(bd, "cost", p, default=0.0) * s_base ** 2,
            initial_power=_get(bd, "initial_mw", p, default=0.0) / s_base,
            passive=bool(bd.get("passive", False)),
        ))
    lines = []
    for e, ld in enumerate(doc.get("lines", [])):
        p = f"lines[{e}]"
        lo, hi = _pair(ld, "flow_box_mw", p, (-math.inf, math.inf))
        lines.append(Line(
            from_bus=_get(ld, "from", p, int),
            to_bus=_get(ld, "to", p, int),
            b=_get(ld, "susceptance_pu", p),
            flow_box=(lo / s_base, hi / s_base),
        ))
    sim = doc.get("simulation", {})
    ref = _get(sim, "reference_bus", "simulation", int,
               default=buses[0].id if buses else -1)
    net = NetworkModel(tuple(buses), tuple(lines), ref, s_base, f0)
    rep = validate_network(net)
    if not rep.ok:
        v = rep[0]
        raise ScenarioError("; ".join(rep.messages()), v.path)

    dist = doc.get("disturbance", {})
    mode = str(dist.get("mode", "step-hold"))
    series = {}
    for j, sd in enumerate(dist.get("bus", [])):
        p = f"disturbance.bus[{j}]"
        bid = _get(sd, "id", p, int)
        if bid not in net.index_of:
            raise ScenarioError(f"unknown bus {bid}", p)
        scale = _get(sd, "scale", p, default=1.0)
        if "csv" in sd:
            t, v = read_series_csv(base_dir / sd["csv"])
        else:
            t = np.asarray(sd.get("times_s", []), dtype=float)
            v = np.asarray(sd.get("power_mw", []), dtype=float)
        if net.index_of[bid] in series:
            raise ScenarioError(f"duplicate disturbance for bus {bid}", p)
        series[net.index_of[bid]] = (t, v * scale / s_base)
    profile = DisturbanceProfile(net.n, series, mode)

    ctrl = doc.get("controller", {})
    gains = ControlGains(**{k: float(v) for k, v in ctrl.items()
                            if k in ControlGains.__dataclass_fields__})
    unknown = set(ctrl) - set(ControlGains.__dataclass_fields__) - {"mode"}
    if unknown:
        raise ScenarioError(f"unknown gain(s) {sorted(unknown)}", "controller")
    gains.check()
    mode_c = str(ctrl.get("mode", sim.get("controller", "local")))
    if mode_c not in CONTROLLER_MODES:
        raise ScenarioError(f"unknown controller mode {mode_c!r}", "controller.mode")
    sc = Scenario(
        network=net,
        disturbance=profile,
        controller_mode=mode_c,
        gains=gains,
        dt=_get(sim, "dt", "simulation", default=1e-3),
        duration=_get(sim, "duration", "simulation", default=60.0),
        name=str(doc.get("name", "scenario")),
        record_every=_get(sim, "record_every", "simulation", int, default=1),
        control_decimation=_get(sim, "control_decimation", "simulation", int, default=1),
        settle_band_hz=_get(sim, "settle_band_hz", "simulation", default=0.005),
    )
    check_scenario(sc)
    return sc


def check_scenario(sc):
    if not sc.dt > 0:
        raise ScenarioError("dt must be positive", "simulation.dt")
    if not sc.duration >= sc.dt:
        raise ScenarioError("duration must be at least dt", "simulation.duration")
    if sc.record_every < 1 or sc.control_decimation < 1:
        raise ScenarioError("strides must be >= 1", "simulation")
    sc.gains.check()
    return sc


def load_scenario(path):
    """Read a TOML scenario file; see ``docs/scenario_schema.md``."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}", str(path))
    return scenario_from_dict(doc, path.parent)


def scenario_to_dict(sc):
    """Inverse of :func:`scenario_from_dict`; disturbances are written inline."""
    net = sc.network
    S, w = net.s_base, 2.0 * math.pi * net.f0
    buses = []
    for b in net.buses:
        d = {"id": b.id, "kind": b.kind, "droop_pu": b.k * w,
             "box_mw": [b.box[0] * S, b.box[1] * S], "cost": b.cost / S ** 2,
             "initial_mw": b.initial_power * S}
        if b.kind == "GFM":
            d["beta"] = b.beta
        if b.kind == "SG":
            d["inertia"] = b.inertia * S
        if b.passive:
            d["passive"] = True
        buses.append(d)
    lines = []
    for ln in net.lines:
        d = {"from": ln.from_bus, "to": ln.to_bus, "susceptance_pu": ln.b}
        if ln.bounded:
            d["flow_box_mw"] = [ln.flow_box[0] * S, ln.flow_box[1] * S]
        lines.append(d)
    dist = {"mode": sc.disturbance.mode, "bus": []}
    for i in sc.disturbance.buses:
        t, v = sc.disturbance.series[i]
        dist["bus"].append({"id": net.ids[i], "times_s": t.tolist(),
                            "power_mw": (v * S).tolist()})
    ctrl = {"mode": sc.controller_mode}
    ctrl.update(vars(sc.gains))
    return {
        "schema": SCHEMA,
        "name": sc.name,
        "base": {"s_base_mva": S, "f0_hz": net.f0},
        "simulation": {"dt": sc.dt, "duration": sc.duration,
                       "reference_bus": net.reference_bus,
                       "record_every": sc.record_every,
                       "control_decimation": sc.control_decimation,
                       "settle_band_hz": sc.settle_band_hz},
        "controller": ctrl,
        "buses": buses,
        "lines": lines,
        "disturbance": dist,
    }


def write_scenario(sc, path):
    with open(path, "wb") as fh:
        tomli_w.dump(scenario_to_dict(sc), fh)
