"""Closed-loop co-simulation, traces, metrics and comparison studies.

Each step ``k`` (time ``t_k = k dt``) the controller measures the plant
(frequencies and flows at ``t_k``), updates and emits setpoints, and the
plant takes one RK4 step to ``t_{k+1}`` with those setpoints held. Row
``k`` of the trace records the measurement at ``t_k`` together with the
setpoints emitted at ``t_k``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controllers import make_bank
from .grid import DisturbanceProfile, read_series_csv
from .monolithic import closed_loop_problem, closed_loop_saddle_point, pack_closed_loop
from .oracle import solve_ofc, total_cost
from .pdg import lyapunov_value
from .plant import IntegrationDiverged, LinearPlant

TRACE_SCHEMA = "ofcsim-trace/1"
METRICS_SCHEMA = "ofcsim-metrics/1"
STEADY_WINDOW_S = 1.0


@dataclass
class SimulationTrace:
    """Recorded rows. Frequencies are deviations in Hz; powers in MW."""

    t: np.ndarray
    omega_hz: np.ndarray        # rows x buses
    pr_mw: np.ndarray           # rows x buses
    flow_mw: np.ndarray         # rows x lines
    cost: np.ndarray
    lyapunov: np.ndarray
    sig_min: np.ndarray         # smallest line dual per row (0 when none)
    bus_ids: tuple
    line_keys: tuple
    f0: float = 60.0
    flow_lo_mw: np.ndarray = None
    flow_hi_mw: np.ndarray = None

    @property
    def rows(self):
        return self.t.size

    @property
    def frequency_hz(self):
        return self.f0 + self.omega_hz

    @property
    def violation_flags(self):
        """Boolean rows x lines: flow outside its bounds."""
        return (self.flow_mw > self.flow_hi_mw) | (self.flow_mw < self.flow_lo_mw)

    def columns(self):
        cols = ["t"]
        cols += [f"bus{b}_omega_hz" for b in self.bus_ids]
        cols += [f"bus{b}_pr_mw" for b in self.bus_ids]
        cols += [f"line{i}_{j}_flow_mw" for i, j in self.line_keys]
        cols += ["cost", "lyapunov"]
        return cols

    def matrix(self):
        return np.column_stack([self.t, self.omega_hz, self.pr_mw, self.flow_mw,
                                self.cost, self.lyapunov])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema={TRACE_SCHEMA} f0_hz={self.f0!r} "
                     "omega columns are deviations from f0 in Hz\n")
            fh.write(",".join(self.columns()) + "\n")
            np.savetxt(fh, self.matrix(), fmt="%.12g", delimiter=",")


def read_trace_csv(path):
    """Return ``(columns, matrix)`` of a trace CSV."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# schema="):
            raise ValueError("not a trace file")
        cols = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return cols, data


@dataclass
class MetricsReport:
    mode: str
    steady_omega_inf_hz: float
    settling_time_s: float
    final_cost: float
    oracle_cost: float
    oracle_gap_rel: float
    oracle_with_line_limits: bool
    setpoint_rel_err_max: float
    final_setpoints_mw: dict
    oracle_setpoints_mw: dict
    line_violation_transient_mw: dict
    line_violation_steady_mw: dict
    steady_flow_mw: dict
    box_violations: dict
    sigma_min: float
    max_omega_hz: float
    rms_omega_hz: float
    steps: int
    rows: int
    extra: dict = field(default_factory=dict)

    @property
    def box_violation_total(self):
        return int(sum(self.box_violations.values()))

    def to_dict(self):
        d = {"schema": METRICS_SCHEMA}
        d.update({k: _plain(v) for k, v in vars(self).items()})
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    return v


def _disturbance_samples(profile, cols, times):
    if not cols:
        return np.zeros((times.size, 0))
    return np.column_stack([profile.value(i, times) for i in cols])


def simulate(sc, oracle=None, lyapunov=True):
    """Run a scenario. Returns ``(SimulationTrace, MetricsReport)``.

    ``oracle`` may carry a precomputed :class:`OfcSolution` for the mode's
    reference problem.
    """
    net = sc.network
    n, m = net.n, net.m
    h = sc.dt
    N = sc.steps
    dec = sc.control_decimation
    rec = sc.record_every
    S, w2hz = net.s_base, 1.0 / (2.0 * math.pi)
    lp = LinearPlant(net, h)
    bank = make_bank(sc.controller_mode, net, sc.gains)
    prof = sc.disturbance
    cols = prof.buses
    half = np.arange(2 * N + 1) * (h / 2.0)
    Dh = _disturbance_samples(prof, cols, half)       # disturbance at half steps
    Wz, Wu = lp.Wz, lp.Wu
    Wu_c = Wu[:, cols]
    Phi = lp.Phi
    Gsum = lp.G0 + lp.G1 + lp.G2
    # stage disturbances d(t), d(t+h/2), d(t+h) are consecutive rows of Dh
    Gd = np.hstack([lp.G0[:, cols], lp.G1[:, cols], lp.G2[:, cols]])
    nd = lp.nd
    lo, hi = net.lo, net.hi
    C = net.cost

    # Lyapunov support: distributed mode with a certified saddle point
    lyap = None
    final_d = np.zeros(n)
    final_d[cols] = Dh[-1] if cols else 0.0
    if lyapunov and sc.controller_mode == "distributed":
        prob, pg, lay = closed_loop_problem(net, final_d, sc.gains)
        zs = closed_loop_saddle_point(net, final_d, sc.gains, prob, lay)
        if zs is not None:
            lyap = (prob, pg, lay, zs)

    rec_idx = list(range(0, N + 1, rec))
    if rec_idx[-1] != N:
        rec_idx.append(N)
    R = len(rec_idx)
    T = np.empty(R)
    Wr = np.empty((R, n))
    Pr = np.empty((R, n))
    Fl = np.empty((R, m))
    Co = np.empty(R)
    Ly = np.full(R, np.nan)
    Sg = np.zeros(R)

    box_viol = np.zeros(n, dtype=int)
    bounded = np.isfinite(net.flow_lo) | np.isfinite(net.flow_hi)
    any_bounded = bool(bounded.any())
    distributed = sc.controller_mode == "distributed"
    viol_max = np.zeros(m)
    band = sc.settle_band_hz
    last_bad = -1
    win = max(1, int(round(STEADY_WINDOW_S / h)))
    steady_w = 0.0
    steady_start = N + 1 - win
    sum_sq, max_w = 0.0, 0.0

    z = np.zeros(nd + m)
    pr = np.zeros(n)
    r = 0
    with np.errstate(over="raise", invalid="raise"):
        try:
            for k in range(N + 1):
                d0 = Dh[2 * k]
                # measurement at t_k with the setpoints currently applied
                omega = Wz @ z + Wu @ pr - Wu_c @ d0
                flows = z[nd:]
                if k % dec == 0:
                    pr = bank.step(omega, flows, h * dec)
                box_viol += (pr < lo) | (pr > hi)
                winf = float(np.max(np.abs(omega))) * w2hz
                sum_sq += float(omega @ omega)
                max_w = max(max_w, winf)
                if winf > band:
                    last_bad = k
                if k >= steady_start:
                    steady_w = max(steady_w, winf)
                if any_bounded:
                    viol_max = np.maximum(viol_max, np.maximum(flows - net.flow_hi,
                                                               net.flow_lo - flows))
                if r < R and rec_idx[r] == k:
                    T[r] = k * h
                    Wr[r] = omega * w2hz
                    Pr[r] = pr * S
                    Fl[r] = flows * S
                    Co[r] = float(np.sum(C * pr * pr))
                    if distributed:
                        Sg[r] = min(bank.sp.min(initial=0.0), bank.sm.min(initial=0.0))
                    if lyap is not None:
                        prob, pg, lay, zs = lyap
                        Ly[r] = lyapunov_value(pack_closed_loop(lay, omega, flows, bank),
                                               zs, prob, pg)
                    r += 1
                if k == N:
                    break
                z = Phi @ z + Gsum @ pr - Gd @ Dh[2 * k:2 * k + 3].reshape(-1)
                if not np.all(np.isfinite(z)):
                    raise IntegrationDiverged((k + 1) * h)
        except FloatingPointError:
            raise IntegrationDiverged((k + 1) * h)

    trace = SimulationTrace(T, Wr, Pr, Fl, Co, Ly, Sg, net.ids,
                            tuple(ln.key for ln in net.lines), net.f0,
                            net.flow_lo * S, net.flow_hi * S)

    limits = sc.controller_mode != "local"
    if oracle is None:
        oracle = solve_ofc(net, final_d, with_line_limits=limits)
    ids = net.ids
    ctrl = np.flatnonzero(net.controllable)
    fin = pr
    if oracle.optimal:
        ocost = oracle.cost
        gap = (Co[-1] - ocost) / max(abs(ocost), 1e-12)
        ref = oracle.setpoints
        err = float(np.max(np.abs(fin[ctrl] - ref[ctrl]) / np.maximum(np.abs(ref[ctrl]), 1e-9))) \
            if ctrl.size else 0.0
        oset = {ids[i]: ref[i] * S for i in ctrl}
    else:
        ocost, gap, err, oset = float("nan"), float("nan"), float("nan"), {}
    keys = [net.lines[e].key for e in np.flatnonzero(bounded)]
    steady_viol = {}
    steady_flow = {}
    for e in np.flatnonzero(bounded):
        a, b = net.lines[e].key
        tail = window_values(trace, Fl[:, e], STEADY_WINDOW_S)
        steady_flow[f"{a}-{b}"] = float(tail[-1])
        steady_viol[f"{a}-{b}"] = float(max(0.0, np.max(tail) - net.flow_hi[e] * S,
                                            net.flow_lo[e] * S - np.min(tail)))
    settled_at = (last_bad + 1) * h if last_bad < N else float("nan")
    rep = MetricsReport(
        mode=sc.controller_mode,
        steady_omega_inf_hz=steady_w,
        settling_time_s=settled_at,
        final_cost=float(Co[-1]),
        oracle_cost=ocost,
        oracle_gap_rel=gap,
        oracle_with_line_limits=limits,
        setpoint_rel_err_max=err,
        final_setpoints_mw={ids[i]: fin[i] * S for i in ctrl},
        oracle_setpoints_mw=oset,
        line_violation_transient_mw={f"{a}-{b}": float(max(viol_max[net.line_index(a, b)], 0.0)) * S
                                     for a, b in keys},
        line_violation_steady_mw=steady_viol,
        steady_flow_mw=steady_flow,
        box_violations={ids[i]: int(box_viol[i]) for i in range(n)},
        sigma_min=float(Sg.min()),
        max_omega_hz=max_w,
        rms_omega_hz=math.sqrt(sum_sq / ((N + 1) * n)) * w2hz,
        steps=N,
        rows=R,
    )
    return trace, rep


def window_values(trace, col, seconds):
    t = trace.t
    return col[t >= t[-1] - seconds - 1e-12]


def run(sc, out_dir=None, oracle=None, lyapunov=True):
    """Simulate and optionally write ``trace.csv`` and ``metrics.json``."""
    trace, rep = simulate(sc, oracle=oracle, lyapunov=lyapunov)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        trace.write_csv(out / "trace.csv")
        rep.write_json(out / "metrics.json")
    return trace, rep


def compare_modes(sc, out_dir=None, modes=("none", "local", "distributed")):
    """Run each controller mode on identical disturbances.

    Returns a dict with per-mode metrics and the steady-state status of
    every bounded line.
    """
    net = sc.network
    final_d = _final_disturbance(sc)
    refs = {True: solve_ofc(net, final_d, True), False: solve_ofc(net, final_d, False)}
    per_mode = {}
    for mode in modes:
        sub = sc.replace(controller_mode=mode)
        out = None if out_dir is None else Path(out_dir) / mode
        _, rep = run(sub, out, oracle=refs[mode != "local"])
        per_mode[mode] = rep
    lines = {}
    for e, ln in enumerate(net.lines):
        if not ln.bounded:
            continue
        name = f"{ln.from_bus}-{ln.to_bus}"
        lines[name] = {
            "bounds_mw": [ln.flow_box[0] * net.s_base, ln.flow_box[1] * net.s_base],
            "steady_flow_mw": {mode: r.steady_flow_mw[name] for mode, r in per_mode.items()},
            "within_bounds": {mode: r.line_violation_steady_mw[name] <= 1e-4
                              for mode, r in per_mode.items()},
        }
    report = {
        "schema": "ofcsim-compare/1",
        "scenario": sc.name,
        "oracle_cost_with_limits": _plain(refs[True].cost),
        "oracle_cost_without_limits": _plain(refs[False].cost),
        "modes": {mode: r.to_dict() for mode, r in per_mode.items()},
        "monitored_lines": lines,
    }
    if "local" in per_mode and "distributed" in per_mode:
        a, b = per_mode["local"].final_cost, per_mode["distributed"].final_cost
        report["local_vs_distributed_cost_rel"] = _plain(abs(a - b) / max(abs(a), abs(b), 1e-12))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.json", "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "comparison.txt", "w") as fh:
            fh.write(format_comparison(report))
    return report


def format_comparison(report):
    rows = [f"scenario {report['scenario']}",
            f"{'mode':<12}{'|w|inf mHz':>12}{'settle s':>10}{'cost':>12}{'gap %':>9}{'box viol':>10}"]
    for mode, d in report["modes"].items():
        gap = d["oracle_gap_rel"]
        st = d["settling_time_s"]
        rows.append(f"{mode:<12}{d['steady_omega_inf_hz'] * 1e3:>12.4f}"
                    f"{(st if st is not None else float('nan')):>10.2f}{d['final_cost']:>12.5f}"
                    f"{(gap if gap is not None else float('nan')) * 100:>9.3f}"
                    f"{sum(d['box_violations'].values()):>10d}")
    for name, info in report["monitored_lines"].items():
        lo, hi = info["bounds_mw"]
        flows = ", ".join(f"{m}={v:+.4f}" for m, v in info["steady_flow_mw"].items())
        rows.append(f"line {name} bounds [{lo:g}, {hi:g}] MW steady flow: {flows}")
    return "\n".join(rows) + "\n"


def _final_disturbance(sc):
    out = np.zeros(sc.network.n)
    for i in sc.disturbance.buses:
        out[i] = sc.disturbance.value(i, sc.duration)
    return out


def with_series(sc, times, power_mw, bus=None, mode="piecewise-linear"):
    """Copy of ``sc`` whose disturbance is one series (MW) at ``bus``.

    ``bus`` defaults to the first disturbed bus of ``sc``.
    """
    net = sc.network
    if bus is None:
        if not sc.disturbance.buses:
            raise ValueError("scenario has no disturbed bus; pass bus=")
        i = sc.disturbance.buses[0]
    else:
        i = net.index_of[bus]
    times = np.asarray(times, dtype=float)
    series = {i: (times, np.asarray(power_mw, dtype=float) / net.s_base)} if times.size else {}
    return sc.replace(disturbance=DisturbanceProfile(net.n, series, mode))


def continuous_disturbance_study(sc, series=None, out_dir=None, bus=None):
    """Local control versus primary-only droop under a time series.

    ``series`` is a CSV path (``time_s, power_MW``); ``None`` keeps the
    scenario's own disturbance. Returns ``(trace, metrics, report)`` for
    the controlled run; ``report`` holds max and RMS frequency deviation
    of both runs.
    """
    if series is not None:
        t, v = read_series_csv(series)
        sc = with_series(sc, t, v, bus)
    out = None if out_dir is None else Path(out_dir)
    tr_c, rep_c = run(sc.replace(controller_mode="local"), None if out is None else out / "local")
    tr_0, rep_0 = run(sc.replace(controller_mode="none"), None if out is None else out / "none")
    report = {"schema": "ofcsim-continuous/1", "scenario": sc.name,
              "local": deviation_stats(rep_c), "none": deviation_stats(rep_0)}
    base = report["none"]["rms_hz"]
    report["rms_ratio"] = report["local"]["rms_hz"] / base if base > 0 else 0.0
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "continuous.json", "w") as fh:
            json.dump(_plain(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    rep_c.extra.update(report)
    return tr_c, rep_c, report


def deviation_stats(rep):
    """Max and RMS frequency deviation over every step and bus (Hz)."""
    return {"max_abs_hz": rep.max_omega_hz, "rms_hz": rep.rms_omega_hz}
