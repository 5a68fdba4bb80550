"""Regenerate the committed scenario files under ``scenarios/``.

The 39-bus data are repository-chosen: branch reactances of the standard
39-bus test system, susceptance ``30 / x`` per-unit power per radian on
a 1 MVA base, ten IBRs on the generator buses and the remaining 29 buses
modelled as lightly damped inertial (SG-type) buses with zero control
capacity. Droop gains are chosen so that a 5 MW step settles at
60.034 Hz under primary control only.

Usage: python3 scripts/make_scenarios.py [outdir]
"""
import argparse
from pathlib import Path

import numpy as np
import tomli_w

LINES = [
    (1, 2, 0.0411), (1, 39, 0.0250), (2, 3, 0.0151), (2, 25, 0.0086), (2, 30, 0.0181),
    (3, 4, 0.0213), (3, 18, 0.0133), (4, 5, 0.0128), (4, 14, 0.0129), (5, 6, 0.0026),
    (5, 8, 0.0112), (6, 7, 0.0092), (6, 11, 0.0082), (6, 31, 0.0250), (7, 8, 0.0046),
    (8, 9, 0.0363), (9, 39, 0.0250), (10, 11, 0.0043), (10, 13, 0.0043), (10, 32, 0.0200),
    (11, 12, 0.0435), (12, 13, 0.0435), (13, 14, 0.0101), (14, 15, 0.0217), (15, 16, 0.0094),
    (16, 17, 0.0089), (16, 19, 0.0195), (16, 21, 0.0135), (16, 24, 0.0059), (17, 18, 0.0082),
    (17, 27, 0.0173), (19, 20, 0.0138), (19, 33, 0.0142), (20, 34, 0.0180), (21, 22, 0.0140),
    (22, 23, 0.0096), (22, 35, 0.0143), (23, 24, 0.0350), (23, 36, 0.0272), (25, 26, 0.0323),
    (25, 37, 0.0232), (26, 27, 0.0147), (26, 28, 0.0474), (26, 29, 0.0625), (28, 29, 0.0151),
    (29, 38, 0.0156),
]
# IBR number -> (bus, kind, cost coefficient)
IBRS = {
    1: (33, "GFL", 1.0), 2: (34, "GFL", 1.0), 3: (35, "GFL", 1.0), 4: (38, "GFL", 1.0),
    5: (30, "GFL", 2.0), 6: (31, "GFL", 2.0),
    7: (32, "GFM", 2.0), 8: (37, "GFM", 2.0), 9: (39, "GFM", 2.0), 10: (36, "GFM", 0.5),
}
SUSC_SCALE = 30.0
IBR_DROOP = 450.0
LOAD_DROOP = 149.0
LOAD_INERTIA = 0.02
GFM_BETA = 12.0
GFL_BOX, GFL_INIT = [-2.0, 1.0], 2.0
GFM_BOX, GFM_INIT = [-1.0, 1.4], 2.6
# one gain set for both controllers; the local law does not use eps_psi,
# eps_sigma or eps_nu. eps_psi is far below the library default because
# larger values destabilise the virtual-angle modes at dt = 1 ms here.
GAINS = {"eps_pr": 50.0, "eps_nu": 20.0, "eps_psi": 3e-7, "eps_sigma": 20.0,
         "alpha": 0.05, "eps_mu": 1.0}


def ieee39(flow_box_318=None):
    by_bus = {b: (kind, c) for b, kind, c in IBRS.values()}
    buses = []
    for bid in range(1, 40):
        if bid in by_bus:
            kind, c = by_bus[bid]
            d = {"id": bid, "kind": kind, "droop_pu": IBR_DROOP, "cost": c}
            if kind == "GFM":
                d.update(beta=GFM_BETA, box_mw=GFM_BOX, initial_mw=GFM_INIT)
            else:
                d.update(box_mw=GFL_BOX, initial_mw=GFL_INIT)
        else:
            d = {"id": bid, "kind": "SG", "droop_pu": LOAD_DROOP, "inertia": LOAD_INERTIA,
                 "box_mw": [0.0, 0.0], "cost": 0.0}
        buses.append(d)
    lines = []
    for a, b, x in LINES:
        d = {"from": a, "to": b, "susceptance_pu": round(SUSC_SCALE / x, 12)}
        if flow_box_318 is not None and (a, b) == (3, 18):
            d["flow_box_mw"] = list(flow_box_318)
        lines.append(d)
    return buses, lines


def doc(name, buses, lines, dist, mode, gains, duration, ref, record_every):
    ctrl = {"mode": mode}
    ctrl.update(gains)
    return {
        "schema": "ofcsim-scenario/1",
        "name": name,
        "base": {"s_base_mva": 1.0, "f0_hz": 60.0},
        "simulation": {"dt": 1e-3, "duration": duration, "reference_bus": ref,
                       "record_every": record_every, "control_decimation": 1,
                       "settle_band_hz": 0.005},
        "controller": ctrl,
        "buses": buses,
        "lines": lines,
        "disturbance": dist,
    }


STEP = {"mode": "step-hold", "bus": [{"id": 4, "times_s": [0.0, 5.0], "power_mw": [0.0, -5.0]}]}


def synthetic_series(seed=20240501, minutes=10, dt=1.0):
    """Ramp plus correlated noise mimicking a PV plant output swing (MW).

    Returned as net-load deviation, i.e. generation increase is negative.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(0.0, minutes * 60.0 + dt / 2, dt)
    ramp = np.interp(t, [0, 60, 300, 420, 600], [0.0, 0.0, 3.0, 3.0, 1.5])
    noise = np.zeros_like(t)
    a = np.exp(-dt / 20.0)
    for i in range(1, t.size):
        noise[i] = a * noise[i - 1] + np.sqrt(1 - a * a) * 0.4 * rng.standard_normal()
    gen = ramp + noise
    gen[t < 60] = 0.0
    return t, -gen


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", nargs="?", default=str(Path(__file__).resolve().parents[1] / "scenarios"))
    args = ap.parse_args(argv)
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)

    files = {}
    b, l = ieee39((-0.8, 0.8))
    files["ieee39_step.toml"] = doc("ieee39-step-line-limit", b, l, STEP, "distributed",
                                    GAINS, 60.0, 31, 10)
    b, l = ieee39(None)
    files["ieee39_step_nolimits.toml"] = doc("ieee39-step", b, l, STEP, "local",
                                             GAINS, 60.0, 31, 10)
    files["ieee39_continuous.toml"] = doc(
        "ieee39-continuous", b, l,
        {"mode": "piecewise-linear", "bus": [{"id": 4, "csv": "synthetic_pv_10min.csv"}]},
        "local", GAINS, 600.0, 31, 100)
    two = [
        {"id": 1, "kind": "GFM", "droop_pu": 450.0, "beta": GFM_BETA, "box_mw": [-1.0, 1.0],
         "cost": 1.0},
        {"id": 2, "kind": "GFL", "droop_pu": 300.0, "box_mw": [-1.0, 1.0], "cost": 2.0},
    ]
    files["two_bus.toml"] = doc(
        "two-bus", two, [{"from": 1, "to": 2, "susceptance_pu": 1.0, "flow_box_mw": [-0.25, 0.25]}],
        {"mode": "step-hold", "bus": [{"id": 2, "times_s": [0.0, 1.0], "power_mw": [0.0, 0.5]}]},
        "distributed", {"eps_pr": 50.0, "eps_nu": 20.0, "eps_psi": 5.0, "eps_sigma": 20.0,
                        "alpha": 0.05, "eps_mu": 1.0}, 60.0, 1, 10)
    for name, d in files.items():
        with open(out / name, "wb") as fh:
            tomli_w.dump(d, fh)
    t, v = synthetic_series()
    with open(out / "synthetic_pv_10min.csv", "w", newline="") as fh:
        fh.write("# synthetic PV-like net-load deviation; generation increase is negative\n")
        fh.write("time_s,power_mw\n")
        for a, p in zip(t, v):
            fh.write(f"{a:.1f},{p:.6f}\n")
    print("wrote", ", ".join(sorted(files) + ["synthetic_pv_10min.csv"]), "to", out)


if __name__ == "__main__":
    main()
