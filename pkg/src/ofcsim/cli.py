"""Command line interface: ``ofcsim {simulate,compare,continuous,verify}``.

Exit status is 0 when the run completed and every checked invariant
held, 1 when an invariant failed and 2 on input or integration errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .grid import CONTROLLER_MODES, ScenarioError, check_scenario, load_scenario
from .harness import compare_modes, continuous_disturbance_study, run
from .plant import IntegrationDiverged
from .suites import SUITES


def _load(args):
    sc = load_scenario(args.scenario)
    kw = {}
    if getattr(args, "dt", None) is not None:
        kw["dt"] = args.dt
    if getattr(args, "duration", None) is not None:
        kw["duration"] = args.duration
    if getattr(args, "record_every", None) is not None:
        kw["record_every"] = args.record_every
    if getattr(args, "controller", None) is not None:
        kw["controller_mode"] = args.controller
    return check_scenario(sc.replace(**kw)) if kw else sc


def _trace_ok(trace, rep):
    dt = np.diff(trace.t)
    uniform = dt.size == 0 or bool(np.all(dt > 0))
    return rep.box_violation_total == 0 and rep.sigma_min >= 0.0 and uniform


def _summary(rep):
    st = rep.settling_time_s
    return (f"mode={rep.mode} steady |df|inf={rep.steady_omega_inf_hz * 1e3:.4f} mHz "
            f"settling={st:.3f} s final cost={rep.final_cost:.6g} "
            f"oracle={rep.oracle_cost:.6g} gap={rep.oracle_gap_rel * 100:+.3f}% "
            f"box violations={rep.box_violation_total}")


def cmd_simulate(args):
    sc = _load(args)
    t0 = time.perf_counter()
    trace, rep = run(sc, args.out)
    print(_summary(rep))
    for name, v in rep.steady_flow_mw.items():
        print(f"line {name}: steady flow {v:+.5f} MW, "
              f"transient excess {rep.line_violation_transient_mw[name]:.5f} MW")
    print(f"rows={trace.rows} wall={time.perf_counter() - t0:.1f} s")
    return 0 if _trace_ok(trace, rep) else 1


def cmd_compare(args):
    sc = _load(args)
    report = compare_modes(sc, args.out)
    from .harness import format_comparison
    sys.stdout.write(format_comparison(report))
    ok = all(sum(d["box_violations"].values()) == 0 for d in report["modes"].values())
    return 0 if ok else 1


def cmd_continuous(args):
    sc = _load(args)
    trace, rep, report = continuous_disturbance_study(sc, args.series, args.out, args.bus)
    for mode in ("none", "local"):
        s = report[mode]
        print(f"{mode:<6} max |df|={s['max_abs_hz'] * 1e3:.4f} mHz rms={s['rms_hz'] * 1e3:.4f} mHz")
    print(f"rms ratio local/none = {report['rms_ratio']:.4f}")
    return 0 if _trace_ok(trace, rep) else 1


def cmd_verify(args):
    names = list(SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        checks = SUITES[name]()
        for c in checks:
            print(f"[{name}] {c.line()}")
            ok &= c.passed
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="ofcsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="run one controller mode on a scenario")
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--controller", choices=CONTROLLER_MODES)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--dt", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--record-every", type=int, dest="record_every")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run none, local and distributed side by side")
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--dt", type=float)
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("continuous", help="local control versus primary droop under a series")
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--series", type=Path, help="two-column CSV (time_s, power_MW)")
    p.add_argument("--bus", type=int, help="bus receiving the series")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--duration", type=float)
    p.set_defaults(func=cmd_continuous)

    p = sub.add_parser("verify", help="run a property suite")
    p.add_argument("--suite", required=True, choices=sorted(SUITES) + ["all"])
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, IntegrationDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
