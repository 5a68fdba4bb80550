"""Shared fixtures. Expensive 39-bus runs are computed once per session."""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import pytest

from ofcsim.grid import Bus, Line, NetworkModel, load_scenario
from ofcsim.harness import simulate
from ofcsim.oracle import solve_ofc

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"


def two_bus_net(box=(-1.0, 1.0), flow_box=(-np.inf, np.inf), k=(2.0, 1.0), beta=10.0):
    buses = (Bus(1, "GFM", k[0], beta=beta, box=box, cost=1.0),
             Bus(2, "GFL", k[1], box=box, cost=1.0))
    return NetworkModel(buses, (Line(1, 2, 5.0, flow_box),), 1)


def ring3_net():
    buses = (Bus(1, "GFM", 1.5, beta=8.0, box=(-1, 1), cost=1.0),
             Bus(2, "SG", 1.0, inertia=0.3, box=(-1, 1), cost=2.0),
             Bus(3, "GFL", 0.8, box=(-1, 1), cost=0.5))
    lines = (Line(1, 2, 4.0), Line(2, 3, 3.0), Line(1, 3, 2.0))
    return NetworkModel(buses, lines, 1)


class _Runs:
    """Lazy cache of ``(trace, metrics, wall seconds)`` per (file, mode)."""

    def __init__(self):
        self._cache = {}
        self._oracle = {}

    def scenario(self, name):
        return load_scenario(SCEN / name)

    def oracle(self, name, with_limits):
        key = (name, with_limits)
        if key not in self._oracle:
            sc = self.scenario(name)
            d = np.zeros(sc.network.n)
            for i in sc.disturbance.buses:
                d[i] = sc.disturbance.value(i, sc.duration)
            self._oracle[key] = solve_ofc(sc.network, d, with_limits)
        return self._oracle[key]

    def get(self, name, mode):
        key = (name, mode)
        if key not in self._cache:
            sc = self.scenario(name).replace(controller_mode=mode)
            t0 = time.perf_counter()
            trace, rep = simulate(sc)
            self._cache[key] = (trace, rep, time.perf_counter() - t0)
        return self._cache[key]


_RUNS = _Runs()


@pytest.fixture(scope="session")
def runs():
    return _RUNS


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
