import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ofcsim.grid import Bus, Line, NetworkModel, load_scenario
from ofcsim.oracle import (Infeasible, enumerate_qp, modified_problem, ptdf, reduced_problem,
                           solve_ofc, total_cost, verify_lemma1)
from ofcsim.suites import random_network

from conftest import SCEN, ring3_net

IBR_BUSES = (30, 31, 32, 33, 34, 35, 36, 37, 38, 39)
# frozen optimum of the committed 39-bus step (5 MW generation increase at bus 4)
NOLIM_COST = 2.961538461538459
NOLIM_SETPOINTS = (-4 / 13, -4 / 13, -4 / 13, -8 / 13, -8 / 13, -8 / 13, -1.0, -4 / 13, -8 / 13,
                   -4 / 13)
LIM_COST = 3.7561668422535828
LIM_SETPOINTS = (-0.5807868096236563, -0.49707062517100437, -0.4707173539949335,
                 -0.3527251876964373, -0.3527251876964374, -0.35272518769643735,
                 -0.7054503753928771, -0.5241688164827982, -0.6230443356517054,
                 -0.5405861205937019)


@pytest.fixture(scope="module")
def ieee39():
    sc = load_scenario(SCEN / "ieee39_step.toml")
    d = np.zeros(sc.network.n)
    d[sc.network.index_of[4]] = -5.0
    return sc.network, d


def _at(net, x, ids):
    return np.array([x[net.index_of[b]] for b in ids])


def test_single_bus():
    net = NetworkModel((Bus(1, "GFM", 1.0, beta=1.0, box=(-1, 1), cost=3.0),), (), 1)
    sol = solve_ofc(net, [0.5])
    assert sol.optimal
    assert sol.setpoints[0] == pytest.approx(0.5)
    assert sol.cost == pytest.approx(3.0 * 0.25)


def test_two_bus_symmetry():
    buses = (Bus(1, "GFM", 1.0, beta=1.0, box=(-1, 1), cost=1.0),
             Bus(2, "GFL", 1.0, box=(-1, 1), cost=1.0))
    net = NetworkModel(buses, (Line(1, 2, 10.0),), 1)
    sol = solve_ofc(net, [0.6, 0.0])
    assert sol.setpoints == pytest.approx([0.3, 0.3], abs=1e-10)
    assert sol.flows[0] == pytest.approx(-0.3, abs=1e-10)


def test_ieee39_without_limits(ieee39):
    net, d = ieee39
    sol = solve_ofc(net, d, with_line_limits=False)
    assert sol.optimal and sol.enumerated
    assert sol.cost == pytest.approx(0.5 + 32 / 13, abs=1e-12)
    assert sol.cost == pytest.approx(NOLIM_COST, abs=1e-12)
    assert _at(net, sol.setpoints, IBR_BUSES) == pytest.approx(NOLIM_SETPOINTS, abs=1e-10)
    # unclamped buses share one marginal cost: C_i P_i equal
    free = [b for b in IBR_BUSES if b != 36]
    cp = [net.bus(b).cost * sol.setpoints[net.index_of[b]] for b in free]
    assert np.ptp(cp) <= 1e-10
    assert np.all(sol.setpoints[~net.controllable] == 0)


def test_ieee39_with_limits(ieee39):
    net, d = ieee39
    sol = solve_ofc(net, d, with_line_limits=True)
    assert sol.optimal and sol.enumerated
    assert sol.cost == pytest.approx(LIM_COST, rel=1e-10)
    assert _at(net, sol.setpoints, IBR_BUSES) == pytest.approx(LIM_SETPOINTS, abs=1e-8)
    assert sol.flows[net.line_index(3, 18)] == pytest.approx(0.8, abs=1e-10)
    assert sol.setpoints.sum() == pytest.approx(d.sum(), abs=1e-12)


def test_total_cost_examples(ieee39):
    net, d = ieee39
    assert total_cost(np.zeros(net.n), net) == 0.0
    one = NetworkModel((Bus(1, "GFL", 1.0, box=(-5, 5), cost=2.0),), (), 1)
    assert total_cost([3.0], one) == 18.0


def test_infeasible_status():
    sol = solve_ofc(ring3_net(), [5.0, 0.0, 0.0])
    assert sol.status == "infeasible" and not sol.optimal
    assert np.all(np.isnan(sol.setpoints))
    with pytest.raises(Infeasible):
        verify_lemma1(ring3_net(), [5.0, 0.0, 0.0])


def test_infeasible_line_limits():
    # all capacity on one side of a line that cannot carry the load
    buses = (Bus(1, "GFM", 1.0, beta=1.0, box=(-1, 1), cost=1.0),
             Bus(2, "GFL", 1.0, box=(0, 0), cost=1.0))
    net = NetworkModel(buses, (Line(1, 2, 1.0, (-0.1, 0.1)),), 1)
    assert solve_ofc(net, [0.0, 0.5]).status == "infeasible"
    assert solve_ofc(net, [0.0, 0.5], with_line_limits=False).optimal


def test_ptdf_flows_balance():
    net = ring3_net()
    H, X = ptdf(net)
    inj = np.array([0.3, -0.1, -0.2])
    f = H @ inj
    assert net.incidence @ f == pytest.approx(inj, abs=1e-12)


def test_enumeration_matches_pdg_route():
    rng = np.random.default_rng(9)
    for _ in range(5):
        net = random_network(rng, 3, limit=0.1)
        d = rng.uniform(-0.5, 0.5, 3)
        sol = solve_ofc(net, d, cross_check=False)
        x, c = enumerate_qp(reduced_problem(net, d))
        if not sol.optimal:
            assert x is None
            continue
        assert c == pytest.approx(sol.cost, abs=1e-9)
        assert x == pytest.approx(sol.setpoints, abs=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 1000))
def test_cost_scaling_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3)
    d = rng.uniform(-0.3, 0.3, 3)
    a = solve_ofc(net, d)
    scaled = NetworkModel(tuple(Bus(**{**vars(b), "cost": b.cost * scale}) for b in net.buses),
                          net.lines, net.reference_bus)
    b = solve_ofc(scaled, d)
    assert a.optimal and b.optimal
    assert b.setpoints == pytest.approx(a.setpoints, abs=1e-7)
    assert b.cost == pytest.approx(scale * a.cost, rel=1e-7, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 0.5), st.integers(0, 1000))
def test_line_limits_never_lower_cost(limit, seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, 3, limit=limit)
    d = rng.uniform(-0.5, 0.5, 3)
    lim = solve_ofc(net, d, True)
    free = solve_ofc(net, d, False)
    if lim.optimal:
        assert lim.cost >= free.cost - 1e-9
        e = 0
        assert abs(lim.flows[e]) <= limit + 1e-9


def test_lemma1_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(4):
        net = random_network(rng, 3)
        rep = verify_lemma1(net, rng.uniform(-0.4, 0.4, 3))
        assert rep.passed
        assert rep.omega_inf <= 1e-8
        assert abs(rep.cost_gap) <= 1e-8


def test_lemma1_zero_disturbance():
    rep = verify_lemma1(ring3_net(), np.zeros(3))
    assert rep.passed and rep.cost_ofc == 0.0 and abs(rep.cost_modified) <= 1e-14


def test_lemma1_binding_line_limit():
    net = ring3_net().with_flow_box(1, 2, (-0.05, 0.05))
    d = np.array([0.0, 0.6, 0.3])
    rep = verify_lemma1(net, d)
    assert rep.passed
    sol = solve_ofc(net, d)
    assert abs(sol.flows[0]) == pytest.approx(0.05, abs=1e-10)


def test_modified_problem_shape():
    net = ring3_net()
    prob = modified_problem(net, np.zeros(3))
    assert prob.n == 3 * 3 + 3 and prob.l == 6 and prob.m == 0
    assert modified_problem(net.with_flow_box(1, 2, (-1, 1)), np.zeros(3)).m == 2
