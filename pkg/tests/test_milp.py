"""Tests for the time-indexed operation model.

No solver here. The model is checked two ways: a census of variables and
rows against hand-derived counts, and substitution of planner trajectories
into every row (self-certification). The LP export is re-read with a small
parser written independently below and compared term by term.
"""

import math
import re
from collections import Counter

import numpy as np
import pytest

from dronetour.errors import HorizonTooShortError
from dronetour.geometry import Ras
from dronetour.milp import (
    LinCon,
    MilpInstance,
    VarDef,
    build_trajectory_milp,
    export_milp,
    max_constraint_violation,
    trajectory_assignment,
)
from dronetour.physics import (
    DronePhysicsParams,
    FlightSpec,
    TimedTruckPath,
    plan_coordinated_flight,
    plan_drone_only_flight,
)


def small_params(n_f=1, T_major=30, **kw):
    """A drone small and slow enough that model horizons stay tiny."""
    base = dict(
        v_max=5.0, a_max=2.5, climb_max=5.0, descent_max=3.0,
        h_lo=0.0, h_hi=12.0, h_min_airborne=2.0, cruise_alt=4.0,
        truck_bed_alt=1.0, delivery_radius=1.0,
        dt_minor=1.0, n_f=n_f, T_major=T_major,
        altitude_band_limits=(0.0, 6.0, 12.0),
        throttle_band_speeds=(0.0, 2.5, 5.0),
        energy_rate=((100.0, 90.0, 110.0), (105.0, 95.0, 115.0)),
        climb_surplus=10.0, battery_capacity=60e3, min_charge=10e3,
        big_m=1e5, ras_clearance=0.5)
    base.update(kw)
    return DronePhysicsParams(**base)


FIXED = dict(start=(0.0, 0.0, 1.0), delivery=(6.0, 0.0, 0.0),
             end=(10.0, 0.0, 1.0))


def build_and_certify(spec, p, mode="min_time", t_o_star=None):
    traj = (plan_coordinated_flight if spec.is_coordinated
            else plan_drone_only_flight)(spec, p)
    inst = build_trajectory_milp(spec, p, mode=mode, t_o_star=t_o_star)
    asg = trajectory_assignment(inst, traj, spec, p)
    assert set(asg) == {v.name for v in inst.variables}
    return inst, asg, max_constraint_violation(inst, asg)


# ---------------------------------------------------------------------------
# census
# ---------------------------------------------------------------------------

def expected_var_census(p, coordinated, mode, n_faces=0):
    NV = p.n_minor + 1
    T = p.T_major
    census = {
        "r": 3 * NV, "v": 2 * NV, "a": 2 * NV,
        "v^z+": NV, "v^z-": NV, "g": NV,
        "v^A": 2 * NV, "v^P": 2 * NV, "v^M": NV, "v^D": NV, "v^L2": NV,
        "a^A": 2 * NV, "a^P": 2 * NV, "a^M": NV, "a^D": NV, "a^L2": NV,
        "b": T, "b^+": T, "b^-": T, "d": T,
        "s": T * p.n_alt_bands * p.n_throttle_bands,
        "w": 3 * T, "w^A": 3 * T, "w^P": 3 * T,
        "w^LA": T, "w^DA": T, "w^LB": T, "w^DB": T, "w^L2": T,
    }
    if n_faces:
        census["f"] = n_faces * T
    if mode == "min_time":
        census["t_o"] = 1
    else:
        census["g_o^T"] = 1
    return census


def expected_row_census(p, coordinated, mode, n_faces=0):
    N = p.n_minor
    NV = N + 1
    T = p.T_major
    census = {
        "air": T, "takeoff": T - 1, "landing": T - 1,
        "del": 4 * T + 1,
        "alt": 2 * NV + N,          # floor/ceiling plus the h_min rule
        "start": 3, "end": 3,
        "climb": NV, "desc": NV, "speed": NV, "acc": NV,
        "soc": 2 * NV + 1 + N,
        "band": T + 4 * NV,
        "nv": 13 * NV, "na": 13 * NV, "nw": 21 * T,
    }
    if coordinated:
        census["touch"] = 10 * NV
        census["dyn"] = 8 * N + N   # big-M pairs plus vertical equalities
        census["dynv"] = 8 * N
    else:
        census["dyn"] = 2 * N + N
        census["dynv"] = 2 * N
    if mode == "min_time":
        census["dur"] = T + (1 if coordinated else 0)
    else:
        census["dur"] = T
        census["got"] = 1
    if n_faces:
        census["ras"] = n_faces * NV + T
    return census


def census_of(inst):
    vars_by_symbol = Counter(v.symbol for v in inst.variables)
    rows_by_family = Counter(c.name.split("_")[0] for c in inst.constraints)
    return dict(vars_by_symbol), dict(rows_by_family)


def test_census_fixed_end():
    p = small_params()
    inst = build_trajectory_milp(FlightSpec(**FIXED), p)
    got_vars, got_rows = census_of(inst)
    assert got_vars == expected_var_census(p, False, "min_time")
    assert got_rows == expected_row_census(p, False, "min_time")


def test_census_coordinated():
    p = small_params(n_f=2, T_major=15)
    path = TimedTruckPath.stationary((0.0, 0.0), p.dt_minor, p.horizon_s)
    spec = FlightSpec(start=(0.0, 0.0, 1.0), delivery=(6.0, 0.0, 0.0), end=path)
    inst = build_trajectory_milp(spec, p)
    got_vars, got_rows = census_of(inst)
    assert got_vars == expected_var_census(p, True, "min_time")
    assert got_rows == expected_row_census(p, True, "min_time")


def test_census_min_energy():
    p = small_params()
    inst = build_trajectory_milp(FlightSpec(**FIXED), p,
                                 mode="min_energy_given", t_o_star=12.0)
    got_vars, got_rows = census_of(inst)
    assert got_vars == expected_var_census(p, False, "min_energy_given")
    assert got_rows == expected_row_census(p, False, "min_energy_given")


def test_census_with_restricted_airspace():
    p = small_params(T_major=40)
    box = Ras.from_box(4.0, 6.0, -3.0, 3.0, 0.0, 12.0, name="tower")
    spec = FlightSpec(start=(0.0, 0.0, 1.0), delivery=(10.0, 0.0, 0.0),
                      end=(10.0, 0.0, 1.0), ras_list=(box,))
    inst = build_trajectory_milp(spec, p)
    got_vars, got_rows = census_of(inst)
    assert got_vars == expected_var_census(p, False, "min_time", n_faces=6)
    assert got_rows == expected_row_census(p, False, "min_time", n_faces=6)


def test_horizon_must_cover_the_flight():
    with pytest.raises(HorizonTooShortError):
        build_trajectory_milp(FlightSpec(**FIXED), small_params(T_major=10))


def test_identical_rebuild():
    p = small_params()
    spec = FlightSpec(**FIXED)
    assert export_milp(build_trajectory_milp(spec, p)) == \
        export_milp(build_trajectory_milp(spec, p))


# ---------------------------------------------------------------------------
# self-certification
# ---------------------------------------------------------------------------

def test_fixed_end_flight_certifies():
    _, _, (viol, name) = build_and_certify(FlightSpec(**FIXED), small_params())
    assert viol <= 1e-6, name


def test_fixed_end_flight_certifies_multi_minor():
    p = small_params(n_f=2, T_major=15)
    _, _, (viol, name) = build_and_certify(FlightSpec(**FIXED), p)
    assert viol <= 1e-6, name


def test_parked_truck_flight_certifies():
    p = small_params(n_f=2, T_major=15)
    path = TimedTruckPath.stationary((0.0, 0.0), p.dt_minor, p.horizon_s)
    spec = FlightSpec(start=(0.0, 0.0, 1.0), delivery=(6.0, 0.0, 0.0), end=path)
    _, _, (viol, name) = build_and_certify(spec, p)
    assert viol <= 1e-6, name


def test_moving_truck_flight_certifies():
    p = small_params(n_f=2, T_major=20)
    path = TimedTruckPath.from_waypoints(
        [(0.0, 0.0, 0.0), (10.0, 0.0, 0.0), (25.0, 0.0, 30.0)],
        p.dt_minor, horizon_s=p.horizon_s)
    spec = FlightSpec(start=(0.0, 0.0, 1.0), delivery=(6.0, 4.0, 0.0), end=path)
    inst, asg, (viol, name) = build_and_certify(spec, p)
    assert viol <= 1e-6, name
    assert asg["t_o"] == pytest.approx(25.0)  # truck arrives after the drone


def test_detour_around_restricted_airspace_certifies():
    p = small_params(T_major=40)
    box = Ras.from_box(4.0, 6.0, -3.0, 3.0, 0.0, 12.0, name="tower")
    spec = FlightSpec(start=(0.0, 0.0, 1.0), delivery=(10.0, 0.0, 0.0),
                      end=(10.0, 0.0, 1.0), ras_list=(box,))
    inst, asg, (viol, name) = build_and_certify(spec, p)
    assert viol <= 1e-6, name
    # at least one face flag is set for every major
    T = p.T_major
    for m in range(T):
        assert sum(asg[f"f_0_{n}_{m}"] for n in range(6)) >= 1.0


def test_min_energy_mode_certifies_with_enough_time():
    p = small_params()
    inst, asg, (viol, name) = build_and_certify(
        FlightSpec(**FIXED), p, mode="min_energy_given", t_o_star=12.0)
    assert viol <= 1e-6, name
    assert asg["got"] == asg[f"g_{p.n_minor}"] > 0.0


def test_min_energy_mode_flags_impossible_deadline():
    p = small_params()
    _, _, (viol, name) = build_and_certify(
        FlightSpec(**FIXED), p, mode="min_energy_given", t_o_star=0.0)
    assert viol > 1e-3
    assert name.startswith("dur_cap")


def test_checker_catches_a_misplaced_delivery_flag():
    p = small_params()
    inst, asg, (viol, _) = build_and_certify(FlightSpec(**FIXED), p)
    assert viol <= 1e-6
    moved = dict(asg)
    flagged = next(m for m in range(p.T_major) if asg[f"d_{m}"] == 1.0)
    moved[f"d_{flagged}"] = 0.0
    moved["d_3"] = 1.0
    viol, name = max_constraint_violation(inst, moved)
    assert viol > 0.5
    assert name == "del_close_3"


# ---------------------------------------------------------------------------
# LP round-trip with an independent parser
# ---------------------------------------------------------------------------

_RHS = re.compile(r"(<=|>=|=)\s*([^\s<>=]+)\s*$")


def _parse_expr(s):
    toks = s.split()
    out = {}
    sign = 1.0
    i = 0
    while i < len(toks):
        tok = toks[i]
        if tok == "+":
            sign = 1.0
            i += 1
        elif tok == "-":
            sign = -1.0
            i += 1
        else:
            out[toks[i + 1]] = out.get(toks[i + 1], 0.0) + sign * float(tok)
            sign = 1.0
            i += 2
    return out


def parse_lp(text):
    obj, cons, bounds, binaries = {}, [], {}, []
    section = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        key = line.lower()
        if key in ("minimize", "subject to", "bounds", "binaries", "end"):
            section = key
            continue
        if section == "minimize":
            _, expr = line.split(":", 1)
            obj = _parse_expr(expr)
        elif section == "subject to":
            name, rest = line.split(":", 1)
            m = _RHS.search(rest)
            cons.append((name.strip(), _parse_expr(rest[:m.start()]),
                         m.group(1), float(m.group(2))))
        elif section == "bounds":
            toks = line.split()
            if toks[-1] == "free":
                bounds[toks[0]] = (-math.inf, math.inf)
            elif len(toks) == 5:                      # lo <= x <= hi
                bounds[toks[2]] = (float(toks[0]), float(toks[4]))
            else:                                     # x >= lo
                bounds[toks[0]] = (float(toks[2]), math.inf)
        elif section == "binaries":
            binaries.extend(line.split())
    return obj, cons, bounds, set(binaries)


def test_lp_round_trip_is_identity():
    p = small_params()
    spec = FlightSpec(**FIXED)
    inst = build_trajectory_milp(spec, p)
    obj, cons, bounds, binaries = parse_lp(export_milp(inst))

    names = [v.name for v in inst.variables]
    assert obj == {names[i]: c for i, c in inst.objective}
    assert len(cons) == len(inst.constraints)
    for got, want in zip(cons, inst.constraints):
        assert got[0] == want.name
        assert got[1] == {names[i]: c for i, c in want.coeffs}
        assert got[2] == want.sense
        assert got[3] == want.rhs
    for v in inst.variables:
        if v.kind == "binary":
            assert v.name in binaries
        else:
            assert v.name not in binaries
            lo, hi = bounds.get(v.name, (0.0, math.inf))
            assert (lo, hi) == (v.lb, v.ub)


def test_export_handles_an_empty_objective():
    inst = MilpInstance()
    inst.variables.append(VarDef("x", "continuous", 0.0, math.inf, "x"))
    inst.constraints.append(LinCon("row", ((0, 1.0),), ">=", 1.0))
    text = export_milp(inst)
    assert " obj:" in text
    assert "row: 1 x >= 1" in text
    assert text.rstrip().endswith("End")
