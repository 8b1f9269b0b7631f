"""Time-indexed mixed-integer model of one drone operation, plus LP export.

The planner never solves this model; it exists so the trajectories built in
`physics` can be checked constraint by constraint (self-certification) and
exported for an external solver. The builder emits every constraint family of
the operation model: duration bounds, truck coupling, big-M kinematics,
airborne flags, delivery proximity, flight envelope, the banded energy ledger,
restricted airspace, and the blended-norm linearisations.

A handful of faithful relaxations are required to make the written model
consistent with any physically realisable flight; each is marked RELAXED in
the emitting code with the reason:

* grounded states sit on the truck bed, so the altitude ceiling and the
  speed/acceleration caps get an extra M(1-b) of slack when grounded
  (otherwise a drone riding a moving truck would be infeasible),
* the minimum-airborne-altitude rule exempts windows of majors around
  take-off, landing and delivery, wide enough for the climb and descent
  phases (the single-major delivery exemption cannot admit any profile whose
  dip through h_min outlasts one major),
* the band-selection equalities are windows: band speed within half a band
  gap plus the worst in-major speed drift, band altitude widened by the worst
  in-major altitude drift (exact equality between a continuous speed and a
  discrete band speed is unsatisfiable).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import HorizonTooShortError
from .geometry import LAMBDA_2D, LAMBDA_3D
from .physics import (
    DronePhysicsParams,
    FlightSpec,
    TimedTruckPath,
    Trajectory,
    plan_coordinated_flight,
    plan_drone_only_flight,
)

_AXES3 = ("x", "y", "z")
_AXES2 = ("x", "y")


@dataclass(frozen=True)
class VarDef:
    name: str
    kind: str            # "continuous" | "binary"
    lb: float
    ub: float
    symbol: str          # model symbol family, e.g. "r", "b^+", "w^LA"


@dataclass(frozen=True)
class LinCon:
    name: str
    coeffs: Tuple[Tuple[int, float], ...]
    sense: str           # "<=", ">=", "="
    rhs: float


@dataclass
class MilpInstance:
    """A fully materialised instance: declared variables, rows, objective."""

    variables: List[VarDef] = field(default_factory=list)
    constraints: List[LinCon] = field(default_factory=list)
    objective: List[Tuple[int, float]] = field(default_factory=list)
    mode: str = "min_time"
    meta: Dict = field(default_factory=dict)

    def var_index(self) -> Dict[str, int]:
        return {v.name: i for i, v in enumerate(self.variables)}

    def count_by_prefix(self, prefix: str) -> int:
        return sum(1 for c in self.constraints if c.name.startswith(prefix))


class _Emitter:
    def __init__(self, inst: MilpInstance):
        self.inst = inst
        self._names = set()

    def var(self, name: str, kind: str, lb: float, ub: float, symbol: str) -> int:
        if name in self._names:
            raise ValueError(f"duplicate variable {name}")
        self._names.add(name)
        self.inst.variables.append(VarDef(name, kind, lb, ub, symbol))
        return len(self.inst.variables) - 1

    def con(self, name: str, terms: Sequence[Tuple[int, float]], sense: str,
            rhs: float) -> None:
        merged: Dict[int, float] = {}
        for idx, coef in terms:
            if coef != 0.0:
                merged[idx] = merged.get(idx, 0.0) + coef
        self.inst.constraints.append(
            LinCon(name, tuple(sorted(merged.items())), sense, rhs))


def _major_of(t: int, n_f: int, n_major: int) -> int:
    # the closing tick of the horizon is read with the last major's flags
    return min(t // n_f, n_major - 1)


def _extended_track(path: TimedTruckPath, n_ticks: int) -> Tuple[np.ndarray, np.ndarray]:
    """Truck positions/velocities out to the model horizon, parked at the end."""
    pt = np.tile(path.points[-1], (n_ticks, 1))
    vt = np.zeros((n_ticks, 2))
    k = min(len(path.points), n_ticks)
    pt[:k] = path.points[:k]
    vt[:k] = path.velocities[:k]
    if k < n_ticks:
        vt[k - 1] = 0.0  # parked from the last real sample onwards
    return pt, vt


def _window_majors(spec: FlightSpec, params: DronePhysicsParams):
    """Exemption widths (in majors) for the minimum-altitude rule."""
    from .physics import _vertical_ticks  # shared tick arithmetic

    dt, n_f = params.dt_minor, params.n_f
    n_up = _vertical_ticks(params.cruise_alt - spec.start[2], params.climb_max, dt)
    w_takeoff = n_up // n_f + 2
    n_dn = _vertical_ticks(spec.delivery[2] - params.cruise_alt,
                           params.descent_max, dt)
    n_up2 = _vertical_ticks(params.cruise_alt - spec.delivery[2],
                            params.climb_max, dt)
    w_delivery = (max(n_dn, n_up2) + n_f - 1) // n_f + 2
    if spec.is_coordinated:
        n_land = max(
            _vertical_ticks(params.truck_bed_alt - params.cruise_alt,
                            params.descent_max, dt),
            int(math.ceil(params.v_max / (params.a_max * dt) - 1e-12)))
    else:
        n_land = _vertical_ticks(float(spec.end[2]) - params.cruise_alt,
                                 params.descent_max, dt)
    w_landing = n_land // n_f + 2
    return w_takeoff, w_delivery, w_landing


def build_trajectory_milp(spec: FlightSpec, params: DronePhysicsParams,
                          mode: str = "min_time",
                          t_o_star: Optional[float] = None) -> MilpInstance:
    """Materialise the operation model for one flight specification.

    mode "min_time" minimises the operation clock t_o; "min_energy_given"
    minimises final energy subject to finishing within the supplied t_o_star.
    The coupled variant (truck path end) carries the touch constraints and
    big-M kinematics; the fixed-end variant uses unconditional dynamics.
    Raises HorizonTooShortError unless the model horizon is at least 1.5x the
    reference flight's duration.
    """
    if mode not in ("min_time", "min_energy_given"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "min_energy_given" and t_o_star is None:
        raise ValueError("min_energy_given requires t_o_star")

    coordinated = spec.is_coordinated
    reference = (plan_coordinated_flight if coordinated
                 else plan_drone_only_flight)(spec, params)
    if params.horizon_s < 1.5 * reference.duration - 1e-9:
        raise HorizonTooShortError(
            f"horizon {params.horizon_s:.0f} s < 1.5 x flight "
            f"duration {reference.duration:.0f} s")

    T = params.T_major
    n_f = params.n_f
    dt = params.dt_minor
    N = params.n_minor
    M = params.big_m
    I = params.n_alt_bands
    J = params.n_throttle_bands
    H = params.altitude_band_limits
    theta = params.throttle_band_speeds
    gaps = [b - a for a, b in zip(theta, theta[1:])]
    w_speed = max(gaps) / 2.0 + params.a_max * dt * (n_f - 1)
    w_alt = max(params.climb_max, params.descent_max) * dt * (n_f - 1)
    w_to, w_dl, w_ld = _window_majors(spec, params)

    inst = MilpInstance(mode=mode, meta={
        "n_major": T, "n_f": n_f, "dt_minor": dt,
        "coordinated": coordinated,
        "truck_arrival_s": spec.end.arrival_s if coordinated else 0.0,
        "t_o_star": t_o_star,
        "n_ras": len(spec.ras_list),
    })
    em = _Emitter(inst)
    inf = math.inf

    # ----- variables -------------------------------------------------------
    r = np.array([[em.var(f"r_{ax}_{t}", "continuous", -inf, inf, "r")
                   for ax in _AXES3] for t in range(N + 1)])
    v = np.array([[em.var(f"v_{ax}_{t}", "continuous", -inf, inf, "v")
                   for ax in _AXES2] for t in range(N + 1)])
    a = np.array([[em.var(f"a_{ax}_{t}", "continuous", -inf, inf, "a")
                   for ax in _AXES2] for t in range(N + 1)])
    vzp = np.array([em.var(f"vzp_{t}", "continuous", 0.0, inf, "v^z+")
                    for t in range(N + 1)])
    vzm = np.array([em.var(f"vzm_{t}", "continuous", 0.0, inf, "v^z-")
                    for t in range(N + 1)])
    g = np.array([em.var(f"g_{t}", "continuous", -inf, inf, "g")
                  for t in range(N + 1)])

    def norm2_vars(stem):
        A = np.array([[em.var(f"{stem}A_{ax}_{t}", "continuous", 0.0, inf,
                              f"{stem}^A") for ax in _AXES2]
                      for t in range(N + 1)])
        Pp = np.array([[em.var(f"{stem}P_{ax}_{t}", "binary", 0.0, 1.0,
                               f"{stem}^P") for ax in _AXES2]
                       for t in range(N + 1)])
        Mx = np.array([em.var(f"{stem}M_{t}", "continuous", 0.0, inf,
                              f"{stem}^M") for t in range(N + 1)])
        D = np.array([em.var(f"{stem}D_{t}", "binary", 0.0, 1.0, f"{stem}^D")
                      for t in range(N + 1)])
        L2 = np.array([em.var(f"{stem}L2_{t}", "continuous", 0.0, inf,
                              f"{stem}^L2") for t in range(N + 1)])
        return A, Pp, Mx, D, L2

    vA, vP, vM, vD, vL2 = norm2_vars("v")
    aA, aP, aM, aD, aL2 = norm2_vars("a")

    b = np.array([em.var(f"b_{m}", "binary", 0, 1, "b") for m in range(T)])
    bp = np.array([em.var(f"bp_{m}", "binary", 0, 1, "b^+") for m in range(T)])
    bm = np.array([em.var(f"bm_{m}", "binary", 0, 1, "b^-") for m in range(T)])
    d = np.array([em.var(f"d_{m}", "binary", 0, 1, "d") for m in range(T)])
    s = np.array([[[em.var(f"s_{m}_{i}_{j}", "binary", 0, 1, "s")
                    for j in range(J)] for i in range(I)] for m in range(T)])
    w = np.array([[em.var(f"w_{ax}_{m}", "continuous", -inf, inf, "w")
                   for ax in _AXES3] for m in range(T)])
    wA = np.array([[em.var(f"wA_{ax}_{m}", "continuous", 0.0, inf, "w^A")
                    for ax in _AXES3] for m in range(T)])
    wP = np.array([[em.var(f"wP_{ax}_{m}", "binary", 0, 1, "w^P")
                    for ax in _AXES3] for m in range(T)])
    wLA = np.array([em.var(f"wLA_{m}", "continuous", 0.0, inf, "w^LA")
                    for m in range(T)])
    wDA = np.array([em.var(f"wDA_{m}", "binary", 0, 1, "w^DA") for m in range(T)])
    wLB = np.array([em.var(f"wLB_{m}", "continuous", 0.0, inf, "w^LB")
                    for m in range(T)])
    wDB = np.array([em.var(f"wDB_{m}", "binary", 0, 1, "w^DB") for m in range(T)])
    wL2 = np.array([em.var(f"wL2_{m}", "continuous", 0.0, inf, "w^L2")
                    for m in range(T)])
    f = [np.array([[em.var(f"f_{q}_{n}_{m}", "binary", 0, 1, "f")
                    for m in range(T)] for n in range(len(ras._b))])
         for q, ras in enumerate(spec.ras_list)]

    if mode == "min_time":
        t_o = em.var("t_o", "continuous", 0.0, inf, "t_o")
        inst.objective = [(t_o, 1.0)]
    else:
        got = em.var("got", "continuous", 0.0, inf, "g_o^T")
        inst.objective = [(got, 1.0)]

    mof = [_major_of(t, n_f, T) for t in range(N + 1)]
    if coordinated:
        PT, VT = _extended_track(spec.end, N + 1)

    # ----- operation clock -------------------------------------------------
    if mode == "min_time":
        for m in range(T):
            em.con(f"dur_air_{m}", [(b[m], (m + 1) * n_f * dt), (t_o, -1.0)],
                   "<=", 0.0)
        if coordinated:
            em.con("dur_truck", [(t_o, 1.0)], ">=", spec.end.arrival_s)
    else:
        for m in range(T):
            em.con(f"dur_cap_{m}", [(b[m], (m + 1) * n_f * dt)], "<=",
                   float(t_o_star))
        em.con("got_def", [(got, 1.0), (g[N], -1.0)], "=", 0.0)

    # ----- truck coupling (coupled variant only) ----------------------------
    if coordinated:
        for t in range(N + 1):
            bb = b[mof[t]]
            em.con(f"touch_z_{t}_lo", [(r[t][2], 1.0), (bb, M)], ">=",
                   params.truck_bed_alt)
            em.con(f"touch_z_{t}_up", [(r[t][2], 1.0), (bb, -M)], "<=",
                   params.truck_bed_alt)
            for ax in range(2):
                em.con(f"touch_{_AXES2[ax]}_{t}_lo",
                       [(r[t][ax], 1.0), (bb, M)], ">=", float(PT[t][ax]))
                em.con(f"touch_{_AXES2[ax]}_{t}_up",
                       [(r[t][ax], 1.0), (bb, -M)], "<=", float(PT[t][ax]))
            for ax in range(2):
                em.con(f"touch_v{_AXES2[ax]}_{t}_lo",
                       [(v[t][ax], 1.0), (bb, M)], ">=", float(VT[t][ax]))
                em.con(f"touch_v{_AXES2[ax]}_{t}_up",
                       [(v[t][ax], 1.0), (bb, -M)], "<=", float(VT[t][ax]))

    # ----- horizontal kinematics -------------------------------------------
    half = 0.5 * dt * dt
    for t in range(N):
        for ax in range(2):
            pos_terms = [(r[t + 1][ax], 1.0), (r[t][ax], -1.0),
                         (v[t][ax], -dt), (a[t][ax], -half)]
            vel_terms = [(v[t + 1][ax], 1.0), (v[t][ax], -1.0), (a[t][ax], -dt)]
            if coordinated:
                for tag, flag in (("next", b[mof[t + 1]]), ("cur", b[mof[t]])):
                    em.con(f"dyn_{_AXES2[ax]}_{tag}_{t}_lo",
                           pos_terms + [(flag, -M)], ">=", -M)
                    em.con(f"dyn_{_AXES2[ax]}_{tag}_{t}_up",
                           pos_terms + [(flag, M)], "<=", M)
                    em.con(f"dynv_{_AXES2[ax]}_{tag}_{t}_lo",
                           vel_terms + [(flag, -M)], ">=", -M)
                    em.con(f"dynv_{_AXES2[ax]}_{tag}_{t}_up",
                           vel_terms + [(flag, M)], "<=", M)
            else:
                em.con(f"dyn_{_AXES2[ax]}_{t}", pos_terms, "=", 0.0)
                em.con(f"dynv_{_AXES2[ax]}_{t}", vel_terms, "=", 0.0)

    # ----- airborne flags ---------------------------------------------------
    for m in range(T):
        em.con(f"air_and_{m}", [(b[m], 1.0), (bp[m], -1.0), (bm[m], -1.0)],
               "=", -1.0)
    for m in range(T - 1):
        em.con(f"takeoff_mono_{m}", [(bp[m], 1.0), (bp[m + 1], -1.0)], "<=", 0.0)
        em.con(f"landing_mono_{m}", [(bm[m + 1], 1.0), (bm[m], -1.0)], "<=", 0.0)

    # ----- delivery ---------------------------------------------------------
    for m in range(T):
        for ax in range(3):
            em.con(f"del_vec_{_AXES3[ax]}_{m}",
                   [(w[m][ax], 1.0), (r[m * n_f][ax], -1.0)], "=",
                   -float(spec.delivery[ax]))
        em.con(f"del_close_{m}", [(wL2[m], 1.0), (d[m], M)], "<=",
               params.delivery_radius + M)
    em.con("del_once", [(d[m], 1.0) for m in range(T)], "=", 1.0)

    # ----- flight envelope --------------------------------------------------
    for t in range(N + 1):
        bb = b[mof[t]]
        em.con(f"alt_lo_{t}", [(r[t][2], 1.0), (bb, -params.h_lo)], ">=", 0.0)
        # RELAXED: grounded states sit at the truck bed, not at altitude zero
        em.con(f"alt_hi_{t}", [(r[t][2], 1.0), (bb, -params.h_hi + M)], "<=", M)
    for t in range(1, N + 1):
        m = mof[t]
        # RELAXED: windows of majors around take-off, delivery and landing
        # are exempt so the climb/descent dips through h_min stay feasible
        terms = [(r[t][2], 1.0), (b[m], -params.h_min_airborne)]
        for mm in range(max(0, m - w_dl), min(T, m + w_dl + 1)):
            terms.append((d[mm], M))
        terms.append((bp[m], M))
        if m - w_to >= 0:
            terms.append((bp[m - w_to], -M))
        terms.append((bm[m], M))
        if m + w_ld < T:
            terms.append((bm[m + w_ld], -M))
        em.con(f"alt_min_{t}", terms, ">=", 0.0)
    for ax in range(3):
        em.con(f"start_{_AXES3[ax]}", [(r[0][ax], 1.0)], "=",
               float(spec.start[ax]))
    end_pt = (np.array([PT[N][0], PT[N][1], params.truck_bed_alt])
              if coordinated else spec.end)
    for ax in range(3):
        em.con(f"end_{_AXES3[ax]}", [(r[N][ax], 1.0)], ">=", float(end_pt[ax]))
    for t in range(N):
        em.con(f"dyn_z_{t}", [(r[t + 1][2], 1.0), (r[t][2], -1.0),
                              (vzp[t], -dt), (vzm[t], dt)], "=", 0.0)
    for t in range(N + 1):
        bb = b[mof[t]]
        em.con(f"climb_cap_{t}", [(vzp[t], 1.0), (bb, -params.climb_max)],
               "<=", 0.0)
        em.con(f"desc_cap_{t}", [(vzm[t], 1.0), (bb, -params.descent_max)],
               "<=", 0.0)
        # RELAXED: a grounded drone rides the truck, so the caps only bind
        # while airborne
        em.con(f"speed_cap_{t}", [(vL2[t], 1.0), (bb, -params.v_max + M)],
               "<=", M)
        em.con(f"acc_cap_{t}", [(aL2[t], 1.0), (bb, -params.a_max + M)],
               "<=", M)

    # ----- energy ledger ----------------------------------------------------
    for t in range(N + 1):
        em.con(f"soc_lo_{t}", [(g[t], 1.0)], ">=", 0.0)
        em.con(f"soc_hi_{t}", [(g[t], 1.0)], "<=", params.usable_energy)
    em.con("soc_init", [(g[0], 1.0)], "=", 0.0)
    for t in range(N):
        terms = [(g[t + 1], 1.0), (g[t], -1.0), (vzp[t], -dt * params.climb_surplus)]
        m = mof[t]
        for i in range(I):
            for j in range(J):
                terms.append((s[m][i][j], -dt * params.energy_rate[i][j]))
        em.con(f"soc_step_{t}", terms, "=", 0.0)
    for m in range(T):
        em.con(f"band_onehot_{m}",
               [(s[m][i][j], 1.0) for i in range(I) for j in range(J)]
               + [(b[m], -1.0)], "=", 0.0)
    for t in range(N + 1):
        m = mof[t]
        # RELAXED: equality between the continuous speed and the discrete band
        # speed becomes a window of half a band gap plus the in-major drift
        speed_terms = [(s[m][i][j], theta[j]) for i in range(I) for j in range(J)]
        em.con(f"band_speed_{t}_lo",
               [(vL2[t], 1.0)] + [(ix, -c) for ix, c in speed_terms],
               ">=", -w_speed)
        em.con(f"band_speed_{t}_up",
               [(vL2[t], 1.0)] + [(ix, -c) for ix, c in speed_terms]
               + [(b[m], M)], "<=", w_speed + M)
        alt_lo = [(s[m][i][j], H[i]) for i in range(I) for j in range(J)]
        alt_hi = [(s[m][i][j], H[i + 1]) for i in range(I) for j in range(J)]
        # RELAXED: widened by the worst altitude drift inside one major; the
        # upper side is freed while grounded (truck bed above band zero)
        em.con(f"band_alt_{t}_lo",
               [(r[t][2], 1.0)] + [(ix, -c) for ix, c in alt_lo],
               ">=", -w_alt)
        em.con(f"band_alt_{t}_up",
               [(r[t][2], 1.0)] + [(ix, -c) for ix, c in alt_hi]
               + [(b[m], M)], "<=", w_alt + M)

    # ----- restricted airspace ----------------------------------------------
    for q, ras in enumerate(spec.ras_list):
        A, rhs = ras._A, ras._b
        for n in range(len(rhs)):
            for t in range(N + 1):
                m = mof[t]
                em.con(f"ras_{q}_{n}_{t}",
                       [(r[t][ax], float(A[n][ax])) for ax in range(3)]
                       + [(f[q][n][m], -M)], ">=", float(rhs[n]) - M)
        for m in range(T):
            em.con(f"ras_pick_{q}_{m}",
                   [(f[q][n][m], 1.0) for n in range(len(rhs))], ">=", 1.0)

    # ----- blended-norm linearisations --------------------------------------
    def emit_abs(name, val_ix, abs_ix, pick_ix):
        em.con(f"{name}_a", [(abs_ix, 1.0), (val_ix, -1.0)], ">=", 0.0)
        em.con(f"{name}_b", [(abs_ix, 1.0), (val_ix, 1.0)], ">=", 0.0)
        em.con(f"{name}_c", [(abs_ix, 1.0), (val_ix, -1.0), (pick_ix, -M)],
               "<=", 0.0)
        em.con(f"{name}_d", [(abs_ix, 1.0), (val_ix, 1.0), (pick_ix, M)],
               "<=", M)

    def emit_max2(name, lhs_ix, u_ix, v_ix, pick_ix):
        em.con(f"{name}_a", [(lhs_ix, 1.0), (u_ix, -1.0)], ">=", 0.0)
        em.con(f"{name}_b", [(lhs_ix, 1.0), (v_ix, -1.0)], ">=", 0.0)
        em.con(f"{name}_c", [(lhs_ix, 1.0), (u_ix, -1.0), (pick_ix, -M)],
               "<=", 0.0)
        em.con(f"{name}_d", [(lhs_ix, 1.0), (v_ix, -1.0), (pick_ix, M)],
               "<=", M)

    for stem, val, Av, Pv, Mv, Dv, Lv in (
            ("nv", v, vA, vP, vM, vD, vL2), ("na", a, aA, aP, aM, aD, aL2)):
        lam = LAMBDA_2D
        for t in range(N + 1):
            for ax in range(2):
                emit_abs(f"{stem}_abs_{_AXES2[ax]}_{t}", val[t][ax],
                         Av[t][ax], Pv[t][ax])
            emit_max2(f"{stem}_max_{t}", Mv[t], Av[t][0], Av[t][1], Dv[t])
            em.con(f"{stem}_blend_{t}",
                   [(Lv[t], 1.0), (Av[t][0], -lam), (Av[t][1], -lam),
                    (Mv[t], -(1.0 - lam))], "=", 0.0)
    for m in range(T):
        for ax in range(3):
            emit_abs(f"nw_abs_{_AXES3[ax]}_{m}", w[m][ax], wA[m][ax], wP[m][ax])
        emit_max2(f"nw_maxxy_{m}", wLA[m], wA[m][0], wA[m][1], wDA[m])
        emit_max2(f"nw_maxz_{m}", wLB[m], wLA[m], wA[m][2], wDB[m])
        em.con(f"nw_blend_{m}",
               [(wL2[m], 1.0), (wA[m][0], -LAMBDA_3D), (wA[m][1], -LAMBDA_3D),
                (wA[m][2], -LAMBDA_3D), (wLB[m], -(1.0 - LAMBDA_3D))], "=", 0.0)

    return inst


# --------------------------------------------------------------------------
# LP-format export
# --------------------------------------------------------------------------

def _lp_terms(inst: MilpInstance, coeffs) -> str:
    if not coeffs:
        return ""
    parts = []
    for k, (idx, coef) in enumerate(coeffs):
        name = inst.variables[idx].name
        if k == 0:
            parts.append(f"-{-coef:.17g} {name}" if coef < 0
                         else f"{coef:.17g} {name}")
        elif coef < 0:
            parts.append(f"- {-coef:.17g} {name}")
        else:
            parts.append(f"+ {coef:.17g} {name}")
    return " ".join(parts)


_LP_SENSE = {"<=": "<=", ">=": ">=", "=": "="}


def export_milp(inst: MilpInstance) -> str:
    """Serialise an instance to LP format (CPLEX dialect)."""
    out = [f"\\ dronetour operation model, mode={inst.mode}", "Minimize"]
    out.append(" obj: " + _lp_terms(inst, inst.objective))
    out.append("Subject To")
    for c in inst.constraints:
        out.append(f" {c.name}: {_lp_terms(inst, c.coeffs)} "
                   f"{_LP_SENSE[c.sense]} {c.rhs:.17g}")
    out.append("Bounds")
    for var in inst.variables:
        if var.kind == "binary":
            continue
        lo, hi = var.lb, var.ub
        if lo == 0.0 and hi == math.inf:
            continue  # LP default
        if lo == -math.inf and hi == math.inf:
            out.append(f" {var.name} free")
        elif hi == math.inf:
            out.append(f" {var.name} >= {lo:.17g}")
        elif lo == -math.inf:
            out.append(f" -inf <= {var.name} <= {hi:.17g}")
        else:
            out.append(f" {lo:.17g} <= {var.name} <= {hi:.17g}")
    binaries = [v.name for v in inst.variables if v.kind == "binary"]
    if binaries:
        out.append("Binaries")
        for k in range(0, len(binaries), 8):
            out.append(" " + " ".join(binaries[k:k + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# self-certification: substitute a built trajectory into the model
# --------------------------------------------------------------------------

def trajectory_assignment(inst: MilpInstance, traj: Trajectory,
                          spec: FlightSpec,
                          params: DronePhysicsParams) -> Dict[str, float]:
    """Assign every model variable from a built trajectory.

    States past the landing tick are padded out to the model horizon: riding
    the truck for coordinated flights, at rest on the end point otherwise.
    The energy column is rebuilt with the model's own forward recursion so
    the ledger rows are satisfied exactly.
    """
    T, n_f, dt = params.T_major, params.n_f, params.dt_minor
    N = params.n_minor
    coordinated = inst.meta["coordinated"]
    n = traj.n_ticks

    pos = np.zeros((N + 1, 3))
    vel = np.zeros((N + 1, 2))
    acc = np.zeros((N + 1, 2))
    climb = np.zeros(N + 1)
    airborne = np.zeros(N + 1, dtype=bool)
    band = np.full((N + 1, 2), -1, dtype=int)
    k = min(n, N + 1)
    pos[:k] = traj.pos[:k]
    vel[:k] = traj.vel[:k]
    acc[:k] = traj.acc[:k]
    climb[:k] = traj.climb[:k]
    airborne[:k] = traj.airborne[:k]
    band[:k] = traj.band[:k]
    if k <= N:
        if coordinated:
            PT, VT = _extended_track(spec.end, N + 1)
            pos[k:, :2] = PT[k:]
            pos[k:, 2] = params.truck_bed_alt
            vel[k:] = VT[k:]
        else:
            pos[k:] = spec.end

    out: Dict[str, float] = {}
    for t in range(N + 1):
        for ax in range(3):
            out[f"r_{_AXES3[ax]}_{t}"] = float(pos[t][ax])
        for ax in range(2):
            out[f"v_{_AXES2[ax]}_{t}"] = float(vel[t][ax])
            out[f"a_{_AXES2[ax]}_{t}"] = float(acc[t][ax])
        out[f"vzp_{t}"] = max(float(climb[t]), 0.0)
        out[f"vzm_{t}"] = max(-float(climb[t]), 0.0)

    lam2 = LAMBDA_2D
    for stem, col in (("v", vel), ("a", acc)):
        for t in range(N + 1):
            ab = np.abs(col[t])
            for ax in range(2):
                out[f"{stem}A_{_AXES2[ax]}_{t}"] = float(ab[ax])
                out[f"{stem}P_{_AXES2[ax]}_{t}"] = 1.0 if col[t][ax] < 0 else 0.0
            out[f"{stem}M_{t}"] = float(ab.max())
            out[f"{stem}D_{t}"] = 0.0 if ab[0] >= ab[1] else 1.0
            out[f"{stem}L2_{t}"] = float(lam2 * ab.sum() + (1 - lam2) * ab.max())

    air_major = np.zeros(T, dtype=bool)
    for m in range(T):
        lo, hi = m * n_f, min((m + 1) * n_f - 1, N)
        air_major[m] = bool(airborne[lo:hi + 1].any())
    last_air = int(np.nonzero(air_major)[0][-1]) if air_major.any() else -1
    for m in range(T):
        out[f"b_{m}"] = 1.0 if air_major[m] else 0.0
        out[f"bp_{m}"] = 1.0 if air_major.any() else 0.0  # take-off at tick 0
        out[f"bm_{m}"] = 1.0 if m <= last_air else 0.0

    delivery_major = traj.delivery_step // n_f
    for m in range(T):
        out[f"d_{m}"] = 1.0 if m == delivery_major else 0.0
        ww = pos[min(m * n_f, N)] - spec.delivery
        ab = np.abs(ww)
        for ax in range(3):
            out[f"w_{_AXES3[ax]}_{m}"] = float(ww[ax])
            out[f"wA_{_AXES3[ax]}_{m}"] = float(ab[ax])
            out[f"wP_{_AXES3[ax]}_{m}"] = 1.0 if ww[ax] < 0 else 0.0
        la = max(ab[0], ab[1])
        out[f"wLA_{m}"] = float(la)
        out[f"wDA_{m}"] = 0.0 if ab[0] >= ab[1] else 1.0
        out[f"wLB_{m}"] = float(max(la, ab[2]))
        out[f"wDB_{m}"] = 0.0 if la >= ab[2] else 1.0
        out[f"wL2_{m}"] = float(LAMBDA_3D * ab.sum()
                                + (1 - LAMBDA_3D) * max(la, ab[2]))

    I, J = params.n_alt_bands, params.n_throttle_bands
    rate = np.zeros(T)
    for m in range(T):
        sel = (-1, -1)
        if air_major[m]:
            lo = m * n_f
            first = lo + int(np.argmax(airborne[lo:min((m + 1) * n_f, N + 1)]))
            sel = (int(band[first][0]), int(band[first][1]))
            rate[m] = params.energy_rate[sel[0]][sel[1]]
        for i in range(I):
            for j in range(J):
                out[f"s_{m}_{i}_{j}"] = 1.0 if (i, j) == sel else 0.0

    gval = 0.0
    out["g_0"] = 0.0
    for t in range(N):
        gval += dt * (params.climb_surplus * out[f"vzp_{t}"]
                      + rate[_major_of(t, n_f, T)])
        out[f"g_{t + 1}"] = gval

    for q, ras in enumerate(spec.ras_list):
        A, rhs = ras._A, ras._b
        for m in range(T):
            ticks = range(m * n_f, min((m + 1) * n_f, N + 1))
            if m == T - 1:
                ticks = range(m * n_f, N + 1)
            for nn in range(len(rhs)):
                ok = all(float(A[nn] @ pos[t]) >= float(rhs[nn]) - 1e-9
                         for t in ticks)
                out[f"f_{q}_{nn}_{m}"] = 1.0 if ok else 0.0

    if inst.mode == "min_time":
        drone_end = (last_air + 1) * n_f * dt
        out["t_o"] = max(drone_end, inst.meta["truck_arrival_s"])
    else:
        out["got"] = out[f"g_{N}"]
    return out


def max_constraint_violation(inst: MilpInstance,
                             assignment: Dict[str, float]
                             ) -> Tuple[float, str]:
    """Worst violation over all rows, bounds and integrality requirements."""
    x = np.empty(len(inst.variables))
    for i, var in enumerate(inst.variables):
        x[i] = assignment[var.name]
    worst, name = 0.0, ""

    def note(v, label):
        nonlocal worst, name
        if v > worst:
            worst, name = v, label

    for var, val in zip(inst.variables, x):
        note(var.lb - val, f"lb:{var.name}")
        note(val - var.ub, f"ub:{var.name}")
        if var.kind == "binary":
            note(abs(val - round(val)), f"int:{var.name}")
    for c in inst.constraints:
        lhs = sum(x[i] * coef for i, coef in c.coeffs)
        if c.sense == "<=":
            note(lhs - c.rhs, c.name)
        elif c.sense == ">=":
            note(c.rhs - lhs, c.name)
        else:
            note(abs(lhs - c.rhs), c.name)
    return worst, name
