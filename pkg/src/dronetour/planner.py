"""Order-first, split-second planning for one truck and one drone.

A tour is a tuple of delivery ids in visiting order; the depot (id 0) is
implicit at both ends. Plans partition a tour into operations, each a truck
run between two stops with at most one delivery handed to the drone. The
pipeline is: nearest-neighbour + two-opt ordering, optimal splitting by
shortest path on the DAG of tour positions, best-improvement neighbourhood
search, and finally physics-backed verification that replaces drone-time
estimates with real trajectories.

Float discipline: arc weights and totals are accumulated strictly left to
right, so a brute-force enumeration following the same convention reproduces
split results bit for bit. The relative tolerance `EPS_REL` applies only when
whole plans are compared (improve adoption, exact search); inside the split
recursion ties are broken on exact float equality, since an epsilon tie
there would break the optimal-substructure argument.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import NoPathError, NoRendezvousError, SizeError
from .geometry import Ras, RoadGraph, point_in_footprint, shortest_truck_path
from .physics import (
    DronePhysicsParams,
    FlightSpec,
    TimedTruckPath,
    Trajectory,
    cruise_router,
    drone_only_duration_s,
    plan_coordinated_flight,
)

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - pure-python fallback below
    _HAVE_NUMBA = False

EPS_REL = 1e-6

_EXACT_CAP = 7


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= EPS_REL * max(1.0, abs(a), abs(b))


# ---------------------------------------------------------------------------
# Problem instance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    """One delivery problem: a depot, n customers, and how the truck moves.

    Node ids: 0 is the depot, deliveries are 1..n. In euclidean mode the
    truck drives straight lines at `truck_speed` m/s. In road mode it routes
    between `anchors[node]` on `road`, and every node coordinate must
    coincide with its anchor's (case-study sampling snaps deliveries onto
    the network, so that holds by construction). Nodes must be distinct and
    clear of every restricted-airspace footprint, or the drone could not
    descend to them.
    """

    depot: np.ndarray
    deliveries: np.ndarray
    truck_speed: float = 0.0
    road: Optional[RoadGraph] = None
    anchors: Optional[np.ndarray] = None
    ras_list: Tuple[Ras, ...] = ()
    _coords: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        depot = np.asarray(self.depot, dtype=float)
        deliveries = np.asarray(self.deliveries, dtype=float)
        if depot.shape != (2,):
            raise ValueError("depot must be a 2D point")
        if deliveries.ndim != 2 or deliveries.shape[1] != 2 or not len(deliveries):
            raise ValueError("deliveries must be a nonempty (n, 2) array")
        object.__setattr__(self, "depot", depot)
        object.__setattr__(self, "deliveries", deliveries)
        object.__setattr__(self, "ras_list", tuple(self.ras_list))
        if self.road is None:
            if self.truck_speed <= 0:
                raise ValueError("euclidean mode needs a positive truck speed")
            if self.anchors is not None:
                raise ValueError("anchors only apply to road mode")
        else:
            if self.anchors is None:
                raise ValueError("road mode needs one anchor per node")
            anchors = np.asarray(self.anchors, dtype=int)
            if anchors.shape != (len(deliveries) + 1,):
                raise ValueError("need exactly one anchor per node, depot first")
            if anchors.min() < 0 or anchors.max() >= len(self.road.nodes):
                raise ValueError("anchor outside the road graph")
            object.__setattr__(self, "anchors", anchors)
        coords = np.vstack([depot[None, :], deliveries])
        coords.setflags(write=False)
        object.__setattr__(self, "_coords", coords)
        if self.road is not None:
            if np.max(np.abs(coords - self.road.nodes[self.anchors])) > 1e-6:
                raise ValueError("road-mode nodes must sit on their anchor nodes")
        if len({(x, y) for x, y in coords}) != len(coords):
            raise ValueError("depot and delivery coordinates must be distinct")
        for i, p in enumerate(coords):
            for ras in self.ras_list:
                if point_in_footprint(p, ras):
                    raise ValueError(
                        f"node {i} lies inside the footprint of RAS {ras.name!r}")

    @property
    def n(self) -> int:
        return len(self.deliveries)

    @property
    def travel_mode(self) -> str:
        return "euclidean" if self.road is None else "road"

    @property
    def coords(self) -> np.ndarray:
        """(n+1, 2) node coordinates, depot first. Read-only view."""
        return self._coords

    def coord(self, node: int) -> np.ndarray:
        return self._coords[node]

    def to_dict(self) -> dict:
        mode: dict
        if self.road is None:
            mode = {"kind": "euclidean", "truck_speed": self.truck_speed}
        else:
            mode = {"kind": "road", "graph": self.road.to_dict(),
                    "anchors": [int(a) for a in self.anchors]}
        return {
            "depot": [float(self.depot[0]), float(self.depot[1])],
            "deliveries": [
                {"id": i + 1, "x": float(x), "y": float(y)}
                for i, (x, y) in enumerate(self.deliveries)
            ],
            "travel_mode": mode,
            "ras": [r.to_dict() for r in self.ras_list],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        rows = sorted(d["deliveries"], key=lambda r: r["id"])
        if [r["id"] for r in rows] != list(range(1, len(rows) + 1)):
            raise ValueError("delivery ids must be 1..n")
        deliveries = np.array([[r["x"], r["y"]] for r in rows], dtype=float)
        ras = tuple(Ras.from_dict(r) for r in d.get("ras", []))
        mode = d["travel_mode"]
        if mode["kind"] == "euclidean":
            return cls(depot=np.asarray(d["depot"], dtype=float),
                       deliveries=deliveries,
                       truck_speed=float(mode["truck_speed"]), ras_list=ras)
        if mode["kind"] == "road":
            return cls(depot=np.asarray(d["depot"], dtype=float),
                       deliveries=deliveries,
                       road=RoadGraph.from_dict(mode["graph"]),
                       anchors=np.asarray(mode["anchors"], dtype=int),
                       ras_list=ras)
        raise ValueError(f"unknown travel mode {mode['kind']!r}")


def truck_leg_time(inst: Instance, a: int, b: int) -> float:
    """Truck travel time between two instance nodes, seconds."""
    if a == b:
        return 0.0
    if inst.road is None:
        return float(np.hypot(*(inst.coord(a) - inst.coord(b))) / inst.truck_speed)
    t, _ = shortest_truck_path(inst.road, int(inst.anchors[a]),
                               int(inst.anchors[b]))
    return t


def _leg_matrix(inst: Instance) -> np.ndarray:
    """All-pairs truck times over the n+1 nodes."""
    c = inst.coords
    if inst.road is None:
        d = np.hypot(c[:, None, 0] - c[None, :, 0], c[:, None, 1] - c[None, :, 1])
        return d / inst.truck_speed
    out = np.empty((len(c), len(c)))
    for i, src in enumerate(inst.anchors):
        out[i] = inst.road.times_from(int(src))[inst.anchors]
    if not np.all(np.isfinite(out)):
        raise NoPathError("road graph does not connect all instance nodes")
    return out


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Operation:
    """One segment between truck stops, with at most one drone delivery.

    `truck_seq` holds the deliveries the truck serves strictly between
    `start` and `end`; `end` itself also belongs to this operation unless it
    is the depot. The clock `t_o_s` is max(truck time, drone time): the
    operation ends when both vehicles stand at `end`. Before finalization
    the drone time is the estimator's guess and `dec_j` is zero; afterwards
    `trajectory` holds the real flight, `t_o_s` its physics clock, and the
    estimate column is kept for reporting only.
    """

    start: int
    truck_seq: Tuple[int, ...]
    drone_node: Optional[int]
    end: int
    t_truck_s: float
    t_drone_est_s: float = 0.0
    t_o_s: float = 0.0
    dec_j: float = 0.0
    trajectory: Optional[Trajectory] = None

    def __post_init__(self):
        object.__setattr__(self, "truck_seq", tuple(self.truck_seq))
        if self.drone_node is not None:
            if self.drone_node in self.truck_seq:
                raise ValueError("drone node cannot also be truck-served")
            if self.drone_node in (self.start, self.end):
                raise ValueError("drone node must differ from the endpoints")
        floor = self.t_truck_s if self.trajectory is not None else max(
            self.t_truck_s, self.t_drone_est_s)
        if self.t_o_s < floor - 1e-9:
            raise ValueError("operation clock below its truck/drone times")


@dataclass(frozen=True)
class Plan:
    """Chained operations covering every delivery exactly once."""

    operations: Tuple[Operation, ...]
    verified: bool = False

    def __post_init__(self):
        object.__setattr__(self, "operations", tuple(self.operations))

    @property
    def total_duration_s(self) -> float:
        return sum(op.t_o_s for op in self.operations)

    @property
    def total_dec_j(self) -> float:
        return sum(op.dec_j for op in self.operations)

    @property
    def drone_op_count(self) -> int:
        return sum(1 for op in self.operations if op.drone_node is not None)

    def validate(self, inst: Instance) -> None:
        """Raise ValueError unless the chain serves all deliveries once."""
        ops = self.operations
        if not ops:
            raise ValueError("a plan needs at least one operation")
        if ops[0].start != 0 or ops[-1].end != 0:
            raise ValueError("plans start and end at the depot")
        for a, b in zip(ops, ops[1:]):
            if a.end != b.start:
                raise ValueError("consecutive operations do not chain")
        served: List[int] = []
        for op in ops:
            served.extend(op.truck_seq)
            if op.drone_node is not None:
                served.append(op.drone_node)
            if op.end != 0:
                served.append(op.end)
        if sorted(served) != list(range(1, inst.n + 1)):
            raise ValueError("deliveries are not covered exactly once")


def plan_to_dict(plan: Plan,
                 trajectory_refs: Optional[Mapping[int, str]] = None) -> dict:
    """JSON-ready view of a plan: ids, role tags, clocks, energy, CSV refs."""
    refs = dict(trajectory_refs or {})
    return {
        "verified": plan.verified,
        "total_duration_s": plan.total_duration_s,
        "total_dec_j": plan.total_dec_j,
        "operations": [
            {
                "start": op.start,
                "truck_seq": list(op.truck_seq),
                "drone_node": op.drone_node,
                "end": op.end,
                "t_truck_s": op.t_truck_s,
                "t_drone_est_s": op.t_drone_est_s,
                "t_o_s": op.t_o_s,
                "dec_j": op.dec_j,
                "trajectory_csv": refs.get(i),
            }
            for i, op in enumerate(plan.operations)
        ],
    }


# ---------------------------------------------------------------------------
# Initial ordering
# ---------------------------------------------------------------------------


def tour_duration_s(inst: Instance, tour: Sequence[int]) -> float:
    """Closed truck-only driving time depot -> tour -> depot."""
    L = _leg_matrix(inst)
    t = 0.0
    prev = 0
    for node in tuple(tour) + (0,):
        t = t + L[prev, node]
        prev = node
    return t


def _two_opt(tour: List[int], L: np.ndarray) -> None:
    # first-improvement with a fixed scan order, restarting after every move
    n = len(tour)
    improved = True
    while improved:
        improved = False
        for a in range(n - 1):
            pa = tour[a - 1] if a else 0
            qa = tour[a]
            for b in range(a + 1, n):
                rb = tour[b]
                sb = tour[b + 1] if b + 1 < n else 0
                old = L[pa, qa] + L[rb, sb]
                if L[pa, rb] + L[qa, sb] < old - EPS_REL * max(1.0, old):
                    tour[a:b + 1] = tour[a:b + 1][::-1]
                    improved = True
                    break
            if improved:
                break


def initial_tour_two_opt(inst: Instance, seed: int = 0) -> Tuple[int, ...]:
    """Depot-anchored delivery order: nearest-neighbour start, then two-opt.

    Deterministic: the scan orders are fixed and `seed` only breaks exact
    travel-time ties in the nearest-neighbour construction.
    """
    L = _leg_matrix(inst)
    rng = np.random.default_rng(seed)
    left = list(range(1, inst.n + 1))
    tour: List[int] = []
    cur = 0
    while left:
        d = L[cur, left]
        ties = np.flatnonzero(d == d.min())
        pick = int(ties[0]) if len(ties) == 1 else int(rng.choice(ties))
        cur = left.pop(pick)
        tour.append(cur)
    _two_opt(tour, L)
    return tuple(tour)


# ---------------------------------------------------------------------------
# Splitting a tour into operations
# ---------------------------------------------------------------------------


def _drone_table(inst: Instance, est) -> np.ndarray:
    """est(start, k, end) for every node triple, chunked by start node.

    D[s, k, e] is the estimated drone time for launching at node s, serving
    delivery k and recovering at node e. Row k=0 (the depot cannot be
    drone-served) stays inf. Built once per instance and estimator; the
    split recursion then runs on table lookups alone.
    """
    c = inst.coords
    m = len(c)
    D = np.full((m, m, m), np.inf)
    kc = np.repeat(c[1:], m, axis=0)
    ec = np.tile(c, (m - 1, 1))
    for s in range(m):
        sc = np.broadcast_to(c[s], kc.shape)
        D[s, 1:, :] = np.asarray(
            est.estimate_batch(sc, kc, ec), dtype=float).reshape(m - 1, m)
    return D


def _split_core(seq, L, D):
    # Shortest path over tour positions. dp2 carries the summed drone-time
    # proxy, cnt the drone-operation count; ties on dp break to smaller dp2
    # under exact float comparison. All sums are left folds.
    n_pos = seq.shape[0]
    dp = np.full(n_pos, np.inf)
    dp2 = np.zeros(n_pos)
    cnt = np.zeros(n_pos, dtype=np.int64)
    parent = np.full(n_pos, -1, dtype=np.int64)
    drone = np.full(n_pos, -1, dtype=np.int64)
    fold = np.zeros(n_pos)
    dp[0] = 0.0
    for i in range(n_pos - 1):
        di = dp[i]
        d2i = dp2[i]
        ci = cnt[i]
        si = seq[i]
        fold[i] = 0.0
        t = 0.0
        for j in range(i + 1, n_pos):
            t = t + L[seq[j - 1], seq[j]]
            fold[j] = t
            cand = di + t
            if cand < dp[j] or (cand == dp[j] and d2i < dp2[j]):
                dp[j] = cand
                dp2[j] = d2i
                cnt[j] = ci
                parent[j] = i
                drone[j] = -1
        for k in range(i + 1, n_pos - 1):
            sk = seq[k]
            base = fold[k - 1] + L[seq[k - 1], seq[k + 1]]
            for j in range(k + 1, n_pos):
                if j > k + 1:
                    base = base + L[seq[j - 1], seq[j]]
                dt_est = D[si, sk, seq[j]]
                w = base if base >= dt_est else dt_est
                cand = di + w
                c2 = d2i + dt_est
                if cand < dp[j] or (cand == dp[j] and c2 < dp2[j]):
                    dp[j] = cand
                    dp2[j] = c2
                    cnt[j] = ci + 1
                    parent[j] = i
                    drone[j] = k
    return dp, dp2, cnt, parent, drone


if _HAVE_NUMBA:
    _split_dp = numba.njit(cache=True)(_split_core)
else:  # pragma: no cover - exercised only without numba
    _split_dp = _split_core


def _arc_truck_time(seq, L, i: int, j: int, k: int) -> float:
    """Truck time of arc i->j with the drone at position k (-1: none).

    Reproduces the kernel's fold order exactly, so reconstructed operations
    carry bit-identical clocks.
    """
    t = 0.0
    if k < 0:
        for p in range(i + 1, j + 1):
            t = t + L[seq[p - 1], seq[p]]
        return t
    for p in range(i + 1, k):
        t = t + L[seq[p - 1], seq[p]]
    t = t + L[seq[k - 1], seq[k + 1]]
    for p in range(k + 2, j + 1):
        t = t + L[seq[p - 1], seq[p]]
    return t


def _split_with_tables(tour: Tuple[int, ...], L: np.ndarray,
                       D: np.ndarray) -> Plan:
    seq = np.array((0,) + tuple(tour) + (0,), dtype=np.int64)
    dp, dp2, cnt, parent, drone = _split_dp(seq, L, D)
    chain: List[int] = []
    pos = len(seq) - 1
    while pos > 0:
        chain.append(pos)
        pos = int(parent[pos])
    chain.reverse()
    ops: List[Operation] = []
    i = 0
    for j in chain:
        k = int(drone[j])
        t_truck = _arc_truck_time(seq, L, i, j, k)
        if k < 0:
            ops.append(Operation(start=int(seq[i]), truck_seq=tuple(
                int(seq[p]) for p in range(i + 1, j)), drone_node=None,
                end=int(seq[j]), t_truck_s=t_truck, t_drone_est_s=0.0,
                t_o_s=t_truck))
        else:
            t_est = float(D[seq[i], seq[k], seq[j]])
            ops.append(Operation(start=int(seq[i]), truck_seq=tuple(
                int(seq[p]) for p in range(i + 1, j) if p != k),
                drone_node=int(seq[k]), end=int(seq[j]), t_truck_s=t_truck,
                t_drone_est_s=t_est,
                t_o_s=t_truck if t_truck >= t_est else t_est))
        i = j
    return Plan(operations=tuple(ops))


def split(inst: Instance, tour: Sequence[int], est) -> Plan:
    """Optimal partition of a fixed delivery order into operations.

    Shortest path on the DAG of tour positions: an arc i -> j is one
    operation whose truck serves positions i+1..j-1 in order, with at most
    one of them handed to the drone; the arc weighs max(truck time, drone
    estimate). Minimal total duration over all same-order plans, with exact
    equal-duration ties broken toward the smaller summed drone estimate.
    """
    return _split_with_tables(tuple(tour), _leg_matrix(inst),
                              _drone_table(inst, est))


# ---------------------------------------------------------------------------
# Neighbourhood improvement
# ---------------------------------------------------------------------------


def _neighbors(tour: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    """Relocate, swap and segment-reversal neighbours, deduplicated."""
    n = len(tour)
    seen = {tour}
    out: List[Tuple[int, ...]] = []

    def push(cand: Tuple[int, ...]) -> None:
        if cand not in seen:
            seen.add(cand)
            out.append(cand)

    for a in range(n):
        rest = tour[:a] + tour[a + 1:]
        for b in range(n):
            push(rest[:b] + (tour[a],) + rest[b:])
    for a in range(n - 1):
        for b in range(a + 1, n):
            lst = list(tour)
            lst[a], lst[b] = lst[b], lst[a]
            push(tuple(lst))
    for a in range(n - 1):
        for b in range(a + 1, n):
            push(tour[:a] + tour[a:b + 1][::-1] + tour[b + 1:])
    return out


def _plan_key(tour: Tuple[int, ...], L: np.ndarray,
              D: np.ndarray) -> Tuple[float, int]:
    seq = np.array((0,) + tour + (0,), dtype=np.int64)
    dp, _, cnt, _, _ = _split_dp(seq, L, D)
    return float(dp[-1]), int(cnt[-1])


def improve(inst: Instance, tour: Sequence[int], est,
            budget: int = 10) -> Tuple[Tuple[int, ...], Plan]:
    """Best-improvement search over relocate/swap/reversal neighbourhoods.

    Every neighbour is fully re-split. The best one (smallest duration,
    then fewest drone operations, then lexicographically smallest tour,
    compared exactly) is adopted when it strictly shortens the plan beyond
    the relative tolerance, or matches the incumbent's duration without
    exceeding it while improving the tie keys. Duration therefore never
    increases. `budget` caps adopted moves; 0 returns the input tour's
    split unchanged.
    """
    L = _leg_matrix(inst)
    D = _drone_table(inst, est)
    cur = tuple(tour)
    cur_dur, cur_cnt = _plan_key(cur, L, D)
    for _ in range(budget):
        best: Optional[Tuple[float, int, Tuple[int, ...]]] = None
        for cand in _neighbors(cur):
            dur, c = _plan_key(cand, L, D)
            key = (dur, c, cand)
            if best is None or key < best:
                best = key
        if best is None:
            break
        dur, c, cand = best
        if dur < cur_dur and not _close(dur, cur_dur):
            pass  # clear win
        elif dur <= cur_dur and _close(dur, cur_dur) and (c, cand) < (cur_cnt, cur):
            pass  # same clock, better tie keys
        else:
            break
        cur, cur_dur, cur_cnt = cand, dur, c
    return cur, _split_with_tables(cur, L, D)


def exact_small(inst: Instance, est) -> Plan:
    """Global lexicographic optimum by exhaustive enumeration.

    Every delivery permutation is split optimally, which together scans all
    order-preserving partitions. The winner minimizes duration, then the
    summed drone-time proxy; permutations are visited in lexicographic
    order and ties keep the earliest, so the result is reproducible.
    Raises SizeError beyond 7 deliveries - the search is factorial.
    """
    if inst.n > _EXACT_CAP:
        raise SizeError(
            f"exhaustive search handles at most {_EXACT_CAP} deliveries, "
            f"got {inst.n}")
    L = _leg_matrix(inst)
    D = _drone_table(inst, est)
    best: Optional[Tuple[float, float, Tuple[int, ...]]] = None
    for perm in itertools.permutations(range(1, inst.n + 1)):
        seq = np.array((0,) + perm + (0,), dtype=np.int64)
        dp, dp2, _, _, _ = _split_dp(seq, L, D)
        dur, proxy = float(dp[-1]), float(dp2[-1])
        if best is None:
            best = (dur, proxy, perm)
            continue
        if dur < best[0] and not _close(dur, best[0]):
            best = (dur, proxy, perm)
        elif dur <= best[0] and _close(dur, best[0]) and proxy < best[1]:
            best = (dur, proxy, perm)
    return _split_with_tables(best[2], L, D)


# ---------------------------------------------------------------------------
# Physics finalization
# ---------------------------------------------------------------------------


def _truck_track(inst: Instance, op: Operation, params: DronePhysicsParams,
                 horizon_s: float) -> TimedTruckPath:
    """The truck's timed ground track through an operation's stops."""
    stops = (op.start,) + op.truck_seq + (op.end,)
    p0 = inst.coord(op.start)
    wps: List[Tuple[float, float, float]] = [(0.0, float(p0[0]), float(p0[1]))]
    t = 0.0
    if inst.road is None:
        for a, b in zip(stops, stops[1:]):
            t = t + truck_leg_time(inst, a, b)
            pb = inst.coord(b)
            wps.append((t, float(pb[0]), float(pb[1])))
    else:
        for a, b in zip(stops, stops[1:]):
            _, nodes = shortest_truck_path(inst.road, int(inst.anchors[a]),
                                           int(inst.anchors[b]))
            for u, v in zip(nodes, nodes[1:]):
                w = min(tt for vv, tt in inst.road._adj[u] if vv == v)
                t = t + w
                pv = inst.road.nodes[v]
                wps.append((t, float(pv[0]), float(pv[1])))
    return TimedTruckPath.from_waypoints(wps, params.dt_minor,
                                         horizon_s=max(horizon_s, t))


def _landing_major(traj: Trajectory, params: DronePhysicsParams) -> int:
    k = int(np.flatnonzero(traj.airborne)[-1]) + 1
    return k // params.n_f


def _ceil_major(t: float, dt_major: float) -> float:
    return math.ceil(t / dt_major - 1e-9) * dt_major


def _finalize_op(inst: Instance, op: Operation, idx: int,
                 params: DronePhysicsParams, router,
                 energy_tie_break: bool) -> Operation:
    start3 = (*inst.coord(op.start), params.truck_bed_alt)
    deliv3 = (*inst.coord(op.drone_node), 0.0)
    end3 = (*inst.coord(op.end), params.truck_bed_alt)
    rough = drone_only_duration_s(start3, deliv3, end3, params,
                                  inst.ras_list, router)
    horizon = max(op.t_truck_s, rough) + 6.0 * params.dt_major
    traj = None
    failure: Optional[NoRendezvousError] = None
    for _ in range(5):
        path = _truck_track(inst, op, params, horizon)
        spec = FlightSpec(start=start3, delivery=deliv3, end=path,
                          ras_list=inst.ras_list)
        try:
            traj = plan_coordinated_flight(spec, params, router)
            break
        except NoRendezvousError as e:
            failure = e
            horizon = 2.0 * horizon + params.dt_major
    if traj is None:
        raise NoRendezvousError(
            f"operation {idx} ({op.start}->{op.end}, drone to "
            f"{op.drone_node}): {failure}")

    if not energy_tie_break:
        # latest landing with the same quantised clock, instead of the
        # earliest: strictly more hovering, never less energy
        q0 = _ceil_major(max(op.t_truck_s, traj.duration), params.dt_major)
        m = _landing_major(traj, params) + 1
        while True:
            t_alt = max(path.arrival_s, m * params.dt_major)
            if _ceil_major(t_alt, params.dt_major) > q0 + 1e-9:
                break
            try:
                traj = plan_coordinated_flight(spec, params, router,
                                               land_major=m)
            except NoRendezvousError:
                pass
            m += 1

    traj.validate(params, delivery_point=deliv3, ras_list=inst.ras_list)
    return replace(op, t_o_s=max(op.t_truck_s, traj.duration),
                   dec_j=traj.total_energy, trajectory=traj)


def finalize_plan(inst: Instance, plan: Plan, params: DronePhysicsParams,
                  energy_tie_break: bool = True) -> Plan:
    """Replace estimates with physics: build every drone flight and re-clock.

    Each drone-bearing operation gets the truck's timed track through its
    stops and a coordinated flight launched from rest at the start stop.
    Its clock becomes max(truck arrival, trajectory duration) and its DEC
    the trajectory's energy ledger; truck-only operations keep their clock
    with zero energy. Totals follow from the updated operations and the
    plan is marked physics-verified.

    The coordinated planner lands at the earliest feasible major boundary,
    which among equal-quantised-clock landings is also the cheapest: every
    airborne major draws at least the hover rate. `energy_tie_break=False`
    keeps the latest equal-clock landing instead, so the value of the
    tie-break is measurable.

    Raises NoRendezvousError naming the operation index when some flight
    has no feasible recovery.
    """
    router = cruise_router(inst.ras_list, params)
    ops: List[Operation] = []
    for idx, op in enumerate(plan.operations):
        if op.drone_node is None:
            ops.append(replace(op, t_o_s=op.t_truck_s, dec_j=0.0,
                               trajectory=None))
        else:
            ops.append(_finalize_op(inst, op, idx, params, router,
                                    energy_tie_break))
    return Plan(operations=tuple(ops), verified=True)
