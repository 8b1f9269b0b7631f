"""Deterministic flight construction and energy accounting for the delivery drone.

Everything here builds feasible trajectories rather than optimal ones. A
trajectory is a sequence of states on a fixed minor-step grid that satisfies
the discrete double-integrator dynamics exactly, respects speed/acceleration
caps measured in the blended two-norm approximation, keeps clear of restricted
airspace, and carries the banded energy ledger. Flights are assembled from
sequenced phases (climb, straight runs at cruise altitude, descent, hover),
which keeps every step checkable constraint by constraint and makes results
reproducible bit for bit.

Time bookkeeping is two-level: minor steps of dt_minor seconds, grouped into
major steps of n_f minors. Band choices, delivery flags and airborne flags
live on majors; kinematic state lives on minors.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    BandError,
    InfeasibleEnergyError,
    NoPathError,
    NoRendezvousError,
)
from .geometry import AvoidanceRouter, Ras, l2_approx_2d, l2_approx_3d, points_in_ras

_TINY = 1e-9


@dataclass(frozen=True)
class DronePhysicsParams:
    """Physical limits, discretisation and the banded energy table.

    Flight speed, acceleration and the delivery radius are interpreted in the
    blended norm so that feasibility matches the linearised constraint set
    exactly. Energy is drawn from a battery of capacity `battery_capacity`
    joules, of which `min_charge` must remain untouched.
    """

    v_max: float = 19.44              # m/s, horizontal, blended norm
    a_max: float = 3.0                # m/s^2, horizontal, blended norm
    climb_max: float = 5.0            # m/s
    descent_max: float = 3.0          # m/s
    h_lo: float = 0.0                 # m, floor while airborne
    h_hi: float = 120.0               # m, ceiling while airborne
    h_min_airborne: float = 20.0      # m, floor away from take-off/landing/delivery
    cruise_alt: float = 50.0          # m
    truck_bed_alt: float = 1.5        # m
    delivery_radius: float = 2.0      # m, blended norm
    dt_minor: float = 1.0             # s
    n_f: int = 5                      # minors per major
    T_major: int = 240                # majors in the model horizon
    altitude_band_limits: Tuple[float, ...] = (0.0, 60.0, 120.0)
    throttle_band_speeds: Tuple[float, ...] = (0.0, 7.0, 14.0, 19.44)
    energy_rate: Tuple[Tuple[float, ...], ...] = (
        (500.0, 420.0, 350.0, 480.0),
        (510.0, 430.0, 360.0, 490.0),
    )                                 # W, rows = altitude bands, cols = throttle bands
    climb_surplus: float = 40.0       # J per metre climbed
    battery_capacity: float = 550e3   # J
    min_charge: float = 50e3          # J
    big_m: float = 1e6
    ras_clearance: float = 3.0        # m, horizontal routing clearance

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0 and self.climb_max > 0
                and self.descent_max > 0):
            raise ValueError("speed and acceleration limits must be positive")
        if not (0.0 <= self.h_lo <= self.h_min_airborne <= self.cruise_alt <= self.h_hi):
            raise ValueError("need 0 <= h_lo <= h_min_airborne <= cruise_alt <= h_hi")
        if not (self.h_lo <= self.truck_bed_alt <= self.cruise_alt):
            raise ValueError("truck bed altitude must sit inside the flight envelope")
        if self.dt_minor <= 0 or self.n_f < 1 or self.T_major < 1:
            raise ValueError("dt_minor must be positive, n_f and T_major at least 1")
        th = self.throttle_band_speeds
        if any(b <= a for a, b in zip(th, th[1:])):
            raise ValueError("throttle band speeds must be strictly increasing")
        if abs(th[-1] - self.v_max) > 1e-9:
            raise ValueError("top throttle band speed must equal v_max")
        H = self.altitude_band_limits
        if len(H) < 2 or any(b <= a for a, b in zip(H, H[1:])):
            raise ValueError("altitude band limits must be strictly increasing")
        if H[0] > self.h_lo or H[-1] < self.h_hi:
            raise ValueError("altitude bands must cover [h_lo, h_hi]")
        if len(self.energy_rate) != len(H) - 1 or any(
            len(row) != len(th) for row in self.energy_rate
        ):
            raise ValueError("energy_rate must be (altitude bands) x (throttle bands)")
        if any(r <= 0 for row in self.energy_rate for r in row):
            raise ValueError("energy rates must be positive")
        if self.climb_surplus < 0:
            raise ValueError("climb surplus must be nonnegative")
        if self.battery_capacity <= self.min_charge or self.min_charge < 0:
            raise ValueError("battery capacity must exceed the reserve charge")
        if self.delivery_radius < 0 or self.ras_clearance < 0:
            raise ValueError("radii must be nonnegative")
        if self.big_m <= 0:
            raise ValueError("big_m must be positive")

    @property
    def dt_major(self) -> float:
        return self.dt_minor * self.n_f

    @property
    def n_minor(self) -> int:
        return self.T_major * self.n_f

    @property
    def horizon_s(self) -> float:
        return self.n_minor * self.dt_minor

    @property
    def usable_energy(self) -> float:
        return self.battery_capacity - self.min_charge

    @property
    def n_alt_bands(self) -> int:
        return len(self.altitude_band_limits) - 1

    @property
    def n_throttle_bands(self) -> int:
        return len(self.throttle_band_speeds)


@dataclass(frozen=True)
class TimedTruckPath:
    """The truck's ground track sampled on the minor grid.

    `points[k]` is where the truck is at time `times[k]`; `velocities[k]` is
    the forward difference to the next sample, so riding states telescope
    exactly. The launch sample reads zero velocity because the drone lifts off
    while the truck is still standing at the stop. After `arrival_s` the truck
    is parked at its final point.
    """

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    arrival_s: float

    def __post_init__(self):
        if len(self.times) != len(self.points) or len(self.times) != len(self.velocities):
            raise ValueError("times, points and velocities must have equal length")
        if len(self.times) < 1:
            raise ValueError("truck path needs at least one sample")

    @property
    def dt(self) -> float:
        if len(self.times) < 2:
            return 0.0
        return float(self.times[1] - self.times[0])

    @classmethod
    def from_waypoints(cls, waypoints: Sequence[Tuple[float, float, float]],
                       dt_minor: float, horizon_s: Optional[float] = None,
                       ) -> "TimedTruckPath":
        """Sample a piecewise-linear (t, x, y) track on the minor grid.

        Waypoint times must start at 0 and be nondecreasing. The track is held
        at its last point out to horizon_s (default: the last waypoint time).
        """
        wp = [(float(t), float(x), float(y)) for t, x, y in waypoints]
        if not wp or abs(wp[0][0]) > _TINY:
            raise ValueError("waypoints must start at time 0")
        ts = np.array([w[0] for w in wp])
        if np.any(np.diff(ts) < -_TINY):
            raise ValueError("waypoint times must be nondecreasing")
        arrival = float(ts[-1])
        if horizon_s is None:
            horizon_s = arrival
        if horizon_s < arrival - _TINY:
            raise ValueError("horizon shorter than the waypoint track")
        n = max(1, int(math.ceil(horizon_s / dt_minor - _TINY)))
        times = np.arange(n + 1, dtype=float) * dt_minor
        xs = np.interp(times, ts, [w[1] for w in wp])
        ys = np.interp(times, ts, [w[2] for w in wp])
        pts = np.column_stack([xs, ys])
        vel = np.zeros_like(pts)
        vel[:-1] = (pts[1:] - pts[:-1]) / dt_minor
        vel[0] = 0.0  # at rest while the drone departs
        return cls(times=times, points=pts, velocities=vel, arrival_s=arrival)

    @classmethod
    def stationary(cls, point, dt_minor: float, horizon_s: float) -> "TimedTruckPath":
        p = np.asarray(point, dtype=float)
        return cls.from_waypoints([(0.0, p[0], p[1])], dt_minor, horizon_s=horizon_s)


@dataclass(frozen=True)
class FlightSpec:
    """One drone operation: launch state, delivery point and recovery target.

    `end` is either a fixed 3D point (the drone sets down and waits) or a
    TimedTruckPath (the drone must land on the moving truck with matched
    position and horizontal velocity).
    """

    start: np.ndarray
    delivery: np.ndarray
    end: Union[np.ndarray, TimedTruckPath]
    ras_list: Tuple[Ras, ...] = ()
    start_velocity: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "delivery", np.asarray(self.delivery, dtype=float))
        if not isinstance(self.end, TimedTruckPath):
            object.__setattr__(self, "end", np.asarray(self.end, dtype=float))
        if self.start.shape != (3,) or self.delivery.shape != (3,):
            raise ValueError("start and delivery must be 3D points")
        if not isinstance(self.end, TimedTruckPath) and self.end.shape != (3,):
            raise ValueError("fixed end must be a 3D point")

    @property
    def is_coordinated(self) -> bool:
        return isinstance(self.end, TimedTruckPath)


@dataclass(frozen=True)
class Trajectory:
    """A feasible flight on the minor grid, one row per time tick.

    `acc` and `climb` are the controls applied over the step starting at each
    tick (the final row carries zeros). `band` holds the (altitude, throttle)
    band charged for each tick's step, or (-1, -1) when the tick's major is
    grounded. `energy` is the cumulative draw in joules.
    """

    times: np.ndarray
    pos: np.ndarray          # (n, 3)
    vel: np.ndarray          # (n, 2) horizontal
    acc: np.ndarray          # (n, 2) horizontal control
    climb: np.ndarray        # (n,) signed vertical rate
    airborne: np.ndarray     # (n,) bool
    band: np.ndarray         # (n, 2) int
    energy: np.ndarray       # (n,) J
    delivery_step: int
    duration: float

    @property
    def n_ticks(self) -> int:
        return len(self.times)

    @property
    def total_energy(self) -> float:
        return float(self.energy[-1])

    def validate(self, params: DronePhysicsParams,
                 delivery_point=None, ras_list: Sequence[Ras] = ()) -> None:
        """Raise ValueError unless every published invariant holds."""
        n = self.n_ticks
        dt = params.dt_minor
        if not (len(self.pos) == len(self.vel) == len(self.acc) == len(self.climb)
                == len(self.airborne) == len(self.band) == len(self.energy) == n):
            raise ValueError("ragged state arrays")
        if n >= 2 and not np.allclose(np.diff(self.times), dt, atol=1e-9):
            raise ValueError("states are not on the minor grid")
        flips = np.flatnonzero(np.diff(self.airborne.astype(np.int8)) != 0)
        if len(flips) > 2 or (len(flips) == 2 and self.airborne[0]):
            raise ValueError("airborne flag must follow the 0*1*0* pattern")
        # controls must reproduce the stored states under the discrete dynamics
        pr = self.pos[:-1, :2] + dt * self.vel[:-1] + 0.5 * dt * dt * self.acc[:-1]
        if np.max(np.abs(pr - self.pos[1:, :2]), initial=0.0) > 1e-6:
            raise ValueError("horizontal positions break the discrete dynamics")
        if np.max(np.abs(self.pos[:-1, 2] + dt * self.climb[:-1] - self.pos[1:, 2]),
                  initial=0.0) > 1e-6:
            raise ValueError("altitudes break the discrete dynamics")
        vr = self.vel[:-1] + dt * self.acc[:-1]
        if np.max(np.abs(vr - self.vel[1:]), initial=0.0) > 1e-6:
            raise ValueError("velocities break the discrete dynamics")
        if np.any(l2_approx_2d(self.vel) > params.v_max + 1e-6):
            raise ValueError("blended-norm speed cap exceeded")
        if np.any(l2_approx_2d(self.acc) > params.a_max + 1e-6):
            raise ValueError("blended-norm acceleration cap exceeded")
        if np.any(self.climb > params.climb_max + 1e-9) or np.any(
                self.climb < -params.descent_max - 1e-9):
            raise ValueError("vertical rate cap exceeded")
        z = self.pos[:, 2]
        if np.any(z[self.airborne] < params.h_lo - 1e-6) or np.any(
                z[self.airborne] > params.h_hi + 1e-6):
            raise ValueError("altitude outside [h_lo, h_hi] while airborne")
        if abs(self.energy[0]) > 1e-9 or np.any(np.diff(self.energy) < -1e-9):
            raise ValueError("energy must start at zero and never decrease")
        if self.total_energy > params.usable_energy + 1e-6:
            raise ValueError("energy exceeds the usable battery capacity")
        if not (0 <= self.delivery_step < n) or self.delivery_step % params.n_f:
            raise ValueError("delivery step must be a major-grid tick")
        if delivery_point is not None:
            w = self.pos[self.delivery_step] - np.asarray(delivery_point, dtype=float)
            if l2_approx_3d(w) > params.delivery_radius + 1e-9:
                raise ValueError("delivery step is outside the delivery radius")
        if not airborne_clear_of_ras(self, ras_list, params.delivery_radius):
            raise ValueError("airborne state inside restricted airspace margin")

    def to_csv(self, path_or_buf) -> None:
        """Write one row per tick: t,x,y,z,vx,vy,vz,b,i,j,g."""
        own = isinstance(path_or_buf, (str, bytes))
        f = open(path_or_buf, "w") if own else path_or_buf
        try:
            f.write("t,x,y,z,vx,vy,vz,b,i,j,g\n")
            for k in range(self.n_ticks):
                f.write("%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d,%d,%.9g\n" % (
                    self.times[k], self.pos[k, 0], self.pos[k, 1], self.pos[k, 2],
                    self.vel[k, 0], self.vel[k, 1], self.climb[k],
                    int(self.airborne[k]), self.band[k, 0], self.band[k, 1],
                    self.energy[k]))
        finally:
            if own:
                f.close()


def airborne_clear_of_ras(traj: Trajectory, ras_list: Sequence[Ras],
                          margin: float) -> bool:
    """True when no airborne tick sits inside any RAS inflated by `margin`."""
    if not len(ras_list):
        return True
    pts = traj.pos[traj.airborne]
    if not len(pts):
        return True
    return not any(points_in_ras(pts, ras, margin).any() for ras in ras_list)


# ---------------------------------------------------------------------------
# Rest-to-rest speed profiles on the minor grid
# ---------------------------------------------------------------------------

def min_time_profile_1d(distance: float, v_max: float, a_max: float) -> float:
    """Continuous rest-to-rest bang-bang time for a straight run.

    Triangular profile when the distance is too short to reach v_max,
    trapezoidal otherwise. Returns inf when the limits make motion impossible.
    """
    if distance < 0 or v_max < 0 or a_max < 0:
        raise ValueError("inputs must be nonnegative")
    if distance == 0:
        return 0.0
    if v_max == 0 or a_max == 0:
        return math.inf
    if distance * a_max < v_max * v_max:
        return 2.0 * math.sqrt(distance / a_max)
    return v_max / a_max + distance / v_max


def _ramp_speeds(n: int, dt: float, a_max: float, cap: float) -> np.ndarray:
    # fastest rest-to-rest tick speeds for n steps under a symmetric ramp
    k = np.arange(n + 1, dtype=float)
    return np.minimum(np.minimum(k, n - k) * (dt * a_max), cap)


def _ramp_distance(n: int, dt: float, a_max: float, cap: float) -> float:
    u = _ramp_speeds(n, dt, a_max, cap)
    # trapezoid advance is exact for the discrete double integrator
    return float(dt * 0.5 * np.sum(u[:-1] + u[1:]))


def _rest_to_rest_ticks(length: float, v_max: float, a_max: float, dt: float) -> int:
    """Smallest step count that can cover `length` from rest to rest."""
    if length <= _TINY:
        return 0
    hi = 2
    while _ramp_distance(hi, dt, a_max, v_max) < length:
        hi *= 2
        if hi > 1 << 26:
            raise ValueError("run too long for the discrete profile")
    lo = hi // 2
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if _ramp_distance(mid, dt, a_max, v_max) < length:
            lo = mid
        else:
            hi = mid
    return hi

def _rest_to_rest_speeds(length: float, v_max: float, a_max: float,
                         dt: float) -> np.ndarray:
    """Tick speeds covering `length` exactly in the minimal number of steps."""
    n = _rest_to_rest_ticks(length, v_max, a_max, dt)
    if n == 0:
        return np.zeros(1)
    lo, hi = 0.0, v_max
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _ramp_distance(n, dt, a_max, mid) < length:
            lo = mid
        else:
            hi = mid
    return _ramp_speeds(n, dt, a_max, hi)


def _vertical_ticks(dz: float, rate: float, dt: float) -> int:
    if abs(dz) <= 1e-12:
        return 0
    return max(1, int(math.ceil(abs(dz) / (rate * dt) - 1e-12)))


class _FlightBuilder:
    """Accumulates states one minor step at a time, keeping dynamics exact."""

    def __init__(self, params: DronePhysicsParams, start_pos):
        self.p = params
        self.pos: List[np.ndarray] = [np.asarray(start_pos, dtype=float).copy()]
        self.vel: List[np.ndarray] = [np.zeros(2)]
        self.acc: List[np.ndarray] = []
        self.climb: List[float] = []

    @property
    def tick(self) -> int:
        return len(self.acc)

    def step(self, a, vz: float) -> None:
        dt = self.p.dt_minor
        a = np.asarray(a, dtype=float)
        r, v = self.pos[-1], self.vel[-1]
        nxt = r.copy()
        nxt[:2] += dt * v + 0.5 * dt * dt * a
        nxt[2] += dt * vz
        self.pos.append(nxt)
        self.vel.append(v + dt * a)
        self.acc.append(a)
        self.climb.append(float(vz))

    def hover(self, n: int) -> None:
        for _ in range(int(n)):
            self.step((0.0, 0.0), 0.0)

    def vertical(self, dz: float, rate_cap: float) -> None:
        n = _vertical_ticks(dz, rate_cap, self.p.dt_minor)
        if n == 0:
            return
        vz = dz / (n * self.p.dt_minor)
        for _ in range(n):
            self.step((0.0, 0.0), vz)

    def run_segment(self, target_xy) -> None:
        """Straight run to target_xy, rest to rest, paced by the blended norm."""
        dp = np.asarray(target_xy, dtype=float) - self.pos[-1][:2]
        da = float(l2_approx_2d(dp))
        if da <= _TINY:
            return
        u = _rest_to_rest_speeds(da, self.p.v_max, self.p.a_max, self.p.dt_minor)
        e = dp / da  # unit length in the blended norm
        dt = self.p.dt_minor
        for k in range(len(u) - 1):
            self.step(((u[k + 1] - u[k]) / dt) * e, 0.0)

    def run_polyline(self, points) -> None:
        for q in points[1:]:
            self.run_segment(q)

    def ramp(self, n: int, v_target, dz: float) -> None:
        """Constant-control run: spin up to v_target while changing altitude."""
        dt = self.p.dt_minor
        a = np.asarray(v_target, dtype=float) / (n * dt)
        vz = dz / (n * dt)
        for _ in range(int(n)):
            self.step(a, vz)

    def finish(self, delivery_step: int, landing_tick: int,
               duration: float) -> Trajectory:
        n = len(self.pos)
        pos = np.vstack(self.pos)
        vel = np.vstack(self.vel)
        acc = np.vstack(self.acc + [np.zeros(2)])
        climb = np.array(self.climb + [0.0])
        airborne = np.arange(n) < landing_tick
        band, g, _ = _integrate_energy(pos, vel, climb, airborne, self.p)
        times = np.arange(n, dtype=float) * self.p.dt_minor
        return Trajectory(times=times, pos=pos, vel=vel, acc=acc, climb=climb,
                          airborne=airborne, band=band, energy=g,
                          delivery_step=delivery_step, duration=duration)


# ---------------------------------------------------------------------------
# Banded energy ledger
# ---------------------------------------------------------------------------

def _select_band(z: float, speed: float, params: DronePhysicsParams) -> Tuple[int, int]:
    H = params.altitude_band_limits
    if z > H[-1] + _TINY:
        raise BandError(f"altitude {z:.2f} m above the top band limit {H[-1]:.2f} m")
    i = 0
    while z > H[i + 1] + _TINY:
        i += 1
    th = np.asarray(params.throttle_band_speeds)
    j = int(np.argmin(np.abs(th - speed)))
    return i, j


def _integrate_energy(pos, vel, climb, airborne, params: DronePhysicsParams):
    """Cumulative energy plus the per-tick band labels.

    Bands are fixed per major at its first airborne tick and the band rate is
    charged for every step of an airborne major, so the ledger matches the
    major-level band accounting exactly.
    """
    n = len(pos)
    n_f = params.n_f
    dt = params.dt_minor
    n_major = (max(n - 1, 0) + n_f - 1) // n_f if n > 1 else 0
    band = np.full((n, 2), -1, dtype=np.int64)
    rates = np.zeros(max(n_major, 1))
    g = np.zeros(n)
    for m in range(n_major):
        t0, t1 = m * n_f, min((m + 1) * n_f, n - 1)
        tick_hi = min((m + 1) * n_f - 1, n - 1)
        segment = slice(t0, tick_hi + 1)
        idx = np.flatnonzero(airborne[segment])
        if len(idx):
            sel = t0 + int(idx[0])
            i, j = _select_band(float(pos[sel, 2]),
                                float(l2_approx_2d(vel[sel])), params)
            band[segment] = (i, j)
            rates[m] = params.energy_rate[i][j]
        steps = slice(t0, t1)
        g[t0 + 1:t1 + 1] = dt * (params.climb_surplus * np.maximum(climb[steps], 0.0)
                                 + rates[m])
    np.cumsum(g, out=g)
    return band, g, rates


def energy_of_trajectory(traj: Trajectory, params: DronePhysicsParams) -> float:
    """Recompute the cumulative draw of a trajectory from its kinematic state.

    Charges climb_surplus joules per metre climbed plus the band rate of the
    tick's major; a major is charged whenever any of its ticks is airborne.
    Raises BandError when an airborne state sits above the top altitude band.
    """
    _, g, _ = _integrate_energy(traj.pos, traj.vel, traj.climb, traj.airborne, params)
    return float(g[-1])


def _closed_energy(traj: Trajectory, params: DronePhysicsParams) -> float:
    # total once the last airborne major runs to its boundary; the band rate
    # keeps accruing there even after touchdown
    band, g, rates = _integrate_energy(traj.pos, traj.vel, traj.climb,
                                       traj.airborne, params)
    idx = np.flatnonzero(traj.airborne)
    if not len(idx):
        return float(g[-1])
    landing = int(idx[-1]) + 1
    m_last = (landing - 1) // params.n_f
    phantom = (m_last + 1) * params.n_f - landing
    return float(g[-1] + phantom * params.dt_minor * rates[m_last])


# ---------------------------------------------------------------------------
# Flight planning
# ---------------------------------------------------------------------------

def cruise_router(ras_list: Sequence[Ras], params: DronePhysicsParams) -> AvoidanceRouter:
    """Router for legs flown at cruise altitude.

    Each RAS is first grown by the delivery radius so the margin holds in 3D
    (an obstacle whose top is just below cruise altitude still blocks), then
    sliced at cruise and inflated horizontally by the routing clearance.
    """
    grown = [r.inflated(params.delivery_radius) for r in ras_list]
    return AvoidanceRouter(grown, clearance=params.ras_clearance,
                           slice_z=params.cruise_alt)


def _check_spec_point(name: str, p: np.ndarray, params: DronePhysicsParams) -> None:
    if not (params.h_lo - _TINY <= p[2] <= params.cruise_alt + _TINY):
        raise ValueError(f"{name} altitude {p[2]:.2f} m outside "
                         f"[h_lo, cruise_alt]")


def _leg_ticks(points, params: DronePhysicsParams) -> int:
    total = 0
    for a, b in zip(points, points[1:]):
        da = float(l2_approx_2d(np.asarray(b, dtype=float) - np.asarray(a, dtype=float)))
        total += _rest_to_rest_ticks(da, params.v_max, params.a_max, params.dt_minor)
    return total


def _prefix_phases(spec: FlightSpec, params: DronePhysicsParams,
                   router: AvoidanceRouter):
    """Leg to the customer plus tick arithmetic shared by both flight modes."""
    leg1 = router.path(spec.start[:2], spec.delivery[:2])
    n_up = _vertical_ticks(params.cruise_alt - spec.start[2], params.climb_max,
                           params.dt_minor)
    n_leg1 = _leg_ticks(leg1, params)
    n_down = _vertical_ticks(spec.delivery[2] - params.cruise_alt,
                             params.descent_max, params.dt_minor)
    at_p = n_up + n_leg1 + n_down
    dwell = (-at_p) % params.n_f  # hold position until the next major instant
    delivery_step = at_p + dwell
    n_up2 = _vertical_ticks(params.cruise_alt - spec.delivery[2], params.climb_max,
                            params.dt_minor)
    return leg1, dwell, delivery_step, delivery_step + n_up2


def _build_through_delivery(spec: FlightSpec, params: DronePhysicsParams,
                            leg1, dwell: int) -> _FlightBuilder:
    b = _FlightBuilder(params, spec.start)
    b.vertical(params.cruise_alt - spec.start[2], params.climb_max)
    b.run_polyline(leg1)
    b.vertical(spec.delivery[2] - params.cruise_alt, params.descent_max)
    b.hover(dwell)
    b.vertical(params.cruise_alt - spec.delivery[2], params.climb_max)
    return b


def plan_drone_only_flight(spec: FlightSpec, params: DronePhysicsParams,
                           router: Optional[AvoidanceRouter] = None) -> Trajectory:
    """Fly start -> delivery -> fixed end point, landing at rest.

    Phases are sequenced: climb to cruise, straight runs along the avoidance
    path, descend to the delivery point, hold until the next major instant,
    climb back out, fly to the end point and set down. Raises NoPathError when
    restricted airspace encloses an endpoint or blocks a vertical approach,
    and InfeasibleEnergyError when the flight would dip into the reserve.
    """
    if spec.is_coordinated:
        raise ValueError("spec.end must be a fixed point here")
    if math.hypot(*spec.start_velocity) > _TINY:
        raise ValueError("flights launch from rest")
    _check_spec_point("start", spec.start, params)
    _check_spec_point("delivery", spec.delivery, params)
    _check_spec_point("end", spec.end, params)
    if router is None:
        router = cruise_router(spec.ras_list, params)
    leg1, dwell, delivery_step, _ = _prefix_phases(spec, params, router)
    b = _build_through_delivery(spec, params, leg1, dwell)
    b.run_polyline(router.path(spec.delivery[:2], spec.end[:2]))
    b.vertical(spec.end[2] - params.cruise_alt, params.descent_max)
    landing = b.tick
    traj = b.finish(delivery_step, landing, landing * params.dt_minor)
    if not airborne_clear_of_ras(traj, spec.ras_list, params.delivery_radius):
        raise NoPathError("a vertical approach passes through restricted airspace")
    if _closed_energy(traj, params) > params.usable_energy:
        raise InfeasibleEnergyError(
            f"flight needs {_closed_energy(traj, params):.0f} J, "
            f"usable capacity is {params.usable_energy:.0f} J")
    return traj


def drone_only_duration_s(start, delivery, end, params: DronePhysicsParams,
                          ras_list: Sequence[Ras] = (),
                          router: Optional[AvoidanceRouter] = None) -> float:
    """Duration of plan_drone_only_flight without building the state arrays.

    Same phase arithmetic, so the value matches the full construction tick for
    tick. Used where only the clock matters, e.g. labelling training data.
    """
    spec = FlightSpec(start=start, delivery=delivery, end=end,
                      ras_list=tuple(ras_list))
    _check_spec_point("start", spec.start, params)
    _check_spec_point("delivery", spec.delivery, params)
    _check_spec_point("end", spec.end, params)
    if router is None:
        router = cruise_router(spec.ras_list, params)
    _, _, _, after_reclimb = _prefix_phases(spec, params, router)
    leg2 = router.path(spec.delivery[:2], spec.end[:2])
    n_final = _vertical_ticks(spec.end[2] - params.cruise_alt,
                              params.descent_max, params.dt_minor)
    return (after_reclimb + _leg_ticks(leg2, params) + n_final) * params.dt_minor


def plan_coordinated_flight(spec: FlightSpec, params: DronePhysicsParams,
                            router: Optional[AvoidanceRouter] = None,
                            land_major: Optional[int] = None) -> Trajectory:
    """Fly start -> delivery -> rendezvous with the moving truck.

    Candidate landings are the major-grid samples of the truck path, scanned
    in increasing time; the first one the drone can reach wins. The final
    approach is a fixed-length ramp that descends from cruise altitude while
    matching the truck's horizontal velocity, so touchdown agrees with the
    truck sample in both position and velocity. Arriving early means hovering
    at cruise altitude over the ramp entry, burning hover energy.

    Landings are restricted to major boundaries: the operation clock is
    quantised to majors anyway, so this costs nothing, and it keeps the
    landing major fully grounded.

    `land_major` pins the landing to one specific major boundary instead of
    scanning, for callers comparing alternative equal-duration landings.

    Raises NoRendezvousError when no sample within the path horizon works.
    """
    if not spec.is_coordinated:
        raise ValueError("spec.end must be a TimedTruckPath here")
    path: TimedTruckPath = spec.end
    if math.hypot(*spec.start_velocity) > _TINY:
        raise ValueError("flights launch from rest")
    if abs(path.dt - params.dt_minor) > _TINY and len(path.times) > 1:
        raise ValueError("truck path must be sampled at dt_minor")
    if np.max(np.abs(spec.start[:2] - path.points[0])) > 1e-6:
        raise ValueError("flight must launch from the truck's first sample")
    _check_spec_point("start", spec.start, params)
    _check_spec_point("delivery", spec.delivery, params)
    if router is None:
        router = cruise_router(spec.ras_list, params)

    dt = params.dt_minor
    n_f = params.n_f
    bed = params.truck_bed_alt
    drop = params.cruise_alt - bed
    n_desc = _vertical_ticks(-drop, params.descent_max, dt)
    leg1, dwell, delivery_step, prefix = _prefix_phases(spec, params, router)

    last_reason = "truck path horizon exhausted"
    m = 1 if land_major is None else int(land_major)
    while True:
        k = m * n_f
        if k >= len(path.times) or (land_major is not None and m > land_major):
            raise NoRendezvousError(
                f"no feasible rendezvous within {path.times[-1]:.0f} s "
                f"({last_reason})")
        m += 1
        vt = path.velocities[k]
        pt = path.points[k]
        sv = float(l2_approx_2d(vt))
        if sv > params.v_max + _TINY:
            last_reason = "truck faster than the drone speed cap"
            continue
        n_ramp = max(n_desc, int(math.ceil(sv / (params.a_max * dt) - 1e-12)), 1)
        if k - n_ramp < prefix:
            last_reason = "candidate earlier than the drone can arrive"
            continue
        entry = pt - (0.5 * n_ramp * dt) * vt
        try:
            leg2 = router.path(spec.delivery[:2], entry)
        except NoPathError:
            last_reason = "ramp entry unreachable"
            continue
        ready = prefix + _leg_ticks(leg2, params)
        if ready > k - n_ramp:
            last_reason = "candidate earlier than the drone can arrive"
            continue
        b = _build_through_delivery(spec, params, leg1, dwell)
        b.run_polyline(leg2)
        b.hover(k - n_ramp - ready)
        b.ramp(n_ramp, vt, bed - params.cruise_alt)
        assert b.tick == k
        traj = b.finish(delivery_step, k, max(path.arrival_s, k * dt))
        if not airborne_clear_of_ras(traj, spec.ras_list, params.delivery_radius):
            last_reason = "approach passes through restricted airspace"
            continue
        if _closed_energy(traj, params) > params.usable_energy:
            last_reason = "battery reserve would be breached"
            continue
        return traj
