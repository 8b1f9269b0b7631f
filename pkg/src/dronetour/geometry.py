"""Planar and spatial geometry for truck-and-drone route planning.

Provides the piecewise-linear surrogate of the Euclidean norm used by the
trajectory model, restricted-airspace (RAS) membership tests, visibility-graph
detours around RAS footprints, and minimum-time routing on a road network.
All functions are deterministic and side-effect free.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NoPathError

Point2 = Tuple[float, float]
Point3 = Tuple[float, float, float]

# Weights of the |.|_1 / |.|_inf blend that best tracks |.|_2 over the unit
# sphere, one value per dimension of the blended vector.
LAMBDA_2D = 0.3363788020
LAMBDA_3D = 0.2980450507

_EPS = 1e-9


@dataclass(frozen=True)
class NormConstants:
    """Blend weights for the linearized Euclidean norm."""

    lambda2: float = LAMBDA_2D
    lambda3: float = LAMBDA_3D


def l2_approx_2d(v, consts: NormConstants | None = None):
    """Linear surrogate of the planar Euclidean norm.

    Accepts a length-2 vector or an (..., 2) array; returns a scalar or the
    correspondingly shaped array. Exactly homogeneous: f(k*v) == |k|*f(v).
    """
    lam = (consts or _DEFAULT_CONSTS).lambda2
    a = np.abs(np.asarray(v, dtype=float))
    out = lam * a.sum(axis=-1) + (1.0 - lam) * a.max(axis=-1)
    return float(out) if out.ndim == 0 else out


def l2_approx_3d(v, consts: NormConstants | None = None):
    """Linear surrogate of the spatial Euclidean norm (see l2_approx_2d)."""
    lam = (consts or _DEFAULT_CONSTS).lambda3
    a = np.abs(np.asarray(v, dtype=float))
    out = lam * a.sum(axis=-1) + (1.0 - lam) * a.max(axis=-1)
    return float(out) if out.ndim == 0 else out


_DEFAULT_CONSTS = NormConstants()


# ---------------------------------------------------------------------------
# Restricted airspace
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FootprintPolygon:
    """Convex ground-plane cross-section of one RAS.

    ``vertices`` are ordered counter-clockwise. ``normals`` / ``offsets``
    describe the same region as unit-normalized halfplanes a.x <= b, with b in
    metres, so offsets can be shifted by a clearance directly.
    """

    vertices: np.ndarray  # (M, 2)
    normals: np.ndarray   # (K, 2) unit rows
    offsets: np.ndarray   # (K,)

    def contains(self, p, tol: float = _EPS) -> bool:
        """True when p lies strictly inside the polygon."""
        p = np.asarray(p, dtype=float)
        return bool(np.all(self.normals @ p < self.offsets - tol))

    def signed_distances(self, p) -> np.ndarray:
        return self.normals @ np.asarray(p, dtype=float) - self.offsets

    def blocks_segment(self, u, v, tol: float = _EPS) -> bool:
        """True when the open segment u-v passes through the open interior."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        g0 = self.normals @ u - self.offsets
        g1 = self.normals @ v - self.offsets
        lo, hi = 0.0, 1.0
        for a, b in zip(g0, g1):
            dg = b - a
            if abs(dg) < 1e-15:
                if a >= -tol:
                    return False
                continue
            t = (-tol - a) / dg
            if dg < 0.0:
                lo = max(lo, t)
            else:
                hi = min(hi, t)
            if lo >= hi:
                return False
        return lo < hi


def _slice_polygon(normals: np.ndarray, offsets: np.ndarray) -> Optional[FootprintPolygon]:
    """Intersect 2-D halfplanes a.x <= b into a polygon, or None when empty."""
    k = len(offsets)
    pts = []
    for i in range(k):
        for j in range(i + 1, k):
            m = np.array([normals[i], normals[j]])
            det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
            if abs(det) < 1e-12:
                continue
            p = np.linalg.solve(m, np.array([offsets[i], offsets[j]]))
            if np.all(normals @ p <= offsets + 1e-7):
                pts.append(p)
    if len(pts) < 3:
        return None
    pts = np.array(pts)
    # dedupe coincident intersections, then order CCW around the centroid
    keep: List[np.ndarray] = []
    for p in pts:
        if not any(np.hypot(*(p - q)) < 1e-7 for q in keep):
            keep.append(p)
    if len(keep) < 3:
        return None
    arr = np.array(keep)
    c = arr.mean(axis=0)
    order = np.argsort(np.arctan2(arr[:, 1] - c[1], arr[:, 0] - c[0]))
    return FootprintPolygon(vertices=arr[order], normals=normals, offsets=offsets)


@dataclass(frozen=True)
class Ras:
    """One convex restricted airspace, an intersection of open halfspaces.

    A point is inside the RAS when it violates every halfspace, i.e.
    c . r < rhs for all (c, rhs). The boundary counts as safe. Every RAS must
    have a bounded ground-plane footprint, which is validated at construction.
    """

    halfspaces: Tuple[Tuple[Tuple[float, float, float], float], ...]
    name: str = ""
    _A: np.ndarray = field(init=False, repr=False, compare=False)
    _b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array([h[0] for h in self.halfspaces], dtype=float)
        b = np.array([h[1] for h in self.halfspaces], dtype=float)
        if A.ndim != 2 or A.shape[1] != 3 or len(A) == 0:
            raise ValueError("halfspaces must be a nonempty list of ((cx,cy,cz), rhs)")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero normal vector in RAS halfspace")
        object.__setattr__(self, "_A", A / norms[:, None])
        object.__setattr__(self, "_b", b / norms)
        self._validate_bounded_footprint()

    def _validate_bounded_footprint(self):
        # A halfplane intersection is bounded iff the outward normals leave no
        # angular gap of pi or more.
        xy = self._A[:, :2]
        mags = np.linalg.norm(xy, axis=1)
        dirs = xy[mags > 1e-12]
        if len(dirs) < 3:
            raise ValueError(f"RAS {self.name!r} footprint is unbounded")
        ang = np.sort(np.arctan2(dirs[:, 1], dirs[:, 0]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        if gaps.max() >= np.pi - 1e-9:
            raise ValueError(f"RAS {self.name!r} footprint is unbounded")

    def footprint(self, z: float, clearance: float = 0.0) -> Optional[FootprintPolygon]:
        """Cross-section at altitude z, optionally inflated by a clearance."""
        rows, offs = [], []
        for a, b in zip(self._A, self._b):
            rhs = b - a[2] * z
            m = np.hypot(a[0], a[1])
            if m < 1e-12:
                if rhs < 0.0:
                    return None  # slice plane misses the RAS entirely
                continue
            rows.append(a[:2] / m)
            offs.append(rhs / m + clearance)
        if not rows:
            return None
        return _slice_polygon(np.array(rows), np.array(offs))

    def inflated(self, margin: float) -> "Ras":
        """Minkowski-grow the no-go region by `margin` metres in every direction.

        Works on the normalised faces, so the result is exact for convex
        bodies and keeps the same face structure.
        """
        hs = tuple(
            ((float(a[0]), float(a[1]), float(a[2])), float(b + margin))
            for a, b in zip(self._A, self._b)
        )
        return Ras(halfspaces=hs, name=self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "halfspaces": [{"normal": list(h[0]), "rhs": h[1]} for h in self.halfspaces],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ras":
        hs = tuple((tuple(h["normal"]), float(h["rhs"])) for h in d["halfspaces"])
        return cls(halfspaces=hs, name=d.get("name", ""))

    @classmethod
    def from_box(cls, xmin: float, xmax: float, ymin: float, ymax: float,
                 zmin: float, zmax: float, name: str = "") -> "Ras":
        hs = (
            ((1.0, 0.0, 0.0), xmax),
            ((-1.0, 0.0, 0.0), -xmin),
            ((0.0, 1.0, 0.0), ymax),
            ((0.0, -1.0, 0.0), -ymin),
            ((0.0, 0.0, 1.0), zmax),
            ((0.0, 0.0, -1.0), -zmin),
        )
        return cls(halfspaces=hs, name=name)


def point_in_ras(p, ras: Ras, margin: float = 0.0) -> bool:
    """True when p violates every halfspace of the RAS by more than -margin.

    margin > 0 inflates the no-go region by that many metres (per face);
    margin 0 reproduces the open-interior test, so the boundary is safe.
    """
    p = np.asarray(p, dtype=float)
    sd = ras._A @ p - ras._b
    return bool(np.all(sd < margin))


def points_in_ras(pts, ras: Ras, margin: float = 0.0) -> np.ndarray:
    """Vectorised point_in_ras over an (n, 3) array; returns an (n,) bool mask."""
    pts = np.asarray(pts, dtype=float)
    sd = pts @ ras._A.T - ras._b
    return np.all(sd < margin, axis=1)


def point_in_footprint(p2, ras: Ras, margin: float = 0.0) -> bool:
    """True when the vertical line through the ground point p2 meets the RAS.

    Membership in the ground-plane projection: some altitude exists at which
    (x, y, z) is inside the region inflated by `margin`. A delivery point
    inside a footprint has its vertical approach blocked, whatever the
    obstacle's height range.
    """
    p2 = np.asarray(p2, dtype=float)
    room = ras._b + margin - ras._A[:, :2] @ p2  # need a_z * z < room per face
    lo, hi = -np.inf, np.inf
    for az, r in zip(ras._A[:, 2], room):
        if abs(az) < 1e-12:
            if r <= 0.0:
                return False
        elif az > 0.0:
            hi = min(hi, r / az)
        else:
            lo = max(lo, r / az)
    return lo < hi


# ---------------------------------------------------------------------------
# Visibility-graph avoidance paths
# ---------------------------------------------------------------------------


class AvoidanceRouter:
    """Shortest polyline routing around inflated RAS footprints.

    The footprints are sliced at ``slice_z`` and pushed out face-wise by
    ``clearance``, so every point of a returned polyline keeps at least the
    clearance from every RAS face plane. Built once per obstacle layout; each
    query only adds the two endpoints to the cached visibility graph.
    """

    def __init__(self, ras_list: Sequence[Ras], clearance: float, slice_z: float = 0.0):
        self.clearance = float(clearance)
        self.slice_z = float(slice_z)
        self.polygons: List[FootprintPolygon] = []
        for r in ras_list:
            poly = r.footprint(slice_z, clearance=clearance)
            if poly is not None:
                self.polygons.append(poly)
        verts: List[np.ndarray] = []
        for i, poly in enumerate(self.polygons):
            for v in poly.vertices:
                if not any(q.contains(v) for j, q in enumerate(self.polygons) if j != i):
                    verts.append(v)
        self._verts = np.array(verts) if verts else np.zeros((0, 2))
        n = len(self._verts)
        self._vis = np.zeros((n, n), dtype=bool)
        for i in range(n):
            for j in range(i + 1, n):
                ok = self._segment_clear(self._verts[i], self._verts[j])
                self._vis[i, j] = self._vis[j, i] = ok

    def _segment_clear(self, u, v) -> bool:
        return not any(poly.blocks_segment(u, v) for poly in self.polygons)

    def _strictly_inside(self, p) -> bool:
        return any(poly.contains(p) for poly in self.polygons)

    def path(self, a, b) -> List[Point2]:
        """Shortest clearance-respecting polyline from a to b.

        Raises NoPathError when either endpoint sits strictly inside an
        inflated footprint or no route exists through the visibility graph.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self._strictly_inside(a) or self._strictly_inside(b):
            raise NoPathError("endpoint lies inside an inflated RAS footprint")
        if self._segment_clear(a, b):
            return [(float(a[0]), float(a[1])), (float(b[0]), float(b[1]))]
        pts = [a, b] + [v for v in self._verts]
        n = len(pts)
        adj: List[List[Tuple[int, float]]] = [[] for _ in range(n)]
        for vi in range(len(self._verts)):
            for vj in range(vi + 1, len(self._verts)):
                if self._vis[vi, vj]:
                    w = float(np.hypot(*(self._verts[vi] - self._verts[vj])))
                    adj[vi + 2].append((vj + 2, w))
                    adj[vj + 2].append((vi + 2, w))
        for e, p in ((0, a), (1, b)):
            for vi in range(len(self._verts)):
                if self._segment_clear(p, self._verts[vi]):
                    w = float(np.hypot(*(p - self._verts[vi])))
                    adj[e].append((vi + 2, w))
                    adj[vi + 2].append((e, w))
        dist = {0: 0.0}
        prev: dict = {}
        seen = set()
        heap: List[Tuple[float, int]] = [(0.0, 0)]
        while heap:
            d, u = heapq.heappop(heap)
            if u in seen:
                continue
            seen.add(u)
            if u == 1:
                break
            for v, w in adj[u]:
                nd = d + w
                if nd < dist.get(v, np.inf):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        if 1 not in seen:
            raise NoPathError("no route around RAS footprints")
        out = [1]
        while out[-1] != 0:
            out.append(prev[out[-1]])
        out.reverse()
        return [(float(pts[i][0]), float(pts[i][1])) for i in out]


def avoidance_path_2d(a, b, ras_list: Sequence[Ras], clearance: float,
                      slice_z: float = 0.0) -> List[Point2]:
    """One-shot wrapper around AvoidanceRouter for a single query."""
    return AvoidanceRouter(ras_list, clearance, slice_z).path(a, b)


def polyline_length(points: Sequence[Point2]) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*(np.diff(pts, axis=0).T)).sum())


# ---------------------------------------------------------------------------
# Road network
# ---------------------------------------------------------------------------


@dataclass
class RoadGraph:
    """Undirected road network with per-edge length and speed."""

    nodes: np.ndarray  # (N, 2) coordinates, metres
    edges: List[Tuple[int, int, float, float]]  # (u, v, length m, speed m/s)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self._adj: List[List[Tuple[int, float]]] = [[] for _ in range(len(self.nodes))]
        for u, v, length, speed in self.edges:
            if speed <= 0 or length < 0:
                raise ValueError("edge needs positive speed and nonnegative length")
            t = length / speed
            self._adj[u].append((v, t))
            self._adj[v].append((u, t))
        for lst in self._adj:
            lst.sort()

    def nearest_node(self, p) -> int:
        d = np.hypot(*(self.nodes - np.asarray(p, dtype=float)).T)
        return int(np.argmin(d))

    def times_from(self, src: int) -> np.ndarray:
        """Minimum travel time from src to every node, inf when unreachable.

        Same edge weights as shortest_truck_path, so the two agree; this one
        settles the whole graph in a single Dijkstra sweep.
        """
        dist = np.full(len(self.nodes), np.inf)
        dist[src] = 0.0
        heap: List[Tuple[float, int]] = [(0.0, src)]
        while heap:
            t, u = heapq.heappop(heap)
            if t > dist[u]:
                continue
            for v, w in self._adj[u]:
                nt = t + w
                if nt < dist[v]:
                    dist[v] = nt
                    heapq.heappush(heap, (nt, v))
        return dist

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": [[u, v, length, speed] for u, v, length, speed in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoadGraph":
        return cls(nodes=np.asarray(d["nodes"], dtype=float),
                   edges=[(int(u), int(v), float(l), float(s)) for u, v, l, s in d["edges"]])


def shortest_truck_path(graph: RoadGraph, a: int, b: int) -> Tuple[float, List[int]]:
    """Minimum-time route between two road nodes.

    Ties in travel time are broken toward the lexicographically smallest node
    sequence, which keeps routes reproducible on symmetric grids. Raises
    NoPathError when b is unreachable from a.
    """
    if a == b:
        return 0.0, [a]
    heap: List[Tuple[float, Tuple[int, ...]]] = [(0.0, (a,))]
    settled = set()
    while heap:
        t, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == b:
            return t, list(path)
        for v, w in graph._adj[u]:
            if v not in settled:
                heapq.heappush(heap, (t + w, path + (v,)))
    raise NoPathError(f"road node {b} unreachable from {a}")
