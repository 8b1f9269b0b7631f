import math

import numpy as np
import pytest

from dronetour.errors import NoPathError
from dronetour.geometry import (
    LAMBDA_2D,
    LAMBDA_3D,
    AvoidanceRouter,
    Ras,
    RoadGraph,
    avoidance_path_2d,
    l2_approx_2d,
    l2_approx_3d,
    point_in_footprint,
    point_in_ras,
    polyline_length,
    shortest_truck_path,
)

# ---------------------------------------------------------------------------
# independent oracles
# ---------------------------------------------------------------------------


def bellman_ford_time(nodes, adj, a, b):
    """Reference min-time route value; adj is {u: [(v, t), ...]} undirected."""
    dist = {u: math.inf for u in nodes}
    dist[a] = 0.0
    for _ in range(len(nodes)):
        changed = False
        for u in nodes:
            if dist[u] == math.inf:
                continue
            for v, t in adj[u]:
                if dist[u] + t < dist[v]:
                    dist[v] = dist[u] + t
                    changed = True
        if not changed:
            break
    return dist[b]


def all_min_paths(adj, a, b, best, tol=1e-12):
    """Every simple path from a to b whose time matches best (small graphs)."""
    out = []

    def walk(u, path, t):
        if t > best + tol:
            return
        if u == b:
            if abs(t - best) <= tol:
                out.append(tuple(path))
            return
        for v, w in adj[u]:
            if v not in path:
                path.append(v)
                walk(v, path, t + w)
                path.pop()

    walk(a, [a], 0.0)
    return out


def dist_to_convex_polygon(p, verts):
    """True Euclidean distance from a point to a convex polygon boundary/interior."""
    p = np.asarray(p, dtype=float)
    verts = np.asarray(verts, dtype=float)
    n = len(verts)
    inside = True
    best = math.inf
    c = verts.mean(axis=0)
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        e = b - a
        # outward test via the centroid
        nrm = np.array([e[1], -e[0]])
        if nrm @ (c - a) > 0:
            nrm = -nrm
        if nrm @ (p - a) > 0:
            inside = False
        t = np.clip((p - a) @ e / (e @ e), 0.0, 1.0)
        best = min(best, float(np.hypot(*(a + t * e - p))))
    return 0.0 if inside else best


# ---------------------------------------------------------------------------
# norm surrogate
# ---------------------------------------------------------------------------


def test_l2_approx_hand_values():
    # frozen from hand evaluation of lam*l1 + (1-lam)*linf
    assert l2_approx_2d((3.0, 4.0)) == pytest.approx(5.009136406, abs=1e-9)
    s = 1.0 / math.sqrt(2.0)
    assert l2_approx_2d((s, s)) == pytest.approx((1.0 + LAMBDA_2D) / math.sqrt(2.0), rel=1e-12)
    assert l2_approx_3d((1.0, 1.0, 1.0)) == pytest.approx(1.5960901014, abs=1e-9)
    assert l2_approx_3d((3.0, 4.0, 0.0)) == pytest.approx(4.8941351521, abs=1e-9)


def test_l2_approx_relative_error_bounds():
    # worst case of the blend is ||(1, lam, .., lam)||_2: 5.51% in 2D, 8.53% in 3D
    rng = np.random.default_rng(2301)
    v2 = rng.normal(size=(10_000, 2))
    v2 /= np.linalg.norm(v2, axis=1, keepdims=True)
    err2 = np.abs(l2_approx_2d(v2) - 1.0)
    assert err2.max() <= 0.06
    v3 = rng.normal(size=(10_000, 3))
    v3 /= np.linalg.norm(v3, axis=1, keepdims=True)
    err3 = np.abs(l2_approx_3d(v3) - 1.0)
    assert err3.max() <= math.sqrt(1.0 + 2.0 * LAMBDA_3D ** 2) - 1.0 + 1e-12


def test_l2_approx_absolute_homogeneity():
    rng = np.random.default_rng(7)
    for _ in range(300):
        v = rng.normal(size=2) * 10 ** rng.uniform(-3, 3)
        k = rng.normal() * 10 ** rng.uniform(-3, 3)
        lhs = l2_approx_2d(k * v)
        rhs = abs(k) * l2_approx_2d(v)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)
        w = rng.normal(size=3)
        assert l2_approx_3d(k * w) == pytest.approx(abs(k) * l2_approx_3d(w), rel=1e-12, abs=1e-300)


def test_l2_approx_vectorized_matches_scalar():
    rng = np.random.default_rng(11)
    arr = rng.normal(size=(50, 2))
    out = l2_approx_2d(arr)
    for row, o in zip(arr, out):
        assert l2_approx_2d(row) == pytest.approx(o, rel=1e-15)


# ---------------------------------------------------------------------------
# RAS membership
# ---------------------------------------------------------------------------


def test_point_in_ras_interior_boundary_margin():
    box = Ras.from_box(-100, 100, -100, 100, 0, 300)
    assert point_in_ras((0, 0, 50), box)
    assert not point_in_ras((100, 0, 50), box)          # boundary is safe
    assert not point_in_ras((100, 100, 50), box)        # corner is safe
    assert point_in_ras((101, 0, 50), box, margin=2.0)  # 1 m out, 2 m margin
    assert not point_in_ras((101, 0, 50), box, margin=0.0)
    assert not point_in_ras((0, 0, 301), box)           # above the top face


def test_point_in_ras_margin_uses_metric_distance():
    # same region described with scaled normals must behave identically
    a = Ras.from_box(-10, 10, -10, 10, 0, 50)
    scaled = tuple(((3 * c[0], 3 * c[1], 3 * c[2]), 3 * rhs) for c, rhs in a.halfspaces)
    b = Ras(halfspaces=scaled)
    for p in [(10.5, 0, 5), (0, 0, 5), (12.5, 0, 5)]:
        assert point_in_ras(p, a, margin=1.0) == point_in_ras(p, b, margin=1.0)


def test_ras_unbounded_footprint_rejected():
    with pytest.raises(ValueError):
        Ras(halfspaces=(((1, 0, 0), 1.0), ((-1, 0, 0), 1.0), ((0, 0, 1), 5.0)))


def test_ras_footprint_slice_above_body_is_empty():
    box = Ras.from_box(0, 10, 0, 10, 0, 20)
    assert box.footprint(30.0) is None
    assert box.footprint(10.0) is not None


def test_ras_dict_round_trip():
    box = Ras.from_box(-5, 5, -2, 8, 0, 100, name="b0")
    again = Ras.from_dict(box.to_dict())
    assert again == box


# ---------------------------------------------------------------------------
# avoidance paths
# ---------------------------------------------------------------------------


def test_avoidance_unobstructed_is_direct():
    assert avoidance_path_2d((0, 0), (100, 0), [], clearance=2.0) == [(0.0, 0.0), (100.0, 0.0)]
    box = Ras.from_box(0, 50, 100, 150, 0, 300)  # far off the segment
    path = avoidance_path_2d((0, 0), (100, 0), [box], clearance=2.0, slice_z=50.0)
    assert path == [(0.0, 0.0), (100.0, 0.0)]


def test_avoidance_square_detour_matches_visibility_oracle():
    # square of side 200 centred between endpoints 600 apart; the shortest
    # route hugs two inflated corners: 2*hypot(200-c, 100+c) + 2*(100+c)
    c = 5.0
    box = Ras.from_box(-100, 100, -100, 100, 0, 300)
    path = avoidance_path_2d((-300, 0), (300, 0), [box], clearance=c, slice_z=50.0)
    oracle = 2 * math.hypot(200 - c, 100 + c) + 2 * (100 + c)
    assert polyline_length(path) == pytest.approx(oracle, rel=1e-12)
    assert len(path) == 4


def test_avoidance_clearance_is_respected():
    c = 4.0
    box = Ras.from_box(-100, 100, -100, 100, 0, 300)
    square = [(-100, -100), (100, -100), (100, 100), (-100, 100)]
    rng = np.random.default_rng(42)
    for _ in range(20):
        a = rng.uniform(-400, 400, size=2)
        b = rng.uniform(-400, 400, size=2)
        if point_in_ras((*a, 50.0), box, margin=c + 1e-6) or point_in_ras((*b, 50.0), box, margin=c + 1e-6):
            continue
        path = np.asarray(avoidance_path_2d(a, b, [box], clearance=c, slice_z=50.0))
        for u, v in zip(path[:-1], path[1:]):
            for t in np.linspace(0, 1, 400):
                p = u + t * (v - u)
                assert dist_to_convex_polygon(p, square) >= c - 1e-6


def test_avoidance_enclosed_endpoint_raises():
    box = Ras.from_box(-100, 100, -100, 100, 0, 300)
    with pytest.raises(NoPathError):
        avoidance_path_2d((0, 0), (300, 0), [box], clearance=2.0, slice_z=50.0)
    with pytest.raises(NoPathError):
        # 1 m outside the face but within the clearance inflation
        avoidance_path_2d((101, 0), (300, 0), [box], clearance=5.0, slice_z=50.0)


def test_avoidance_two_overlapping_boxes():
    boxes = [
        Ras.from_box(-100, 20, -50, 50, 0, 300),
        Ras.from_box(-20, 100, -30, 90, 0, 300),
    ]
    path = avoidance_path_2d((-200, 0), (200, 0), boxes, clearance=3.0, slice_z=50.0)
    union = [b.footprint(50.0, clearance=3.0) for b in boxes]
    for u, v in zip(path[:-1], path[1:]):
        u, v = np.asarray(u), np.asarray(v)
        for t in np.linspace(1e-4, 1 - 1e-4, 500):
            p = u + t * (v - u)
            assert not any(poly.contains(p, tol=1e-7) for poly in union)


def test_router_reuse_matches_one_shot():
    boxes = [Ras.from_box(0, 60, -30, 30, 0, 300)]
    router = AvoidanceRouter(boxes, clearance=2.0, slice_z=50.0)
    for a, b in [((-50, 0), (120, 0)), ((-50, -80), (120, 40))]:
        assert router.path(a, b) == avoidance_path_2d(a, b, boxes, clearance=2.0, slice_z=50.0)


# ---------------------------------------------------------------------------
# road network
# ---------------------------------------------------------------------------


def _random_graph(rng, n):
    nodes = rng.uniform(0, 1000, size=(n, 2))
    edges = []
    for i in range(n - 1):  # random spanning chain keeps most graphs connected
        length = float(np.hypot(*(nodes[i + 1] - nodes[i])))
        edges.append((i, i + 1, length, float(rng.uniform(5, 20))))
    extra = rng.integers(0, n, size=(n, 2))
    for u, v in extra:
        if u != v:
            length = float(np.hypot(*(nodes[u] - nodes[v])))
            edges.append((int(u), int(v), length, float(rng.uniform(5, 20))))
    return RoadGraph(nodes=nodes, edges=edges)


def test_shortest_truck_path_matches_bellman_ford():
    rng = np.random.default_rng(314)
    for _ in range(200):
        n = int(rng.integers(3, 13))
        g = _random_graph(rng, n)
        adj = {u: [] for u in range(n)}
        for u, v, length, speed in g.edges:
            adj[u].append((v, length / speed))
            adj[v].append((u, length / speed))
        a, b = int(rng.integers(0, n)), int(rng.integers(0, n))
        t, path = shortest_truck_path(g, a, b)
        assert t == pytest.approx(bellman_ford_time(range(n), adj, a, b), rel=1e-12, abs=1e-12)
        assert path[0] == a and path[-1] == b
        best_leg: dict = {}
        for u, v, length, s in g.edges:  # parallel edges collapse to the fastest
            key = (min(u, v), max(u, v))
            best_leg[key] = min(best_leg.get(key, math.inf), length / s)
        walked = sum(best_leg[(min(x, y), max(x, y))] for x, y in zip(path, path[1:]))
        assert walked == pytest.approx(t, rel=1e-9, abs=1e-12)


def test_shortest_truck_path_lexicographic_ties():
    # 2x2 unit grid, both corner routes take the same time
    nodes = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    edges = [(0, 1, 1.0, 1.0), (0, 2, 1.0, 1.0), (1, 3, 1.0, 1.0), (2, 3, 1.0, 1.0)]
    g = RoadGraph(nodes=nodes, edges=edges)
    t, path = shortest_truck_path(g, 0, 3)
    adj = {u: [] for u in range(4)}
    for u, v, length, speed in edges:
        adj[u].append((v, length / speed))
        adj[v].append((u, length / speed))
    candidates = all_min_paths(adj, 0, 3, t)
    assert tuple(path) == min(candidates)


def test_shortest_truck_path_unreachable_raises():
    g = RoadGraph(nodes=np.array([[0, 0], [10, 0], [100, 100]]),
                  edges=[(0, 1, 10.0, 5.0)])
    with pytest.raises(NoPathError):
        shortest_truck_path(g, 0, 2)


def test_truck_leg_time_hand_value():
    # 1 km at 40 km/h is 90 s
    g = RoadGraph(nodes=np.array([[0, 0], [1000, 0]]),
                  edges=[(0, 1, 1000.0, 40.0 / 3.6)])
    t, _ = shortest_truck_path(g, 0, 1)
    assert t == pytest.approx(90.0, rel=1e-12)


def test_nearest_node():
    g = RoadGraph(nodes=np.array([[0, 0], [10, 0], [20, 5]]), edges=[(0, 1, 10, 5), (1, 2, 12, 5)])
    assert g.nearest_node((9, 1)) == 1
    assert g.nearest_node((100, 100)) == 2


def test_times_from_agrees_with_point_queries():
    nodes = np.array([[0, 0], [100, 0], [100, 100], [0, 100], [300, 300]], dtype=float)
    edges = [(0, 1, 100.0, 10.0), (1, 2, 100.0, 5.0), (2, 3, 100.0, 10.0),
             (0, 3, 150.0, 10.0), (0, 2, 500.0, 10.0)]
    g = RoadGraph(nodes=nodes, edges=edges)
    d = g.times_from(0)
    for target in range(4):
        t, _ = shortest_truck_path(g, 0, target)
        assert d[target] == pytest.approx(t, rel=1e-12, abs=1e-12)
    assert math.isinf(d[4])  # node 4 has no edges


def test_point_in_footprint_ignores_altitude_range():
    # an elevated deck still shadows the ground under it
    deck = Ras.from_box(40.0, 60.0, -10.0, 10.0, 30.0, 80.0)
    assert point_in_footprint((50.0, 0.0), deck)
    assert not point_in_ras((50.0, 0.0, 0.0), deck)
    assert not point_in_footprint((61.0, 0.0), deck)
    assert not point_in_footprint((60.0, 0.0), deck)  # boundary is safe
    assert point_in_footprint((61.0, 0.0), deck, margin=2.0)
