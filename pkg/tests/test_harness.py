import csv
import math
import os
from xml.etree import ElementTree

import numpy as np
import pytest

from dronetour.errors import SamplingError
from dronetour.estimators import KEstimator
from dronetour.geometry import RoadGraph, point_in_footprint
from dronetour.harness import (
    Building,
    ComparisonReport,
    InstanceResult,
    RegionFile,
    ScenarioConfig,
    emit_report,
    gen_instance,
    run_battery,
    sample_case_study,
)
from dronetour.physics import DronePhysicsParams, drone_only_duration_s


# ---------------------------------------------------------------------------
# scenario generation
# ---------------------------------------------------------------------------


def test_scenario_config_rejects_bad_fields():
    with pytest.raises(ValueError):
        ScenarioConfig(scenario=3)
    with pytest.raises(ValueError):
        ScenarioConfig(n=0)
    with pytest.raises(ValueError):
        ScenarioConfig(truck_speed_kmh=0.0)
    with pytest.raises(ValueError):
        ScenarioConfig(ras_count=(4, 2))
    with pytest.raises(ValueError):
        ScenarioConfig(ras_area_frac=(0.2, 1.2))
    with pytest.raises(ValueError):
        ScenarioConfig(improve_budget=-1)


def test_gen_instance_deterministic_and_centred():
    cfg = ScenarioConfig(scenario=1, n=8, truck_speed_kmh=36.0, seed=11)
    a = gen_instance(cfg, 4)
    b = gen_instance(cfg, 4)
    assert np.array_equal(a.deliveries, b.deliveries)
    assert np.array_equal(a.depot, np.zeros(2))
    assert a.truck_speed == 10.0  # 36 km/h
    assert a.ras_list == ()
    half = cfg.region_side / 2
    assert np.all(np.abs(a.deliveries) <= half)
    c = gen_instance(cfg, 5)
    assert not np.array_equal(a.deliveries, c.deliveries)


def test_gen_instance_scenario2_keeps_margin():
    cfg = ScenarioConfig(scenario=2, n=25, seed=3)
    inst = gen_instance(cfg, 0)
    assert cfg.ras_count[0] <= len(inst.ras_list) <= cfg.ras_count[1]
    for p in inst.deliveries:
        assert not any(point_in_footprint(p, r, cfg.ras_margin)
                       for r in inst.ras_list)
    assert not any(point_in_footprint(inst.depot, r, cfg.ras_margin)
                   for r in inst.ras_list)


def test_gen_instance_sampling_exhaustion():
    cfg = ScenarioConfig(scenario=2, n=5, region_side=400.0,
                         ras_count=(1, 1), ras_area_frac=(0.5, 0.5),
                         ras_margin=400.0)
    with pytest.raises(SamplingError):
        gen_instance(cfg, 0)


# ---------------------------------------------------------------------------
# case-study regions
# ---------------------------------------------------------------------------


def grid_region(volumes=(10.0, 20.0, 30.0, 40.0)):
    """3x3 road grid, spacing 100 m, one building near each corner node."""
    nodes = np.array([[100.0 * i, 100.0 * j] for j in range(3)
                      for i in range(3)])
    edges = []
    for j in range(3):
        for i in range(3):
            u = 3 * j + i
            if i < 2:
                edges.append((u, u + 1, 100.0, 10.0))
            if j < 2:
                edges.append((u, u + 3, 100.0, 10.0))
    corners = [(5.0, 5.0), (195.0, 5.0), (5.0, 195.0), (195.0, 195.0)]
    buildings = tuple(
        Building(footprint=np.array([[x, y], [x + 10, y], [x + 10, y + 10],
                                     [x, y + 10]]), volume=v)
        for (x, y), v in zip(corners, volumes))
    return RegionFile(bounds=(0.0, 200.0, 0.0, 200.0), buildings=buildings,
                      road=RoadGraph(nodes=nodes, edges=edges))


def test_region_file_roundtrip():
    region = grid_region()
    back = RegionFile.from_dict(region.to_dict())
    assert back.bounds == region.bounds
    assert len(back.buildings) == 4
    assert [b.volume for b in back.buildings] == [10.0, 20.0, 30.0, 40.0]
    assert np.array_equal(back.road.nodes, region.road.nodes)
    assert back.ras_list == ()


def test_region_file_validation():
    with pytest.raises(ValueError):
        Building(footprint=np.array([[0.0, 0.0], [1.0, 0.0]]), volume=1.0)
    with pytest.raises(ValueError):
        Building(footprint=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                 volume=0.0)
    region = grid_region()
    with pytest.raises(ValueError):
        RegionFile(bounds=(0.0, 0.0, 0.0, 200.0),
                   buildings=region.buildings, road=region.road)
    with pytest.raises(ValueError):
        RegionFile(bounds=(0.0, 200.0, 0.0, 200.0), buildings=(),
                   road=region.road)


def test_sample_case_study_prefers_large_volumes():
    region = grid_region(volumes=(1.0, 1e6, 1.0, 1.0))
    big_anchor = region.road.nearest_node(region.buildings[1].centroid)
    hits = 0
    for seed in range(1000):
        inst = sample_case_study(region, 1, seed=seed)
        if np.array_equal(inst.deliveries[0], region.road.nodes[big_anchor]):
            hits += 1
    assert hits >= 990


def test_sample_case_study_all_buildings_and_repeatability():
    region = grid_region()
    inst = sample_case_study(region, 4, seed=7)
    assert inst.n == 4
    anchors = {region.road.nearest_node(b.centroid) for b in region.buildings}
    assert set(int(a) for a in inst.anchors[1:]) == anchors
    again = sample_case_study(region, 4, seed=7)
    assert np.array_equal(inst.anchors, again.anchors)
    other = sample_case_study(region, 2, seed=9)
    assert other.n == 2


def test_sample_case_study_too_many():
    with pytest.raises(ValueError):
        sample_case_study(grid_region(), 5, seed=0)


def test_sample_case_study_instance_is_road_mode():
    inst = sample_case_study(grid_region(), 3, seed=1)
    assert inst.travel_mode == "road"
    assert np.array_equal(inst.coord(0), inst.road.nodes[inst.anchors[0]])


# ---------------------------------------------------------------------------
# batteries
# ---------------------------------------------------------------------------


def small_battery_cfg(**kw):
    base = dict(scenario=1, n=4, truck_speed_kmh=40.0, instance_count=3,
                region_side=300.0, seed=1, improve_budget=2)
    base.update(kw)
    return ScenarioConfig(**base)


def test_run_battery_truck_only():
    report = run_battery(small_battery_cfg(), [], DronePhysicsParams())
    assert len(report.rows) == 3
    for i, row in enumerate(report.rows):
        assert (row.index, row.method, row.status) == (i, "truck", "ok")
        assert row.duration_s > 0.0
        assert row.dec_j == 0.0 and row.drone_ops == 0
    assert report.methods() == ["truck"]
    assert report.aggregates() == []


def test_run_battery_with_estimator_is_deterministic():
    params = DronePhysicsParams()
    cfg = small_battery_cfg()
    est = KEstimator(params.v_max)
    a = run_battery(cfg, [est], params)
    b = run_battery(cfg, [est], params)
    assert len(a.rows) == 6
    assert all(r.status == "ok" for r in a.rows)
    assert a == b
    k_rows = [r for r in a.rows if r.method == "K"]
    assert all(math.isfinite(r.duration_s) for r in k_rows)
    assert any(r.drone_ops > 0 for r in k_rows)
    assert all(r.dec_j > 0.0 for r in k_rows if r.drone_ops > 0)


def test_run_battery_rejects_duplicate_names():
    params = DronePhysicsParams()
    with pytest.raises(ValueError):
        run_battery(small_battery_cfg(), [KEstimator(params.v_max),
                                          KEstimator(params.v_max)], params)


def test_run_battery_scenario2_smoke():
    cfg = small_battery_cfg(scenario=2, n=3, instance_count=1,
                            ras_margin=10.0, seed=5, improve_budget=1)
    params = DronePhysicsParams()
    report = run_battery(cfg, [KEstimator(params.v_max)], params)
    assert all(r.status == "ok" for r in report.rows)


class OracleEstimator:
    """Estimates with the drone-only flight clock itself."""

    name = "P"

    def __init__(self, params):
        self.params = params

    def estimate_batch(self, starts, deliveries, ends):
        p = self.params
        out = np.empty(len(starts))
        for i, (s, d, e) in enumerate(zip(starts, deliveries, ends)):
            out[i] = drone_only_duration_s((*s, p.truck_bed_alt), (*d, 0.0),
                                           (*e, p.truck_bed_alt), p)
        return out


def test_oracle_estimates_never_lose_to_k():
    params = DronePhysicsParams()
    cfg = small_battery_cfg(instance_count=1, improve_budget=5)
    report = run_battery(cfg, [KEstimator(params.v_max),
                               OracleEstimator(params)], params)
    by_method = {r.method: r for r in report.rows}
    assert by_method["P"].duration_s <= by_method["K"].duration_s + 1e-9


# ---------------------------------------------------------------------------
# aggregates
# ---------------------------------------------------------------------------


def fabricated_report():
    cfg = small_battery_cfg(instance_count=3)
    rows = (
        InstanceResult(0, "truck", "ok", 100.0, 0.0, 0),
        InstanceResult(0, "K", "ok", 90.0, 5000.0, 1),
        InstanceResult(1, "truck", "ok", 200.0, 0.0, 0),
        InstanceResult(1, "K", "ok", 150.0, 8000.0, 2),
        InstanceResult(2, "truck", "ok", 250.0, 0.0, 0),
        InstanceResult(2, "K", "no_rendezvous", math.nan, math.nan, 0),
    )
    return ComparisonReport(config=cfg, rows=rows)


def test_pair_stats_hand_checked():
    stats = fabricated_report().pair_stats("truck", "K", "duration_s")
    # reductions over the two joint successes: 0.1 and 0.25
    assert stats["count"] == 2 and stats["wins"] == 2
    assert np.isclose(stats["mean_reduction"], 0.175, rtol=1e-12)
    half = 1.96 * np.std([0.1, 0.25], ddof=1) / math.sqrt(2)
    assert np.isclose(stats["ci95_lo"], 0.175 - half, rtol=1e-12)
    assert np.isclose(stats["ci95_hi"], 0.175 + half, rtol=1e-12)


def test_pair_stats_skips_zero_bases():
    rep = fabricated_report()
    assert rep.pair_stats("truck", "K", "drone_ops") is None
    assert rep.pair_stats("truck", "K", "dec_j") is None
    back = rep.pair_stats("K", "truck", "dec_j")
    assert back is not None and back["wins"] == 2


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def test_emit_report_outputs_and_byte_identity(tmp_path):
    params = DronePhysicsParams()
    cfg = small_battery_cfg()
    report = run_battery(cfg, [KEstimator(params.v_max)], params)
    first = emit_report(report, str(tmp_path / "a"))
    second = emit_report(report, str(tmp_path / "b"))
    for fa, fb in zip(first, second):
        with open(fa, "rb") as ha, open(fb, "rb") as hb:
            assert ha.read() == hb.read()

    with open(first[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert {r["method"] for r in rows} == {"truck", "K"}

    # aggregate mean must equal a recomputation from the per-instance CSV
    truck = {r["instance"]: float(r["duration_s"]) for r in rows
             if r["method"] == "truck" and r["status"] == "ok"}
    k = {r["instance"]: float(r["duration_s"]) for r in rows
         if r["method"] == "K" and r["status"] == "ok"}
    red = [(truck[i] - k[i]) / truck[i] for i in sorted(truck) if i in k]
    with open(first[1]) as fh:
        agg = {(r["base"], r["challenger"], r["metric"]): r
               for r in csv.DictReader(fh)}
    row = agg[("truck", "K", "duration_s")]
    assert int(row["count"]) == len(red)
    assert abs(float(row["mean_reduction"]) - np.mean(red)) <= \
        1e-9 * max(1.0, abs(np.mean(red)))

    svg = ElementTree.parse(first[2]).getroot()
    assert svg.tag.endswith("svg")
    assert any(child.tag.endswith("polyline") for child in svg.iter())


def test_emit_report_empty(tmp_path):
    cfg = small_battery_cfg(instance_count=0)
    report = run_battery(cfg, [], DronePhysicsParams())
    assert report.rows == ()
    files = emit_report(report, str(tmp_path))
    with open(files[0]) as fh:
        assert fh.read() == ("scenario,n,speed_kmh,seed,instance,method,"
                             "status,duration_s,dec_j,drone_ops\n")
    with open(files[1]) as fh:
        assert fh.read() == ("scenario,n,speed_kmh,seed,base,challenger,"
                             "metric,count,wins,mean_reduction,ci95_lo,"
                             "ci95_hi\n")
    ElementTree.parse(files[2])


def test_emit_report_multiple_speeds_chart(tmp_path):
    params = DronePhysicsParams()
    reports = []
    for kmh in (30.0, 50.0):
        cfg = small_battery_cfg(truck_speed_kmh=kmh, instance_count=2)
        reports.append(run_battery(cfg, [KEstimator(params.v_max)], params))
    files = emit_report(reports, str(tmp_path))
    with open(files[0]) as fh:
        speeds = {r["speed_kmh"] for r in csv.DictReader(fh)}
    assert speeds == {"30", "50"}
    text = open(files[2]).read()
    assert "n=4 K" in text
    ElementTree.fromstring(text)
