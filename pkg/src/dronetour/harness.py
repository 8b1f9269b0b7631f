"""Experiment harness: scenario generation, batteries and reports.

Batteries compare the truck-only tour against truck-and-drone plans built
with each requested drone-time estimator. Everything is seeded and runs
single-threaded, so a battery's CSV output is byte-identical across runs
with the same configuration and model file.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from .errors import (
    InfeasibleEnergyError,
    NoPathError,
    NoRendezvousError,
    SamplingError,
)
from .estimators import KEstimator, MkEstimator, PEstimator, calibrate_mk
from .geometry import Ras, RoadGraph, point_in_footprint
from .physics import DronePhysicsParams
from .planner import (
    Instance,
    finalize_plan,
    improve,
    initial_tour_two_opt,
    tour_duration_s,
)
from .predictor import generate_training_data, load_model

TRUCK_METHOD = "truck"


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """One battery cell: scenario, size, speed and generator knobs.

    Scenario 1 is open airspace; scenario 2 scatters a few no-fly boxes
    covering `ras_area_frac` of the square region. Deliveries and the depot
    keep `ras_margin` metres of ground clearance from every box so routing
    never starts pinned against a face.
    """

    scenario: int = 1
    n: int = 20
    truck_speed_kmh: float = 40.0
    instance_count: int = 100
    region_side: float = 5000.0
    ras_count: Tuple[int, int] = (3, 6)
    ras_area_frac: Tuple[float, float] = (0.10, 0.20)
    ras_height: float = 120.0
    ras_margin: float = 25.0
    seed: int = 0
    improve_budget: int = 10

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise ValueError("scenario must be 1 or 2")
        if self.n < 1 or self.instance_count < 0:
            raise ValueError("need n >= 1 and a nonnegative instance count")
        if self.truck_speed_kmh <= 0 or self.region_side <= 0:
            raise ValueError("speed and region side must be positive")
        lo, hi = self.ras_count
        if not (1 <= lo <= hi):
            raise ValueError("ras_count must be an increasing pair of counts")
        flo, fhi = self.ras_area_frac
        if not (0.0 < flo <= fhi < 1.0):
            raise ValueError("ras_area_frac must sit strictly inside (0, 1)")
        if self.ras_height <= 0 or self.ras_margin < 0:
            raise ValueError("ras_height must be positive, ras_margin >= 0")
        if self.improve_budget < 0:
            raise ValueError("improve budget cannot be negative")

    @property
    def truck_speed_ms(self) -> float:
        return self.truck_speed_kmh / 3.6


def _gen_ras_boxes(cfg: ScenarioConfig, rng: np.random.Generator) -> Tuple[Ras, ...]:
    count = int(rng.integers(cfg.ras_count[0], cfg.ras_count[1] + 1))
    frac = float(rng.uniform(*cfg.ras_area_frac))
    area_each = frac * cfg.region_side ** 2 / count
    half = cfg.region_side / 2.0
    boxes: List[Ras] = []
    for i in range(count):
        for _ in range(200):
            aspect = float(rng.uniform(0.5, 2.0))
            w = math.sqrt(area_each * aspect)
            h = area_each / w
            if w >= cfg.region_side or h >= cfg.region_side:
                continue
            x0 = float(rng.uniform(-half, half - w))
            y0 = float(rng.uniform(-half, half - h))
            ras = Ras.from_box(x0, x0 + w, y0, y0 + h, 0.0, cfg.ras_height,
                               name=f"ras{i}")
            if point_in_footprint((0.0, 0.0), ras, cfg.ras_margin):
                continue  # the depot sits at the region centre
            boxes.append(ras)
            break
        else:
            raise SamplingError(
                "could not place restricted airspace clear of the depot")
    return tuple(boxes)


def gen_instance(cfg: ScenarioConfig, index: int) -> Instance:
    """Deterministic random instance for one battery slot.

    Depot at the region centre, deliveries uniform over the square; under
    scenario 2 they are rejection-sampled outside every no-fly footprint
    with the configured margin.
    """
    rng = np.random.default_rng([cfg.seed, index])
    ras = _gen_ras_boxes(cfg, rng) if cfg.scenario == 2 else ()
    half = cfg.region_side / 2.0
    pts: List[np.ndarray] = []
    budget = 2000 * cfg.n
    while len(pts) < cfg.n:
        if budget <= 0:
            raise SamplingError(
                "rejection budget exhausted; restricted airspace leaves "
                "too little free area")
        budget -= 1
        p = rng.uniform(-half, half, 2)
        if any(point_in_footprint(p, r, cfg.ras_margin) for r in ras):
            continue
        pts.append(p)
    return Instance(depot=np.zeros(2), deliveries=np.array(pts),
                    truck_speed=cfg.truck_speed_ms, ras_list=ras)


# ---------------------------------------------------------------------------
# Case-study regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Building:
    """A building footprint and its volume, the sampling weight."""

    footprint: np.ndarray  # (m, 2) polygon vertices
    volume: float

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=float)
        if fp.ndim != 2 or fp.shape[1] != 2 or len(fp) < 3:
            raise ValueError("footprint must be a polygon of 2D vertices")
        if self.volume <= 0:
            raise ValueError("building volume must be positive")
        object.__setattr__(self, "footprint", fp)

    @property
    def centroid(self) -> np.ndarray:
        return self.footprint.mean(axis=0)


@dataclass(frozen=True)
class RegionFile:
    """A mapped service area: buildings, the road network and no-fly zones."""

    bounds: Tuple[float, float, float, float]
    buildings: Tuple[Building, ...]
    road: RoadGraph
    ras_list: Tuple[Ras, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "ras_list", tuple(self.ras_list))
        xmin, xmax, ymin, ymax = self.bounds
        if xmin >= xmax or ymin >= ymax:
            raise ValueError("bounds must span a nonempty rectangle")
        if not self.buildings:
            raise ValueError("a region needs at least one building")

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "buildings": [
                {"footprint": b.footprint.tolist(), "volume": b.volume}
                for b in self.buildings
            ],
            "road": self.road.to_dict(),
            "ras": [r.to_dict() for r in self.ras_list],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionFile":
        return cls(
            bounds=tuple(float(v) for v in d["bounds"]),
            buildings=tuple(
                Building(footprint=np.asarray(b["footprint"], dtype=float),
                         volume=float(b["volume"]))
                for b in d["buildings"]
            ),
            road=RoadGraph.from_dict(d["road"]),
            ras_list=tuple(Ras.from_dict(r) for r in d.get("ras", [])),
        )


def sample_case_study(region: RegionFile, n: int, seed: int = 0) -> Instance:
    """Draw n buildings with probability proportional to volume.

    Sampling is without replacement; each selected building is anchored to
    its nearest road node, whose coordinate becomes the delivery point, so
    the instance is valid in road mode. The depot is the road node nearest
    the region centre. Buildings whose anchor collides with an earlier pick
    (or the depot) are passed over, deeper into the weighted order.
    """
    if n > len(region.buildings):
        raise ValueError(
            f"asked for {n} deliveries but the region has only "
            f"{len(region.buildings)} buildings")
    rng = np.random.default_rng(seed)
    vols = np.array([b.volume for b in region.buildings])
    order = rng.choice(len(vols), size=len(vols), replace=False,
                       p=vols / vols.sum())
    xmin, xmax, ymin, ymax = region.bounds
    centre = ((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)
    depot_anchor = region.road.nearest_node(centre)
    anchors = [depot_anchor]
    for b in order:
        a = region.road.nearest_node(region.buildings[int(b)].centroid)
        if a not in anchors:
            anchors.append(a)
        if len(anchors) == n + 1:
            break
    if len(anchors) != n + 1:
        raise SamplingError(
            "too few distinct road anchors among the sampled buildings")
    coords = region.road.nodes[anchors]
    return Instance(depot=coords[0], deliveries=coords[1:],
                    road=region.road, anchors=np.array(anchors),
                    ras_list=region.ras_list)


# ---------------------------------------------------------------------------
# Batteries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InstanceResult:
    """One method's totals on one instance; NaNs when the method failed."""

    index: int
    method: str
    status: str
    duration_s: float
    dec_j: float
    drone_ops: int


_FAIL_CATEGORY = {
    NoPathError: "no_path",
    NoRendezvousError: "no_rendezvous",
    InfeasibleEnergyError: "infeasible_energy",
}


def _as_estimator(entry, cfg: ScenarioConfig, params: DronePhysicsParams,
                  model_path: Optional[str]):
    """Accept an estimator object, or build one from its short name.

    "k" divides true Euclidean distance by the drone speed cap; "mk"
    additionally calibrates a mean correction factor on a small seeded
    oracle dataset over the battery's region; "p" loads the trained network
    from model_path.
    """
    if not isinstance(entry, str):
        return entry
    name = entry.strip().lower()
    if name == "k":
        return KEstimator(params.v_max)
    if name == "mk":
        half = cfg.region_side / 2.0
        ds = generate_training_data((-half, half, -half, half), 400, params,
                                    seed=cfg.seed + 10 ** 6,
                                    scenario="mk-calibration")
        return MkEstimator(params.v_max, calibrate_mk(ds, params.v_max))
    if name == "p":
        if model_path is None:
            raise ValueError("estimator 'p' needs a trained model file")
        return PEstimator(load_model(model_path))
    raise ValueError(f"unknown estimator {entry!r}")


def run_battery(cfg: ScenarioConfig, estimators: Sequence, params: DronePhysicsParams,
                model_path: Optional[str] = None) -> "ComparisonReport":
    """Plan every instance with every method and collect the totals.

    Per instance: one shared initial two-opt tour, a truck-only baseline
    priced on it, then for each estimator the full pipeline (split, improve,
    physics finalization). A method failing on an instance is recorded with
    its error category and skipped by the aggregate statistics; nothing is
    fatal. Deterministic given (config, estimators, model file).
    """
    ests = [_as_estimator(e, cfg, params, model_path) for e in estimators]
    names = [est.name for est in ests]
    if len(set(names)) != len(names) or TRUCK_METHOD in names:
        raise ValueError("estimator names must be unique and not 'truck'")
    rows: List[InstanceResult] = []
    for i in range(cfg.instance_count):
        inst = gen_instance(cfg, i)
        tour0 = initial_tour_two_opt(inst, seed=i)
        rows.append(InstanceResult(i, TRUCK_METHOD, "ok",
                                   tour_duration_s(inst, tour0), 0.0, 0))
        for est in ests:
            try:
                _, plan = improve(inst, tour0, est, budget=cfg.improve_budget)
                final = finalize_plan(inst, plan, params)
                rows.append(InstanceResult(i, est.name, "ok",
                                           final.total_duration_s,
                                           final.total_dec_j,
                                           final.drone_op_count))
            except tuple(_FAIL_CATEGORY) as e:
                rows.append(InstanceResult(i, est.name,
                                           _FAIL_CATEGORY[type(e)],
                                           math.nan, math.nan, 0))
    return ComparisonReport(config=cfg, rows=tuple(rows))


@dataclass(frozen=True)
class ComparisonReport:
    """Battery results plus pairwise win/reduction aggregates."""

    config: ScenarioConfig
    rows: Tuple[InstanceResult, ...]

    def methods(self) -> List[str]:
        out: List[str] = []
        for r in self.rows:
            if r.method not in out:
                out.append(r.method)
        return out

    def _ok_values(self, method: str, metric: str) -> dict:
        return {r.index: getattr(r, metric) for r in self.rows
                if r.method == method and r.status == "ok"}

    def pair_stats(self, base: str, challenger: str,
                   metric: str = "duration_s") -> Optional[dict]:
        """Win count and mean relative reduction of challenger vs base.

        Over instances where both methods succeeded and the base value is
        positive: reductions (base - challenger) / base, their mean, a 95%
        normal-approximation confidence interval, and the number of strict
        wins. None when no instance qualifies.
        """
        bv = self._ok_values(base, metric)
        cv = self._ok_values(challenger, metric)
        shared = sorted(set(bv) & set(cv))
        red = [(bv[i] - cv[i]) / bv[i] for i in shared if bv[i] > 0]
        wins = sum(1 for i in shared if bv[i] > 0 and bv[i] > cv[i])
        if not red:
            return None
        mean = float(np.mean(red))
        half = 0.0
        if len(red) > 1:
            half = 1.96 * float(np.std(red, ddof=1)) / math.sqrt(len(red))
        return {"base": base, "challenger": challenger, "metric": metric,
                "count": len(red), "wins": wins, "mean_reduction": mean,
                "ci95_lo": mean - half, "ci95_hi": mean + half}

    def aggregates(self) -> List[dict]:
        out: List[dict] = []
        ms = self.methods()
        for base in ms:
            for challenger in ms:
                if base == challenger:
                    continue
                for metric in ("duration_s", "dec_j", "drone_ops"):
                    stats = self.pair_stats(base, challenger, metric)
                    if stats is not None:
                        out.append(stats)
        return out


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return "%.12g" % x
    return str(x)


_RESULT_HEADER = "scenario,n,speed_kmh,seed,instance,method,status,duration_s,dec_j,drone_ops"
_AGG_HEADER = ("scenario,n,speed_kmh,seed,base,challenger,metric,count,wins,"
               "mean_reduction,ci95_lo,ci95_hi")


def emit_report(report: Union["ComparisonReport", Sequence["ComparisonReport"]],
                out_dir: str) -> List[str]:
    """Write results.csv, aggregate.csv and reductions.svg under out_dir.

    Accepts one report or several (for charts across truck speeds). Output
    is deterministic: fixed column orders and float formatting, so reruns
    with identical inputs produce byte-identical files.
    """
    reports = [report] if isinstance(report, ComparisonReport) else list(report)
    os.makedirs(out_dir, exist_ok=True)

    results_path = os.path.join(out_dir, "results.csv")
    lines = [_RESULT_HEADER]
    for rep in reports:
        c = rep.config
        for r in rep.rows:
            lines.append(",".join([
                str(c.scenario), str(c.n), _fmt(c.truck_speed_kmh),
                str(c.seed), str(r.index), r.method, r.status,
                _fmt(r.duration_s), _fmt(r.dec_j), str(r.drone_ops)]))
    with open(results_path, "w") as f:
        f.write("\n".join(lines) + "\n")

    agg_path = os.path.join(out_dir, "aggregate.csv")
    lines = [_AGG_HEADER]
    for rep in reports:
        c = rep.config
        for row in rep.aggregates():
            lines.append(",".join([
                str(c.scenario), str(c.n), _fmt(c.truck_speed_kmh),
                str(c.seed), row["base"], row["challenger"], row["metric"],
                str(row["count"]), str(row["wins"]),
                _fmt(row["mean_reduction"]), _fmt(row["ci95_lo"]),
                _fmt(row["ci95_hi"])]))
    with open(agg_path, "w") as f:
        f.write("\n".join(lines) + "\n")

    series: dict = {}
    for rep in reports:
        c = rep.config
        for m in rep.methods():
            if m == TRUCK_METHOD:
                continue
            stats = rep.pair_stats(TRUCK_METHOD, m, "duration_s")
            if stats is None:
                continue
            series.setdefault(f"n={c.n} {m}", []).append(
                (c.truck_speed_kmh, 100.0 * stats["mean_reduction"]))
    for pts in series.values():
        pts.sort()
    svg_path = os.path.join(out_dir, "reductions.svg")
    with open(svg_path, "w") as f:
        f.write(_svg_line_chart(series, "Mean duration reduction vs truck-only",
                                "truck speed (km/h)", "reduction (%)"))
    return [results_path, agg_path, svg_path]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _svg_line_chart(series: dict, title: str, xlabel: str, ylabel: str) -> str:
    """Hand-rolled SVG line chart; layout is fixed so output is stable."""
    w, h = 640, 400
    ml, mr, mt, mb = 70, 170, 45, 55
    pw, ph = w - ml - mr, h - mt - mb
    pts_all = [p for pts in series.values() for p in pts]
    if pts_all:
        xs = [p[0] for p in pts_all]
        ys = [p[1] for p in pts_all]
        xmin, xmax = min(xs), max(xs)
        ymin, ymax = min(ys), max(ys)
        if xmin == xmax:
            xmin, xmax = xmin - 1.0, xmax + 1.0
        if ymin == ymax:
            ymin, ymax = ymin - 1.0, ymax + 1.0
        pad = 0.05 * (ymax - ymin)
        ymin, ymax = ymin - pad, ymax + pad
    else:
        xmin, xmax, ymin, ymax = 0.0, 1.0, 0.0, 1.0

    def px(x):
        return ml + pw * (x - xmin) / (xmax - xmin)

    def py(y):
        return mt + ph * (ymax - y) / (ymax - ymin)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{ml}" y="22" font-family="sans-serif" font-size="15">'
        f'{escape(title)}</text>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" '
        f'stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<text x="{ml + pw / 2:.6g}" y="{h - 12}" font-family="sans-serif" '
        f'font-size="12" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{mt + ph / 2:.6g}" font-family="sans-serif" '
        f'font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + ph / 2:.6g})">{escape(ylabel)}</text>',
    ]
    for i in range(5):
        fx = xmin + (xmax - xmin) * i / 4
        fy = ymin + (ymax - ymin) * i / 4
        out.append(f'<line x1="{px(fx):.6g}" y1="{mt + ph}" x2="{px(fx):.6g}" '
                   f'y2="{mt + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px(fx):.6g}" y="{mt + ph + 20}" '
                   f'font-family="sans-serif" font-size="11" '
                   f'text-anchor="middle">{fx:.4g}</text>')
        out.append(f'<line x1="{ml - 5}" y1="{py(fy):.6g}" x2="{ml}" '
                   f'y2="{py(fy):.6g}" stroke="black"/>')
        out.append(f'<text x="{ml - 9}" y="{py(fy) + 4:.6g}" '
                   f'font-family="sans-serif" font-size="11" '
                   f'text-anchor="end">{fy:.4g}</text>')
    for idx, (label, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join(f"{px(x):.6g},{py(y):.6g}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" '
                   f'stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.6g}" cy="{py(y):.6g}" r="3" '
                       f'fill="{color}"/>')
        ly = mt + 16 * idx
        out.append(f'<rect x="{ml + pw + 12}" y="{ly}" width="10" height="10" '
                   f'fill="{color}"/>')
        out.append(f'<text x="{ml + pw + 27}" y="{ly + 9}" '
                   f'font-family="sans-serif" font-size="11">'
                   f'{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
