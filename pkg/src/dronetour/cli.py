"""Command-line front end for the dronetour toolkit.

Subcommands cover the workflow end to end: oracle data generation, model
training and selection, single-instance planning, experiment batteries,
case-study sampling and MILP export. Drone physics defaults can be
overridden with a JSON file given via `--params` or the DRONETOUR_PARAMS
environment variable. Exit code is 0 on success, otherwise a small
nonzero code keyed to the failure category printed on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from .errors import (
    DronetourError,
    HorizonTooShortError,
    InfeasibleEnergyError,
    ModelFormatError,
    NoPathError,
    NoRendezvousError,
    SamplingError,
    SizeError,
)
from .harness import (
    RegionFile,
    ScenarioConfig,
    _as_estimator,
    _gen_ras_boxes,
    emit_report,
    gen_instance,
    run_battery,
    sample_case_study,
)
from .milp import (
    build_trajectory_milp,
    export_milp,
    max_constraint_violation,
    trajectory_assignment,
)
from .physics import DronePhysicsParams, FlightSpec, plan_coordinated_flight
from .planner import (
    Instance,
    finalize_plan,
    improve,
    initial_tour_two_opt,
    plan_to_dict,
    _truck_track,
)
from .predictor import (
    Dataset,
    TrainConfig,
    generate_training_data,
    grid_search,
    holdout_mse,
    save_model,
    train,
)

PARAMS_ENV = "DRONETOUR_PARAMS"


def load_params(path: Optional[str] = None) -> DronePhysicsParams:
    """Physics parameters from a JSON file, the env default, or built-ins."""
    if path is None:
        path = os.environ.get(PARAMS_ENV)
    if not path:
        return DronePhysicsParams()
    with open(path) as fh:
        doc = json.load(fh)
    kw = {}
    for k, v in doc.items():
        if k == "energy_rate":
            kw[k] = tuple(tuple(float(x) for x in row) for row in v)
        elif isinstance(v, list):
            kw[k] = tuple(float(x) for x in v)
        else:
            kw[k] = v
    return DronePhysicsParams(**kw)


def _read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _load_instance(path: str) -> Instance:
    return Instance.from_dict(_read_json(path))


def _build_plan(inst: Instance, args, params: DronePhysicsParams):
    """Shared plan pipeline: initial tour, split with estimator, improve."""
    span = 1.0
    if inst.n:
        box = inst.coords
        span = max(float(np.ptp(box[:, 0])), float(np.ptp(box[:, 1])), 1.0)
    cfg = ScenarioConfig(scenario=1, n=max(inst.n, 1), region_side=span,
                         seed=args.seed)
    est = _as_estimator(args.estimator, cfg, params,
                        getattr(args, "model", None))
    tour = initial_tour_two_opt(inst, seed=args.seed)
    return improve(inst, tour, est, budget=args.budget)


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    params = load_params(args.params)
    half = args.region_side / 2.0
    ras = ()
    if args.scenario == 2:
        cfg = ScenarioConfig(scenario=2, region_side=args.region_side,
                             seed=args.seed)
        ras = _gen_ras_boxes(cfg, np.random.default_rng([args.seed, 0]))
    ds = generate_training_data((-half, half, -half, half), args.count,
                                params, ras_list=ras, seed=args.seed,
                                scenario=f"scenario-{args.scenario}")
    ds.save_csv(args.out)
    print(f"wrote {len(ds)} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = Dataset.load_csv(args.data)
    cfg = TrainConfig(hidden_size=args.hidden, activation=args.activation,
                      alpha=args.alpha, lr_schedule=args.schedule,
                      base_lr=args.lr, batch_size=args.batch,
                      max_epochs=args.epochs, seed=args.seed)
    model = train(ds, cfg)
    save_model(model, args.out)
    print(f"trained hidden={model.hidden_size} on {len(ds)} rows; "
          f"fit mse {holdout_mse(model, ds):.6g}; saved to {args.out}")
    return 0


def cmd_grid_search(args) -> int:
    ds = Dataset.load_csv(args.data)
    grid = [
        TrainConfig(hidden_size=h, activation=args.activation, alpha=a,
                    lr_schedule=s, base_lr=args.lr, batch_size=args.batch,
                    max_epochs=args.epochs, seed=args.seed)
        for h in args.hidden for a in args.alpha for s in args.schedule
    ]
    best, report = grid_search(ds, grid, holdout_fraction=args.holdout,
                               seed=args.seed)
    for row in report:
        print(f"hidden={row['hidden_size']:<6} alpha={row['alpha']:<8g} "
              f"schedule={row['lr_schedule']:<16} "
              f"holdout mse {row['holdout_mse']:.6g}")
    print(f"best: hidden={best.hidden_size} alpha={best.alpha} "
          f"schedule={best.lr_schedule}")
    if args.out:
        save_model(train(ds, best), args.out)
        print(f"retrained best on full data; saved to {args.out}")
    return 0


def cmd_plan(args) -> int:
    params = load_params(args.params)
    inst = _load_instance(args.instance)
    _, plan = _build_plan(inst, args, params)
    final = finalize_plan(inst, plan, params)
    os.makedirs(args.out, exist_ok=True)
    refs = {}
    for k, op in enumerate(final.operations):
        if op.trajectory is None:
            continue
        refs[k] = f"op{k}.csv"
        op.trajectory.to_csv(os.path.join(args.out, refs[k]))
    with open(os.path.join(args.out, "plan.json"), "w") as fh:
        json.dump(plan_to_dict(final, refs), fh, indent=2)
    print(f"duration {final.total_duration_s:.2f} s, "
          f"DEC {final.total_dec_j:.0f} J, "
          f"{final.drone_op_count} drone ops; wrote {args.out}/plan.json")
    return 0


def cmd_battery(args) -> int:
    params = load_params(args.params)
    cfg = ScenarioConfig(scenario=args.scenario, n=args.nodes,
                         truck_speed_kmh=args.speed_kmh,
                         instance_count=args.count, seed=args.seed,
                         region_side=args.region_side,
                         improve_budget=args.budget)
    names = [s for s in args.estimators.split(",") if s]
    report = run_battery(cfg, names, params, model_path=args.model)
    files = emit_report(report, args.out)
    for row in report.aggregates():
        if row["base"] != "truck" or row["metric"] != "duration_s":
            continue
        print(f"{row['challenger']} vs truck: {row['wins']}/{row['count']} "
              f"wins, mean duration reduction "
              f"{100 * row['mean_reduction']:.2f}%")
    print("wrote " + ", ".join(files))
    return 0


def cmd_case_study(args) -> int:
    params = load_params(args.params)
    region = RegionFile.from_dict(_read_json(args.region))
    inst = sample_case_study(region, args.nodes, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    inst_path = os.path.join(args.out, "instance.json")
    with open(inst_path, "w") as fh:
        json.dump(inst.to_dict(), fh, indent=2)
    print(f"sampled {inst.n} deliveries; wrote {inst_path}")
    if args.estimator:
        _, plan = _build_plan(inst, args, params)
        final = finalize_plan(inst, plan, params)
        with open(os.path.join(args.out, "plan.json"), "w") as fh:
            json.dump(plan_to_dict(final), fh, indent=2)
        print(f"duration {final.total_duration_s:.2f} s, "
              f"DEC {final.total_dec_j:.0f} J; wrote {args.out}/plan.json")
    return 0


def cmd_export_milp(args) -> int:
    params = load_params(args.params)
    if args.majors is not None:
        params = replace(params, T_major=args.majors)
    inst = _load_instance(args.instance)
    _, plan = _build_plan(inst, args, params)
    os.makedirs(args.out, exist_ok=True)
    wrote = 0
    for k, op in enumerate(plan.operations):
        if op.drone_node is None:
            continue
        start3 = (*inst.coord(op.start), params.truck_bed_alt)
        deliv3 = (*inst.coord(op.drone_node), 0.0)
        path = _truck_track(inst, op, params, horizon_s=params.horizon_s)
        spec = FlightSpec(start=start3, delivery=deliv3, end=path,
                          ras_list=inst.ras_list)
        model = build_trajectory_milp(spec, params, mode=args.mode,
                                      t_o_star=None if args.mode == "min_time"
                                      else op.t_o_s)
        lp_path = os.path.join(args.out, f"op{k}.lp")
        with open(lp_path, "w") as fh:
            fh.write(export_milp(model))
        traj = plan_coordinated_flight(spec, params)
        assign = trajectory_assignment(model, traj, spec, params)
        worst, where = max_constraint_violation(model, assign)
        print(f"op{k}: {len(model.variables)} vars, "
              f"{len(model.constraints)} rows, heuristic trajectory "
              f"violation {worst:.3g} ({where or 'none'}) -> {lp_path}")
        wrote += 1
    if wrote == 0:
        print("plan has no drone operations; nothing exported")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _csv_ints(s: str):
    return [int(v) for v in s.split(",") if v]


def _csv_floats(s: str):
    return [float(v) for v in s.split(",") if v]


def _csv_names(s: str):
    return [v for v in s.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dronetour",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="label random operations with the "
                       "flight oracle and write a training CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=1000)
    g.add_argument("--scenario", type=int, choices=(1, 2), default=1)
    g.add_argument("--region-side", type=float, default=5000.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--params")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit the drone-time network on a CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--hidden", type=int, default=4000)
    t.add_argument("--activation", default="relu")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--schedule", default="constant")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    gs = sub.add_parser("grid-search", help="rank hyperparameters on a "
                        "holdout split")
    gs.add_argument("--data", required=True)
    gs.add_argument("--out", help="retrain the winner on all rows and save")
    gs.add_argument("--hidden", type=_csv_ints, default=[1, 5, 50, 4000])
    gs.add_argument("--alpha", type=_csv_floats, default=[0.05])
    gs.add_argument("--schedule", type=_csv_names, default=["constant"])
    gs.add_argument("--activation", default="relu")
    gs.add_argument("--lr", type=float, default=1e-3)
    gs.add_argument("--batch", type=int, default=128)
    gs.add_argument("--epochs", type=int, default=200)
    gs.add_argument("--holdout", type=float, default=0.2)
    gs.add_argument("--seed", type=int, default=0)
    gs.set_defaults(func=cmd_grid_search)

    pl = sub.add_parser("plan", help="plan one instance and write the "
                        "finalized tour with trajectories")
    pl.add_argument("--instance", required=True)
    pl.add_argument("--estimator", choices=("k", "mk", "p"), default="k")
    pl.add_argument("--model")
    pl.add_argument("--params")
    pl.add_argument("--out", required=True)
    pl.add_argument("--budget", type=int, default=10)
    pl.add_argument("--seed", type=int, default=0)
    pl.set_defaults(func=cmd_plan)

    b = sub.add_parser("battery", help="run a seeded instance battery and "
                       "write CSV/SVG reports")
    b.add_argument("--scenario", type=int, choices=(1, 2), default=1)
    b.add_argument("--nodes", type=int, default=20)
    b.add_argument("--speed-kmh", type=float, default=40.0)
    b.add_argument("--count", type=int, default=30)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--estimators", default="k")
    b.add_argument("--model")
    b.add_argument("--params")
    b.add_argument("--out", required=True)
    b.add_argument("--region-side", type=float, default=5000.0)
    b.add_argument("--budget", type=int, default=10)
    b.set_defaults(func=cmd_battery)

    cs = sub.add_parser("case-study", help="sample deliveries from a mapped "
                        "region, volume-weighted")
    cs.add_argument("--region", required=True)
    cs.add_argument("--nodes", type=int, required=True)
    cs.add_argument("--seed", type=int, default=0)
    cs.add_argument("--estimator", choices=("k", "mk", "p"))
    cs.add_argument("--model")
    cs.add_argument("--params")
    cs.add_argument("--out", required=True)
    cs.add_argument("--budget", type=int, default=10)
    cs.set_defaults(func=cmd_case_study)

    ex = sub.add_parser("export-milp", help="write LP files for a plan's "
                        "drone operations and self-certify them")
    ex.add_argument("--instance", required=True)
    ex.add_argument("--estimator", choices=("k", "mk", "p"), default="k")
    ex.add_argument("--model")
    ex.add_argument("--params")
    ex.add_argument("--out", required=True)
    ex.add_argument("--majors", type=int, help="override the horizon length "
                    "T (major periods)")
    ex.add_argument("--mode", choices=("min_time", "min_energy_given"),
                    default="min_time")
    ex.add_argument("--budget", type=int, default=10)
    ex.add_argument("--seed", type=int, default=0)
    ex.set_defaults(func=cmd_export_milp)
    return p


_FAILURES = (
    (NoPathError, "no_path", 3),
    (NoRendezvousError, "no_rendezvous", 4),
    (InfeasibleEnergyError, "infeasible_energy", 5),
    (SamplingError, "sampling", 6),
    (SizeError, "size", 7),
    (ModelFormatError, "model_format", 8),
    (HorizonTooShortError, "horizon", 9),
    (DronetourError, "planning", 10),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DronetourError as e:
        for cls, category, code in _FAILURES:
            if isinstance(e, cls):
                print(f"error[{category}]: {e}", file=sys.stderr)
                return code
        raise  # unreachable: DronetourError is the last entry
    except (ValueError, KeyError) as e:
        print(f"error[usage]: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error[io]: {e}", file=sys.stderr)
        return 11


if __name__ == "__main__":
    sys.exit(main())
