"""Command-line entry point: ``rdfkit {fixtures,fit,eval,plan,avoid,grid}``.

Every command takes ``--seed``, ``--out`` and ``--config``.  A config file is
a JSON object keyed by option names (dashes or underscores); options given
on the command line win.  ``RDFKIT_OUT`` overrides the output directory.

Exit codes: 0 success (including plans with no converged seed), 1 invalid
input, 2 internal error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import __version__, avoid, fixtures, planner, robotsdf
from .basis import AxisBox
from .fit import FitConfig
from .kinematics import KinematicChain, Pose, load_chain, save_chain

EVAL_COLUMNS = ("mae_near", "rmse_near", "mae_far", "rmse_far", "mae_avg", "rmse_avg", "ms_per_kquery")
MODEL_FILE = "model.json"


class UsageError(Exception):
    """Bad input: exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, args, extra: dict | None = None) -> None:
    options = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "config", "seed", "out")}
    manifest = {
        "command": args.command,
        "config": args.config,
        "seed": args.seed,
        "out": str(args.out),
        "tool_version": __version__,
        "options": options,
    }
    if extra:
        manifest.update(extra)
    _dump_json(out / "manifest.json", manifest)


def _out_dir(args) -> Path:
    out = Path(os.environ.get("RDFKIT_OUT") or args.out)
    out.mkdir(parents=True, exist_ok=True)
    args.out = str(out)
    return out


def _ms(value, timing: bool) -> str:
    return f"{value:.3f}" if timing else ""


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# ----------------------------------------------------------------------------
# chain resolution


def _resolve_chain(ref: str) -> KinematicChain:
    if ref == "planar3":
        return fixtures.planar_arm()
    if ref == "franka":
        return fixtures.franka_chain()
    p = Path(ref)
    if not p.exists():
        raise UsageError(f"chain file {ref!r} not found (built-ins: planar3, franka)")
    return load_chain(p)


def _parse_geometry(chain: KinematicChain, items) -> dict | None:
    """``--geometry FRAME=PATH`` entries replace the attached shape of that frame with a mesh."""
    if not items:
        return None
    from .geometry import load_mesh

    shapes = robotsdf.link_shapes(chain)
    for item in items:
        frame, sep, path = item.partition("=")
        if not sep or not frame.strip().lstrip("-").isdigit():
            raise UsageError(f"--geometry expects FRAME=PATH, got {item!r}")
        if not Path(path).exists():
            raise UsageError(f"geometry for frame {frame}: file {path!r} not found")
        shapes[int(frame)] = load_mesh(path)
    return shapes


# ----------------------------------------------------------------------------
# commands


def cmd_fixtures(args) -> int:
    """Write the shipped planar chain plus a lift problem and a two-arm scene that use it."""
    out = _out_dir(args)
    chain = fixtures.planar_arm()
    save_chain(chain, out / "planar3.chain.json")
    model_ref = args.model_path
    left, right = fixtures.two_arm_bases()
    problem = dict(fixtures.planar_lift_spec())
    problem.update({
        "format": planner.PROBLEM_FORMAT,
        "version": planner.PROBLEM_VERSION,
        "arms": [{"model": model_ref, "base": Pose.identity().to_dict()}],
        "weights": planner.ResidualWeights().to_dict(),
        "inward_offset": 0.0,
        "seed": args.seed,
    })
    _dump_json(out / "lift_problem.json", problem)
    obstacle = fixtures.planar_arm(base=left)
    scene = {
        "format": avoid.SCENE_FORMAT,
        "version": avoid.SCENE_VERSION,
        "controlled": {"model": model_ref, "base": right.to_dict()},
        "obstacle": {"chain": obstacle.to_dict()},
        "target": "random",
        "q0": "random",
        "randomize": {"script": True, "duration": 3.0, "start_clearance": 0.02},
        "n_obstacle_samples": 256,
        "controller": avoid.ControllerConfig().to_dict(),
        "seed": args.seed,
    }
    _dump_json(out / "two_arm_scene.json", scene)
    _write_manifest(out, args)
    print(f"wrote fixtures to {out}")
    return 0


def cmd_fit(args) -> int:
    chain = _resolve_chain(args.chain)
    shapes = _parse_geometry(chain, args.geometry)
    if shapes is None:
        shapes = robotsdf.link_shapes(chain)
    attached = {a.frame for a in chain.attachments}
    if not shapes and not attached:
        raise UsageError("chain has no link geometry; attach shapes or pass --geometry FRAME=PATH")
    out = _out_dir(args)
    sampling = robotsdf.SamplingConfig(n_samples=args.samples, surface_fraction=args.surface_fraction,
                                       n_holdout=args.holdout)
    try:
        model = robotsdf.fit_robot(chain, n=args.n, geometries=shapes, fit_cfg=FitConfig(lam=args.lam),
                                   sampling=sampling, seed=args.seed, solver=args.solver)
    except FileNotFoundError as exc:
        raise UsageError(f"missing geometry: {exc}") from exc
    robotsdf.save_model(model, out / MODEL_FILE)
    report = {"links": model.metadata["links"],
              "fit_seconds": {str(k): (round(v, 3) if args.timing else None) for k, v in model.fit_timing.items()}}
    _dump_json(out / "fit_report.json", report)
    _write_manifest(out, args)
    for k, rep in model.metadata["links"].items():
        print(f"frame {k} ({rep['name']}): held-out MAE {1e3 * rep['holdout_mae']:.3f} mm")
    return 0


def _load_model(path) -> robotsdf.RobotSdfModel:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"model file {str(p)!r} not found")
    return robotsdf.load_model(p)


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    shapes = robotsdf.link_shapes(model.chain)
    missing = sorted(set(model.link_frames) - set(shapes))
    if missing:
        raise UsageError(f"model has fields on frames {missing} without oracle geometry in its chain")
    out = _out_dir(args)
    rep = robotsdf.evaluate_accuracy(model, n_configs=args.configs, n_points=args.points, seed=args.seed,
                                     shapes=shapes, near_threshold=args.near_threshold)
    mm = {k: None if rep[k] is None else 1e3 * rep[k] for k in
          ("mae_near", "rmse_near", "mae_far", "rmse_far", "mae_all", "rmse_all", "mae_mean", "rmse_mean")}
    row = {
        "mae_near": mm["mae_near"], "rmse_near": mm["rmse_near"],
        "mae_far": mm["mae_far"], "rmse_far": mm["rmse_far"],
        "mae_avg": mm["mae_all"], "rmse_avg": mm["rmse_all"],
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    w.writerow([_fmt(row[c]) for c in EVAL_COLUMNS[:-1]] + [_ms(rep["ms_per_kquery"], args.timing)])
    (out / "accuracy.csv").write_text(buf.getvalue())
    _dump_json(out / "accuracy_report.json", {
        "units": {"errors": "mm", "near_threshold": "m", "ms_per_kquery": "ms per 1000 points"},
        "near_threshold": rep["near_threshold"],
        "n_near": rep["n_near"], "n_far": rep["n_far"],
        "n_configs": rep["n_configs"], "n_points": rep["n_points"],
        "avg_definition": "pooled over all points; mae_mean/rmse_mean average the near and far partitions",
        **{k: v for k, v in mm.items()},
    })
    _write_manifest(out, args)
    print(buf.getvalue(), end="")
    return 0


def cmd_plan(args) -> int:
    p = Path(args.problem)
    if not p.exists():
        raise UsageError(f"problem file {args.problem!r} not found")
    problem, file_seed = planner.load_problem(p)
    seed = file_seed if args.seed is None else args.seed
    args.seed = seed
    cfg = planner.GnConfig(max_iters=args.max_iters, damping=args.damping, n_seeds=args.n_seeds)
    out = _out_dir(args)
    t0 = time.perf_counter()
    result = planner.batch_plan(problem, cfg, n_seeds=args.n_seeds, seed=seed)
    wall = 1e3 * (time.perf_counter() - t0)
    (out / "solutions.csv").write_text(planner.solutions_csv(result))
    best = result.best
    times, traj = planner.cubic_spline_trajectory(problem.q_init, best.q_final, args.duration, args.dt)
    planner.write_trajectory_csv(out / "trajectory.csv", times, traj)
    conv = [s.iterations for s in result.solutions if s.converged]
    _dump_json(out / "plan_report.json", {
        "n_seeds": result.n_seeds,
        "n_converged": result.n_converged,
        "success_rate": result.success_rate,
        "median_iterations_converged": float(np.median(conv)) if conv else None,
        "failure_breakdown": result.failure_breakdown(),
        "best_seed": best.seed,
        "best_status": best.status,
        "wall_ms": round(wall, 3) if args.timing else None,
        "trajectory": {"duration_s": args.duration, "dt_s": args.dt, "from": "q_init", "to": "best q_final"},
    })
    _write_manifest(out, args)
    print(f"success rate {result.success_rate:.2f} ({result.n_converged}/{result.n_seeds})")
    return 0


def cmd_avoid(args) -> int:
    p = Path(args.scene)
    if not p.exists():
        raise UsageError(f"scene file {args.scene!r} not found")
    tmpl, file_seed = avoid.load_scene(p)
    seed = file_seed if args.seed is None else args.seed
    args.seed = seed
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    out = _out_dir(args)
    seeds = [seed + i for i in range(args.episodes)]
    reports = []
    for sd in seeds:
        scene, q0 = avoid.episode_instance(tmpl, sd)
        rep = avoid.run_episode(scene, tmpl.controller, q0, seed=sd, record=args.dump_trajectories)
        reports.append(rep)
        if args.dump_trajectories:
            planner.write_trajectory_csv(out / f"episode_{sd}.csv", rep.times, rep.trajectory)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=avoid.EPISODE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row(args.timing))
    s = avoid.summarize(reports)
    w.writerow({"seed": "summary", "reached": s["reached"], "qp_infeasible": s["qp_infeasible"],
                "min_distance_m": repr(float(s["min_distance_m"])), "steps": s["steps"],
                "wall_ms": _ms(s["wall_ms"], args.timing)})
    (out / "episodes.csv").write_text(buf.getvalue())
    cfg = tmpl.controller
    _dump_json(out / "avoid_report.json", {
        "episodes": s["episodes"],
        "reaching_rate": s["reaching_rate"],
        "qp_infeasible_episodes": sum(r.qp_infeasible > 0 for r in reports),
        "clean_episodes": sum(r.clean for r in reports),
        "safety_violations": sum(avoid.safety_violation(r, cfg) for r in reports),
        "safety_floor_m": cfg.d_safe - 0.002 - cfg.integration_slack,
        "controller": cfg.to_dict(),
    })
    _write_manifest(out, args)
    print(f"reached {s['reached']}/{s['episodes']}, QP infeasible in {s['qp_infeasible']}")
    return 0


def cmd_grid(args) -> int:
    model = _load_model(args.model)
    q = np.asarray(args.q, dtype=float) if args.q is not None else np.zeros(model.n_joints)
    if q.shape != (model.n_joints,):
        raise UsageError(f"--q needs {model.n_joints} values")
    lo, hi = args.box[:3], args.box[3:]
    try:
        box = AxisBox(tuple(lo), tuple(hi))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(args)
    res = args.resolution if len(args.resolution) == 3 else args.resolution * 3
    robotsdf.export_level_set_grid(model, q, box, res, out / "grid.bin")
    _write_manifest(out, args)
    print(f"wrote {out / 'grid.bin'}")
    return 0


# ----------------------------------------------------------------------------
# parser


def _common(p, default_seed=0):
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--out", default="rdfkit_out")
    p.add_argument("--config", default=None, help="JSON file with option defaults")


def _timing_flag(p):
    p.add_argument("--no-timing", dest="timing", action="store_false",
                   help="leave timing columns empty so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rdfkit", description="Bernstein-polynomial robot distance fields")
    ap.add_argument("--version", action="version", version=f"rdfkit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fixtures", help="write the shipped planar chain, lift problem and two-arm scene")
    _common(p)
    p.add_argument("--model-path", default="fit8/model.json",
                   help="model path the problem and scene files refer to (relative to --out)")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("fit", help="fit per-link fields for a chain")
    _common(p)
    p.add_argument("--chain", required=True, help="chain file, or a built-in: planar3, franka")
    p.add_argument("--geometry", action="append", metavar="FRAME=PATH", help="mesh for a link frame")
    p.add_argument("--n", type=int, default=8, help="basis functions per axis")
    p.add_argument("--samples", type=int, default=256_000)
    p.add_argument("--surface-fraction", type=float, default=0.9)
    p.add_argument("--holdout", type=int, default=10_000)
    p.add_argument("--lam", type=float, default=FitConfig().lam)
    p.add_argument("--solver", choices=("auto", "rls", "batch"), default="auto")
    _timing_flag(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="near/far accuracy against the oracle geometry")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--near-threshold", type=float, default=0.03)
    _timing_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plan", help="batch Gauss-Newton contact planning")
    _common(p, default_seed=None)
    p.add_argument("--problem", required=True)
    p.add_argument("--n-seeds", type=int, default=50)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--damping", type=float, default=1e-6)
    p.add_argument("--duration", type=float, default=2.0, help="trajectory duration, s")
    p.add_argument("--dt", type=float, default=0.01, help="trajectory sample period, s")
    _timing_flag(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("avoid", help="reactive avoidance episodes")
    _common(p, default_seed=None)
    p.add_argument("--scene", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--dump-trajectories", action="store_true")
    _timing_flag(p)
    p.set_defaults(func=cmd_avoid)

    p = sub.add_parser("grid", help="sample the distance on a regular grid")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--q", type=float, nargs="+")
    p.add_argument("--box", type=float, nargs=6, required=True, metavar=("XMIN", "YMIN", "ZMIN", "XMAX", "YMAX", "ZMAX"))
    p.add_argument("--resolution", type=int, nargs="+", default=[64])
    p.set_defaults(func=cmd_grid)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list):
    args = ap.parse_args(argv)
    if not args.config:
        return args
    path = Path(args.config)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {args.config!r} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {args.config!r}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    known = set(vars(args))
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"config file has unknown options: {', '.join(unknown)}")
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    sub.set_defaults(**cfg)
    return ap.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        args = _apply_config(ap, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - anything else is a bug
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
