"""Velocity-level reactive collision avoidance against sampled obstacle points.

Per control step the controller solves a small QP in ``x = [qdot, s]``::

    min  |J_ee qdot - v_des|^2 + mu |qdot|^2 + w_s s^2 + c_s s
    s.t. grad_q f(p)' qdot + grad_p f(p)' v_p >= -xi (f(p) - d_safe) - s
         for the K obstacle points closest to the robot
         max(-qd_max, (q_min - q)/dt) <= qdot <= min(qd_max, (q_max - q)/dt)
         s >= 0

``f`` is the learned robot distance, ``v_p`` the obstacle point velocity
and ``v_des`` a capped proportional velocity toward the target.  The linear
slack price ``c_s`` makes the penalty exact: the slack stays at zero whenever
the hard constraints can be met, and is only spent when they cannot.  The
formulation is a reconstruction; only its shape (SDF distance constraints
inside a velocity QP) is fixed by the method.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry
from .kinematics import KinematicChain, Pose, forward_kinematics, joint_axes, joints_moving_frame, load_chain
from .qp import QpProblem, solve_qp
from .robotsdf import RobotSdfModel, eval_points, link_shapes, load_model

SCENE_FORMAT = "rdfkit-avoid-scene"
SCENE_VERSION = 1
EPISODE_COLUMNS = ("seed", "reached", "qp_infeasible", "min_distance_m", "steps", "wall_ms")


@dataclass(frozen=True, eq=False)
class ObstacleScript:
    """Piecewise-linear joint waypoints, held constant outside ``[times[0], times[-1]]``."""
    times: np.ndarray
    waypoints: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[0] != t.shape[0] or t.shape[0] == 0:
            raise ValueError("script needs one waypoint row per time stamp")
        if np.any(np.diff(t) <= 0):
            raise ValueError("script times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "waypoints", w)

    def state_at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.waypoints[:, j]) for j in range(self.waypoints.shape[1])])

    def velocity_at(self, t: float) -> np.ndarray:
        if len(self.times) < 2 or t < self.times[0] or t >= self.times[-1]:
            return np.zeros(self.waypoints.shape[1])
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return (self.waypoints[i + 1] - self.waypoints[i]) / (self.times[i + 1] - self.times[i])

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "waypoints": self.waypoints.tolist()}


@dataclass(frozen=True, eq=False)
class ChainObstacle:
    chain: KinematicChain
    script: ObstacleScript

    def __post_init__(self):
        shapes = link_shapes(self.chain)
        if not shapes:
            raise ValueError("obstacle chain has no link geometry")
        if self.script.waypoints.shape[1] != self.chain.n_joints:
            raise ValueError("script waypoints do not match the obstacle's joint count")
        object.__setattr__(self, "shapes", shapes)


@dataclass(frozen=True, eq=False)
class PointObstacle:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(p) == 0 or not np.all(np.isfinite(p)):
            raise ValueError("point obstacle needs at least one finite point")
        object.__setattr__(self, "points", p)


@dataclass(frozen=True, eq=False)
class AvoidanceScene:
    controlled: RobotSdfModel
    obstacle: ChainObstacle | PointObstacle
    target: np.ndarray
    n_obstacle_samples: int = 256
    ee_frame: int | None = None
    ee_point: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        t = np.asarray(self.target, dtype=float).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("target must be a finite 3-vector")
        object.__setattr__(self, "target", t)
        if self.n_obstacle_samples < 1:
            raise ValueError("n_obstacle_samples must be >= 1")
        if self.ee_frame is None:
            object.__setattr__(self, "ee_frame", self.controlled.chain.n_frames)
        object.__setattr__(self, "controlled_shapes", link_shapes(self.controlled.chain))

    def ee_position(self, q, poses=None) -> np.ndarray:
        poses = forward_kinematics(self.controlled.chain, q) if poses is None else poses
        return poses[self.ee_frame].apply(np.asarray(self.ee_point, dtype=float))


@dataclass(frozen=True)
class ControllerConfig:
    d_safe: float = 0.05
    xi: float = 5.0              # 1/s
    dt: float = 0.02
    qd_max: float = 1.5          # rad/s
    slack_weight: float = 1e4
    slack_price: float = 1e4     # linear slack term; exceeds any realistic multiplier
    damping: float = 0.01
    gain: float = 3.0            # 1/s, proportional reaching gain
    v_max: float = 0.3           # m/s, cap on the task velocity
    n_worst: int = 8
    reach_tol: float = 0.01
    max_steps: int = 500

    def __post_init__(self):
        if not (self.d_safe > 0 and self.xi > 0 and self.dt > 0):
            raise ValueError("d_safe, xi and dt must be positive")
        if not (self.qd_max > 0 and self.slack_weight > 0 and self.damping > 0 and self.slack_price >= 0):
            raise ValueError("qd_max, slack_weight and damping must be positive, slack_price >= 0")
        if self.n_worst < 1 or self.max_steps < 1:
            raise ValueError("n_worst and max_steps must be >= 1")

    @property
    def integration_slack(self) -> float:
        """Distance one control step can cover at the joint speed bound, in joint units."""
        return self.qd_max * self.dt

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# ----------------------------------------------------------------------------
# obstacle sampling


def _local_samples(shapes: dict, n: int, rng) -> tuple:
    frames = sorted(shapes)
    areas = np.array([shapes[k].area() for k in frames])
    counts = rng.multinomial(n, areas / areas.sum())
    return [(k, shapes[k].sample_surface(c, rng)) for k, c in zip(frames, counts) if c]


def _to_world(chain: KinematicChain, q, local: list) -> np.ndarray:
    poses = forward_kinematics(chain, q)
    return np.concatenate([poses[k].apply(p) for k, p in local])


def _surface_samples(obs: ChainObstacle, q, n: int, rng, max_rounds: int = 100) -> list:
    """Area-uniform samples of the union's boundary as ``[(frame, local points)]``.

    Link shapes overlap at the joints; points of one link that fall inside
    another are not on the arm's surface and are redrawn.
    """
    poses = forward_kinematics(obs.chain, q)
    posed = {k: s.transformed(poses[k]) for k, s in obs.shapes.items()}
    frames, pts_all = [], []
    have = 0
    for _ in range(max_rounds):
        if have >= n:
            break
        # oversample so one or two rounds usually suffice
        for k, pts in _local_samples(obs.shapes, int(1.5 * (n - have)) + 8, rng):
            world = poses[k].apply(pts)
            inside = np.zeros(len(pts), bool)
            for j, other in posed.items():
                if j != k:
                    inside |= np.asarray(other.sdf(world)).reshape(-1) < -1e-9
            frames.append(np.full(int((~inside).sum()), k))
            pts_all.append(pts[~inside])
            have += int((~inside).sum())
    if have < n:
        raise ValueError("obstacle surface sampling kept too few points; is a link buried in another?")
    frames, pts_all = np.concatenate(frames), np.concatenate(pts_all)
    # accepted points are iid on the union boundary, so any random subset is too
    pick = np.sort(rng.choice(have, n, replace=False))
    frames, pts_all = frames[pick], pts_all[pick]
    return [(k, pts_all[frames == k]) for k in sorted(obs.shapes) if np.any(frames == k)]


def sample_obstacle_points(scene: AvoidanceScene, q_obstacle=None, seed=0, n: int | None = None) -> np.ndarray:
    """Area-uniform surface points of the obstacle in the world frame.

    ``seed`` may be an int or a numpy Generator.  A point-cloud obstacle
    returns a random subset (all points when the cloud is small enough).
    """
    rng = np.random.default_rng(seed)
    n = scene.n_obstacle_samples if n is None else int(n)
    obs = scene.obstacle
    if isinstance(obs, PointObstacle):
        if len(obs.points) <= n:
            return obs.points.copy()
        return obs.points[np.sort(rng.choice(len(obs.points), n, replace=False))]
    return _to_world(obs.chain, q_obstacle, _surface_samples(obs, q_obstacle, n, rng))


def _obstacle_points_and_velocities(scene: AvoidanceScene, t: float, rng) -> tuple:
    obs = scene.obstacle
    if isinstance(obs, PointObstacle):
        p = sample_obstacle_points(scene, None, rng)
        return p, np.zeros_like(p)
    q = obs.script.state_at(t)
    qd = obs.script.velocity_at(t)
    local = _surface_samples(obs, q, scene.n_obstacle_samples, rng)
    p = _to_world(obs.chain, q, local)
    if not np.any(qd):
        return p, np.zeros_like(p)
    h = 1e-6
    v = (_to_world(obs.chain, q + h * qd, local) - _to_world(obs.chain, q - h * qd, local)) / (2 * h)
    return p, v


# ----------------------------------------------------------------------------
# the QP


def ee_jacobian(scene: AvoidanceScene, q, poses=None) -> np.ndarray:
    chain = scene.controlled.chain
    poses = forward_kinematics(chain, q) if poses is None else poses
    axes, origins = joint_axes(chain, poses)
    p = scene.ee_position(q, poses)
    jac = np.cross(axes, p - origins).T
    jac[:, ~joints_moving_frame(chain, scene.ee_frame)] = 0.0
    return jac


def desired_velocity(scene: AvoidanceScene, cfg: ControllerConfig, q, poses=None) -> np.ndarray:
    v = cfg.gain * (scene.target - scene.ee_position(q, poses))
    speed = np.linalg.norm(v)
    return v * (cfg.v_max / speed) if speed > cfg.v_max else v


@dataclass
class ControlQp:
    problem: QpProblem
    x0: np.ndarray               # a feasible start: qdot = 0 with enough slack
    distances: np.ndarray        # f at the constrained points
    grad_q: np.ndarray           # their joint gradients, one row per point
    drift: np.ndarray            # grad_p f . v_p
    v_des: np.ndarray


def build_qp(scene: AvoidanceScene, cfg: ControllerConfig, q, points=None, velocities=None) -> ControlQp:
    """Assemble the control QP at configuration ``q``; see the module docstring."""
    model = scene.controlled
    chain = model.chain
    q = np.asarray(q, dtype=float).reshape(-1)
    if not chain.within_limits(q, strict=False):
        raise ValueError("q must lie within the joint limits")
    c = chain.n_joints
    poses = forward_kinematics(chain, q)
    jac = ee_jacobian(scene, q, poses)
    v_des = desired_velocity(scene, cfg, q, poses)

    h = np.zeros((c + 1, c + 1))
    h[:c, :c] = 2.0 * (jac.T @ jac + cfg.damping * np.eye(c))
    h[c, c] = 2.0 * cfg.slack_weight
    g = np.zeros(c + 1)
    g[:c] = -2.0 * jac.T @ v_des
    g[c] = cfg.slack_price

    pts = np.zeros((0, 3)) if points is None else np.asarray(points, dtype=float).reshape(-1, 3)
    vel = np.zeros_like(pts) if velocities is None else np.asarray(velocities, dtype=float).reshape(-1, 3)
    if len(pts):
        res = eval_points(model, q, pts, want_grad_q=True, mode="hard", poses=poses)
        order = np.argsort(res.distance, kind="stable")[:cfg.n_worst]
        f = res.distance[order]
        gq = res.grad_q[order]
        drift = np.einsum("ij,ij->i", res.grad_p[order], vel[order])
    else:
        f, gq, drift = np.zeros(0), np.zeros((0, c)), np.zeros(0)
    a = np.hstack([-gq, -np.ones((len(f), 1))])
    b = cfg.xi * (f - cfg.d_safe) + drift

    lower = np.append(np.maximum(-cfg.qd_max, (chain.q_min - q) / cfg.dt), 0.0)
    upper = np.append(np.minimum(cfg.qd_max, (chain.q_max - q) / cfg.dt), np.inf)
    prob = QpProblem(h, g, a, b, lower, upper)
    x0 = np.zeros(c + 1)
    x0[c] = max(0.0, float(np.max(-b, initial=0.0)))
    return ControlQp(prob, x0, f, gq, drift, v_des)


# ----------------------------------------------------------------------------
# oracle distance between the controlled arm and the obstacle


def _posed(shapes: dict, poses: list) -> list:
    out = []
    for k, sh in shapes.items():
        if isinstance(sh, geometry.Capsule):
            # endpoints only; building a Capsule per step is the hot path
            out.append(("capsule", poses[k].apply(sh.a), poses[k].apply(sh.b), sh.radius))
        else:
            out.append(("shape", sh.transformed(poses[k])))
    return out


def _pair_distance(s1, s2) -> float:
    if s1[0] == "capsule" and s2[0] == "capsule":
        return geometry.segment_segment_distance(s1[1], s1[2], s2[1], s2[2]) - s1[3] - s2[3]
    shape1 = s1[1] if s1[0] == "shape" else geometry.Capsule(s1[1], s1[2], s1[3])
    shape2 = s2[1] if s2[0] == "shape" else geometry.Capsule(s2[1], s2[2], s2[3])
    # general shapes: dense surface samples of the obstacle link
    pts = shape2.sample_surface(4096, np.random.default_rng(0))
    return float(np.min(shape1.sdf(pts)))


def oracle_min_distance(scene: AvoidanceScene, q, q_obstacle=None) -> float:
    """Exact clearance between the controlled arm's link shapes and the obstacle."""
    chain = scene.controlled.chain
    poses = forward_kinematics(chain, q)
    obs = scene.obstacle
    if isinstance(obs, PointObstacle):
        return float(min(np.min(s.transformed(poses[k]).sdf(obs.points))
                         for k, s in scene.controlled_shapes.items()))
    mine = _posed(scene.controlled_shapes, poses)
    theirs = _posed(obs.shapes, forward_kinematics(obs.chain, q_obstacle))
    return min(_pair_distance(a, b) for a in mine for b in theirs)


# ----------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeReport:
    seed: int
    reached: bool
    qp_infeasible: int
    slack_steps: int
    max_slack: float
    min_distance: float          # oracle clearance over the whole episode, m
    min_model_distance: float    # smallest constrained f seen by the controller, m
    steps: int
    wall_ms: float
    max_kkt: float
    times: np.ndarray = field(repr=False, default=None)
    trajectory: np.ndarray = field(repr=False, default=None)
    final_error: float = math.nan

    @property
    def clean(self) -> bool:
        """Every QP solved with zero slack."""
        return self.qp_infeasible == 0 and self.slack_steps == 0

    def row(self, timing: bool = True) -> dict:
        return {
            "seed": self.seed,
            "reached": int(self.reached),
            "qp_infeasible": self.qp_infeasible,
            "min_distance_m": repr(float(self.min_distance)),
            "steps": self.steps,
            "wall_ms": f"{self.wall_ms:.3f}" if timing else "",
        }


SLACK_TOL = 1e-9


def run_episode(scene: AvoidanceScene, cfg: ControllerConfig, q0, seed: int = 0,
                max_steps: int | None = None, record: bool = True) -> EpisodeReport:
    """Integrate ``q <- q + dt * qdot`` with a fresh obstacle sample every step.

    Stops when the end effector is within ``cfg.reach_tol`` of the target,
    when a QP is infeasible, or after ``max_steps`` steps.
    """
    max_steps = cfg.max_steps if max_steps is None else int(max_steps)
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    chain = scene.controlled.chain
    q = np.asarray(q0, dtype=float).reshape(-1).copy()
    if not chain.within_limits(q, strict=False):
        raise ValueError("q0 must lie within the joint limits")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    is_chain = isinstance(scene.obstacle, ChainObstacle)

    def q_obs(t):
        return scene.obstacle.script.state_at(t) if is_chain else None

    traj, times = [q.copy()], [0.0]
    min_d = oracle_min_distance(scene, q, q_obs(0.0))
    min_f = math.inf
    infeasible = slack_steps = 0
    max_slack = max_kkt = 0.0
    reached = False
    steps = 0
    t = 0.0
    for _ in range(max_steps):
        if np.linalg.norm(scene.ee_position(q) - scene.target) < cfg.reach_tol:
            reached = True
            break
        pts, vel = _obstacle_points_and_velocities(scene, t, rng)
        cq = build_qp(scene, cfg, q, pts, vel)
        res = solve_qp(cq.problem, x0=cq.x0)
        if not res.optimal:
            infeasible += 1
            break
        max_kkt = max(max_kkt, max(res.kkt.values()))
        min_f = min(min_f, float(np.min(cq.distances, initial=math.inf)))
        s = float(res.x[-1])
        if s > SLACK_TOL:
            slack_steps += 1
            max_slack = max(max_slack, s)
        q = np.clip(q + cfg.dt * res.x[:-1], chain.q_min, chain.q_max)
        t += cfg.dt
        steps += 1
        min_d = min(min_d, oracle_min_distance(scene, q, q_obs(t)))
        if record:
            traj.append(q.copy())
            times.append(t)
    else:
        reached = bool(np.linalg.norm(scene.ee_position(q) - scene.target) < cfg.reach_tol)
    return EpisodeReport(
        seed=int(seed), reached=reached, qp_infeasible=infeasible, slack_steps=slack_steps,
        max_slack=max_slack, min_distance=min_d, min_model_distance=min_f, steps=steps,
        wall_ms=1e3 * (time.perf_counter() - t0), max_kkt=max_kkt,
        times=np.array(times), trajectory=np.array(traj),
        final_error=float(np.linalg.norm(scene.ee_position(q) - scene.target)),
    )


def safety_violation(report: EpisodeReport, cfg: ControllerConfig, model_budget: float = 0.002) -> bool:
    """True when a clean episode still came closer than the margin allows.

    The allowance is the field error budget plus one step of motion at the
    joint speed bound.
    """
    return report.clean and report.min_distance < cfg.d_safe - model_budget - cfg.integration_slack


# ----------------------------------------------------------------------------
# randomized episodes on a scene template


@dataclass(frozen=True, eq=False)
class SceneTemplate:
    """A scene plus the parts to re-draw per episode seed."""
    scene: AvoidanceScene
    q0: np.ndarray | None = None
    randomize_q0: bool = False
    randomize_target: bool = False
    randomize_script: bool = False
    script_duration: float = 3.0
    start_clearance: float = 0.02
    controller: ControllerConfig = ControllerConfig()


def episode_instance(tmpl: SceneTemplate, seed: int, max_tries: int = 1000) -> tuple:
    """Draw ``(scene, q0)`` for one episode seed.

    Random starts are rejected until the arm begins at least
    ``d_safe + start_clearance`` away from the obstacle and the target is
    at least 5 cm from the start.
    """
    scene = tmpl.scene
    chain = scene.controlled.chain
    rng = np.random.default_rng([int(seed), 0x5eed])
    margin = tmpl.controller.d_safe + tmpl.start_clearance
    for _ in range(max_tries):
        s = scene
        if tmpl.randomize_script and isinstance(s.obstacle, ChainObstacle):
            oc = s.obstacle.chain
            wp = oc.random_configuration(rng, 2)
            s = replace(s, obstacle=ChainObstacle(oc, ObstacleScript([0.0, tmpl.script_duration], wp)))
        if tmpl.randomize_target:
            s = replace(s, target=s.ee_position(chain.random_configuration(rng)))
        q0 = chain.random_configuration(rng) if tmpl.randomize_q0 or tmpl.q0 is None else np.asarray(tmpl.q0, float)
        q_obs = s.obstacle.script.state_at(0.0) if isinstance(s.obstacle, ChainObstacle) else None
        if oracle_min_distance(s, q0, q_obs) < margin:
            continue
        if np.linalg.norm(s.ee_position(q0) - s.target) < 0.05:
            continue
        return s, q0
    raise ValueError(f"no collision-free episode start found in {max_tries} tries (seed {seed})")


def run_episodes(tmpl: SceneTemplate, seeds, record: bool = False) -> list:
    out = []
    for sd in seeds:
        scene, q0 = episode_instance(tmpl, sd)
        out.append(run_episode(scene, tmpl.controller, q0, seed=sd, record=record))
    return out


def summarize(reports: list) -> dict:
    n = len(reports)
    return {
        "episodes": n,
        "reached": sum(r.reached for r in reports),
        "reaching_rate": sum(r.reached for r in reports) / n if n else math.nan,
        "qp_infeasible": sum(r.qp_infeasible for r in reports),
        "min_distance_m": min((r.min_distance for r in reports), default=math.nan),
        "steps": sum(r.steps for r in reports),
        "wall_ms": sum(r.wall_ms for r in reports),
    }


# ----------------------------------------------------------------------------
# scene files


def _load_ref(ref, base_dir, loader):
    p = Path(ref)
    if base_dir is not None and not p.is_absolute():
        p = Path(base_dir) / p
    return loader(p)


def template_from_dict(d: dict, base_dir=None, models: dict | None = None) -> tuple:
    """Parse a scene file dict into ``(SceneTemplate, seed)``."""
    if not isinstance(d, dict):
        raise ValueError("scene file must hold a JSON object")
    if d.get("format", SCENE_FORMAT) != SCENE_FORMAT:
        raise ValueError(f"not an avoidance scene (format={d.get('format')!r})")
    for key in ("controlled", "obstacle", "target"):
        if key not in d:
            raise ValueError(f"scene file is missing field {key!r}")
    ctl = d["controlled"]
    if "model" not in ctl:
        raise ValueError("controlled is missing field 'model'")
    model = models[ctl["model"]] if models and ctl["model"] in models else _load_ref(ctl["model"], base_dir, load_model)
    if "base" in ctl:
        model = model.with_base(Pose.from_dict(ctl["base"]))

    od = d["obstacle"]
    randomize = d.get("randomize", {})
    if "points" in od:
        obstacle = PointObstacle(od["points"])
    elif "chain" in od:
        ch = od["chain"]
        chain = KinematicChain.from_dict(ch) if isinstance(ch, dict) else _load_ref(ch, base_dir, load_chain)
        if "base" in od:
            chain = chain.with_base(Pose.from_dict(od["base"]))
        if "script" in od:
            script = ObstacleScript(od["script"]["times"], od["script"]["waypoints"])
        elif randomize.get("script"):
            mid = 0.5 * (chain.q_min + chain.q_max)
            script = ObstacleScript([0.0], [mid])
        else:
            raise ValueError("obstacle chain needs a 'script' (or randomize.script)")
        obstacle = ChainObstacle(chain, script)
    else:
        raise ValueError("obstacle needs either 'points' or 'chain'")

    target = d["target"]
    if isinstance(target, str):
        if target != "random":
            raise ValueError("target must be a 3-vector or 'random'")
        target = [0.0, 0.0, 0.0]
    scene = AvoidanceScene(model, obstacle, target, int(d.get("n_obstacle_samples", 256)),
                           d.get("ee_frame"), tuple(d.get("ee_point", (0.0, 0.0, 0.0))))
    try:
        controller = ControllerConfig(**d.get("controller", {}))
    except TypeError as exc:
        raise ValueError(f"bad controller entry: {exc}") from exc
    q0 = d.get("q0")
    tmpl = SceneTemplate(
        scene=scene,
        q0=None if q0 in (None, "random") else np.asarray(q0, dtype=float),
        randomize_q0=q0 in (None, "random") or bool(randomize.get("q0", False)),
        randomize_target=d["target"] == "random" or bool(randomize.get("target", False)),
        randomize_script=bool(randomize.get("script", False)),
        script_duration=float(randomize.get("duration", 3.0)),
        start_clearance=float(randomize.get("start_clearance", 0.02)),
        controller=controller,
    )
    return tmpl, int(d.get("seed", 0))


def load_scene(path, models: dict | None = None) -> tuple:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    return template_from_dict(d, base_dir=path.parent, models=models)


def two_arm_template(model: RobotSdfModel, controller: ControllerConfig = ControllerConfig(),
                     duration: float = 3.0) -> SceneTemplate:
    """Planar two-arm scene: ``model`` is re-based as the right arm, the left arm is the scripted obstacle.

    Start configuration, target and obstacle motion are all drawn per seed.
    """
    from .fixtures import planar_arm, two_arm_bases

    left, right = two_arm_bases()
    obstacle_chain = planar_arm(base=left)
    mid = 0.5 * (obstacle_chain.q_min + obstacle_chain.q_max)
    scene = AvoidanceScene(model.with_base(right), ChainObstacle(obstacle_chain, ObstacleScript([0.0], [mid])),
                           np.zeros(3))
    return SceneTemplate(scene, randomize_q0=True, randomize_target=True, randomize_script=True,
                         script_duration=duration, controller=controller)
