"""Contact planning by damped Gauss-Newton on a stacked residual.

The decision vector holds the joints of every arm back to back.  The residual
stack, in order, is::

    r_r    w_r * f(p_c, q)                 one row per contact, assigned arm only
    r_p    w_p * relu(-f(p_i, q))          one row per interior point, all arms
    r_max  w_l * relu(q - q_max)           one row per joint
    r_min  w_l * relu(q_min - q)           one row per joint
    r_d    w_d * (q - q_init)              one row per joint

Distances inside the residual use the soft minimum so the Jacobian is
continuous; the termination test uses the hard minimum.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .kinematics import Pose
from .robotsdf import DEFAULT_RHO, RobotSdfModel, eval_points, load_model, soft_min

PROBLEM_FORMAT = "rdfkit-lift-problem"
PROBLEM_VERSION = 1
BLOCKS = ("reach", "penetration", "limit_max", "limit_min", "regularize")
CRITERIA = ("reach", "penetration", "limits", "normal")


@dataclass(frozen=True)
class ResidualWeights:
    reach: float = 1.0
    penetration: float = 10.0
    limits: float = 10.0
    regularize: float = 0.05

    def __post_init__(self):
        for k, v in self.to_dict().items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"weight {k!r} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {"reach": self.reach, "penetration": self.penetration,
                "limits": self.limits, "regularize": self.regularize}


def _points(x, name: str) -> np.ndarray:
    try:
        a = np.asarray(x, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} must be a list of 3-vectors") from exc
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be a list of 3-vectors, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True, eq=False)
class LiftProblem:
    """One or two arms, contact points with normals, and interior points.

    ``arms`` are models whose chains already carry their base pose.  Contact
    normals point the way the robot distance gradient should point at the
    contact, i.e. into the object.  ``inward_offset`` moves every contact
    point that far along its normal, which plans for a slightly smaller
    object so the executed grasp squeezes.
    """
    arms: tuple
    contact_points: np.ndarray
    contact_normals: np.ndarray
    interior_points: np.ndarray
    q_init: np.ndarray
    weights: ResidualWeights = ResidualWeights()
    inward_offset: float = 0.0
    rho: float = DEFAULT_RHO
    allow_empty: bool = field(default=False, repr=False)

    def __post_init__(self):
        arms = tuple(self.arms)
        if not 1 <= len(arms) <= 2 or not all(isinstance(a, RobotSdfModel) for a in arms):
            raise ValueError("arms must be one or two RobotSdfModel instances")
        object.__setattr__(self, "arms", arms)
        pc = _points(np.reshape(self.contact_points, (-1, 3)) if np.size(self.contact_points) else np.zeros((0, 3)),
                     "contact_points")
        nc = _points(np.reshape(self.contact_normals, (-1, 3)) if np.size(self.contact_normals) else np.zeros((0, 3)),
                     "contact_normals")
        pi = _points(np.reshape(self.interior_points, (-1, 3)) if np.size(self.interior_points) else np.zeros((0, 3)),
                     "interior_points")
        if pc.shape != nc.shape:
            raise ValueError(f"{len(pc)} contact points but {len(nc)} contact normals")
        if np.any(np.abs(np.linalg.norm(nc, axis=1) - 1.0) > 1e-9):
            raise ValueError("contact_normals must be unit vectors")
        if not self.allow_empty and (len(pc) == 0 or len(pi) == 0):
            raise ValueError("contact_points and interior_points must be nonempty")
        q0 = np.asarray(self.q_init, dtype=float).reshape(-1)
        if q0.shape[0] != self.n_dof:
            raise ValueError(f"q_init has {q0.shape[0]} entries, the arms have {self.n_dof} joints")
        if not (np.all(q0 >= self.q_min) and np.all(q0 <= self.q_max)):
            raise ValueError("q_init must lie within the joint limits")
        if not (self.rho > 0 and math.isfinite(self.inward_offset)):
            raise ValueError("rho must be positive and inward_offset finite")
        object.__setattr__(self, "contact_points", pc)
        object.__setattr__(self, "contact_normals", nc)
        object.__setattr__(self, "interior_points", pi)
        object.__setattr__(self, "q_init", q0)
        # contacts go to the arm whose base is nearest
        bases = np.array([a.chain.base.translation for a in arms])
        owner = np.argmin(np.linalg.norm(pc[:, None, :] - bases[None], axis=2), axis=1) if len(pc) else np.zeros(0, int)
        object.__setattr__(self, "contact_arm", owner)
        for a in (pc, nc, pi, q0, owner):
            a.setflags(write=False)

    @property
    def n_dof(self) -> int:
        return sum(a.n_joints for a in self.arms)

    @property
    def slices(self) -> list:
        out, s = [], 0
        for a in self.arms:
            out.append(slice(s, s + a.n_joints))
            s += a.n_joints
        return out

    @property
    def q_min(self) -> np.ndarray:
        return np.concatenate([a.chain.q_min for a in self.arms])

    @property
    def q_max(self) -> np.ndarray:
        return np.concatenate([a.chain.q_max for a in self.arms])

    @property
    def target_points(self) -> np.ndarray:
        """Contact points after the inward offset."""
        return self.contact_points + self.inward_offset * self.contact_normals

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.n_dof:
            raise ValueError(f"q has {q.shape[0]} entries, expected {self.n_dof}")
        return q

    def block_sizes(self) -> dict:
        c = self.n_dof
        return {"reach": len(self.contact_points), "penetration": len(self.interior_points),
                "limit_max": c, "limit_min": c, "regularize": c}


@dataclass(frozen=True)
class GnConfig:
    max_iters: int = 200
    backtrack: float = 0.5
    min_alpha: float = 1e-4
    damping: float = 1e-6
    max_damping: float = 1e-2
    stall_step: float = 1e-8
    n_seeds: int = 50

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must be in (0, 1)")
        if not 0 < self.min_alpha <= 1:
            raise ValueError("min_alpha must be in (0, 1]")
        if self.damping < 0 or self.max_damping < self.damping:
            raise ValueError("need 0 <= damping <= max_damping")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")


@dataclass(frozen=True)
class TerminationTolerances:
    reach: float = 0.01
    penetration: float = 0.01
    normal: float = 0.1


@dataclass
class PlanSolution:
    q_final: np.ndarray
    status: str                 # converged | max_iters | stalled
    iterations: int
    cost: float
    block_norms: dict
    flags: dict
    criteria: dict
    seed: int | None = None
    message: str = ""
    cost_history: list = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def _arm_distances(problem: LiftProblem, arm: int, q, points, want_grad_q: bool, mode: str):
    model = problem.arms[arm]
    return eval_points(model, q[problem.slices[arm]], points, want_grad_q=want_grad_q, mode=mode, rho=problem.rho)


def _reach_terms(problem, q, want_grad: bool, mode: str = "soft"):
    """Per-contact distance to its own arm, the world gradient and the q-gradient."""
    pts = problem.target_points
    d = np.zeros(len(pts))
    gp = np.zeros((len(pts), 3))
    gq = np.zeros((len(pts), problem.n_dof))
    for a, sl in enumerate(problem.slices):
        sel = problem.contact_arm == a
        if not np.any(sel):
            continue
        res = _arm_distances(problem, a, q, pts[sel], want_grad, mode)
        d[sel] = res.distance
        gp[sel] = res.grad_p
        if want_grad:
            gq[np.ix_(sel, np.arange(sl.start, sl.stop))] = res.grad_q
    return d, gp, gq


def _interior_terms(problem, q, want_grad: bool, mode: str = "soft"):
    """Distance of interior points to the union of all arms."""
    pts = problem.interior_points
    n = len(pts)
    per_arm = [_arm_distances(problem, a, q, pts, want_grad, mode) for a in range(len(problem.arms))]
    d_arm = np.stack([r.distance for r in per_arm], axis=1)
    gq = np.zeros((n, problem.n_dof))
    if mode == "hard":
        owner = np.argmin(d_arm, axis=1)
        d = d_arm[np.arange(n), owner]
        w = (owner[:, None] == np.arange(len(per_arm))[None]).astype(float)
    else:
        # soft-min of per-arm soft-mins is the soft-min over every link
        d = soft_min(d_arm, problem.rho, axis=1)
        w = np.exp(-problem.rho * (d_arm - d[:, None]))
    if want_grad:
        for a, sl in enumerate(problem.slices):
            gq[:, sl] = w[:, a:a + 1] * per_arm[a].grad_q
    return d, gq


def _split(problem: LiftProblem, r: np.ndarray) -> dict:
    out, s = {}, 0
    for k, n in problem.block_sizes().items():
        out[k] = r[s:s + n]
        s += n
    return out


def residuals(problem: LiftProblem, q) -> np.ndarray:
    """Weighted residual stack; see the module docstring for the block order."""
    q = problem.check_q(q)
    w = problem.weights
    d_c, _, _ = _reach_terms(problem, q, want_grad=False)
    d_i, _ = _interior_terms(problem, q, want_grad=False)
    return np.concatenate([
        w.reach * d_c,
        w.penetration * np.maximum(-d_i, 0.0),
        w.limits * np.maximum(q - problem.q_max, 0.0),
        w.limits * np.maximum(problem.q_min - q, 0.0),
        w.regularize * (q - problem.q_init),
    ])


def residual_jacobian(problem: LiftProblem, q) -> np.ndarray:
    q = problem.check_q(q)
    w = problem.weights
    c = problem.n_dof
    _, _, gq_c = _reach_terms(problem, q, want_grad=True)
    d_i, gq_i = _interior_terms(problem, q, want_grad=True)
    # relu'(0) is taken as 0
    pen = np.where((-d_i > 0)[:, None], -gq_i, 0.0)
    return np.vstack([
        w.reach * gq_c,
        w.penetration * pen,
        w.limits * np.diag((q > problem.q_max).astype(float)),
        -w.limits * np.diag((q < problem.q_min).astype(float)),
        w.regularize * np.eye(c),
    ])


def block_norms(problem: LiftProblem, q) -> dict:
    return {k: float(np.linalg.norm(v)) for k, v in _split(problem, residuals(problem, q)).items()}


def termination_check(problem: LiftProblem, q, tol: TerminationTolerances = TerminationTolerances()) -> tuple:
    """Evaluate the four stopping criteria with the hard-min distance.

    Returns ``(flags, values)``.  Sums are over unweighted residuals in
    meters.  A contact whose distance gradient vanishes counts as failing
    the normal test.
    """
    q = problem.check_q(q)
    d_c, gp, _ = _reach_terms(problem, q, want_grad=False, mode="hard")
    d_i, _ = _interior_terms(problem, q, want_grad=False, mode="hard")
    reach = float(d_c @ d_c)
    pen_r = np.maximum(-d_i, 0.0)
    pen = float(pen_r @ pen_r)
    inside = bool(np.all(q > problem.q_min) and np.all(q < problem.q_max))
    norms = np.linalg.norm(gp, axis=1)
    ok_norm = norms > 1e-12
    cos = np.einsum("ij,ij->i", gp[ok_norm], problem.contact_normals[ok_norm]) / norms[ok_norm]
    normal = float(np.sum(1.0 - cos))
    normal_ok = bool(np.all(ok_norm)) and normal < tol.normal
    flags = {"reach": reach < tol.reach, "penetration": pen < tol.penetration,
             "limits": inside, "normal": normal_ok}
    values = {"reach": reach, "penetration": pen, "normal": normal if np.all(ok_norm) else math.inf}
    return flags, values


def cost(problem: LiftProblem, q) -> float:
    r = residuals(problem, q)
    return float(r @ r)


def _finish(problem, q, status, it, history, seed, message="", tol=TerminationTolerances()):
    r = residuals(problem, q)
    flags, values = termination_check(problem, q, tol) if np.all(np.isfinite(q)) else (
        {k: False for k in CRITERIA}, {})
    return PlanSolution(q_final=q, status=status, iterations=it, cost=float(r @ r),
                        block_norms={k: float(np.linalg.norm(v)) for k, v in _split(problem, r).items()},
                        flags=flags, criteria=values, seed=seed, message=message, cost_history=history)


def gauss_newton(problem: LiftProblem, cfg: GnConfig = GnConfig(), q0=None, seed: int | None = None,
                 tol: TerminationTolerances = TerminationTolerances()) -> PlanSolution:
    """Damped Gauss-Newton with a halving line search on ``c(q) = r.r``.

    The damping starts at ``cfg.damping`` and grows tenfold whenever the line
    search fails to find a decrease, up to ``cfg.max_damping``; it relaxes
    back tenfold after every accepted step.
    """
    q = problem.check_q(problem.q_init if q0 is None else q0).copy()
    if not np.all(np.isfinite(q)):
        raise ValueError("q0 must be finite")
    mu = cfg.damping
    r = residuals(problem, q)
    c = float(r @ r)
    history = [c]
    it = 0
    # with no contact or interior points the criteria hold vacuously; take the
    # least-squares step on the remaining blocks before testing them
    vacuous = len(problem.contact_points) == 0 and len(problem.interior_points) == 0
    while True:
        if not math.isfinite(c):
            return _finish(problem, q, "stalled", it, history, seed, "non-finite residual", tol)
        flags, _ = termination_check(problem, q, tol)
        if all(flags.values()) and not (vacuous and it == 0):
            return _finish(problem, q, "converged", it, history, seed, tol=tol)
        if it >= cfg.max_iters:
            return _finish(problem, q, "max_iters", it, history, seed, tol=tol)
        it += 1
        jac = residual_jacobian(problem, q)
        grad = jac.T @ r
        jtj = jac.T @ jac
        while True:
            try:
                step = np.linalg.solve(jtj + mu * np.eye(len(q)), grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(jtj + mu * np.eye(len(q)), grad, rcond=None)[0]
            alpha = 1.0
            accepted = False
            while alpha >= cfg.min_alpha:
                q_new = q - alpha * step
                r_new = residuals(problem, q_new)
                c_new = float(r_new @ r_new)
                if math.isfinite(c_new) and c_new < c:
                    accepted = True
                    break
                alpha *= cfg.backtrack
            if accepted or mu >= cfg.max_damping:
                break
            mu = min(cfg.max_damping, max(mu * 10.0, 1e-12))
        if not accepted:
            return _finish(problem, q, "stalled", it, history, seed, "line search found no decrease", tol)
        dq = q_new - q
        q, r, c = q_new, r_new, c_new
        history.append(c)
        mu = max(cfg.damping, mu / 10.0)
        if np.linalg.norm(dq) < cfg.stall_step:
            flags, _ = termination_check(problem, q, tol)
            status = "converged" if all(flags.values()) else "stalled"
            return _finish(problem, q, status, it, history, seed, "" if status == "converged" else "step below tolerance", tol)


@dataclass
class BatchResult:
    solutions: list
    n_seeds: int
    seed: int

    @property
    def n_converged(self) -> int:
        return sum(s.converged for s in self.solutions)

    @property
    def success_rate(self) -> float:
        return self.n_converged / self.n_seeds

    @property
    def best(self) -> PlanSolution:
        return self.solutions[0]

    def failure_breakdown(self) -> dict:
        """How many non-converged runs failed each criterion."""
        out = {k: 0 for k in CRITERIA}
        for s in self.solutions:
            if not s.converged:
                for k in CRITERIA:
                    out[k] += not s.flags.get(k, False)
        return out


def initial_configurations(problem: LiftProblem, n_seeds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(problem.q_min, problem.q_max, size=(n_seeds, problem.n_dof))


def batch_plan(problem: LiftProblem, cfg: GnConfig = GnConfig(), n_seeds: int | None = None,
               seed: int = 0, tol: TerminationTolerances = TerminationTolerances()) -> BatchResult:
    """Gauss-Newton from uniform random starts; converged runs first, then by cost."""
    n = cfg.n_seeds if n_seeds is None else int(n_seeds)
    if n < 1:
        raise ValueError("n_seeds must be >= 1")
    starts = initial_configurations(problem, n, seed)
    sols = [gauss_newton(problem, cfg, q0, seed=i, tol=tol) for i, q0 in enumerate(starts)]
    sols.sort(key=lambda s: (not s.converged, s.cost, s.seed))
    return BatchResult(sols, n, seed)


def cubic_spline_trajectory(q_start, q_goal, duration: float, dt: float) -> tuple:
    """Rest-to-rest cubic per joint, sampled every ``dt`` with the end time included.

    Returns ``(times, q)`` with ``q`` of shape ``(len(times), C)``.
    """
    qa = np.asarray(q_start, dtype=float).reshape(-1)
    qb = np.asarray(q_goal, dtype=float).reshape(-1)
    if qa.shape != qb.shape:
        raise ValueError("q_start and q_goal differ in length")
    if not (duration > 0 and dt > 0):
        raise ValueError("duration and dt must be positive")
    if dt > duration:
        raise ValueError(f"dt={dt} exceeds duration={duration}")
    spline = CubicSpline([0.0, duration], np.stack([qa, qb]), bc_type="clamped")
    n = int(math.floor(duration / dt + 1e-9))
    times = np.arange(n + 1) * dt
    if duration - times[-1] > 1e-12 * duration:
        times = np.append(times, duration)
    else:
        times[-1] = duration
    traj = spline(times)
    traj[0], traj[-1] = qa, qb
    return times, traj


def write_trajectory_csv(path, times, traj) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s"] + [f"q{j}_rad" for j in range(traj.shape[1])])
        for t, row in zip(times, traj):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


# ----------------------------------------------------------------------------
# problem and solution files


def problem_to_dict(problem: LiftProblem, model_paths: list) -> dict:
    return {
        "format": PROBLEM_FORMAT,
        "version": PROBLEM_VERSION,
        "arms": [{"model": str(p), "base": a.chain.base.to_dict()} for p, a in zip(model_paths, problem.arms)],
        "contact_points": problem.contact_points.tolist(),
        "contact_normals": problem.contact_normals.tolist(),
        "interior_points": problem.interior_points.tolist(),
        "q_init": problem.q_init.tolist(),
        "weights": problem.weights.to_dict(),
        "inward_offset": problem.inward_offset,
        "rho": problem.rho,
    }


def problem_from_dict(d: dict, base_dir=None, models: dict | None = None) -> tuple:
    """Build a :class:`LiftProblem`; returns ``(problem, seed)``.

    ``models`` may map model paths to already loaded models.
    """
    if not isinstance(d, dict):
        raise ValueError("problem file must hold a JSON object")
    if d.get("format", PROBLEM_FORMAT) != PROBLEM_FORMAT:
        raise ValueError(f"not a lift problem file (format={d.get('format')!r})")
    for key in ("arms", "contact_points", "contact_normals", "interior_points", "q_init"):
        if key not in d:
            raise ValueError(f"problem file is missing field {key!r}")
    arms = []
    for i, arm in enumerate(d["arms"]):
        if "model" not in arm:
            raise ValueError(f"arms[{i}] is missing field 'model'")
        ref = arm["model"]
        if models and ref in models:
            m = models[ref]
        else:
            p = Path(ref)
            if base_dir is not None and not p.is_absolute():
                p = Path(base_dir) / p
            m = load_model(p)
        arms.append(m.with_base(Pose.from_dict(arm["base"])) if "base" in arm else m)
    try:
        weights = ResidualWeights(**d.get("weights", {}))
    except TypeError as exc:
        raise ValueError(f"bad weights entry: {exc}") from exc
    problem = LiftProblem(arms=tuple(arms), contact_points=d["contact_points"], contact_normals=d["contact_normals"],
                          interior_points=d["interior_points"], q_init=d["q_init"], weights=weights,
                          inward_offset=float(d.get("inward_offset", 0.0)), rho=float(d.get("rho", DEFAULT_RHO)))
    return problem, int(d.get("seed", 0))


def load_problem(path, models: dict | None = None) -> tuple:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    return problem_from_dict(d, base_dir=path.parent, models=models)


def solutions_csv(result: BatchResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n_q = len(result.solutions[0].q_final)
    w.writerow(["seed", "status", "iterations", "cost"]
               + [f"norm_{b}" for b in BLOCKS]
               + [f"ok_{k}" for k in CRITERIA]
               + [f"q{j}" for j in range(n_q)])
    for s in result.solutions:
        w.writerow([s.seed, s.status, s.iterations, repr(s.cost)]
                   + [repr(s.block_norms[b]) for b in BLOCKS]
                   + [int(bool(s.flags.get(k, False))) for k in CRITERIA]
                   + [repr(float(v)) for v in s.q_final])
    return buf.getvalue()
