"""Whole-robot signed distance from per-link Bernstein fields.

Each attached link carries a field in its own frame.  A world query point is
mapped into every link frame through forward kinematics, each field is
evaluated there, and the per-link values are combined with a hard minimum or
a log-sum-exp soft minimum.
"""
from __future__ import annotations

import base64
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import __version__, basis, fit, geometry
from .basis import AxisBox, BasisConfig
from .kinematics import KinematicChain, Pose, forward_kinematics, joint_axes, joints_moving_frame

MODEL_FORMAT = "rdfkit-model"
MODEL_VERSION = 1
GRID_FORMAT = "rdfkit-grid"
GRID_VERSION = 1
GRID_MAGIC = b"RDFGRID1\n"
FLATTENING = "kron(phi(t1), phi(t2), phi(t3)); index = a*N*N + b*N + c (axis 1 slowest)"
MAX_GRID_CELLS = 10 ** 8
DEFAULT_RHO = 100.0


@dataclass(frozen=True, eq=False)
class BernsteinField:
    cfg: BasisConfig
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != self.cfg.n_features:
            raise ValueError(f"expected {self.cfg.n_features} weights, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise ValueError("field weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.cfg.n_per_axis

    @property
    def domain(self) -> AxisBox:
        return self.cfg.domain

    def __call__(self, p_local):
        return link_field_eval(self, p_local)[0]


def link_field_eval(fld: BernsteinField, p_local) -> tuple:
    """Distance and local-frame gradient of one link field.

    Inside the domain box this is the polynomial and its analytic gradient.
    Outside, the point is projected onto the box and the Euclidean gap to the
    projection is added to the field value there; the gradient takes the gap
    direction on clamped axes and the field gradient on the others.
    """
    p = np.asarray(p_local, dtype=float)
    single = p.ndim == 1
    p = p.reshape(-1, 3)
    if not np.all(np.isfinite(p)):
        raise ValueError("query points must be finite")
    proj = fld.domain.clamp(p)
    val, grad = basis.evaluate(proj, fld.cfg, fld.weights, with_grad=True)
    gap = p - proj
    gap_norm = np.linalg.norm(gap, axis=1)
    outside = gap_norm > 0
    if np.any(outside):
        clamped = gap != 0
        unit = gap[outside] / gap_norm[outside, None]
        grad[outside] = np.where(clamped[outside], unit, grad[outside])
        val = val + gap_norm
    if single:
        return float(val[0]), grad[0]
    return val, grad


def domain_cube(bounds: AxisBox, rel_margin: float = 0.25, min_margin: float = 0.05) -> AxisBox:
    """Cube centred on ``bounds`` whose side is the largest extent plus a margin on each face."""
    side = float(bounds.extent.max())
    half = 0.5 * side + max(rel_margin * side, min_margin)
    c = bounds.center
    return AxisBox(tuple(c - half), tuple(c + half))


@dataclass
class QueryResult:
    distance: np.ndarray          # (M,)
    link_index: np.ndarray        # (M,) frame index of the closest link
    grad_p: np.ndarray            # (M, 3) world-frame gradient
    grad_q: np.ndarray | None     # (M, C)
    link_distances: np.ndarray    # (M, L) per attached link, in model.link_frames order


@dataclass(frozen=True, eq=False)
class RobotSdfModel:
    chain: KinematicChain
    link_fields: dict
    metadata: dict = field(default_factory=dict)
    # wall-clock fit seconds per frame; kept out of files so they stay reproducible
    fit_timing: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        fields = {int(k): v for k, v in self.link_fields.items()}
        if not fields:
            raise ValueError("model has no link fields")
        for k in fields:
            if not 0 <= k <= self.chain.n_frames:
                raise ValueError(f"field attached to missing frame {k}")
        object.__setattr__(self, "link_fields", dict(sorted(fields.items())))

    @property
    def link_frames(self) -> list:
        return list(self.link_fields)

    @property
    def n_joints(self) -> int:
        return self.chain.n_joints

    def with_base(self, base: Pose) -> "RobotSdfModel":
        return RobotSdfModel(self.chain.with_base(base), self.link_fields, self.metadata, self.fit_timing)

    def query(self, q, points, **kw) -> QueryResult:
        return eval_points(self, q, points, **kw)


def soft_min(d: np.ndarray, rho: float, axis: int = -1) -> np.ndarray:
    """``-(1/rho) log sum exp(-rho d)``, a smooth lower bound of the minimum."""
    return -logsumexp(-rho * d, axis=axis) / rho


def eval_points(model: RobotSdfModel, q, points, want_grad_q: bool = False,
                mode: str = "hard", rho: float = DEFAULT_RHO, poses=None) -> QueryResult:
    """Distance, closest link and gradients for world points at configuration ``q``.

    ``mode`` is ``"hard"`` (exact minimum, ties to the lowest link) or
    ``"soft"`` (log-sum-exp with sharpness ``rho`` in 1/m, gradients blended
    by the softmax weights).
    """
    if mode not in ("hard", "soft"):
        raise ValueError(f"unknown combination mode {mode!r}")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if poses is None:
        poses = forward_kinematics(model.chain, q)
    frames = model.link_frames
    m, nl = len(pts), len(frames)
    dists = np.empty((m, nl))
    grads = np.empty((nl, m, 3))
    gq = np.zeros((nl, m, model.n_joints)) if want_grad_q else None
    if want_grad_q:
        axes, origins = joint_axes(model.chain, poses)
    for i, k in enumerate(frames):
        pose = poses[k]
        d, g_local = link_field_eval(model.link_fields[k], pose.apply_inverse(pts))
        dists[:, i] = d
        grads[i] = g_local @ pose.rotation.T
        if want_grad_q:
            for j in np.flatnonzero(joints_moving_frame(model.chain, k)):
                # -z_j . ((p - o_j) x grad)
                gq[i, :, j] = -np.cross(pts - origins[j], grads[i]) @ axes[j]

    link_pos = np.argmin(dists, axis=1)
    rows = np.arange(m)
    if mode == "hard":
        dist = dists[rows, link_pos]
        grad_p = grads[link_pos, rows]
        grad_q = gq[link_pos, rows] if want_grad_q else None
    else:
        dist = soft_min(dists, rho, axis=1)
        w = np.exp(-rho * (dists - dist[:, None]))      # softmax weights, rows sum to 1
        grad_p = np.einsum("ml,lmi->mi", w, grads)
        grad_q = np.einsum("ml,lmj->mj", w, gq) if want_grad_q else None
    return QueryResult(dist, np.asarray(frames)[link_pos], grad_p, grad_q, dists)


# ----------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class SamplingConfig:
    n_samples: int = 256_000
    surface_fraction: float = 0.9
    sigma_near: float = 0.005
    sigma_far: float = 0.05
    n_holdout: int = 10_000

    def split(self) -> tuple:
        n_surface = int(round(self.n_samples * self.surface_fraction))
        return n_surface, self.n_samples - n_surface


# fits with this many features or fewer use the recursive update by default
RLS_MAX_FEATURES = 1000


def link_shapes(chain: KinematicChain) -> dict:
    """Attached geometry of each frame, expressed in that frame."""
    out = {}
    for att in chain.attachments:
        try:
            shape = geometry.shape_from_dict(att.geometry)
        except (OSError, ValueError, KeyError) as exc:
            raise ValueError(f"link {att.label!r}: {exc}") from exc
        out[att.frame] = shape.transformed(att.pose)
    return out


def _link_seed(seed: int, description: dict) -> np.random.SeedSequence:
    digest = hashlib.sha256(json.dumps(description, sort_keys=True).encode()).digest()
    return np.random.SeedSequence([int(seed), int.from_bytes(digest[:8], "little")])


def fit_link(shape, n: int, fit_cfg: fit.FitConfig = fit.FitConfig(), sampling: SamplingConfig = SamplingConfig(),
             seed=0, solver: str = "auto") -> tuple:
    """Fit one link field; returns ``(field, report)``."""
    cube = domain_cube(shape.aabb())
    cfg = BasisConfig(n, cube)
    ss_train, ss_hold = np.random.SeedSequence(seed).spawn(2) if not isinstance(seed, np.random.SeedSequence) \
        else seed.spawn(2)
    n_surface, n_uniform = sampling.split()
    train = geometry.sample_training_set(shape, n_surface, n_uniform, cube, sampling.sigma_near,
                                         sampling.sigma_far, np.random.default_rng(ss_train))
    if solver == "auto":
        solver = "rls" if cfg.n_features <= RLS_MAX_FEATURES else "batch"
    t0 = time.perf_counter()
    if solver == "rls":
        w = fit.fit_recursive(train.positions, train.distances, cfg, fit_cfg)
    elif solver == "batch":
        w = fit.fit_batch(train.positions, train.distances, cfg, fit_cfg)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    fit_seconds = time.perf_counter() - t0
    fld = BernsteinField(cfg, w)
    hold = geometry.sample_training_set(shape, sampling.n_holdout, 0, cube, sampling.sigma_near,
                                        sampling.sigma_far, np.random.default_rng(ss_hold))
    pred = link_field_eval(fld, hold.positions)[0]
    err = np.abs(pred - hold.distances)
    near = np.abs(hold.distances) < geometry.NEAR_THRESHOLD
    report = {
        "n": n,
        "solver": solver,
        "n_train": len(train),
        "holdout_mae": float(err.mean()),
        "holdout_mae_near": float(err[near].mean()) if near.any() else None,
        "fit_seconds": fit_seconds,
    }
    return fld, report


def fit_robot(chain: KinematicChain, n: int = 8, geometries: dict | None = None,
              fit_cfg: fit.FitConfig = fit.FitConfig(), sampling: SamplingConfig = SamplingConfig(),
              seed: int = 0, solver: str = "auto") -> RobotSdfModel:
    """Fit a field for every link with geometry.

    ``geometries`` maps frame index to a shape already expressed in that
    frame; by default the chain's attachments are used.  Links whose shape
    description is identical share one fit, since the per-link random stream
    is derived from the description rather than the frame index.
    """
    BasisConfig(n, AxisBox((0, 0, 0), (1, 1, 1)))  # validates n early
    if geometries is None:
        geometries = link_shapes(chain)
    if not geometries:
        raise ValueError("chain has no link geometry to fit")
    fields, reports, timing, cache = {}, {}, {}, {}
    for k in sorted(geometries):
        shape = geometries[k]
        label = next((a.label for a in chain.attachments if a.frame == k), f"link{k}")
        try:
            desc = _shape_key(shape)
        except TypeError:
            desc = {"frame": k}
        key = json.dumps(desc, sort_keys=True)
        if key not in cache:
            try:
                cache[key] = fit_link(shape, n, fit_cfg, sampling, _link_seed(seed, desc), solver)
            except ValueError as exc:
                raise ValueError(f"link {label!r}: {exc}") from exc
        fields[k], rep = cache[key]
        rep = dict(rep, name=label)
        timing[k] = rep.pop("fit_seconds")
        reports[str(k)] = rep
    meta = {
        "tool": f"rdfkit {__version__}",
        "n": n,
        "lam": fit_cfg.lam,
        "seed": int(seed),
        "sampling": {
            "n_samples": sampling.n_samples,
            "surface_fraction": sampling.surface_fraction,
            "sigma_near": sampling.sigma_near,
            "sigma_far": sampling.sigma_far,
        },
        "links": reports,
    }
    return RobotSdfModel(chain, fields, meta, timing)


def _shape_key(shape) -> dict:
    if isinstance(shape, geometry.TriangleMesh):
        h = hashlib.sha256(shape.vertices.tobytes() + shape.triangles.tobytes()).hexdigest()
        return {"type": "mesh", "sha256": h}
    return geometry.shape_to_dict(shape)


# ----------------------------------------------------------------------------
# evaluation


def posed_shapes(chain: KinematicChain, q, shapes: dict | None = None) -> dict:
    shapes = link_shapes(chain) if shapes is None else shapes
    poses = forward_kinematics(chain, q)
    return {k: s.transformed(poses[k]) for k, s in shapes.items()}


def oracle_distance(chain: KinematicChain, q, points, shapes: dict | None = None) -> np.ndarray:
    """Exact robot distance: minimum of link oracles at the posed configuration."""
    posed = posed_shapes(chain, q, shapes)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return np.min([np.asarray(s.sdf(pts)).reshape(-1) for s in posed.values()], axis=0)


def sample_points_around(posed: dict, n: int, rng, near_sigma: float = 0.02, pad: float = 0.1) -> np.ndarray:
    """Half jittered surface points, half uniform in the padded bounding box."""
    shapes = list(posed.values())
    n_near = n // 2
    areas = np.array([s.area() for s in shapes])
    counts = rng.multinomial(n_near, areas / areas.sum())
    near = np.concatenate([s.sample_surface(c, rng) for s, c in zip(shapes, counts)])
    near += rng.normal(scale=near_sigma, size=near.shape)
    boxes = [s.aabb() for s in shapes]
    lo = np.min([b.lo for b in boxes], axis=0) - pad
    hi = np.max([b.hi for b in boxes], axis=0) + pad
    return np.concatenate([near, rng.uniform(lo, hi, size=(n - n_near, 3))])


def evaluate_accuracy(model: RobotSdfModel, n_configs: int = 20, n_points: int = 1000, seed: int = 0,
                      shapes: dict | None = None, near_threshold: float = geometry.NEAR_THRESHOLD,
                      truth_fn=None) -> dict:
    """Near/far error report over random in-limit configurations.

    ``truth_fn(q, points)`` overrides the geometric oracle.
    """
    rng = np.random.default_rng(seed)
    shapes = link_shapes(model.chain) if shapes is None else shapes
    preds, truths = [], []
    elapsed = 0.0
    for _ in range(n_configs):
        q = model.chain.random_configuration(rng)
        posed = posed_shapes(model.chain, q, shapes)
        pts = sample_points_around(posed, n_points, rng)
        t0 = time.perf_counter()
        pred = eval_points(model, q, pts).distance
        elapsed += time.perf_counter() - t0
        truth = truth_fn(q, pts) if truth_fn is not None else \
            np.min([np.asarray(s.sdf(pts)).reshape(-1) for s in posed.values()], axis=0)
        preds.append(pred)
        truths.append(truth)
    report = geometry.accuracy_report(np.concatenate(preds), np.concatenate(truths), near_threshold)
    report["n_configs"] = n_configs
    report["n_points"] = n_points
    report["ms_per_kquery"] = 1e3 * elapsed / (n_configs * n_points / 1000.0)
    return report


def project_to_surface(fld: BernsteinField, points, newton_steps: int = 5) -> np.ndarray:
    """Pull points onto the field's 0-level set by Newton steps along the gradient."""
    box = fld.domain
    pts = box.clamp(np.asarray(points, dtype=float).reshape(-1, 3))
    for _ in range(newton_steps):
        d, g = link_field_eval(fld, pts)
        gg = np.einsum("mi,mi->m", g, g)
        step = np.where(gg > 1e-12, d / np.maximum(gg, 1e-12), 0.0)
        pts = box.clamp(pts - step[:, None] * g)
    return pts


def extract_surface(fld: BernsteinField, resolution: int = 64, seeds=None, newton_steps: int = 5) -> np.ndarray:
    """Points on the 0-level set of a link field.

    Marching cubes over the domain box finds every surface component; its
    vertices, plus any extra ``seeds``, are then pulled onto the exact level
    set with Newton steps.
    """
    from skimage.measure import marching_cubes

    box = fld.domain
    axes = [np.linspace(box.lo[i], box.hi[i], resolution) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = basis.evaluate(grid, fld.cfg, fld.weights).reshape((resolution,) * 3)
    parts = []
    if vals.min() < 0 < vals.max():
        spacing = tuple(box.extent / (resolution - 1))
        verts, *_ = marching_cubes(vals, level=0.0, spacing=spacing)
        parts.append(verts + box.lo)
    if seeds is not None:
        parts.append(np.asarray(seeds, dtype=float).reshape(-1, 3))
    if not parts:
        return np.empty((0, 3))
    return project_to_surface(fld, np.concatenate(parts), newton_steps)


def surface_chamfer(fld: BernsteinField, shape, n_reference: int = 20_000, seed: int = 0,
                    resolution: int = 64) -> float:
    """Chamfer distance between the field's 0-level set and the true surface.

    The reference cloud is area-uniform on ``shape``; the fitted cloud is the
    projection of those same points onto the fitted level set, plus the
    marching-cubes vertices so that spurious surface pieces are not missed.
    """
    ref = shape.sample_surface(n_reference, np.random.default_rng(seed))
    fitted = extract_surface(fld, resolution, seeds=ref)
    if len(fitted) == 0:
        return float("inf")
    return geometry.chamfer_distance(fitted, ref)


# ----------------------------------------------------------------------------
# files


def _encode_weights(w: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(w, dtype="<f8").tobytes()).decode("ascii")


def _decode_weights(s: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(s), dtype="<f8").astype(float)


def model_to_dict(model: RobotSdfModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "flattening": FLATTENING,
        "weights_encoding": "base64 little-endian float64",
        "chain": model.chain.to_dict(),
        "links": [
            {
                "frame": k,
                "n": f.n,
                "domain": f.domain.to_dict(),
                "weights": _encode_weights(f.weights),
            }
            for k, f in model.link_fields.items()
        ],
        "provenance": model.metadata,
    }


def model_from_dict(d: dict) -> RobotSdfModel:
    if d.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model file (format={d.get('format')!r})")
    if int(d.get("version", 0)) != MODEL_VERSION:
        raise ValueError(f"unsupported model version {d.get('version')!r}")
    chain = KinematicChain.from_dict(d["chain"])
    fields = {}
    for link in d["links"]:
        cfg = BasisConfig(int(link["n"]), AxisBox.from_dict(link["domain"]))
        fields[int(link["frame"])] = BernsteinField(cfg, _decode_weights(link["weights"]))
    return RobotSdfModel(chain, fields, d.get("provenance", {}))


def dumps_model(model: RobotSdfModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(model: RobotSdfModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> RobotSdfModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def grid_axes(box: AxisBox, resolution) -> list:
    res = _grid_resolution(resolution)
    return [np.linspace(box.lo[i], box.hi[i], res[i]) for i in range(3)]


def _grid_resolution(resolution) -> tuple:
    res = tuple(int(r) for r in np.broadcast_to(np.asarray(resolution), (3,)))
    if min(res) < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    if int(np.prod(res, dtype=np.int64)) > MAX_GRID_CELLS:
        raise ValueError(f"grid of {res} exceeds {MAX_GRID_CELLS} cells")
    return res


def level_set_grid(model: RobotSdfModel, q, box: AxisBox, resolution) -> np.ndarray:
    """Distances on the inclusive lattice over ``box``, shape ``(nx, ny, nz)``."""
    res = _grid_resolution(resolution)
    axes = grid_axes(box, res)
    poses = forward_kinematics(model.chain, q)
    out = np.empty(res)
    # one x-slab per call keeps memory bounded
    yz = np.stack(np.meshgrid(axes[1], axes[2], indexing="ij"), axis=-1).reshape(-1, 2)
    for i, x in enumerate(axes[0]):
        pts = np.column_stack([np.full(len(yz), x), yz])
        out[i] = eval_points(model, q, pts, poses=poses).distance.reshape(res[1], res[2])
    return out


def write_grid(path, values: np.ndarray, box: AxisBox, q=None) -> None:
    """Grid file: magic line, one JSON header line, then row-major little-endian float32."""
    res = values.shape
    header = {
        "format": GRID_FORMAT,
        "version": GRID_VERSION,
        "box": box.to_dict(),
        "resolution": list(res),
        "dtype": "<f4",
        "order": "row-major, x slowest, z fastest; axis i samples linspace(min[i], max[i], resolution[i])",
    }
    if q is not None:
        header["q"] = [float(v) for v in np.asarray(q).reshape(-1)]
    blob = GRID_MAGIC + json.dumps(header, sort_keys=True).encode() + b"\n"
    blob += np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(blob)


def read_grid(path) -> tuple:
    data = Path(path).read_bytes()
    if not data.startswith(GRID_MAGIC):
        raise ValueError(f"{path}: not a grid file")
    end = data.index(b"\n", len(GRID_MAGIC))
    header = json.loads(data[len(GRID_MAGIC):end])
    res = tuple(header["resolution"])
    values = np.frombuffer(data[end + 1:], dtype="<f4")
    if values.size != int(np.prod(res)):
        raise ValueError(f"{path}: expected {int(np.prod(res))} values, found {values.size}")
    return header, values.reshape(res)


def export_level_set_grid(model: RobotSdfModel, q, box: AxisBox, resolution, path) -> np.ndarray:
    values = level_set_grid(model, q, box, resolution)
    write_grid(path, values, box, q)
    return values
