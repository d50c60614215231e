"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line with its measurements and wall
time; the lines are printed as they happen and again in the terminal
summary.  Time limits cover all work inside the test, including fitting,
but not session fixtures shared with the unit tests.
"""
import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from rdfkit import avoid, basis, cli, fit, fixtures, geometry, planner, robotsdf
from rdfkit.basis import AxisBox, BasisConfig
from rdfkit.kinematics import DhRow, KinematicChain, Pose, forward_kinematics, point_frame_jacobian, \
    point_to_link_frame
from rdfkit.qp import QpProblem, solve_qp

RESULTS = []


class Criterion:
    def __init__(self, number, title, limit_s):
        self.number, self.title, self.limit = number, title, limit_s
        self.checks = []

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def check(self, label, ok):
        self.checks.append((label, bool(ok)))

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        self.check(f"time {elapsed:.1f}s < {self.limit:g}s", elapsed < self.limit)
        ok = exc_type is None and all(c for _, c in self.checks)
        detail = "; ".join(lbl for lbl, _ in self.checks)
        if exc_type is not None:
            detail += f"; raised {exc_type.__name__}: {exc}"
        line = f"{'PASS' if ok else 'FAIL'} [{self.number:2d}] {self.title}: {detail}"
        RESULTS.append(line)
        print(line)
        if exc_type is None:
            failed = [lbl for lbl, c in self.checks if not c]
            assert not failed, line
        return False


def _oracle_fk(chain, q):
    def hom(r=np.eye(3), t=(0.0, 0.0, 0.0)):
        m = np.eye(4)
        m[:3, :3] = r
        m[:3, 3] = t
        return m

    def rx(a):
        c, s = math.cos(a), math.sin(a)
        return hom(np.array([[1, 0, 0], [0, c, -s], [0, s, c]]))

    def rz(a):
        c, s = math.cos(a), math.sin(a)
        return hom(np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]))

    out = [chain.base.matrix()]
    j = 0
    for r in chain.rows:
        th = r.theta_offset
        if r.actuated:
            th += q[j]
            j += 1
        if chain.convention == "classic":
            step = rz(th) @ hom(t=(0, 0, r.d)) @ hom(t=(r.a, 0, 0)) @ rx(r.alpha)
        else:
            step = rx(r.alpha) @ hom(t=(r.a, 0, 0)) @ rz(th) @ hom(t=(0, 0, r.d))
        out.append(out[-1] @ step)
    return out


def _enumeration_oracle(prob):
    h, g, a, b = prob.hessian, prob.gradient, prob.a_ineq, prob.b_ineq
    n, m = prob.n, a.shape[0]
    best = math.inf
    for k in range(m + 1):
        for act in itertools.combinations(range(m), k):
            aw = a[list(act)]
            kkt = np.block([[h, aw.T], [aw, np.zeros((k, k))]])
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-g, b[list(act)]]))
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(a @ x - b <= 1e-9) and np.all(lam >= -1e-9):
                best = min(best, prob.objective(x))
    return best


def _random_qp(rng, n, m):
    r = rng.normal(size=(n, n))
    return QpProblem(r @ r.T + 0.1 * np.eye(n), rng.normal(size=n), rng.normal(size=(m, n)), rng.normal(size=m))


def test_01_basis_identities():
    rng = np.random.default_rng(1)
    with Criterion(1, "basis partition of unity and derivative sum", 1.0) as c:
        ns = rng.integers(2, 33, size=10_000)
        ts = rng.uniform(0.0, 1.0, size=10_000)
        pu = ds = 0.0
        for n in np.unique(ns):
            t = ts[ns == n]
            pu = max(pu, float(np.abs(basis.eval_1d(t, int(n)).sum(axis=-1) - 1.0).max()))
            ds = max(ds, float(np.abs(basis.grad_1d(t, int(n)).sum(axis=-1)).max()))
        c.check(f"max|sum-1| {pu:.1e} <= 1e-12", pu <= 1e-12)
        c.check(f"max|sum d/dt| {ds:.1e} <= 1e-10", ds <= 1e-10)


def test_02_recursive_equals_batch():
    rng = np.random.default_rng(2)
    with Criterion(2, "recursive fit equals batch fit", 10.0) as c:
        cfg = BasisConfig(8, AxisBox((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)))
        p = rng.uniform(-1, 1, size=(10_000, 3))
        f = np.linalg.norm(p, axis=1) - 0.5
        w_batch = fit.fit_batch(p, f, cfg)
        worst = 0.0
        for _ in range(5):
            cuts = np.sort(rng.choice(np.arange(1, len(p)), size=int(rng.integers(1, 40)), replace=False))
            st = fit.rls_init(cfg)
            for lo, hi in zip([0, *cuts], [*cuts, len(p)]):
                fit.rls_update(st, p[lo:hi], f[lo:hi])
            worst = max(worst, float(np.abs(st.weights - w_batch).max()))
        c.check(f"max|dw| over 5 partitions {worst:.1e} <= 1e-6", worst <= 1e-6)


def _franka_mesh_dir():
    d = os.environ.get("RDFKIT_FRANKA_MESHES")
    return Path(d) if d else None


def test_03_fit_accuracy_chamfer():
    shape = fixtures.capsule_link()
    with Criterion(3, "0-level-set Chamfer distance on the capsule link", 120.0) as c:
        cd = {}
        for n in (8, 24):
            fld, _ = robotsdf.fit_link(shape, n, seed=0)
            cd[n] = robotsdf.surface_chamfer(fld, shape)
        c.check(f"CD(N=8) {1e3 * cd[8]:.3f} mm <= 2 mm", cd[8] <= 2e-3)
        c.check(f"CD(N=24) {1e3 * cd[24]:.3f} mm <= 1 mm", cd[24] <= 1e-3)
        c.check("N=24 better than N=8", cd[24] < cd[8])


@pytest.mark.skipif(_franka_mesh_dir() is None, reason="set RDFKIT_FRANKA_MESHES to a directory of link meshes")
def test_03b_franka_mesh_chamfer():
    paths = sorted(p for p in _franka_mesh_dir().iterdir() if p.suffix.lower() in (".obj", ".stl"))
    with Criterion(3, "0-level-set Chamfer distance on user Franka meshes", math.inf) as c:
        cds = []
        for path in paths:
            mesh = geometry.load_mesh(path)
            fld, _ = robotsdf.fit_link(mesh, 24, seed=0)
            cds.append(robotsdf.surface_chamfer(fld, mesh))
        mean = float(np.mean(cds)) if cds else math.inf
        c.check(f"{len(cds)} meshes, mean CD(N=24) {1e3 * mean:.3f} mm <= 1 mm", mean <= 1e-3)


def test_04_whole_robot_accuracy():
    chain = fixtures.planar_arm()
    with Criterion(4, "planar 3-link whole-robot MAE, 20 configs x 1000 points", 120.0) as c:
        for n, bar in ((8, 3e-3), (24, 2e-3)):
            model = robotsdf.fit_robot(chain, n=n, seed=0)
            rep = robotsdf.evaluate_accuracy(model, n_configs=20, n_points=1000, seed=0)
            c.check(f"N={n} MAE {1e3 * rep['mae_all']:.2f} mm (near {1e3 * rep['mae_near']:.2f}, far "
                    f"{1e3 * rep['mae_far']:.2f}) <= {1e3 * bar:g} mm", rep["mae_all"] <= bar)


def test_05_gradient_fidelity(planar_model8):
    model = planar_model8
    rng = np.random.default_rng(5)
    h = 1e-6

    def close(a, b):
        return float(np.max(np.abs(a - b) - 1e-4 * np.abs(b)))

    with Criterion(5, "soft-mode gradients and residual Jacobian vs central differences", 30.0) as c:
        worst_p = worst_q = -math.inf
        for _ in range(50):
            q = model.chain.random_configuration(rng)
            posed = robotsdf.posed_shapes(model.chain, q)
            p = robotsdf.sample_points_around(posed, 10, rng)
            res = model.query(q, p, want_grad_q=True, mode="soft")
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                fd = (model.query(q, p + e, mode="soft").distance - model.query(q, p - e, mode="soft").distance) / (2 * h)
                worst_p = max(worst_p, close(res.grad_p[:, i], fd))
            for j in range(model.n_joints):
                e = np.zeros(model.n_joints)
                e[j] = h
                fd = (model.query(q + e, p, mode="soft").distance - model.query(q - e, p, mode="soft").distance) / (2 * h)
                worst_q = max(worst_q, close(res.grad_q[:, j], fd))
        # tolerance is relative, with a 1e-6 floor for components near zero
        c.check(f"500 samples grad_p excess {worst_p:.1e} <= 1e-6", worst_p <= 1e-6)
        c.check(f"grad_q excess {worst_q:.1e} <= 1e-6", worst_q <= 1e-6)

        prob = planner.LiftProblem(arms=(model,), **fixtures.planar_lift_spec())
        worst_j, rows = -math.inf, 0
        for _ in range(20):
            q = rng.uniform(prob.q_min - 0.3, prob.q_max + 0.3)
            jac = planner.residual_jacobian(prob, q)
            fd = np.empty_like(jac)
            for j in range(len(q)):
                e = np.zeros(len(q))
                e[j] = h
                fd[:, j] = (planner.residuals(prob, q + e) - planner.residuals(prob, q - e)) / (2 * h)
            sizes = prob.block_sizes()
            n_c, n_i, dof = sizes["reach"], sizes["penetration"], prob.n_dof
            d_i, _ = planner._interior_terms(prob, q, want_grad=False)
            lim = np.concatenate([q - prob.q_max, prob.q_min - q])
            kink = np.zeros(len(jac), bool)
            kink[n_c:n_c + n_i] = np.abs(d_i) < 1e-4
            kink[n_c + n_i:n_c + n_i + 2 * dof] = np.abs(lim) < 1e-4
            worst_j = max(worst_j, close(jac[~kink], fd[~kink]))
            rows += int((~kink).sum())
        c.check(f"residual_jacobian on {rows} rows away from kinks, excess {worst_j:.1e} <= 1e-6", worst_j <= 1e-6)


def test_06_soft_min_bracketing(planar_model8):
    model = planar_model8
    rng = np.random.default_rng(6)
    with Criterion(6, "soft-min bracketing and monotone approach", 10.0) as c:
        pts, qs = [], []
        for _ in range(20):
            q = model.chain.random_configuration(rng)
            pts.append(robotsdf.sample_points_around(robotsdf.posed_shapes(model.chain, q), 500, rng))
            qs.append(q)
        k = len(model.link_frames)
        ok_bracket = ok_mono = True
        worst = 0.0
        for q, p in zip(qs, pts):
            hard = model.query(q, p).distance
            prev = None
            for rho in (1e2, 1e3, 1e4):
                soft = model.query(q, p, mode="soft", rho=rho).distance
                lo = hard - math.log(k) / rho
                ok_bracket &= bool(np.all(soft <= hard + 1e-15) and np.all(soft >= lo - 1e-15))
                gap = hard - soft
                if prev is not None:
                    ok_mono &= bool(np.all(gap <= prev + 1e-15))
                prev = gap
            worst = max(worst, float(prev.max()))
        c.check("1e4 evaluations per rho in {1e2, 1e3, 1e4} bracketed by [min - ln K/rho, min]", ok_bracket)
        c.check(f"gap to hard-min non-increasing in rho, {worst:.1e} at rho=1e4", ok_mono)


def test_07_kinematics():
    rng = np.random.default_rng(7)
    h = 1e-6
    with Criterion(7, "forward kinematics and point Jacobian", 10.0) as c:
        fk_err = jac_err = drift = 0.0
        for i in range(100):
            conv = ("classic", "modified")[i % 2]
            n = int(rng.integers(1, 8))
            rows = [DhRow(*rng.uniform(-0.5, 0.5, 2), rng.uniform(-np.pi, np.pi), rng.uniform(-1, 1)) for _ in range(n)]
            base = Pose.from_xyz_rpy(rng.uniform(-1, 1, 3), rng.uniform(-np.pi, np.pi, 3))
            chain = KinematicChain(rows, [-3.0] * n, [3.0] * n, conv, base)
            q = chain.random_configuration(rng)
            poses = forward_kinematics(chain, q)
            for pose, want in zip(poses, _oracle_fk(chain, q)):
                fk_err = max(fk_err, float(np.abs(pose.matrix() - want).max()))
                drift = max(drift, pose.orthonormality_error())
            k = int(rng.integers(0, n + 1))
            p = rng.normal(size=(4, 3))
            jac = point_frame_jacobian(chain, q, k, p)
            for j in range(n):
                e = np.zeros(n)
                e[j] = h
                fd = (point_to_link_frame(chain, q + e, k, p) - point_to_link_frame(chain, q - e, k, p)) / (2 * h)
                jac_err = max(jac_err, float(np.abs(jac[:, :, j] - fd).max()))
        long_chain = KinematicChain([DhRow(a=0.1, alpha=0.7, d=0.05)] * 200, [-3] * 200, [3] * 200)
        for pose in forward_kinematics(long_chain, rng.uniform(-3, 3, 200)):
            drift = max(drift, pose.orthonormality_error())
        c.check(f"100 chains FK error {fk_err:.1e} <= 1e-6", fk_err <= 1e-6)
        c.check(f"Jacobian vs FD {jac_err:.1e} <= 1e-6", jac_err <= 1e-6)
        c.check(f"orthonormality drift {drift:.1e} <= 1e-9", drift <= 1e-9)


def test_08_planner_success(planar_model8):
    model = planar_model8
    prob = planner.LiftProblem(arms=(model,), **fixtures.planar_lift_spec())
    with Criterion(8, "planar lift planning, 50 seeds", 120.0) as c:
        res = planner.batch_plan(prob, n_seeds=50, seed=0)
        good, iters = 0, []
        for s in res.solutions:
            if not s.converged:
                continue
            q = s.q_final
            tip = model.query(q, prob.target_points)
            inner = model.query(q, prob.interior_points).distance
            g = tip.grad_p / np.linalg.norm(tip.grad_p, axis=1, keepdims=True)
            ok = (float(tip.distance @ tip.distance) < 0.01
                  and float(np.sum(np.minimum(inner, 0.0) ** 2)) < 0.01
                  and bool(np.all((q > prob.q_min) & (q < prob.q_max)))
                  and float(np.sum(1.0 - np.einsum("ij,ij->i", g, prob.contact_normals))) < 0.1)
            # the exact capsule geometry must agree on contact and penetration too
            d_true = robotsdf.oracle_distance(model.chain, q, prob.target_points)
            i_true = robotsdf.oracle_distance(model.chain, q, prob.interior_points)
            ok &= float(d_true @ d_true) < 0.01 and float(np.sum(np.minimum(i_true, 0.0) ** 2)) < 0.01
            good += ok
            iters.append(s.iterations)
        rate = good / 50
        med = float(np.median(iters)) if iters else math.inf
        c.check(f"{good}/50 converged and verified ({100 * rate:.0f}%) >= 50%", rate >= 0.5)
        c.check(f"median iterations {med:g} <= 200", med <= 200)


def test_09_qp_solver():
    rng = np.random.default_rng(9)
    with Criterion(9, "active-set QP solver", 60.0) as c:
        worst_kkt, failed = 0.0, 0
        for _ in range(1000):
            n, m = int(rng.integers(1, 16)), int(rng.integers(0, 20))
            prob = _random_qp(rng, n, m)
            lo = np.where(rng.uniform(size=n) < 0.5, -rng.uniform(0.1, 1, n), -np.inf)
            hi = np.where(rng.uniform(size=n) < 0.5, rng.uniform(0.1, 1, n), np.inf)
            prob = QpProblem(prob.hessian, prob.gradient, prob.a_ineq, np.abs(prob.b_ineq), lo, hi)
            res = solve_qp(prob)
            if not res.optimal:
                failed += 1
                continue
            worst_kkt = max(worst_kkt, max(res.kkt.values()))
        c.check(f"1000 random QPs, {failed} unsolved, max KKT residual {worst_kkt:.1e} <= 1e-8",
                failed == 0 and worst_kkt <= 1e-8)
        gap = 0.0
        for _ in range(100):
            prob = _random_qp(rng, 10, 5)
            res = solve_qp(prob)
            gap = max(gap, abs(prob.objective(res.x) - _enumeration_oracle(prob)) if res.optimal else math.inf)
        c.check(f"100 instances vs exhaustive active sets, max objective gap {gap:.1e} <= 1e-6", gap <= 1e-6)


def test_10_avoidance_safety(planar_model8):
    tmpl = avoid.two_arm_template(planar_model8)
    cfg = tmpl.controller
    bound = cfg.d_safe - 0.002 - cfg.integration_slack
    with Criterion(10, "two-arm avoidance safety audit, 100 episodes", 300.0) as c:
        reps = avoid.run_episodes(tmpl, range(100))
        violations = [r.seed for r in reps if avoid.safety_violation(r, cfg)]
        s = avoid.summarize(reps)
        clean = sum(r.clean for r in reps)
        below_dirty = sum(not r.clean and r.min_distance < bound for r in reps)
        c.check(f"{len(violations)} clean episodes below {1e3 * bound:.1f} mm (seeds {violations})", not violations)
        c.check(f"reaching rate {100 * s['reaching_rate']:.0f}% (reported), {clean} clean, "
                f"{s['qp_infeasible']} infeasible, {below_dirty} slack-assisted episodes below the bound "
                f"(informational)", True)


def _cli_files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_11_determinism_and_formats(tmp_path):
    with Criterion(11, "CLI byte reproducibility and file round trips", 60.0) as c:
        root = tmp_path
        model = str(root / "fit8" / "model.json")
        commands = {
            "fixtures": ["fixtures", "--out", str(root)],
            "fit": ["fit", "--chain", str(root / "planar3.chain.json"), "--n", "6", "--samples", "20000",
                    "--holdout", "500", "--out", str(root / "fit8"), "--no-timing"],
            "eval": ["eval", "--model", model, "--configs", "2", "--points", "200", "--out", str(root / "eval"),
                     "--no-timing"],
            "plan": ["plan", "--problem", str(root / "lift_problem.json"), "--n-seeds", "3",
                     "--out", str(root / "plan"), "--no-timing"],
            "avoid": ["avoid", "--scene", str(root / "two_arm_scene.json"), "--episodes", "2",
                      "--out", str(root / "avoid"), "--no-timing"],
            "grid": ["grid", "--model", model, "--q", "0.1", "0.2", "0.3", "--box", "-0.7", "-0.7", "-0.1",
                     "0.7", "0.7", "0.1", "--resolution", "16", "--out", str(root / "grid")],
        }
        outs = {"fixtures": root, "fit": root / "fit8", "eval": root / "eval", "plan": root / "plan",
                "avoid": root / "avoid", "grid": root / "grid"}
        for name, argv in commands.items():
            code = cli.main(argv)
            first = {k: v for k, v in _cli_files(outs[name]).items() if "/" not in k}
            code2 = cli.main(argv)
            again = {k: v for k, v in _cli_files(outs[name]).items() if "/" not in k}
            c.check(f"{name} exit {code}/{code2}, {len(first)} files identical", code == code2 == 0 and first == again)

        m = robotsdf.load_model(model)
        robotsdf.save_model(m, root / "model_copy.json")
        c.check("model file round-trips byte-identically",
                (root / "model_copy.json").read_bytes() == Path(model).read_bytes())
        header, vals = robotsdf.read_grid(root / "grid" / "grid.bin")
        robotsdf.write_grid(root / "grid_copy.bin", vals, AxisBox.from_dict(header["box"]), header.get("q"))
        c.check("grid file round-trips byte-identically",
                (root / "grid_copy.bin").read_bytes() == (root / "grid" / "grid.bin").read_bytes())
        json.loads((root / "avoid" / "avoid_report.json").read_text())
