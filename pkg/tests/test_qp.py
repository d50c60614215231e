import itertools

import numpy as np
import pytest

from rdfkit.qp import QpProblem, kkt_residuals, solve_qp


def _random_qp(rng, n=10, m=5):
    r = rng.normal(size=(n, n))
    h = r @ r.T + 0.1 * np.eye(n)
    g = rng.normal(size=n)
    a = rng.normal(size=(m, n))
    b = rng.normal(size=m)
    return QpProblem(h, g, a, b)


def _enumeration_oracle(prob):
    """Best KKT point over every subset of active general rows."""
    h, g, a, b = prob.hessian, prob.gradient, prob.a_ineq, prob.b_ineq
    n, m = prob.n, a.shape[0]
    best = None
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
                f = prob.objective(x)
                if best is None or f < best[0]:
                    best = (f, x)
    return best


def test_unconstrained_matches_direct_solve(rng):
    prob = _random_qp(rng, m=0)
    res = solve_qp(QpProblem(prob.hessian, prob.gradient))
    np.testing.assert_allclose(res.x, -np.linalg.solve(prob.hessian, prob.gradient), atol=1e-10)
    assert res.optimal and res.active == []


def test_one_dimensional_clamp():
    # (x - 1)^2 = x^2 - 2x + 1
    res = solve_qp(QpProblem([[2.0]], [-2.0], [[1.0]], [0.0]))
    assert res.x[0] == pytest.approx(0.0, abs=1e-14)
    assert res.general_active == [0]
    assert res.multipliers[0] == pytest.approx(2.0)
    res = solve_qp(QpProblem([[2.0]], [-2.0], upper=[0.5]))
    assert res.x[0] == pytest.approx(0.5)


def test_matches_enumeration_oracle(rng):
    for _ in range(40):
        prob = _random_qp(rng)
        res = solve_qp(prob)
        f_star, x_star = _enumeration_oracle(prob)
        assert res.optimal
        assert abs(prob.objective(res.x) - f_star) <= 1e-6
        np.testing.assert_allclose(res.x, x_star, atol=1e-6)


def test_kkt_conditions_hold(rng):
    for _ in range(100):
        n, m = int(rng.integers(1, 12)), int(rng.integers(0, 15))
        prob = _random_qp(rng, n, m)
        lo = np.where(rng.uniform(size=n) < 0.5, -rng.uniform(0.1, 1, n), -np.inf)
        hi = np.where(rng.uniform(size=n) < 0.5, rng.uniform(0.1, 1, n), np.inf)
        # shift b so the origin is feasible
        b = np.abs(prob.b_ineq)
        prob = QpProblem(prob.hessian, prob.gradient, prob.a_ineq, b, lo, hi)
        res = solve_qp(prob)
        assert res.optimal
        for k, v in res.kkt.items():
            assert v <= 1e-8, (k, v)


def test_phase_one_used_when_start_infeasible(rng):
    # origin infeasible: x1 >= 1, x2 >= 1
    prob = QpProblem(np.eye(2), np.zeros(2), [[-1.0, 0.0], [0.0, -1.0]], [-1.0, -1.0])
    res = solve_qp(prob)
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-12)
    res = solve_qp(prob, x0=[5.0, 5.0])
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-12)


def test_infeasible_reported():
    prob = QpProblem(np.eye(1), [0.0], [[1.0], [-1.0]], [0.0, -1.0])
    res = solve_qp(prob)
    assert res.status == "infeasible" and res.x is None
    assert "feasible" in res.message


def test_iteration_cap_reports_diagnostics():
    # from an interior start both bounds must be picked up, one per iteration
    prob = QpProblem(np.eye(2), [-2.0, -2.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    res = solve_qp(prob, x0=[-1.0, -1.0], max_iter=1)
    assert res.status == "infeasible" and "cap" in res.message
    assert solve_qp(prob, x0=[-1.0, -1.0]).optimal


def test_kkt_residuals_detect_bad_point():
    prob = QpProblem([[2.0]], [-2.0], [[1.0]], [0.0])
    good = kkt_residuals(prob, np.array([0.0]), np.array([2.0]))
    assert max(good.values()) == 0.0
    bad = kkt_residuals(prob, np.array([0.5]), np.array([0.0]))
    assert bad["primal"] == 0.5 and bad["stationarity"] == 1.0


@pytest.mark.parametrize("kw", [
    {"hessian": [[1.0, 2.0], [0.0, 1.0]]},
    {"gradient": [1.0]},
    {"a_ineq": [[1.0, 0.0]], "b_ineq": [0.0, 1.0]},
    {"gradient": [np.nan, 0.0]},
])
def test_problem_validation(kw):
    base = {"hessian": np.eye(2), "gradient": np.zeros(2)}
    with pytest.raises(ValueError):
        QpProblem(**dict(base, **kw))


def test_indefinite_hessian_rejected():
    with pytest.raises(ValueError):
        solve_qp(QpProblem(np.diag([1.0, -1.0]), np.zeros(2)))


def test_badly_scaled_control_qp_terminates():
    # a control QP whose slack weight leaves ~1e-10 roundoff in the subspace step
    h = [[0.15097517918900366, 0.11113054871057805, 0.008780336861903604, 0.0],
         [0.11113054871057805, 0.19128591823215244, 0.08564295911607621, 0.0],
         [0.008780336861903604, 0.08564295911607621, 0.09999999999999996, 0.0],
         [0.0, 0.0, 0.0, 20000.0]]
    g = [-0.053136029131988866, 0.06536410397210904, 0.10860814874756634, 10000.0]
    col = [0.10162732849114188, 0.12910808153911468, 0.15093059871336073, 0.10652022473819905,
           0.08591291087739783, 0.17249256079575542, 0.06818984017967428, 0.1561126839364641]
    a = np.zeros((8, 4))
    a[:, 0] = col
    a[5, 1] = 0.0024650564493079175
    a[:, 3] = -1.0
    b = [-0.1452533138113221, -0.1760996543347661, -0.18951545136496012, -0.141211383190885,
         -0.08415048938458192, -0.17412605537757356, 0.0013430414483811826, -0.1184818811408454]
    prob = QpProblem(np.array(h), g, a, b, [-1.5, -1.5, -1.5, 0.0], [1.5, 1.5, 1.5, np.inf])
    res = solve_qp(prob, x0=[0.0, 0.0, 0.0, 0.18951545136496012])
    assert res.optimal and res.iterations < 20
    assert max(res.kkt.values()) <= 1e-8
    assert res.x[3] == 0.0
