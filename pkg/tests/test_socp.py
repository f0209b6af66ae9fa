import numpy as np
import pytest
from scipy.optimize import linprog

from boxlift import socp


def test_lp_matches_linprog(rng):
    for trial in range(5):
        n, m, p = 5, 12, 2
        G = rng.standard_normal((m, n))
        x_feas = rng.standard_normal(n)
        h = G @ x_feas + rng.uniform(0.1, 1.0, m)
        c = G.T @ rng.uniform(0.1, 1, m)  # bounded below on the feasible set
        A = rng.standard_normal((p, n))
        b = A @ x_feas
        prog = socp.ConeProgram(c, G, h, socp.ConeDims(l=m), A, b)
        sol = socp.solve(prog)
        ref = linprog(c, A_ub=G, b_ub=h, A_eq=A, b_eq=b, bounds=[(None, None)] * n, method="highs")
        assert sol.status == socp.OPTIMAL
        assert abs(sol.primal_objective - ref.fun) <= 1e-7 * max(1, abs(ref.fun))


def test_simple_cone():
    # min t s.t. |(3, 4)| <= t
    G = -np.eye(3)
    prog = socp.ConeProgram([1.0, 0, 0], G, np.zeros(3), socp.ConeDims(q=(3,)), np.array([[0, 1.0, 0], [0, 0, 1.0]]),
                            [3.0, 4.0])
    sol = socp.solve(prog)
    assert sol.status == socp.OPTIMAL
    assert abs(sol.x[0] - 5.0) < 1e-7


def test_projection_onto_ball():
    # nearest point of the unit ball to (3, 4): min t s.t. |x - p| <= t, |x| <= 1
    p = np.array([3.0, 4.0])
    G = np.zeros((6, 3))
    h = np.zeros(6)
    G[0, 0] = -1
    G[1:3, 1:] = -np.eye(2)
    h[1:3] = -p
    h[3] = 1.0
    G[4:6, 1:] = -np.eye(2)
    prog = socp.ConeProgram([1.0, 0, 0], G, h, socp.ConeDims(q=(3, 3)), np.zeros((0, 3)), [])
    sol = socp.solve(prog)
    assert sol.status == socp.OPTIMAL
    assert np.allclose(sol.x[1:], p / 5, atol=1e-7)
    assert abs(sol.x[0] - 4.0) < 1e-7


def test_infeasible_detected():
    # x >= 1 and x <= -1
    G = np.array([[-1.0], [1.0]])
    h = np.array([-1.0, -1.0])
    sol = socp.solve(socp.ConeProgram([1.0], G, h, socp.ConeDims(l=2), np.zeros((0, 1)), []))
    assert sol.status == socp.INFEASIBLE


def test_unbounded_detected():
    # min -x s.t. x >= 0
    sol = socp.solve(socp.ConeProgram([-1.0], [[-1.0]], [0.0], socp.ConeDims(l=1), np.zeros((0, 1)), []))
    assert sol.status == socp.DUAL_INFEASIBLE


def test_iteration_cap():
    G = -np.eye(3)
    prog = socp.ConeProgram([1.0, 0, 0], G, np.zeros(3), socp.ConeDims(q=(3,)),
                            np.array([[0, 1.0, 0], [0, 0, 1.0]]), [3.0, 4.0])
    sol = socp.solve(prog, max_iter=1)
    assert sol.status == socp.MAX_ITER


def test_deterministic():
    G = -np.eye(3)
    prog = socp.ConeProgram([1.0, 0, 0], G, np.zeros(3), socp.ConeDims(q=(3,)),
                            np.array([[0, 1.0, 0], [0, 0, 1.0]]), [3.0, 4.0])
    a, b = socp.solve(prog), socp.solve(prog)
    assert np.array_equal(a.x, b.x) and a.iterations == b.iterations


def test_max_step_stays_in_cone(rng):
    dims = socp.ConeDims(l=2, q=(3, 4))
    for _ in range(200):
        u = np.concatenate([rng.uniform(0.1, 1, 2), [2.0, 0.3, -0.5], [3.0, 1.0, 0.5, -1.0]])
        du = rng.standard_normal(dims.size) * 3
        a = socp.max_step(u, du, dims)
        v = u + 0.999 * min(a, 1e6) * du
        assert np.all(v[:2] >= -1e-12)
        assert v[2] >= np.linalg.norm(v[3:5]) - 1e-9
        assert v[5] >= np.linalg.norm(v[6:9]) - 1e-9


def test_cone_dims_validation():
    with pytest.raises(ValueError):
        socp.ConeDims(l=-1)
    with pytest.raises(ValueError):
        socp.ConeDims(q=(1,))
