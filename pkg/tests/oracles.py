"""Independent reference computations used by the tests."""
import numpy as np


def grasp_map(r_L, r_R):
    """6x12 net-wrench map assembled from explicit cross products."""
    G = np.zeros((6, 12))
    for col, r in ((0, np.asarray(r_L, float)), (6, np.asarray(r_R, float))):
        G[:3, col:col + 3] = np.eye(3)
        for k, e in enumerate(np.eye(3)):
            G[3:, col + k] = np.cross(r, e)
        G[3:, col + 3:col + 6] = np.eye(3)
    return G


def load_rhs(m, r_com, g=9.81):
    mg = np.array([0.0, 0.0, -m * g])
    return -np.concatenate([mg, np.cross(r_com, mg)])


def distribution_oracle(r_L, r_R, n_L, n_R, m, r_com, mu, r_s, R_eff, l_c, anchor, n_samples=10**6,
                        seed=0, local_scale=0.02):
    """Brute-force the wrench distribution problem over its feasible affine set.

    With no tangential moments allowed each contact wrench is (f_i, tau_n n_i),
    8 unknowns under 6 balance equations, so feasible points form a 2-D affine
    family.  Half the samples cover a wide window, half cluster around
    ``anchor`` (a 12-vector, normally the solver's answer).  Returns the best
    friction-feasible cost and the number of feasible samples.
    """
    n_L = np.asarray(n_L, float)
    n_R = np.asarray(n_R, float)
    G = grasp_map(r_L, r_R)
    # reduced map: columns f_L, tau_nL, f_R, tau_nR
    E = np.zeros((12, 8))
    E[0:3, 0:3] = np.eye(3)
    E[3:6, 3] = n_L
    E[6:9, 4:7] = np.eye(3)
    E[9:12, 7] = n_R
    A = G @ E
    b = load_rhs(m, r_com)
    v0 = np.linalg.lstsq(A, b, rcond=None)[0]
    _, sv, Vt = np.linalg.svd(A)
    N = Vt[6:].T  # 8 x 2
    rng = np.random.default_rng(seed)
    a_anchor = N.T @ (np.linalg.pinv(E) @ anchor - v0)
    scale = 3.0 * np.linalg.norm(anchor)
    half = n_samples // 2
    coords = np.vstack([
        rng.uniform(-scale, scale, (half, 2)),
        a_anchor + rng.normal(0, local_scale * np.linalg.norm(anchor), (n_samples - half, 2)),
    ])
    V = v0 + coords @ N.T
    feasible = np.ones(n_samples, dtype=bool)
    for fs, ts, n in ((slice(0, 3), 3, n_L), (slice(4, 7), 7, n_R)):
        f = V[:, fs]
        fn = f @ n
        ft = np.linalg.norm(f - np.outer(fn, n), axis=1)
        load = -fn
        with np.errstate(divide="ignore", invalid="ignore"):
            res = (ft / (mu * load)) ** 2 + (V[:, ts] / (mu * load * R_eff)) ** 2 - (1 - r_s) ** 2
        feasible &= (load > 0) & (res <= 0)
    w = np.concatenate([np.ones(3), [1 / l_c], np.ones(3), [1 / l_c]])
    cost = np.linalg.norm(V * w, axis=1)
    if not feasible.any():
        return np.inf, 0
    return float(cost[feasible].min()), int(feasible.sum())


def cli_outputs(argv_tail, out):
    """Run every CLI command on one scenario into ``out``; return exit codes and file bytes."""
    from boxlift.cli import main

    codes = {}
    for cmd in ("refine", "estimate", "optimize", "run", "report"):
        codes[cmd] = main([cmd, *argv_tail, "--out", str(out)])
    files = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    return codes, files


def quadrature_radius(a, b, n=2000):
    """Midpoint rule for the mean distance from the centre of an a x b rectangle."""
    x = (np.arange(n) + 0.5) / n * a - a / 2
    total = 0.0
    for chunk in np.array_split(np.arange(n), 20):
        y = (chunk[:, None] + 0.5) / n * b - b / 2
        total += np.sqrt(x[None, :] ** 2 + y**2).sum()
    return total / (n * n)
